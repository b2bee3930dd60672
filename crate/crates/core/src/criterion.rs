//! Asymptotic mean squared error of a fixed-weight model-averaging ED
//! estimate, its prior average, and the directional derivative of that
//! average towards one-point designs.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::design::ApproximateDesign;
use crate::error::{Error, Result};
use crate::models::{ed_alpha, ed_gradient, mean_value, Tensor3};
use crate::moments::{sandwich_restricted, submatrix, PointTerms, SandwichSet};
use crate::projection::{project, Projection, ProjectionSettings};
use crate::types::{AveragingWeights, CandidateModel, ModelKind, TargetED, TruthPrior};

/// Everything the design criterion needs besides the design itself.
#[derive(Debug, Clone)]
pub struct CriterionContext {
    prior: TruthPrior,
    candidates: Vec<(ModelKind, Vec<f64>)>,
    weights: AveragingWeights,
    target: TargetED,
    n: usize,
    settings: ProjectionSettings,
}

impl CriterionContext {
    pub fn new(
        prior: TruthPrior,
        candidates: Vec<(ModelKind, Vec<f64>)>,
        weights: AveragingWeights,
        target: TargetED,
        n: usize,
    ) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidArgument("at least one candidate model is required".into()));
        }
        if weights.len() != candidates.len() {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} candidates",
                weights.len(),
                candidates.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        for (kind, start) in &candidates {
            if !start.is_empty() && start.len() != kind.n_mean_params() {
                return Err(Error::InvalidModel(format!(
                    "{kind} start needs {} values, got {}",
                    kind.n_mean_params(),
                    start.len()
                )));
            }
        }
        for atom in prior.atoms() {
            atom.model.check_space(target.space())?;
        }
        let settings = ProjectionSettings::new(*target.space());
        Ok(Self {
            prior,
            candidates,
            weights,
            target,
            n,
            settings,
        })
    }

    /// Uniform averaging weights over `kinds`, each started at `start(kind)`.
    pub fn uniform(
        prior: TruthPrior,
        kinds: &[ModelKind],
        start: impl Fn(ModelKind) -> Vec<f64>,
        target: TargetED,
        n: usize,
    ) -> Result<Self> {
        let candidates = kinds.iter().map(|&k| (k, start(k))).collect();
        Self::new(prior, candidates, AveragingWeights::uniform(kinds.len()), target, n)
    }

    pub fn with_settings(mut self, settings: ProjectionSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_prior(&self, prior: TruthPrior) -> Self {
        Self { prior, ..self.clone() }
    }

    pub fn prior(&self) -> &TruthPrior {
        &self.prior
    }

    pub fn candidates(&self) -> &[(ModelKind, Vec<f64>)] {
        &self.candidates
    }

    pub fn weights(&self) -> &AveragingWeights {
        &self.weights
    }

    pub fn target(&self) -> &TargetED {
        &self.target
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn settings(&self) -> &ProjectionSettings {
        &self.settings
    }
}

/// One candidate at its projection, restricted to free coordinates.
#[derive(Debug, Clone)]
struct CandidateState {
    model: CandidateModel,
    free: Vec<usize>,
    mu: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

/// Criterion ingredients for one truth and one design.
#[derive(Debug, Clone)]
pub struct AtomState {
    truth: CandidateModel,
    mu_true: f64,
    cands: Vec<CandidateState>,
    set: SandwichSet,
    /// `A_s⁻¹ ∇μ_s`.
    u: Vec<DVector<f64>>,
    bias: f64,
    variance: f64,
}

impl AtomState {
    /// Asymptotic variance `σ_w²` of the averaged estimate.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// `Σ w_s μ_s(θ*_s) - μ_true`.
    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn mu_true(&self) -> f64 {
        self.mu_true
    }

    /// `σ_w²/n + bias²`.
    pub fn mse(&self, n: usize) -> f64 {
        self.variance / n as f64 + self.bias * self.bias
    }

    pub fn sandwich(&self) -> &SandwichSet {
        &self.set
    }

    /// Candidate models at their projections.
    pub fn projected_models(&self) -> Vec<CandidateModel> {
        self.cands.iter().map(|c| c.model.clone()).collect()
    }
}

fn project_checked(
    g: &CandidateModel,
    kind: ModelKind,
    start: &[f64],
    design: &ApproximateDesign,
    settings: &ProjectionSettings,
) -> Result<Projection> {
    let p = project(g, kind, start, design, settings)?;
    if !p.converged {
        return Err(Error::ProjectionFailed {
            candidate: kind.name().to_string(),
            gradient_norm: p.gradient_norm,
        });
    }
    Ok(p)
}

/// Projects every candidate and assembles the sandwich quantities.
pub fn atom_state(ctx: &CriterionContext, g: &CandidateModel, design: &ApproximateDesign) -> Result<AtomState> {
    let projections = ctx
        .candidates
        .iter()
        .map(|(kind, start)| project_checked(g, *kind, start, design, &ctx.settings))
        .collect::<Result<Vec<_>>>()?;
    atom_state_from(g, &projections, &ctx.weights, &ctx.target, design)
}

fn atom_state_from(
    g: &CandidateModel,
    projections: &[Projection],
    weights: &AveragingWeights,
    target: &TargetED,
    design: &ApproximateDesign,
) -> Result<AtomState> {
    if projections.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} projections",
            weights.len(),
            projections.len()
        )));
    }
    let mu_true = ed_alpha(g.kind(), g.vartheta(), target)?;
    let mut cands = Vec::with_capacity(projections.len());
    for p in projections {
        let model = p.model()?;
        let free = p.free_indices();
        let ed = ed_gradient(p.kind, model.vartheta(), target)?;
        let grad = DVector::from_fn(free.len(), |i, _| ed.grad[free[i]]);
        let hess = submatrix(&ed.hess, &free, &free);
        cands.push(CandidateState {
            model,
            free,
            mu: ed.value,
            grad,
            hess,
        });
    }
    let models: Vec<CandidateModel> = cands.iter().map(|c| c.model.clone()).collect();
    let frees: Vec<Vec<usize>> = cands.iter().map(|c| c.free.clone()).collect();
    let set = sandwich_restricted(g, &models, &frees, design)?;
    let u: Vec<DVector<f64>> = (0..cands.len()).map(|s| set.a_inv(s) * &cands[s].grad).collect();
    let w = weights.as_slice();
    let mut variance = 0.0;
    for s in 0..cands.len() {
        for t in 0..cands.len() {
            variance += w[s] * w[t] * u[s].dot(&(set.b(s, t) * &u[t]));
        }
    }
    let bias = cands.iter().zip(w).map(|(c, w)| w * c.mu).sum::<f64>() - mu_true;
    Ok(AtomState {
        truth: g.clone(),
        mu_true,
        cands,
        set,
        u,
        bias,
        variance,
    })
}

/// `σ_w² = Σ_{s,t} w_s w_t ∇μ_sᵀ A_s⁻¹ B_st A_t⁻¹ ∇μ_t` at given projections.
pub fn mav_variance(
    g: &CandidateModel,
    projections: &[Projection],
    weights: &AveragingWeights,
    target: &TargetED,
    design: &ApproximateDesign,
) -> Result<f64> {
    Ok(atom_state_from(g, projections, weights, target, design)?.variance)
}

/// `σ_w²/n + (Σ w_s μ_s(θ*_s) - μ_true)²` for a single truth.
pub fn mav_mse(ctx: &CriterionContext, g: &CandidateModel, design: &ApproximateDesign) -> Result<f64> {
    Ok(atom_state(ctx, g, design)?.mse(ctx.n))
}

fn wrap_atom(index: usize, g: &CandidateModel, e: Error) -> Error {
    Error::Atom {
        index,
        label: g.label(),
        source: Box::new(e),
    }
}

/// Per-atom states in prior order.
pub fn atom_states(ctx: &CriterionContext, design: &ApproximateDesign) -> Result<Vec<AtomState>> {
    ctx.prior
        .atoms()
        .par_iter()
        .enumerate()
        .map(|(i, a)| atom_state(ctx, &a.model, design).map_err(|e| wrap_atom(i, &a.model, e)))
        .collect()
}

/// Prior-averaged criterion `Σ π(g) Φ_mav(ξ, g)`.
pub fn bayes_criterion(ctx: &CriterionContext, design: &ApproximateDesign) -> Result<f64> {
    let states = atom_states(ctx, design)?;
    Ok(ctx.prior.atoms().iter().zip(&states).map(|(a, s)| a.prob * s.mse(ctx.n)).sum())
}

/// Derivative of `θ*_s` along `(1-α)ξ + αδ_x` at `α = 0`:
/// `-A_s⁻¹ E_{g(·|x)}[∂ log f_s/∂θ]`. Entries of a coordinate held at its
/// box edge are zero.
pub fn theta_prime(g: &CandidateModel, projection: &Projection, design: &ApproximateDesign, x: f64) -> Result<DVector<f64>> {
    let model = projection.model()?;
    let free = projection.free_indices();
    let set = sandwich_restricted(g, std::slice::from_ref(&model), std::slice::from_ref(&free), design)?;
    let m = mean_value(g.kind(), g.vartheta(), x)?;
    let score = PointTerms::new(m, &model, x)?.score(g.sigma2());
    let sf = DVector::from_fn(free.len(), |i, _| score[free[i]]);
    let tp = -(set.a_inv(0) * sf);
    let mut out = DVector::zeros(model.n_params());
    for (i, &j) in free.iter().enumerate() {
        out[j] = tp[i];
    }
    Ok(out)
}

fn restrict_tensor(t: &Tensor3, idx: &[usize]) -> Tensor3 {
    let mut out = Tensor3::zeros(idx.len());
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            for (c, &k) in idx.iter().enumerate() {
                out.set(a, b, c, t.get(i, j, k));
            }
        }
    }
    out
}

/// Design-level pieces that do not depend on the direction `x`.
struct DirectionBasis<'a> {
    st: &'a AtomState,
    /// `Σ_ξ E[∂³ log f_s]`.
    third: Vec<Tensor3>,
    /// `Σ_t w_t B_st u_t`.
    v: Vec<DVector<f64>>,
    /// `Σ_l u_t[l] Σ_ξ E[∂² log f_s · ∂_l log f_t]`.
    m: Vec<Vec<DMatrix<f64>>>,
}

impl<'a> DirectionBasis<'a> {
    fn new(st: &'a AtomState, w: &[f64], design: &ApproximateDesign) -> Result<Self> {
        let r = st.cands.len();
        let vg = st.truth.sigma2();
        let mut third: Vec<Tensor3> = st.cands.iter().map(|c| Tensor3::zeros(c.free.len())).collect();
        let mut m: Vec<Vec<DMatrix<f64>>> = (0..r)
            .map(|s| {
                (0..r)
                    .map(|_| DMatrix::zeros(st.cands[s].free.len(), st.cands[s].free.len()))
                    .collect()
            })
            .collect();
        for (x, wx) in design.iter() {
            let mx = mean_value(st.truth.kind(), st.truth.vartheta(), x)?;
            let terms = st
                .cands
                .iter()
                .map(|c| PointTerms::new(mx, &c.model, x))
                .collect::<Result<Vec<_>>>()?;
            for s in 0..r {
                let fs = &st.cands[s].free;
                third[s].add_scaled(wx, &restrict_tensor(&terms[s].third(vg), fs));
                for t in 0..r {
                    let ft = &st.cands[t].free;
                    let hs = terms[s].hess_score(&terms[t], vg);
                    for (li, &l) in ft.iter().enumerate() {
                        let c = wx * st.u[t][li];
                        if c != 0.0 {
                            m[s][t] += c * submatrix(&hs[l], fs, fs);
                        }
                    }
                }
            }
        }
        let v = (0..r)
            .map(|s| {
                let mut acc = DVector::zeros(st.cands[s].free.len());
                for t in 0..r {
                    acc.axpy(w[t], &(st.set.b(s, t) * &st.u[t]), 1.0);
                }
                acc
            })
            .collect();
        Ok(Self { st, third, v, m })
    }

    /// `d/dα Φ_mav((1-α)ξ + αδ_x)` at `α = 0`.
    fn derivative(&self, w: &[f64], n: usize, x: f64) -> Result<f64> {
        let st = self.st;
        let r = st.cands.len();
        let vg = st.truth.sigma2();
        let mx = mean_value(st.truth.kind(), st.truth.vartheta(), x)?;
        let terms = st
            .cands
            .iter()
            .map(|c| PointTerms::new(mx, &c.model, x))
            .collect::<Result<Vec<_>>>()?;

        let mut tp = Vec::with_capacity(r);
        for s in 0..r {
            let f = &st.cands[s].free;
            let score = terms[s].score(vg);
            let sf = DVector::from_fn(f.len(), |i, _| score[f[i]]);
            tp.push(-(st.set.a_inv(s) * sf));
        }

        let mut dvar = 0.0;
        let mut dmean = 0.0;
        for s in 0..r {
            let c = &st.cands[s];
            let a_x = submatrix(&terms[s].hessian(vg), &c.free, &c.free);
            let d_a = self.third[s].contract_last(&tp[s]) + a_x - st.set.a(s);
            let du = st.set.a_inv(s) * (&c.hess * &tp[s] - d_a * &st.u[s]);
            dvar += 2.0 * w[s] * du.dot(&self.v[s]);
            dmean += w[s] * c.grad.dot(&tp[s]);
        }
        for s in 0..r {
            for t in 0..r {
                let b_x = submatrix(&terms[s].score_outer(&terms[t], vg), &st.cands[s].free, &st.cands[t].free);
                let quad = st.u[s].dot(&(&b_x * &st.u[t])) - st.u[s].dot(&(st.set.b(s, t) * &st.u[t]));
                let cross = 2.0 * st.u[s].dot(&(&self.m[s][t] * &tp[s]));
                dvar += w[s] * w[t] * (quad + cross);
            }
        }
        Ok(dvar / n as f64 + 2.0 * st.bias * dmean)
    }
}

/// Directional derivative of the prior-averaged criterion towards the
/// one-point design at each `x`: `d/dα Φ^π((1-α)ξ + αδ_x)` at `α = 0`.
///
/// Nonnegative everywhere at a minimizer, zero on its support.
pub fn directional_derivatives(ctx: &CriterionContext, design: &ApproximateDesign, xs: &[f64]) -> Result<Vec<f64>> {
    let states = atom_states(ctx, design)?;
    let w = ctx.weights.as_slice();
    let per_atom = states
        .par_iter()
        .enumerate()
        .map(|(i, st)| {
            let g = &ctx.prior.atoms()[i].model;
            let basis = DirectionBasis::new(st, w, design).map_err(|e| wrap_atom(i, g, e))?;
            xs.iter()
                .map(|&x| basis.derivative(w, ctx.n, x).map_err(|e| wrap_atom(i, g, e)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = vec![0.0; xs.len()];
    for (a, vals) in ctx.prior.atoms().iter().zip(&per_atom) {
        for (o, v) in out.iter_mut().zip(vals) {
            *o += a.prob * v;
        }
    }
    Ok(out)
}

pub fn directional_derivative(ctx: &CriterionContext, design: &ApproximateDesign, x: f64) -> Result<f64> {
    Ok(directional_derivatives(ctx, design, &[x])?[0])
}

/// Sensitivity `d_π(x, ξ)`, oriented so that an optimal design has
/// `d_π ≤ 0` on the whole interval with equality on its support.
pub fn sensitivity(ctx: &CriterionContext, design: &ApproximateDesign, x: f64) -> Result<f64> {
    Ok(-directional_derivative(ctx, design, x)?)
}

/// Sensitivity over a grid plus the design's own support.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub is_support: Vec<bool>,
    /// Largest sensitivity over the grid entries.
    pub max_violation: f64,
    /// `|d_π|` at each support point.
    pub support_equalities: Vec<f64>,
    pub criterion_value: f64,
}

impl SensitivityReport {
    /// Whether both the inequality and the support equalities hold within
    /// `rel_tol·|Φ^π|`.
    pub fn satisfied(&self, rel_tol: f64) -> bool {
        let tol = rel_tol * self.criterion_value.abs();
        self.max_violation <= tol && self.support_equalities.iter().all(|&v| v <= tol)
    }

    /// CSV with columns `x,d_pi,is_support`, preceded by `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "# criterion: {:.12e}", self.criterion_value)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "d_pi", "is_support"]).map_err(csv_err)?;
        for i in 0..self.grid.len() {
            w.write_record([
                format!("{}", self.grid[i]),
                format!("{:.12e}", self.values[i]),
                format!("{}", self.is_support[i]),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Evaluates the sensitivity on `a, a + step, …, b` and at every support
/// point of `design`.
pub fn verify_optimality(ctx: &CriterionContext, design: &ApproximateDesign, grid_step: f64) -> Result<SensitivityReport> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidArgument(format!("grid step must be positive, got {grid_step}")));
    }
    let space = ctx.target.space();
    let cells = (space.width() / grid_step).round().max(1.0) as usize;
    let mut xs: Vec<f64> = (0..=cells)
        .map(|i| (space.lower() + i as f64 * grid_step).min(space.upper()))
        .collect();
    if let Some(last) = xs.last_mut() {
        *last = space.upper();
    }
    let n_grid = xs.len();
    xs.extend_from_slice(design.points());
    let criterion_value = bayes_criterion(ctx, design)?;
    let values: Vec<f64> = directional_derivatives(ctx, design, &xs)?.into_iter().map(|d| -d).collect();
    let max_violation = values[..n_grid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let support_equalities = values[n_grid..].iter().map(|v| v.abs()).collect();
    let is_support = (0..xs.len()).map(|i| i >= n_grid).collect();
    Ok(SensitivityReport {
        grid: xs,
        values,
        is_support,
        max_violation,
        support_equalities,
        criterion_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn ctx12() -> CriterionContext {
        CriterionContext::uniform(
            presets::point_prior(&presets::set_12()),
            &presets::set_12(),
            presets::reference_vartheta,
            presets::ed_target(),
            100,
        )
        .unwrap()
    }

    #[test]
    fn theta_prime_integrates_to_zero() {
        let ctx = ctx12();
        let d = presets::xi1();
        let g = presets::reference_model(ModelKind::Emax);
        let p = project(
            &g,
            ModelKind::LogLinear,
            &presets::reference_vartheta(ModelKind::LogLinear),
            &d,
            ctx.settings(),
        )
        .unwrap();
        let mut acc = DVector::zeros(4);
        for (x, w) in d.iter() {
            acc += w * theta_prime(&g, &p, &d, x).unwrap();
        }
        assert!(acc.amax() < 1e-9, "{acc}");
    }

    #[test]
    fn directional_derivative_matches_finite_difference() {
        let ctx = ctx12();
        let d = presets::xi1();
        let phi = bayes_criterion(&ctx, &d).unwrap();
        for x in [0.0, 7.0, 40.0, 150.0] {
            let an = directional_derivative(&ctx, &d, x).unwrap();
            let h = 1e-5;
            let f1 = bayes_criterion(&ctx, &d.mix_with_point(x, h)).unwrap();
            let f2 = bayes_criterion(&ctx, &d.mix_with_point(x, 0.5 * h)).unwrap();
            let fd = 2.0 * (f2 - phi) / (0.5 * h) - (f1 - phi) / h;
            assert!((an - fd).abs() <= 1e-4 * an.abs().max(1e-3 * phi), "x={x}: {an} vs {fd}");
        }
    }
}
