//! Monte-Carlo comparison of target estimators: simulated responses on an
//! exact design, maximum-likelihood fits of every candidate, AIC-based
//! weighting or selection, and MSE tables.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::criterion::csv_err;
use crate::design::{round_design, ApproximateDesign, ExactDesign};
use crate::error::{Error, Result};
use crate::lsq::{self, LsqData, LsqOptions};
use crate::models::{ed_alpha, mean_value};
use crate::optimizer::stream_key;
use crate::types::{AveragingWeights, CandidateModel, DesignSpace, ModelKind, TargetED};

/// MSE values are reported as raw squared dose units times this factor.
pub const MSE_SCALE: f64 = 1.0;

/// Responses grouped by support point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.iter().map(Vec::len).sum()
    }
}

/// Independent draws `y = η_g(x_i) + ε`, `ε ~ N(0, σ_g²)`, `n_i` at each point.
pub fn draw_data(g: &CandidateModel, exact: &ExactDesign, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_data_with_sd(g, exact, g.sigma2().sqrt(), &mut rng)
}

/// As [`draw_data`] with an explicit noise standard deviation; `sd = 0`
/// returns the mean function itself.
pub fn draw_data_with_sd<R: Rng>(g: &CandidateModel, exact: &ExactDesign, sd: f64, rng: &mut R) -> Result<Dataset> {
    let mut y = Vec::with_capacity(exact.points().len());
    for (&x, &c) in exact.points().iter().zip(exact.counts()) {
        let m = mean_value(g.kind(), g.vartheta(), x)?;
        y.push((0..c).map(|_| m + sd * rng.sample::<f64, _>(StandardNormal)).collect());
    }
    Ok(Dataset {
        x: exact.points().to_vec(),
        y,
    })
}

/// Gaussian maximum-likelihood fit of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kind: ModelKind,
    /// `(σ̂², ϑ̂)`.
    pub theta_hat: Vec<f64>,
    pub sse: f64,
    /// `Σ log f(y_ij | x_i, θ̂)`.
    pub loglik_sum: f64,
    /// `2·loglik_sum - 2·p`; larger is better.
    pub aic: f64,
    pub converged: bool,
}

impl FitResult {
    pub fn vartheta(&self) -> &[f64] {
        &self.theta_hat[1..]
    }
}

/// Fits `kind` by least squares on the group means weighted by `n_i / n`,
/// adding the within-group sum of squares back for `σ̂² = SSE/n`.
pub fn fit_mle(kind: ModelKind, data: &Dataset, starts: &[Vec<f64>], space: &DesignSpace) -> Result<FitResult> {
    let n = data.n();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot fit an empty dataset".into()));
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(data.x.len());
    let mut w = Vec::with_capacity(data.x.len());
    let mut within = 0.0;
    for ys in &data.y {
        if ys.is_empty() {
            means.push(0.0);
            w.push(0.0);
            continue;
        }
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        within += ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>();
        means.push(m);
        w.push(ys.len() as f64 / nf);
    }
    let opts = LsqOptions {
        bounds: kind.default_bounds(space),
        perturbation: 0.0,
        gradient_tol: 1e-8,
        ..LsqOptions::default()
    };
    let fit = lsq::fit(
        kind,
        &LsqData {
            x: &data.x,
            y: &means,
            w: &w,
        },
        starts,
        &opts,
    )?;
    let sse = nf * fit.wsse + within;
    let sigma2 = sse / nf;
    let loglik_sum = -0.5 * nf * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    let p = kind.n_params() as f64;
    let mut theta_hat = Vec::with_capacity(fit.vartheta.len() + 1);
    theta_hat.push(sigma2);
    theta_hat.extend_from_slice(&fit.vartheta);
    Ok(FitResult {
        kind,
        theta_hat,
        sse,
        loglik_sum,
        aic: 2.0 * loglik_sum - 2.0 * p,
        converged: fit.converged && sigma2.is_finite(),
    })
}

/// `w_s ∝ exp(AIC_s / 2)`, shifted by the largest AIC before exponentiating.
pub fn smooth_aic_weights(fits: &[FitResult]) -> Result<AveragingWeights> {
    let top = fits.iter().map(|f| f.aic).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = fits.iter().map(|f| (0.5 * (f.aic - top)).exp()).collect();
    let total: f64 = raw.iter().sum();
    AveragingWeights::new(raw.iter().map(|r| r / total).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Uniform,
    SmoothAic,
    SelectAic,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Uniform, Estimator::SmoothAic, Estimator::SelectAic];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Uniform => "uniform",
            Estimator::SmoothAic => "smooth_aic",
            Estimator::SelectAic => "select_aic",
        }
    }
}

/// Relative AIC difference treated as a tie. Designs with as many support
/// points as mean parameters let every candidate interpolate the group
/// means, and the AICs then agree up to round-off.
pub const AIC_TIE_TOL: f64 = 1e-9;

/// Index of the largest AIC; ties go to fewer parameters, then lower index.
pub fn select_by_aic(fits: &[FitResult]) -> Option<usize> {
    let tied = |a: f64, b: f64| (a - b).abs() <= AIC_TIE_TOL * a.abs().max(b.abs()).max(1.0);
    (0..fits.len()).reduce(|best, i| {
        let (a, b) = (&fits[i], &fits[best]);
        let better = if tied(a.aic, b.aic) {
            a.kind.n_params() < b.kind.n_params()
        } else {
            a.aic > b.aic
        };
        if better {
            i
        } else {
            best
        }
    })
}

/// Target estimate under `scheme` from per-candidate fits.
pub fn estimate(fits: &[FitResult], scheme: Estimator, target: &TargetED) -> Result<f64> {
    if fits.is_empty() {
        return Err(Error::InvalidArgument("no fits to combine".into()));
    }
    let ed = |f: &FitResult| ed_alpha(f.kind, f.vartheta(), target);
    match scheme {
        Estimator::Uniform => {
            let r = fits.len() as f64;
            fits.iter().map(|f| ed(f).map(|e| e / r)).sum()
        }
        Estimator::SmoothAic => {
            let w = smooth_aic_weights(fits)?;
            fits.iter().zip(w.as_slice()).map(|(f, w)| ed(f).map(|e| w * e)).sum()
        }
        Estimator::SelectAic => ed(&fits[select_by_aic(fits).unwrap_or(0)]),
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub truth: String,
    pub design: String,
    pub n: usize,
    pub estimator: Estimator,
    pub mse: f64,
    pub bias2: f64,
    pub var: f64,
    /// Replications that entered the averages.
    pub reps: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
    pub seed: u64,
    pub scale: f64,
}

impl MseReport {
    pub fn get(&self, truth: &str, design: &str, n: usize, estimator: Estimator) -> Option<&MseRow> {
        self.rows
            .iter()
            .find(|r| r.truth == truth && r.design == design && r.n == n && r.estimator == estimator)
    }

    /// CSV with columns `truth,design,n,estimator,mse,bias2,var,reps,excluded`
    /// after `#` metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, metadata: &[(&str, String)]) -> Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# units: squared dose x {}", self.scale)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["truth", "design", "n", "estimator", "mse", "bias2", "var", "reps", "excluded"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.truth.clone(),
                r.design.clone(),
                r.n.to_string(),
                r.estimator.name().to_string(),
                format!("{:.6}", r.mse),
                format!("{:.6}", r.bias2),
                format!("{:.6}", r.var),
                r.reps.to_string(),
                r.excluded.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inputs of a Monte-Carlo study.
#[derive(Debug, Clone)]
pub struct Study {
    pub truths: Vec<(String, CandidateModel)>,
    pub candidates: Vec<ModelKind>,
    pub designs: Vec<(String, ApproximateDesign)>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub target: TargetED,
}

/// Estimates under every scheme for one replication, or `None` if any fit
/// failed to converge or any fitted model has no target dose.
fn replicate(study: &Study, g: &CandidateModel, exact: &ExactDesign, seed: u64) -> Option<[f64; 3]> {
    let data = draw_data(g, exact, seed).ok()?;
    let space = study.target.space();
    let fits: Vec<FitResult> = study
        .candidates
        .iter()
        .map(|&k| fit_mle(k, &data, &[], space))
        .collect::<Result<_>>()
        .ok()?;
    if fits.iter().any(|f| !f.converged) {
        return None;
    }
    let mut out = [0.0; 3];
    for (slot, scheme) in out.iter_mut().zip(Estimator::ALL) {
        *slot = estimate(&fits, scheme, &study.target).ok()?;
    }
    Some(out)
}

/// Pairwise summation, so the total does not depend on scheduling.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Per-replication estimates `[uniform, smooth AIC, selection]` of one
/// cell, `None` where the replication was excluded.
///
/// Replication `r` draws its noise from a stream keyed by
/// `(seed, truth index, n, r)`, so adding replications never changes earlier
/// ones and designs are compared on common random numbers.
pub fn cell_estimates(study: &Study, truth: usize, design: usize, n: usize) -> Result<Vec<Option<[f64; 3]>>> {
    let (_, g) = study
        .truths
        .get(truth)
        .ok_or_else(|| Error::InvalidArgument(format!("no truth with index {truth}")))?;
    let (_, d) = study
        .designs
        .get(design)
        .ok_or_else(|| Error::InvalidArgument(format!("no design with index {design}")))?;
    let exact = round_design(d, n)?;
    let cell = stream_key(study.seed, truth as u64, n as u64);
    Ok((0..study.reps)
        .into_par_iter()
        .map(|r| replicate(study, g, &exact, stream_key(cell, r as u64, 1)))
        .collect())
}

/// Runs every (truth, design, n) cell with `reps` replications each.
pub fn mse_study(study: &Study) -> Result<MseReport> {
    if study.reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if study.candidates.is_empty() {
        return Err(Error::InvalidArgument("at least one candidate model is required".into()));
    }
    let mut rows = Vec::new();
    for (ti, (tname, g)) in study.truths.iter().enumerate() {
        let mu_true = ed_alpha(g.kind(), g.vartheta(), &study.target)?;
        for (di, (dname, _)) in study.designs.iter().enumerate() {
            for &n in &study.n_list {
                let results = cell_estimates(study, ti, di, n)?;
                let kept: Vec<[f64; 3]> = results.iter().flatten().copied().collect();
                let excluded = study.reps - kept.len();
                for (e, scheme) in Estimator::ALL.into_iter().enumerate() {
                    let est: Vec<f64> = kept.iter().map(|v| v[e]).collect();
                    let (mse, bias2, var) = moments_about(&est, mu_true);
                    rows.push(MseRow {
                        truth: tname.clone(),
                        design: dname.clone(),
                        n,
                        estimator: scheme,
                        mse: mse * MSE_SCALE,
                        bias2: bias2 * MSE_SCALE,
                        var: var * MSE_SCALE,
                        reps: kept.len(),
                        excluded,
                    });
                }
            }
        }
    }
    Ok(MseReport {
        rows,
        seed: study.seed,
        scale: MSE_SCALE,
    })
}

/// `(mean squared error, squared bias, variance)` of estimates around `truth`.
/// The variance uses divisor `m`, so `mse = bias² + variance`.
fn moments_about(est: &[f64], truth: f64) -> (f64, f64, f64) {
    if est.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let m = est.len() as f64;
    let mean = pairwise_sum(est) / m;
    let dev: Vec<f64> = est.iter().map(|e| (e - mean) * (e - mean)).collect();
    let var = pairwise_sum(&dev) / m;
    let bias2 = (mean - truth) * (mean - truth);
    (bias2 + var, bias2, var)
}
