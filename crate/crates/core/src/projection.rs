//! Kullback–Leibler divergence between a Gaussian truth and a candidate under
//! a design, and the candidate parameter that minimizes it.

use nalgebra::DVector;

use crate::design::ApproximateDesign;
use crate::error::{Error, Result};
use crate::lsq::{self, LsqData, LsqOptions};
use crate::models::mean_value;
use crate::moments::expected_score;
use crate::types::{CandidateModel, DesignSpace, ModelKind};

/// Design-weighted KL divergence `Σ ξ_i KL(g(·|x_i) ‖ f_s(·|x_i))`.
pub fn kl_divergence(g: &CandidateModel, s: &CandidateModel, design: &ApproximateDesign) -> Result<f64> {
    let (vg, vs) = (g.sigma2(), s.sigma2());
    let mut kl = 0.0;
    for (x, w) in design.iter() {
        let e = mean_value(g.kind(), g.vartheta(), x)? - mean_value(s.kind(), s.vartheta(), x)?;
        kl += w * (0.5 * (vs / vg).ln() + (vg + e * e) / (2.0 * vs) - 0.5);
    }
    Ok(kl)
}

/// Settings shared by every projection in a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSettings {
    pub space: DesignSpace,
    /// Profile grid size over the nonlinear parameter box.
    pub scan_points: usize,
    /// Best profile-grid cells polished.
    pub scan_polish: usize,
    /// Relative perturbation of caller starts (0 disables). The profile
    /// scan already covers the whole box, so this is off by default.
    pub perturbation: f64,
    pub max_iter: usize,
    /// Converged when the max-norm of the KL gradient is at most this.
    pub gradient_tol: f64,
}

impl ProjectionSettings {
    pub fn new(space: DesignSpace) -> Self {
        Self {
            space,
            scan_points: 64,
            scan_polish: 3,
            perturbation: 0.0,
            max_iter: 200,
            gradient_tol: 1e-8,
        }
    }

    pub(crate) fn lsq_options(&self, kind: ModelKind) -> LsqOptions {
        LsqOptions {
            bounds: kind.default_bounds(&self.space),
            scan_points: self.scan_points,
            scan_polish: self.scan_polish,
            perturbation: self.perturbation,
            max_iter: self.max_iter,
            // The KL gradient in ϑ is the least-squares gradient divided by σ²*.
            gradient_tol: 0.0,
        }
    }
}

/// Best approximation `θ*_s(ξ)` of a truth within one model family.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub kind: ModelKind,
    /// `(σ²*, ϑ*)`.
    pub theta_star: Vec<f64>,
    pub kl_value: f64,
    pub converged: bool,
    /// Max-norm of the KL gradient over free coordinates.
    pub gradient_norm: f64,
    /// Index into θ of a coordinate held at its box edge.
    pub active: Option<usize>,
}

impl Projection {
    pub fn model(&self) -> Result<CandidateModel> {
        CandidateModel::from_theta(self.kind, &self.theta_star)
    }

    /// Coordinates of θ that move with the design.
    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.theta_star.len()).filter(|&j| Some(j) != self.active).collect()
    }
}

/// Projects the truth `g` onto family `s_kind` under `design`.
///
/// ϑ* minimizes `Σ ξ_i (m(x_i) - η_s(x_i, ϑ))²` and the variance is profiled
/// exactly as `σ²* = σ_g² + Σ ξ_i e_i²`. Returns a projection with
/// `converged = false` instead of failing when the gradient test is missed.
pub fn project(
    g: &CandidateModel,
    s_kind: ModelKind,
    start: &[f64],
    design: &ApproximateDesign,
    settings: &ProjectionSettings,
) -> Result<Projection> {
    if g.kind() == s_kind && in_box(g, settings) {
        // The truth itself attains KL = 0.
        return Ok(Projection {
            kind: s_kind,
            theta_star: g.theta(),
            kl_value: 0.0,
            converged: true,
            gradient_norm: 0.0,
            active: None,
        });
    }
    let x = design.points();
    let y = x
        .iter()
        .map(|&x| mean_value(g.kind(), g.vartheta(), x))
        .collect::<Result<Vec<_>>>()?;
    let data = LsqData {
        x,
        y: &y,
        w: design.weights(),
    };
    let starts = if start.is_empty() { vec![] } else { vec![start.to_vec()] };
    let fit = lsq::fit(s_kind, &data, &starts, &settings.lsq_options(s_kind)).map_err(|_| Error::ProjectionFailed {
        candidate: s_kind.name().to_string(),
        gradient_norm: f64::INFINITY,
    })?;
    let sigma2 = g.sigma2() + fit.wsse;
    let gradient_norm = fit.gradient_norm / sigma2;
    let mut theta_star = Vec::with_capacity(fit.vartheta.len() + 1);
    theta_star.push(sigma2);
    theta_star.extend_from_slice(&fit.vartheta);
    let s = CandidateModel::from_theta(s_kind, &theta_star)?;
    Ok(Projection {
        kind: s_kind,
        kl_value: kl_divergence(g, &s, design)?.max(0.0),
        converged: gradient_norm <= settings.gradient_tol,
        gradient_norm,
        active: fit.active.map(|j| j + 1),
        theta_star,
    })
}

fn in_box(g: &CandidateModel, settings: &ProjectionSettings) -> bool {
    match (g.kind().nonlinear_index(), g.kind().default_bounds(&settings.space)) {
        (Some(k), Some((lo, hi))) => {
            let c = g.vartheta()[k];
            c > lo && c < hi
        }
        _ => true,
    }
}

/// `Σ_i ξ_i E_g[∂ log f_s / ∂θ]`, zero at an interior projection.
pub fn first_order_residual(g: &CandidateModel, s: &CandidateModel, design: &ApproximateDesign) -> Result<DVector<f64>> {
    let mut acc = DVector::zeros(s.n_params());
    for (x, w) in design.iter() {
        acc.axpy(w, &expected_score(g, s, x)?, 1.0);
    }
    Ok(acc)
}
