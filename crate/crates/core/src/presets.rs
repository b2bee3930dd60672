//! Reference dose–response setting: four monotone-ish mean shapes on
//! `[0, 150]` with error variance 0.1, the two three-model candidate sets,
//! the ±10% parameter-grid priors and a handful of published designs.

use crate::design::ApproximateDesign;
use crate::types::{CandidateModel, DesignSpace, ModelKind, TargetED, TruthPrior};

pub const SIGMA2: f64 = 0.1;
pub const DOSE_MAX: f64 = 150.0;
pub const ALPHA: f64 = 0.4;
/// Relative half-width of the parameter grid used by the grid priors.
pub const GRID_SPREAD: f64 = 0.1;

pub fn dose_space() -> DesignSpace {
    DesignSpace::new(0.0, DOSE_MAX).expect("static interval")
}

pub fn ed_target() -> TargetED {
    TargetED::new(ALPHA, dose_space()).expect("static target")
}

/// Curvature of the reference quadratic: its vertex sits exactly at the
/// upper dose. Printed to one significant digit this is `-0.00002`; the
/// unrounded value is the one that reproduces the published effective doses.
pub const QUADRATIC_CURVATURE: f64 = -0.00533 / DOSE_MAX / 2.0;

/// Reference mean parameters for each kind.
pub fn reference_vartheta(kind: ModelKind) -> Vec<f64> {
    match kind {
        ModelKind::LogLinear => vec![0.0, 0.0797, 1.0],
        ModelKind::Emax => vec![0.0, 0.467, 25.0],
        ModelKind::Exponential => vec![-0.08265, 0.08265, 85.0],
        ModelKind::Quadratic => vec![0.0, 0.00533, QUADRATIC_CURVATURE],
        ModelKind::Linear => vec![0.0, 0.003],
        ModelKind::Constant => vec![0.0],
    }
}

pub fn reference_model(kind: ModelKind) -> CandidateModel {
    CandidateModel::new(kind, reference_vartheta(kind), SIGMA2).expect("static parameters")
}

/// Log-linear, Emax and quadratic.
pub fn set_s1() -> Vec<ModelKind> {
    vec![ModelKind::LogLinear, ModelKind::Emax, ModelKind::Quadratic]
}

/// Log-linear, Emax and exponential.
pub fn set_s2() -> Vec<ModelKind> {
    vec![ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential]
}

/// Log-linear and Emax.
pub fn set_12() -> Vec<ModelKind> {
    vec![ModelKind::LogLinear, ModelKind::Emax]
}

/// Uniform prior on the reference models of `kinds`.
pub fn point_prior(kinds: &[ModelKind]) -> TruthPrior {
    TruthPrior::uniform(kinds.iter().map(|&k| reference_model(k)).collect()).expect("nonempty kinds")
}

/// Uniform over kinds, and within each kind uniform over the 3×3 grid of the
/// second and third parameters at `reference·(1 - spread, 1, 1 + spread)`.
/// Intercepts stay at their reference values.
pub fn grid_prior(kinds: &[ModelKind], spread: f64) -> TruthPrior {
    let mut models = Vec::new();
    for &k in kinds {
        let base = reference_vartheta(k);
        for f2 in [1.0 - spread, 1.0, 1.0 + spread] {
            for f3 in [1.0 - spread, 1.0, 1.0 + spread] {
                let mut t = base.clone();
                t[1] *= f2;
                t[2] *= f3;
                models.push(CandidateModel::new(k, t, SIGMA2).expect("grid stays admissible"));
            }
        }
    }
    TruthPrior::uniform(models).expect("nonempty grid")
}

fn design(points: &[f64], weights: &[f64]) -> ApproximateDesign {
    ApproximateDesign::new(points.to_vec(), weights.to_vec(), &dose_space()).expect("static design")
}

/// Uniform allocation on six doses.
pub fn xi1() -> ApproximateDesign {
    ApproximateDesign::uniform(vec![0.0, 10.0, 25.0, 50.0, 100.0, 150.0], &dose_space()).expect("static design")
}

/// Locally optimal for the log-linear ED at its reference parameters.
pub fn xi2() -> ApproximateDesign {
    design(&[0.0, 4.051, 150.0], &[0.339, 0.5, 0.161])
}

/// Locally optimal for the Emax ED at its reference parameters.
pub fn emax_local() -> ApproximateDesign {
    design(&[0.0, 18.75, 150.0], &[0.25, 0.5, 0.25])
}

/// Published compromise for log-linear/Emax averaging. The printed weights
/// sum to 0.999 and are renormalized.
pub fn xi12_star() -> ApproximateDesign {
    ApproximateDesign::normalized(vec![0.0, 13.026, 150.0], vec![0.281, 0.498, 0.220], &dose_space()).expect("static design")
}

/// Published optimum for [`set_s1`] under the grid prior.
pub fn xi_s1_star() -> ApproximateDesign {
    design(&[0.0, 18.310, 67.102, 150.0], &[0.205, 0.290, 0.281, 0.224])
}

/// Published optimum for [`set_s2`] under the grid prior.
pub fn xi_s2_star() -> ApproximateDesign {
    ApproximateDesign::normalized(
        vec![0.0, 10.025, 77.746, 84.556, 150.0],
        vec![0.192, 0.212, 0.198, 0.189, 0.208],
        &dose_space(),
    )
    .expect("static design")
}
