//! Property bodies shared by the property suite and the acceptance run.

use mavdesign::criterion::{bayes_criterion, directional_derivative, theta_prime, CriterionContext};
use mavdesign::design::ApproximateDesign;
use mavdesign::models::ed_alpha;
use mavdesign::moments::{expected_score, matrix_a, matrix_a_quadrature, matrix_b, matrix_b_quadrature};
use mavdesign::presets;
use mavdesign::projection::{project, ProjectionSettings};
use mavdesign::types::{CandidateModel, ModelKind, TruthPrior};
use nalgebra::DVector;
use proptest::prelude::*;

use super::rel_gap;

pub type Check = Result<(), TestCaseError>;

pub fn settings() -> ProjectionSettings {
    ProjectionSettings::new(presets::dose_space())
}

/// Zero-step limit of a one-sided difference quotient. Each base step gets
/// two Richardson levels (steps h, h/2, h/4, truncation O(h³)); the base
/// step whose estimate agrees best with the next two smaller ones wins, and
/// that disagreement is returned as the error estimate. A fixed
/// step fails both ways here: projections with a flat direction add
/// round-off noise at small steps, and strongly curved mixing paths bias
/// large ones.
pub fn extrapolated_slope(slope: impl Fn(f64) -> f64, h0: f64) -> (f64, f64) {
    const LEVELS: i32 = 14;
    let q: Vec<f64> = (0..LEVELS).map(|i| slope(h0 / 2f64.powi(i))).collect();
    let r: Vec<f64> = (0..q.len() - 2)
        .map(|i| (4.0 * (2.0 * q[i + 2] - q[i + 1]) - (2.0 * q[i + 1] - q[i])) / 3.0)
        .collect();
    // Spread of three consecutive estimates; a single chance agreement in
    // the noisy small-step tail is not enough.
    let spread = |i: usize| (r[i] - r[i + 1]).abs().max((r[i + 1] - r[i + 2]).abs());
    (0..r.len() - 2)
        .min_by(|&a, &b| spread(a).total_cmp(&spread(b)))
        .map(|i| (r[i], spread(i)))
        .unwrap()
}

pub fn information_equality(g: &CandidateModel, d: &ApproximateDesign) -> Check {
    let a = matrix_a(g, g, d).unwrap();
    let b = matrix_b(g, g, g, d).unwrap();
    prop_assert!((&a + &b).amax() <= 1e-9 * b.amax().max(1.0), "A + B = {}", &a + &b);
    Ok(())
}

pub fn moments_match_quadrature(g: &CandidateModel, s: &CandidateModel, t: &CandidateModel, d: &ApproximateDesign) -> Check {
    let a = matrix_a(g, s, d).unwrap();
    let aq = matrix_a_quadrature(g, s, d, 40).unwrap();
    prop_assert!(rel_gap(&a, &aq) <= 1e-8, "A gap {}", rel_gap(&a, &aq));
    let b = matrix_b(g, s, t, d).unwrap();
    let bq = matrix_b_quadrature(g, s, t, d, 40).unwrap();
    prop_assert!(rel_gap(&b, &bq) <= 1e-8, "B gap {}", rel_gap(&b, &bq));
    // Equal up to the summation order of the moment expansion.
    let bt = matrix_b(g, t, s, d).unwrap();
    prop_assert!(rel_gap(&bt, &b.transpose()) <= 1e-14);
    Ok(())
}

pub fn theta_prime_integrates_to_zero(g: &CandidateModel, kind: ModelKind, d: &ApproximateDesign) -> Check {
    let p = project(g, kind, &[], d, &settings()).unwrap();
    let mut acc = DVector::zeros(p.theta_star.len());
    let mut scale = 1.0f64;
    for (x, w) in d.iter() {
        let tp = theta_prime(g, &p, d, x).unwrap();
        scale = scale.max(tp.amax());
        acc += w * tp;
    }
    // Near-interpolating projections have |θ'| ≫ 1 in the offset/rate coordinate.
    prop_assert!(acc.amax() <= 1e-9 * scale, "∫θ' = {acc} (scale {scale})");
    Ok(())
}

pub fn projection_first_order_condition(g: &CandidateModel, kind: ModelKind, d: &ApproximateDesign) -> Check {
    let p = project(g, kind, &[], d, &settings()).unwrap();
    prop_assume!(p.converged);
    let s = p.model().unwrap();
    let mut score = DVector::zeros(s.n_params());
    for (x, w) in d.iter() {
        score += w * expected_score(g, &s, x).unwrap();
    }
    for j in p.free_indices() {
        prop_assert!(score[j].abs() <= 1e-8, "coordinate {j}: {}", score[j]);
    }
    // Misspecification can only inflate the variance.
    prop_assert!(p.theta_star[0] >= g.sigma2() * (1.0 - 1e-12));
    Ok(())
}

pub fn sensitivity_matches_difference(atoms: &[CandidateModel], probs: &[f64], set: &[ModelKind], d: &ApproximateDesign, x: f64) -> Check {
    let total: f64 = probs[..atoms.len()].iter().sum();
    let prior = TruthPrior::new(atoms.iter().cloned().zip(probs.iter().map(|p| p / total)).collect()).unwrap();
    let ctx = CriterionContext::uniform(prior, set, |_| vec![], presets::ed_target(), 100).unwrap();
    let phi = bayes_criterion(&ctx, d).unwrap();
    let an = directional_derivative(&ctx, d, x).unwrap();
    let (fd, fd_err) = extrapolated_slope(|a| (bayes_criterion(&ctx, &d.mix_with_point(x, a)).unwrap() - phi) / a, 1e-2);
    // Derivatives below 1% of Φ are compared at the resolution of Φ
    // itself; the oracle's own uncertainty is added but must stay small.
    let tol = 1e-4 * an.abs().max(1e-2 * phi);
    prop_assert!(fd_err <= 10.0 * tol, "difference oracle unresolved: {fd} ± {fd_err}");
    prop_assert!(
        (an - fd).abs() <= tol + 3.0 * fd_err,
        "x={x}: analytic {an}, fd {fd} ± {fd_err}, phi {phi}"
    );
    Ok(())
}

/// Closed-form target doses at the stated 1e-8.
pub fn ed_closed_forms() -> Check {
    let t = presets::ed_target();
    let linear = ed_alpha(ModelKind::Linear, &[0.3, 0.02], &t).unwrap();
    prop_assert!((linear - 60.0).abs() <= 1e-8, "{linear}");
    let emax = ed_alpha(ModelKind::Emax, &[0.0, 0.467, 25.0], &t).unwrap();
    prop_assert!((emax - 1500.0 / 115.0).abs() <= 1e-8, "{emax}");
    let ll = ed_alpha(ModelKind::LogLinear, &[0.0, 0.0797, 1.0], &t).unwrap();
    prop_assert!((ll - (151f64.powf(0.4) - 1.0)).abs() <= 1e-8, "{ll}");
    // The printed four-digit value is a rounding of the closed form.
    prop_assert!((ll - 6.4406).abs() < 5e-4);
    Ok(())
}
