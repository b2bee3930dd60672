//! Criterion values, θ' and the sensitivity against independent oracles.

mod common;

use common::checks::{extrapolated_slope, settings};
use mavdesign::criterion::{
    atom_state, bayes_criterion, directional_derivative, mav_mse, mav_variance, theta_prime, verify_optimality, CriterionContext,
};
use mavdesign::design::ApproximateDesign;
use mavdesign::models::{ed_alpha, mean_value};
use mavdesign::moments::{matrix_a_quadrature, matrix_b_quadrature};
use mavdesign::presets;
use mavdesign::projection::project;
use mavdesign::types::{AveragingWeights, CandidateModel, ModelKind, TargetED, TruthPrior};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

fn ctx(prior: TruthPrior, kinds: &[ModelKind]) -> CriterionContext {
    CriterionContext::uniform(prior, kinds, |_| vec![], presets::ed_target(), 100).unwrap()
}

fn space_design(points: &[f64], weights: &[f64]) -> ApproximateDesign {
    ApproximateDesign::normalized(points.to_vec(), weights.to_vec(), &presets::dose_space()).unwrap()
}

/// Central differences of the target dose in the mean parameters, padded
/// with the (zero) variance component.
fn ed_gradient_fd(kind: ModelKind, t: &[f64], target: &TargetED) -> DVector<f64> {
    let mut g = DVector::zeros(t.len() + 1);
    for j in 0..t.len() {
        let h = 1e-6 * t[j].abs().max(1e-3);
        let (mut up, mut dn) = (t.to_vec(), t.to_vec());
        up[j] += h;
        dn[j] -= h;
        g[j + 1] = (ed_alpha(kind, &up, target).unwrap() - ed_alpha(kind, &dn, target).unwrap()) / (2.0 * h);
    }
    g
}

#[test]
fn one_point_prior_reduces_to_mav_mse() {
    let kinds = presets::set_s1();
    for kind in [ModelKind::LogLinear, ModelKind::Exponential, ModelKind::Quadratic] {
        let g = presets::reference_model(kind);
        let c = ctx(TruthPrior::point(g.clone()), &kinds);
        let d = presets::xi1();
        assert_eq!(bayes_criterion(&c, &d).unwrap(), mav_mse(&c, &g, &d).unwrap());
    }
}

#[test]
fn splitting_an_atom_changes_nothing() {
    let kinds = presets::set_s2();
    let (a, b) = (
        presets::reference_model(ModelKind::Emax),
        presets::reference_model(ModelKind::Exponential),
    );
    let merged = ctx(TruthPrior::new(vec![(a.clone(), 0.4), (b.clone(), 0.6)]).unwrap(), &kinds);
    let split = ctx(TruthPrior::new(vec![(a.clone(), 0.1), (b, 0.6), (a, 0.3)]).unwrap(), &kinds);
    let d = presets::xi_s2_star();
    let (m, s) = (bayes_criterion(&merged, &d).unwrap(), bayes_criterion(&split, &d).unwrap());
    assert!((m - s).abs() <= 1e-12 * m, "{m} vs {s}");
}

#[test]
fn correctly_specified_variance_is_the_delta_method() {
    let target = presets::ed_target();
    let d = presets::xi1();
    for kind in [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential, ModelKind::Quadratic] {
        let g = presets::reference_model(kind);
        let p = project(&g, kind, &[], &d, &settings()).unwrap();
        let v = mav_variance(&g, &[p], &AveragingWeights::uniform(1), &target, &d).unwrap();
        // Fisher information of the Gaussian model, mean gradient by central differences.
        let s2 = g.sigma2();
        let k = g.vartheta().len();
        let mut info = DMatrix::zeros(k + 1, k + 1);
        for (x, w) in d.iter() {
            let mut grad = DVector::zeros(k + 1);
            for j in 0..k {
                let h = 1e-6 * g.vartheta()[j].abs().max(1e-3);
                let (mut up, mut dn) = (g.vartheta().to_vec(), g.vartheta().to_vec());
                up[j] += h;
                dn[j] -= h;
                grad[j + 1] = (mean_value(kind, &up, x).unwrap() - mean_value(kind, &dn, x).unwrap()) / (2.0 * h);
            }
            info += w * (&grad * grad.transpose()) / s2;
            info[(0, 0)] += w / (2.0 * s2 * s2);
        }
        let mu = ed_gradient_fd(kind, g.vartheta(), &target);
        let delta = mu.dot(&(info.try_inverse().unwrap() * &mu));
        assert!((v - delta).abs() <= 1e-6 * delta, "{kind}: {v} vs {delta}");
    }
}

#[test]
fn duplicate_candidates_share_the_variance() {
    let target = presets::ed_target();
    let d = presets::xi1();
    let g = presets::reference_model(ModelKind::Quadratic);
    let p = project(&g, ModelKind::Emax, &[], &d, &settings()).unwrap();
    let one = mav_variance(&g, std::slice::from_ref(&p), &AveragingWeights::uniform(1), &target, &d).unwrap();
    let two = mav_variance(&g, &[p.clone(), p], &AveragingWeights::uniform(2), &target, &d).unwrap();
    assert!((one - two).abs() <= 1e-12 * one, "{one} vs {two}");
}

#[test]
fn criterion_decreases_with_sample_size() {
    let kinds = presets::set_s1();
    let prior = presets::point_prior(&[ModelKind::Exponential]);
    let d = presets::xi1();
    let phis: Vec<f64> = [25, 50, 100, 400, 10_000]
        .into_iter()
        .map(|n| {
            let c = CriterionContext::uniform(prior.clone(), &kinds, |_| vec![], presets::ed_target(), n).unwrap();
            bayes_criterion(&c, &d).unwrap()
        })
        .collect();
    assert!(phis.windows(2).all(|w| w[1] < w[0]), "{phis:?}");
    // The bias term is what remains for large n.
    let s = atom_state(&ctx(prior, &kinds), &presets::reference_model(ModelKind::Exponential), &d).unwrap();
    assert!((phis[4] - s.bias().powi(2)).abs() <= s.variance() / 10_000.0 * (1.0 + 1e-12));
}

/// Φ_mav rebuilt from quadrature moments, finite-difference target
/// gradients and an explicit sandwich.
#[test]
fn mav_mse_matches_quadrature_recomputation() {
    let kinds = presets::set_s1();
    let target = presets::ed_target();
    let g = presets::reference_model(ModelKind::Quadratic);
    let d = presets::xi1();
    let c = ctx(TruthPrior::point(g.clone()), &kinds);
    let lib = mav_mse(&c, &g, &d).unwrap();

    let models: Vec<CandidateModel> = kinds
        .iter()
        .map(|&k| project(&g, k, &[], &d, &settings()).unwrap().model().unwrap())
        .collect();
    let mu: Vec<f64> = models.iter().map(|m| ed_alpha(m.kind(), m.vartheta(), &target).unwrap()).collect();
    let u: Vec<DVector<f64>> = models
        .iter()
        .map(|m| {
            let a = matrix_a_quadrature(&g, m, &d, 40).unwrap();
            a.try_inverse().unwrap() * ed_gradient_fd(m.kind(), m.vartheta(), &target)
        })
        .collect();
    let r = models.len() as f64;
    let mut var = 0.0;
    for (s, ms) in models.iter().enumerate() {
        for (t, mt) in models.iter().enumerate() {
            var += u[s].dot(&(matrix_b_quadrature(&g, ms, mt, &d, 40).unwrap() * &u[t])) / (r * r);
        }
    }
    let bias = mu.iter().sum::<f64>() / r - ed_alpha(g.kind(), g.vartheta(), &target).unwrap();
    let oracle = var / 100.0 + bias * bias;
    assert!((lib - oracle).abs() <= 1e-6 * oracle, "{lib} vs {oracle}");
}

#[test]
fn published_compromise_beats_random_three_point_designs() {
    let kinds = presets::set_12();
    let c = ctx(presets::point_prior(&kinds), &kinds);
    let best = bayes_criterion(&c, &presets::xi12_star()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let mut evaluated = 0;
    for _ in 0..1000 {
        let mut pts: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..150.0)).collect();
        pts.sort_by(f64::total_cmp);
        let w: Vec<f64> = (0..3).map(|_| -rng.random_range(1e-12..1.0f64).ln()).collect();
        let Ok(d) = ApproximateDesign::normalized(pts, w, &presets::dose_space()) else {
            continue;
        };
        // Near-singular designs are rejected by the criterion itself.
        if let Ok(v) = bayes_criterion(&c, &d) {
            evaluated += 1;
            assert!(v >= best, "{d:?} gives {v} < {best}");
        }
    }
    assert!(evaluated >= 900, "only {evaluated} designs evaluated");
}

#[test]
fn theta_prime_matches_projection_path() {
    let cases = [
        (ModelKind::Quadratic, ModelKind::LogLinear, presets::xi1(), 75.0),
        (ModelKind::Exponential, ModelKind::Emax, presets::xi_s2_star(), 30.0),
        (ModelKind::Emax, ModelKind::Exponential, presets::xi1(), 120.0),
    ];
    for (truth, kind, d, x) in cases {
        let g = presets::reference_model(truth);
        let p = project(&g, kind, &[], &d, &settings()).unwrap();
        let tp = theta_prime(&g, &p, &d, x).unwrap();
        let path = |a: f64| {
            let q = project(&g, kind, &[], &d.mix_with_point(x, a), &settings()).unwrap();
            (DVector::from_vec(q.theta_star) - DVector::from_vec(p.theta_star.clone())) / a
        };
        // Steps 1e-5 and 5e-6 combined to cancel the O(α) truncation term.
        let fd = 2.0 * path(5e-6) - path(1e-5);
        assert!((&tp - &fd).amax() <= 1e-5 * tp.amax(), "{truth} on {kind}: {tp} vs {fd}");
    }
}

#[test]
fn theta_prime_vanishes_for_correct_model_at_support() {
    let d = presets::xi1();
    for kind in [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Quadratic] {
        let g = presets::reference_model(kind);
        let p = project(&g, kind, &[], &d, &settings()).unwrap();
        for x in d.points() {
            let tp = theta_prime(&g, &p, &d, *x).unwrap();
            let q = project(&g, kind, &[], &d.mix_with_point(*x, 1e-5), &settings()).unwrap();
            let fd = (DVector::from_vec(q.theta_star) - DVector::from_vec(p.theta_star.clone())) / 1e-5;
            assert!(tp.amax() <= 1e-9 && fd.amax() <= 1e-5, "{kind} at {x}: {tp} vs {fd}");
        }
    }
}

#[test]
fn sensitivity_matches_difference_on_published_designs() {
    let cases = [
        (presets::set_12(), presets::point_prior(&presets::set_12()), presets::xi12_star()),
        (
            presets::set_s1(),
            presets::grid_prior(&presets::set_s1(), 0.1),
            presets::xi_s1_star(),
        ),
        (presets::set_s2(), presets::grid_prior(&presets::set_s2(), 0.1), presets::xi1()),
    ];
    for (kinds, prior, d) in cases {
        let c = ctx(prior, &kinds);
        let phi = bayes_criterion(&c, &d).unwrap();
        for x in [0.0, 7.5, 40.0, 99.0, 150.0] {
            let an = directional_derivative(&c, &d, x).unwrap();
            let (fd, err) = extrapolated_slope(|a| (bayes_criterion(&c, &d.mix_with_point(x, a)).unwrap() - phi) / a, 1e-2);
            let tol = 1e-4 * an.abs().max(1e-2 * phi);
            assert!(err <= tol && (an - fd).abs() <= tol, "x={x}: {an} vs {fd} ± {err}");
        }
    }
}

#[test]
fn perturbed_compromise_has_an_ascent_direction() {
    let kinds = presets::set_12();
    let c = ctx(presets::point_prior(&kinds), &kinds);
    let moved = space_design(&[0.0, 40.0, 150.0], &[0.281, 0.498, 0.220]);
    let report = verify_optimality(&c, &moved, 0.25).unwrap();
    assert!(report.max_violation > 0.0);
    // Mixing toward the worst grid point lowers the criterion.
    let (i, _) = report.values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let x = report.grid[i];
    let phi = bayes_criterion(&c, &moved).unwrap();
    assert!(bayes_criterion(&c, &moved.mix_with_point(x, 1e-3)).unwrap() < phi);
}

#[test]
fn missing_upper_dose_shows_up_in_the_report() {
    let kinds = presets::set_12();
    let c = ctx(presets::point_prior(&kinds), &kinds);
    let d = space_design(&[0.0, 13.0, 75.0], &[0.3, 0.5, 0.2]);
    let report = verify_optimality(&c, &d, 0.25).unwrap();
    assert!(report.max_violation > 1e-3 * report.criterion_value);
    let last = report.grid.iter().position(|&x| x == 150.0).unwrap();
    assert!(report.values[last] > 0.0);
    // 601 grid points plus the three support points.
    assert_eq!(report.grid.len(), 601 + d.len());
    assert_eq!(report.values.len(), report.grid.len());
    assert_eq!(report.is_support.iter().filter(|s| **s).count(), d.len());
}
