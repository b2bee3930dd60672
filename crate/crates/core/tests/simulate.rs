//! Monte-Carlo harness: data generation, fits, estimators and study tables.

use mavdesign::design::{round_design, ExactDesign};
use mavdesign::moments::sandwich;
use mavdesign::presets;
use mavdesign::projection::{project, ProjectionSettings};
use mavdesign::simulate::{
    cell_estimates, draw_data, estimate, fit_mle, mse_study, select_by_aic, smooth_aic_weights, Estimator, FitResult, Study,
};
use mavdesign::types::ModelKind;

fn study(truths: &[ModelKind], designs: Vec<(&str, mavdesign::design::ApproximateDesign)>, reps: usize, seed: u64) -> Study {
    Study {
        truths: truths
            .iter()
            .map(|&k| (k.name().to_string(), presets::reference_model(k)))
            .collect(),
        candidates: presets::set_s1(),
        designs: designs.into_iter().map(|(n, d)| (n.to_string(), d)).collect(),
        n_list: vec![100],
        reps,
        seed,
        target: presets::ed_target(),
    }
}

#[test]
fn group_means_fall_in_the_clt_band() {
    let g = presets::reference_model(ModelKind::Exponential);
    let exact = ExactDesign::new(vec![0.0, 50.0, 150.0], vec![4000, 4000, 4000]).unwrap();
    let data = draw_data(&g, &exact, 3).unwrap();
    for (x, ys) in data.x.iter().zip(&data.y) {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let eta = mavdesign::models::mean_value(g.kind(), g.vartheta(), *x).unwrap();
        assert!(
            (mean - eta).abs() <= 4.0 * (g.sigma2() / ys.len() as f64).sqrt(),
            "x={x}: {mean} vs {eta}"
        );
    }
    assert_eq!(data, draw_data(&g, &exact, 3).unwrap());
    assert_ne!(data, draw_data(&g, &exact, 4).unwrap());
}

/// Misspecified fits settle on the KL projection, within five sandwich
/// standard errors at each sample size.
#[test]
fn misspecified_fit_is_consistent_for_the_projection() {
    let g = presets::reference_model(ModelKind::Quadratic);
    let design = presets::xi1();
    let space = presets::dose_space();
    let p = project(&g, ModelKind::Emax, &[], &design, &ProjectionSettings::new(space)).unwrap();
    assert!(p.active.is_none(), "projection on the box edge: {p:?}");
    let set = sandwich(&g, &[p.model().unwrap()], &design).unwrap();
    let cov = set.sigma_block(0, 0);
    for (n, seed) in [(1_000, 11), (10_000, 12)] {
        let data = draw_data(&g, &round_design(&design, n).unwrap(), seed).unwrap();
        let fit = fit_mle(ModelKind::Emax, &data, &[], &space).unwrap();
        assert!(fit.converged);
        for j in 0..4 {
            let se = (cov[(j, j)] / n as f64).sqrt();
            assert!(
                (fit.theta_hat[j] - p.theta_star[j]).abs() <= 5.0 * se,
                "n={n} coordinate {j}: {:?} vs {:?}",
                fit.theta_hat,
                p.theta_star
            );
        }
    }
}

fn fake(kind: ModelKind, vartheta: Vec<f64>, aic: f64) -> FitResult {
    let mut theta_hat = vec![0.1];
    theta_hat.extend(vartheta);
    FitResult {
        kind,
        theta_hat,
        sse: 0.0,
        loglik_sum: 0.0,
        aic,
        converged: true,
    }
}

#[test]
fn aic_weights_and_selection() {
    let target = presets::ed_target();
    let gap = 2.0 * 9f64.ln();
    let fits = [
        fake(ModelKind::Emax, vec![0.0, 0.467, 25.0], -40.0 + gap),
        fake(ModelKind::LogLinear, vec![0.0, 0.0797, 1.0], -40.0),
        fake(ModelKind::Quadratic, presets::reference_vartheta(ModelKind::Quadratic), -40.0),
    ];
    let w = smooth_aic_weights(&fits).unwrap();
    assert!((w.as_slice()[0] - 9.0 * w.as_slice()[1]).abs() <= 1e-12);
    assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);

    // Shifting every AIC leaves weights and the selected model alone.
    let shifted: Vec<FitResult> = fits
        .iter()
        .map(|f| FitResult {
            aic: f.aic + 1234.5,
            ..f.clone()
        })
        .collect();
    let ws = smooth_aic_weights(&shifted).unwrap();
    for (a, b) in w.as_slice().iter().zip(ws.as_slice()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert_eq!(select_by_aic(&fits), select_by_aic(&shifted));
    assert_eq!(select_by_aic(&fits), Some(0));

    // One model, or identical models: the three schemes agree.
    let one = &fits[1..2];
    let same = [fits[0].clone(), fits[0].clone()];
    for group in [one, &same[..]] {
        let e: Vec<f64> = Estimator::ALL.iter().map(|&s| estimate(group, s, &target).unwrap()).collect();
        assert!(e.iter().all(|v| (v - e[0]).abs() <= 1e-12 * e[0]), "{e:?}");
    }
}

#[test]
fn table_cells_decompose_and_single_replication_has_no_variance() {
    let s = study(
        &[ModelKind::LogLinear, ModelKind::Exponential],
        vec![("xi1", presets::xi1()), ("xi2", presets::xi2())],
        60,
        5,
    );
    let report = mse_study(&s).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 3);
    for r in &report.rows {
        assert!((r.mse - r.bias2 - r.var).abs() <= 1e-9 * r.mse, "{r:?}");
        assert_eq!(r.reps + r.excluded, 60);
    }
    let one = mse_study(&Study { reps: 1, ..s }).unwrap();
    for r in &one.rows {
        assert_eq!(r.var, 0.0);
        assert!((r.mse - r.bias2).abs() <= 1e-12 * r.mse.max(1e-300));
    }
}

#[test]
fn more_replications_keep_the_earlier_ones() {
    let s = study(&[ModelKind::Emax], vec![("xi1", presets::xi1())], 25, 9);
    let short = cell_estimates(&s, 0, 0, 100).unwrap();
    let long = cell_estimates(&Study { reps: 50, ..s }, 0, 0, 100).unwrap();
    assert_eq!(&long[..25], &short[..]);
}

#[test]
fn designs_share_random_numbers() {
    // The same exact design under two names sees identical replications.
    let s = study(&[ModelKind::Quadratic], vec![("a", presets::xi1()), ("b", presets::xi1())], 30, 2);
    assert_eq!(cell_estimates(&s, 0, 0, 100).unwrap(), cell_estimates(&s, 0, 1, 100).unwrap());
}

/// Uniform-weight MSE under the S1 optimum beats the uniform six-dose design
/// for every truth in the candidate set.
#[test]
fn bayes_optimal_design_beats_uniform_allocation() {
    let truths = [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Quadratic];
    let s = study(&truths, vec![("opt", presets::xi_s1_star()), ("xi1", presets::xi1())], 1000, 1);
    let report = mse_study(&s).unwrap();
    for t in truths {
        let opt = report.get(t.name(), "opt", 100, Estimator::Uniform).unwrap().mse;
        let uni = report.get(t.name(), "xi1", 100, Estimator::Uniform).unwrap().mse;
        assert!(opt < uni, "{t}: {opt} vs {uni}");
    }
}
