//! Simulated MSE of the three estimators under competing designs, for both
//! candidate sets: each set's Bayesian optimal design against the uniform
//! six-dose design and the log-linear locally optimal design.

use std::time::Instant;

use mavdesign::presets;
use mavdesign::simulate::{mse_study, Estimator, Study};
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let seed = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let truths: Vec<(String, _)> = [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential, ModelKind::Quadratic]
        .into_iter()
        .map(|k| (k.name().to_string(), presets::reference_model(k)))
        .collect();
    for (set, kinds, optimum) in [
        ("S1", presets::set_s1(), presets::xi_s1_star()),
        ("S2", presets::set_s2(), presets::xi_s2_star()),
    ] {
        let study = Study {
            truths: truths.clone(),
            candidates: kinds,
            designs: vec![
                ("optimal".into(), optimum),
                ("uniform six-dose".into(), presets::xi1()),
                ("log-linear local".into(), presets::xi2()),
            ],
            n_list: vec![100],
            reps,
            seed,
            target: presets::ed_target(),
        };
        let t = Instant::now();
        let report = mse_study(&study)?;
        println!("candidate set {set} ({reps} replications, {:.1?})", t.elapsed());
        for (truth, _) in &truths {
            for (design, _) in &study.designs {
                let cells: Vec<String> = Estimator::ALL
                    .iter()
                    .map(|&e| format!("{:>10.3}", report.get(truth, design, 100, e).map_or(f64::NAN, |r| r.mse)))
                    .collect();
                println!("  {truth:<12} {design:<18} {}", cells.join(" "));
            }
        }
    }
    Ok(())
}
