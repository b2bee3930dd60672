//! Monte-Carlo MSE of the three target estimators (uniform averaging,
//! smooth-AIC averaging, AIC selection) for the log-linear truth under the
//! uniform six-dose design, candidates log-linear/Emax/quadratic.

use std::time::Instant;

use mavdesign::presets;
use mavdesign::simulate::{mse_study, Study};
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let study = Study {
        truths: vec![("log-linear".into(), presets::reference_model(ModelKind::LogLinear))],
        candidates: presets::set_s1(),
        designs: vec![("uniform six-dose".into(), presets::xi1())],
        n_list: vec![100],
        reps,
        seed: std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2024),
        target: presets::ed_target(),
    };
    let t = Instant::now();
    let report = mse_study(&study)?;
    println!("{reps} replications in {:.1?}", t.elapsed());
    report.write_csv(std::io::stdout().lock(), &[("example", "simulate_mse".into())])?;
    Ok(())
}
