//! Optimality check of the published log-linear/Emax compromise design,
//! written as plot-ready CSV to stdout.

use mavdesign::criterion::{verify_optimality, CriterionContext};
use mavdesign::presets;

fn main() -> mavdesign::Result<()> {
    let kinds = presets::set_12();
    let ctx = CriterionContext::uniform(
        presets::point_prior(&kinds),
        &kinds,
        presets::reference_vartheta,
        presets::ed_target(),
        100,
    )?;
    let report = verify_optimality(&ctx, &presets::xi12_star(), 1.0)?;
    eprintln!(
        "max violation {:.3e}, support |d| {:?}, satisfied at 1e-3: {}",
        report.max_violation,
        report.support_equalities,
        report.satisfied(1e-3)
    );
    report.write_csv(
        std::io::stdout().lock(),
        &[("artifact", "sensitivity".into()), ("units", "squared dose".into())],
    )
}
