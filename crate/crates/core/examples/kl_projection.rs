//! Best approximations of each reference truth within the other families
//! under the uniform six-dose design, with the ED_0.4 they imply.

use mavdesign::models::ed_alpha;
use mavdesign::presets;
use mavdesign::projection::{project, ProjectionSettings};
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let design = presets::xi1();
    let target = presets::ed_target();
    let settings = ProjectionSettings::new(presets::dose_space());
    let kinds = [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential, ModelKind::Quadratic];

    println!(
        "{:<12} {:<12} {:>10} {:>12} {:>9}  theta*",
        "truth", "family", "ED_true", "KL", "ED*"
    );
    for truth in kinds {
        let g = presets::reference_model(truth);
        let ed_true = ed_alpha(truth, g.vartheta(), &target)?;
        for family in kinds {
            let start = presets::reference_vartheta(family);
            let p = project(&g, family, &start, &design, &settings)?;
            let ed = ed_alpha(family, &p.theta_star[1..], &target)?;
            let flag = if p.active.is_some() { " (at bound)" } else { "" };
            println!(
                "{:<12} {:<12} {:>10.4} {:>12.3e} {:>9.4}  {:.6?}{flag}",
                truth.name(),
                family.name(),
                ed_true,
                p.kl_value,
                ed,
                p.theta_star
            );
        }
    }
    Ok(())
}
