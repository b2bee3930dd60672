//! Sandwich matrices for the log-linear/Emax pair under the Emax truth:
//! the information equality holds for the well-specified candidate only.

use mavdesign::moments::sandwich_restricted;
use mavdesign::presets;
use mavdesign::projection::{project, ProjectionSettings};
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let g = presets::reference_model(ModelKind::Emax);
    let design = presets::xi1();
    let settings = ProjectionSettings::new(presets::dose_space());
    let mut models = Vec::new();
    let mut free = Vec::new();
    for kind in presets::set_12() {
        let p = project(&g, kind, &presets::reference_vartheta(kind), &design, &settings)?;
        println!("{kind:<11} theta* = {:?}  KL = {:.3e}", p.theta_star, p.kl_value);
        free.push(p.free_indices());
        models.push(p.model()?);
    }
    let set = sandwich_restricted(&g, &models, &free, &design)?;
    for (s, kind) in presets::set_12().into_iter().enumerate() {
        let gap = (set.a(s) + set.b(s, s)).amax();
        println!("{kind:<11} max |A + B| = {gap:.3e}");
    }
    println!("stacked covariance:\n{:.4}", set.sigma());
    Ok(())
}
