//! Target doses of the reference models and of the prior grid around them.

use mavdesign::models::ed_alpha;
use mavdesign::presets;
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let target = presets::ed_target();
    for kind in [ModelKind::LogLinear, ModelKind::Emax, ModelKind::Exponential, ModelKind::Quadratic] {
        let m = presets::reference_model(kind);
        println!("{:<40} ED = {:.4}", m.label(), ed_alpha(kind, m.vartheta(), &target)?);
    }
    // Spread of the target dose across the ±10% grid for each kind.
    let prior = presets::grid_prior(&presets::set_s2(), presets::GRID_SPREAD);
    for chunk in prior.atoms().chunks(9) {
        let eds = chunk
            .iter()
            .map(|a| ed_alpha(a.model.kind(), a.model.vartheta(), &target))
            .collect::<mavdesign::Result<Vec<_>>>()?;
        let lo = eds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!("grid {:<12} ED in [{lo:.3}, {hi:.3}]", chunk[0].model.kind());
    }
    Ok(())
}
