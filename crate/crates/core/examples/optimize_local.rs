//! Locally optimal designs for estimating the ED₀.₄ in the log-linear and
//! Emax models at their reference parameters.

use std::time::Instant;

use mavdesign::optimizer::{optimize_local, KPoints, OptimizerConfig};
use mavdesign::presets;
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let config = OptimizerConfig {
        k_points: KPoints::exactly(3),
        restarts: 2,
        ..Default::default()
    };
    for kind in [ModelKind::LogLinear, ModelKind::Emax] {
        let t = Instant::now();
        let r = optimize_local(&presets::reference_model(kind), presets::ed_target(), 100, &config)?;
        println!(
            "{kind}: value {:.6}  evals {}  converged {}  ({:.1?})",
            r.value,
            r.evals,
            r.converged,
            t.elapsed()
        );
        for (x, w) in r.design.iter() {
            println!("  x = {x:9.4}  w = {w:.4}");
        }
        println!(
            "  max sensitivity {:.3e}, satisfied(1e-3): {}",
            r.verified.max_violation,
            r.verified.satisfied(1e-3)
        );
    }
    Ok(())
}
