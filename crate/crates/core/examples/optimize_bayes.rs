//! Bayesian optimal designs for model averaging in the three reference
//! settings: log-linear/Emax with a point prior, and the two three-model
//! candidate sets with a ±10% parameter-grid prior.

use std::time::Instant;

use mavdesign::criterion::CriterionContext;
use mavdesign::optimizer::{optimize, KPoints, OptimizerConfig};
use mavdesign::presets;
use mavdesign::types::ModelKind;

fn main() -> mavdesign::Result<()> {
    let settings: [(&str, Vec<ModelKind>, bool, usize); 3] = [
        ("log-linear + Emax, point prior", presets::set_12(), false, 3),
        ("S1, grid prior", presets::set_s1(), true, 4),
        ("S2, grid prior", presets::set_s2(), true, 5),
    ];
    for (label, kinds, grid, k) in settings {
        let prior = if grid {
            presets::grid_prior(&kinds, presets::GRID_SPREAD)
        } else {
            presets::point_prior(&kinds)
        };
        let ctx = CriterionContext::uniform(prior, &kinds, presets::reference_vartheta, presets::ed_target(), 100)?;
        let config = OptimizerConfig {
            k_points: KPoints::exactly(k),
            restarts: 3,
            ..Default::default()
        };
        let t = Instant::now();
        let r = optimize(&ctx, &config)?;
        println!(
            "{label}: value {:.4}  evals {}  converged {}  ({:.1?})",
            r.value,
            r.evals,
            r.converged,
            t.elapsed()
        );
        for (x, w) in r.design.iter() {
            println!("  x = {x:9.4}  w = {w:.4}");
        }
        for s in &r.per_start_values {
            println!(
                "  start {} (k = {}): {:.4} -> {:.4} in {} evals",
                s.index, s.k, s.initial_value, s.value, s.evals
            );
        }
        println!(
            "  max sensitivity {:.3e}, satisfied(1e-3): {}",
            r.verified.max_violation,
            r.verified.satisfied(1e-3)
        );
    }
    Ok(())
}
