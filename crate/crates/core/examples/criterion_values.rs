//! Prior-averaged asymptotic MSE of the published designs in the three
//! reference settings.

use std::time::Instant;

use mavdesign::criterion::{bayes_criterion, CriterionContext};
use mavdesign::presets;

fn main() -> mavdesign::Result<()> {
    let settings = [
        (
            "log-linear/emax, point prior",
            presets::set_12(),
            presets::point_prior(&presets::set_12()),
        ),
        (
            "S1, grid prior",
            presets::set_s1(),
            presets::grid_prior(&presets::set_s1(), presets::GRID_SPREAD),
        ),
        (
            "S2, grid prior",
            presets::set_s2(),
            presets::grid_prior(&presets::set_s2(), presets::GRID_SPREAD),
        ),
    ];
    let designs = [
        ("uniform six-dose", presets::xi1()),
        ("log-linear local", presets::xi2()),
        ("emax local", presets::emax_local()),
        ("log-linear/emax optimum", presets::xi12_star()),
        ("S1 optimum", presets::xi_s1_star()),
        ("S2 optimum", presets::xi_s2_star()),
    ];
    for (name, kinds, prior) in settings {
        let ctx = CriterionContext::uniform(prior, &kinds, presets::reference_vartheta, presets::ed_target(), 100)?;
        println!("{name}");
        for (dname, d) in &designs {
            let t = Instant::now();
            match bayes_criterion(&ctx, d) {
                Ok(v) => println!("  {dname:<26} {v:>12.4}   ({:.1} ms)", t.elapsed().as_secs_f64() * 1e3),
                Err(e) => println!("  {dname:<26} error: {e}"),
            }
        }
    }
    Ok(())
}
