//! Efficient rounding of the published approximate designs to exact
//! allocations for a few sample sizes.

use mavdesign::design::round_design;
use mavdesign::presets;

fn main() -> mavdesign::Result<()> {
    for (name, d) in [
        ("log-linear local", presets::xi2()),
        ("S1 optimum", presets::xi_s1_star()),
        ("S2 optimum", presets::xi_s2_star()),
    ] {
        println!("{name}: points {:?}", d.points());
        for n in [20, 50, 100, 250] {
            let e = round_design(&d, n)?;
            println!("  n = {n:<4} counts {:?}", e.counts());
        }
    }
    Ok(())
}
