//! Loads a run configuration, builds its criterion and evaluates the
//! configured design, then prints the normalized TOML.

use mavdesign::config::RunConfig;
use mavdesign::criterion::bayes_criterion;

fn main() -> mavdesign::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/s1.toml").into());
    let cfg = RunConfig::load(path.as_ref())?;
    let ctx = cfg.context()?;
    println!("{} prior atoms, {} candidates", ctx.prior().len(), ctx.candidates().len());
    if cfg.design.is_some() {
        println!("criterion at [design]: {:.4}", bayes_criterion(&ctx, &cfg.design()?)?);
    }
    print!("{}", cfg.to_toml()?);
    Ok(())
}
