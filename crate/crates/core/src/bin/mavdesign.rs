use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mavdesign::config::{RunConfig, CONFIG_VERSION};
use mavdesign::criterion::{verify_optimality, SensitivityReport};
use mavdesign::models::ed_alpha;
use mavdesign::optimizer::{optimize, Strategy};
use mavdesign::projection::project;
use mavdesign::simulate::mse_study;
use mavdesign::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Optimal designs for model-averaging estimation of target doses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the optimizer and simulation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    strategy: Option<Strategy>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// KL projections of every prior atom onto every candidate under `[design]`.
    Project,
    /// Optimal design search followed by the optimality check.
    Optimize,
    /// Sensitivity check of `[design]`.
    Verify,
    /// Monte-Carlo MSE study.
    Simulate,
    /// Target doses of the prior atoms and simulation truths.
    Ed,
}

/// Returned when the optimality check fails, after artifacts are written.
struct Violation(f64, f64);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Violation(v, tol))) => {
            eprintln!("optimality check failed: max violation {v:.3e} exceeds tolerance {tol:.3e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprint!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprint!(": {s}");
                src = s.source();
            }
            eprintln!();
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<Option<Violation>> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.optimizer.seed = seed;
        if let Some(sim) = cfg.simulation.as_mut() {
            sim.seed = seed;
        }
    }
    if let Some(s) = cli.strategy {
        cfg.optimizer.strategy = s;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::Project => cmd_project(&cfg).map(|_| None),
        Command::Optimize => cmd_optimize(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::Simulate => cmd_simulate(&cfg).map(|_| None),
        Command::Ed => cmd_ed(&cfg).map(|_| None),
    }
}

fn provenance(artifact: &str) -> Vec<(&'static str, String)> {
    vec![
        ("artifact", artifact.to_string()),
        (
            "version",
            format!("mavdesign {} (config v{CONFIG_VERSION})", env!("CARGO_PKG_VERSION")),
        ),
    ]
}

/// Provenance plus seed (`none` for deterministic artifacts) and units.
fn metadata(artifact: &str, seed: Option<u64>, units: &str) -> Vec<(&'static str, String)> {
    let mut m = provenance(artifact);
    m.push(("seed", seed.map_or_else(|| "none".to_string(), |s| s.to_string())));
    m.push(("units", units.to_string()));
    m
}

/// Writes to a sibling temporary file, then renames over `path`.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_header(buf: &mut Vec<u8>, meta: &[(&str, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(buf, "# {k}: {v}")?;
    }
    Ok(())
}

fn cmd_project(cfg: &RunConfig) -> Result<()> {
    let ctx = cfg.context()?;
    let design = cfg.design()?;
    let target = ctx.target();
    let mut rows = Vec::new();
    println!(
        "{:<4} {:<36} {:<12} {:>12} {:>10}  theta*",
        "atom", "truth", "candidate", "kl", "ed"
    );
    for (i, atom) in ctx.prior().atoms().iter().enumerate() {
        let g = &atom.model;
        for (kind, start) in ctx.candidates() {
            let p = project(g, *kind, start, &design, ctx.settings()).map_err(|e| Error::Atom {
                index: i,
                label: g.label(),
                source: Box::new(e),
            })?;
            // Flat projections (a constant candidate, say) have no target dose.
            let ed = ed_alpha(*kind, &p.theta_star[1..], target).ok();
            let ed_text = ed.map_or_else(|| "NA".to_string(), |e| format!("{e:.4}"));
            let theta: Vec<String> = p.theta_star.iter().map(|v| format!("{v:.6}")).collect();
            println!(
                "{i:<4} {:<36} {:<12} {:>12.6e} {:>10}  ({})",
                g.label(),
                kind,
                p.kl_value,
                ed_text,
                theta.join(", ")
            );
            rows.push((i, g.label(), *kind, p, ed));
        }
    }
    write_atomic(&cfg.output_dir.join("projection.csv"), |buf| {
        write_header(buf, &metadata("projection", None, "kl in nats per observation; ed in dose"))?;
        let mut w = csv::Writer::from_writer(buf);
        let rec = |w: &mut csv::Writer<_>, r: Vec<String>| w.write_record(r).map_err(|e| Error::Io(e.to_string()));
        rec(
            &mut w,
            [
                "atom",
                "truth",
                "candidate",
                "kl",
                "ed",
                "sigma2_star",
                "vartheta_star",
                "converged",
            ]
            .map(String::from)
            .to_vec(),
        )?;
        for (i, label, kind, p, ed) in &rows {
            let vt: Vec<String> = p.theta_star[1..].iter().map(|v| format!("{v:.10e}")).collect();
            rec(
                &mut w,
                vec![
                    i.to_string(),
                    label.clone(),
                    kind.to_string(),
                    format!("{:.10e}", p.kl_value),
                    ed.map_or_else(|| "NA".to_string(), |e| format!("{e:.10}")),
                    format!("{:.10e}", p.theta_star[0]),
                    vt.join(" "),
                    p.converged.to_string(),
                ],
            )?;
        }
        w.flush()?;
        Ok(())
    })
}

fn check(report: &SensitivityReport, rel_tol: f64) -> Option<Violation> {
    let tol = rel_tol * report.criterion_value.abs();
    let worst_eq = report.support_equalities.iter().copied().fold(0.0, f64::max);
    println!(
        "criterion {:.6}  max violation {:.3e}  worst support |d| {:.3e}  tolerance {:.3e}",
        report.criterion_value, report.max_violation, worst_eq, tol
    );
    (report.max_violation > tol).then_some(Violation(report.max_violation, tol))
}

fn write_sensitivity(cfg: &RunConfig, report: &SensitivityReport, seed: Option<u64>) -> Result<()> {
    write_atomic(&cfg.output_dir.join("sensitivity.csv"), |buf| {
        report.write_csv(buf, &metadata("sensitivity", seed, "d_pi in criterion units (squared dose)"))
    })
}

fn cmd_optimize(cfg: &RunConfig) -> Result<Option<Violation>> {
    let ctx = cfg.context()?;
    let res = optimize(&ctx, &cfg.optimizer)?;
    for s in &res.per_start_values {
        println!(
            "k={} start={} initial {:.6} final {:.6} evals {} converged {}",
            s.k, s.index, s.initial_value, s.value, s.evals, s.converged
        );
    }
    println!("best design (criterion {:.6}, converged {}):", res.value, res.converged);
    for (x, w) in res.design.iter() {
        println!("  {x:>10.4}  {w:.4}");
    }
    let seed = Some(cfg.optimizer.seed);
    write_atomic(&cfg.output_dir.join("design.csv"), |buf| {
        write_header(buf, &metadata("design", seed, "dose; weight fraction"))?;
        writeln!(buf, "# criterion: {:.12e}", res.value)?;
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["point", "weight"]).map_err(|e| Error::Io(e.to_string()))?;
        for (x, wt) in res.design.iter() {
            w.write_record([format!("{x:.10}"), format!("{wt:.10}")])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })?;
    let report = verify_optimality(&ctx, &res.design, cfg.verify.step)?;
    write_sensitivity(cfg, &report, seed)?;
    Ok(check(&report, cfg.verify.rel_tol))
}

fn cmd_verify(cfg: &RunConfig) -> Result<Option<Violation>> {
    let ctx = cfg.context()?;
    let report = verify_optimality(&ctx, &cfg.design()?, cfg.verify.step)?;
    write_sensitivity(cfg, &report, None)?;
    Ok(check(&report, cfg.verify.rel_tol))
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let study = cfg.study()?;
    let report = mse_study(&study)?;
    for r in &report.rows {
        println!(
            "{:<10} {:<14} n={:<5} {:<11} mse {:>12.4}  bias2 {:>10.4}  var {:>10.4}  excluded {}",
            r.truth,
            r.design,
            r.n,
            r.estimator.name(),
            r.mse,
            r.bias2,
            r.var,
            r.excluded
        );
    }
    write_atomic(&cfg.output_dir.join("mse.csv"), |buf| {
        // The report adds its own seed and units lines.
        let mut meta = provenance("mse");
        meta.push(("reps", study.reps.to_string()));
        let excluded: usize = report.rows.iter().map(|r| r.excluded).sum();
        meta.push(("excluded_total", excluded.to_string()));
        report.write_csv(buf, &meta)
    })
}

fn cmd_ed(cfg: &RunConfig) -> Result<()> {
    let target = cfg.target()?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    if !cfg.prior.is_empty() {
        for (i, atom) in cfg.truth_prior()?.atoms().iter().enumerate() {
            let m = &atom.model;
            let ed = ed_alpha(m.kind(), m.vartheta(), &target).map_err(|e| Error::Atom {
                index: i,
                label: m.label(),
                source: Box::new(e),
            })?;
            rows.push((format!("prior[{i}] {}", m.label()), ed));
        }
    }
    if let Some(sim) = &cfg.simulation {
        for t in &sim.truths {
            let ed = ed_alpha(t.kind, &t.vartheta, &target)?;
            rows.push((format!("truth {} {}({:?})", t.name, t.kind, t.vartheta), ed));
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("no prior atoms or simulation truths to evaluate".into()));
    }
    for (label, ed) in &rows {
        println!("{label:<48} ED = {ed:.4}");
    }
    write_atomic(&cfg.output_dir.join("ed.csv"), |buf| {
        write_header(buf, &metadata("ed", None, &format!("dose (alpha = {})", cfg.alpha)))?;
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["model", "ed"]).map_err(|e| Error::Io(e.to_string()))?;
        for (label, ed) in &rows {
            w.write_record([label.clone(), format!("{ed:.10}")])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })
}
