//! Multi-start search for designs minimizing the Bayesian model-averaging
//! criterion over support points and weights.
//!
//! A `k`-point design is encoded as `(u_1..u_k, w_1..w_{k-1})` with
//! `x_i = a + u_i·(b - a)` and `w_k = 1 - Σ w_i`. The feasible set is
//! `0 ≤ u_i ≤ 1`, `w_i ≥ 0`, `Σ w_i ≤ 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cobyla::{self, CobylaOptions, LinearConstraints, Minimum};
use crate::criterion::{bayes_criterion, verify_optimality, CriterionContext, SensitivityReport};
use crate::design::{canonicalize, ApproximateDesign};
use crate::error::{Error, Result};
use crate::nelder_mead::{self, NelderMeadOptions};
use crate::types::{AveragingWeights, CandidateModel, DesignSpace, TargetED, TruthPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Cobyla,
    NelderMead,
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cobyla" => Ok(Strategy::Cobyla),
            "neldermead" | "nelder-mead" => Ok(Strategy::NelderMead),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected cobyla or neldermead)"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Cobyla => "cobyla",
            Strategy::NelderMead => "neldermead",
        })
    }
}

/// Inclusive range of support sizes to try.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KPoints {
    pub min: usize,
    pub max: usize,
}

impl KPoints {
    pub fn exactly(k: usize) -> Self {
        Self { min: k, max: k }
    }

    pub fn range(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub k_points: KPoints,
    /// Starts per support size; the first is always the equally spaced design.
    pub restarts: usize,
    /// Evaluation budget per start.
    pub max_evals: usize,
    /// Support points closer than this (dose units) are merged.
    pub merge_tol: f64,
    /// Support points lighter than this are dropped.
    pub weight_tol: f64,
    pub seed: u64,
    pub strategy: Strategy,
    /// Initial and final trust radius in the unit-scaled coordinates.
    pub rho_begin: f64,
    pub rho_end: f64,
    /// Grid spacing (dose units) for the final optimality check.
    pub verify_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            k_points: KPoints::range(3, 6),
            restarts: 4,
            max_evals: 3000,
            merge_tol: 1e-3,
            weight_tol: 1e-4,
            seed: 0,
            strategy: Strategy::Cobyla,
            rho_begin: 0.1,
            rho_end: 1e-7,
            verify_step: 0.5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_points.min < 2 || self.k_points.min > self.k_points.max {
            return Err(Error::Config(format!(
                "k_points must satisfy 2 ≤ min ≤ max, got {}..={}",
                self.k_points.min, self.k_points.max
            )));
        }
        if self.restarts == 0 || self.max_evals == 0 {
            return Err(Error::Config("restarts and max_evals must be at least 1".into()));
        }
        if !(self.merge_tol >= 0.0 && self.weight_tol >= 0.0) {
            return Err(Error::Config("merge_tol and weight_tol must be nonnegative".into()));
        }
        if !(self.rho_begin > 0.0 && self.rho_end > 0.0 && self.rho_end <= self.rho_begin) {
            return Err(Error::Config("need 0 < rho_end ≤ rho_begin".into()));
        }
        if !(self.verify_step > 0.0) {
            return Err(Error::Config("verify_step must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub k: usize,
    pub index: usize,
    pub initial_value: f64,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Canonical: sorted, merged, negligible weights dropped.
    pub design: ApproximateDesign,
    /// Criterion at `design`.
    pub value: f64,
    pub evals: usize,
    pub per_start_values: Vec<StartOutcome>,
    pub verified: SensitivityReport,
    /// Whether the winning start reached its final trust radius.
    pub converged: bool,
}

/// Encoding of `k`-point designs as optimizer coordinates.
#[derive(Debug, Clone, Copy)]
struct Encoding {
    k: usize,
    lower: f64,
    width: f64,
}

impl Encoding {
    fn new(k: usize, space: &DesignSpace) -> Self {
        Self {
            k,
            lower: space.lower(),
            width: space.width(),
        }
    }

    fn dim(&self) -> usize {
        2 * self.k - 1
    }

    fn constraints(&self) -> LinearConstraints {
        let (k, n) = (self.k, self.dim());
        let m = 2 * k + (k - 1) + 1;
        let mut rows = DMatrix::zeros(m, n);
        let mut rhs = DVector::zeros(m);
        for i in 0..k {
            rows[(2 * i, i)] = 1.0;
            rows[(2 * i + 1, i)] = -1.0;
            rhs[2 * i + 1] = -1.0;
        }
        for j in 0..k - 1 {
            rows[(2 * k + j, k + j)] = 1.0;
            rows[(m - 1, k + j)] = -1.0;
        }
        rhs[m - 1] = -1.0;
        LinearConstraints { rows, rhs }
    }

    /// Nearest feasible coordinates.
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut p = v.clone();
        for i in 0..k {
            p[i] = p[i].clamp(0.0, 1.0);
        }
        let w: Vec<f64> = (k..self.dim()).map(|j| v[j]).collect();
        for (j, wj) in project_capped_simplex(&w).into_iter().enumerate() {
            p[k + j] = wj;
        }
        p
    }

    fn design(&self, p: &DVector<f64>, space: &DesignSpace) -> Result<ApproximateDesign> {
        let k = self.k;
        let mut points = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        let mut rest = 1.0_f64;
        for i in 0..k {
            let w = if i + 1 < k { p[k + i] } else { rest.max(0.0) };
            rest -= w;
            if w > 0.0 {
                points.push((self.lower + p[i] * self.width).clamp(space.lower(), space.upper()));
                weights.push(w);
            }
        }
        ApproximateDesign::normalized(points, weights, space)
    }

    fn encode(&self, d: &ApproximateDesign) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (i, (x, w)) in d.iter().enumerate().take(self.k) {
            v[i] = (x - self.lower) / self.width;
            if i + 1 < self.k {
                v[self.k + i] = w;
            }
        }
        v
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w ≤ 1}`.
fn project_capped_simplex(y: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    // Onto the probability simplex: shift by τ and clip.
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// Initial designs for `k` support points: equally spaced with uniform
/// weights, then `restarts - 1` Latin-hypercube draws of the points.
fn initial_designs(k: usize, restarts: usize, seed: u64, space: &DesignSpace) -> Result<Vec<ApproximateDesign>> {
    let mut out = Vec::with_capacity(restarts);
    let even: Vec<f64> = (0..k).map(|i| space.lower() + space.width() * i as f64 / (k - 1) as f64).collect();
    out.push(ApproximateDesign::uniform(even, space)?);
    let draws = restarts - 1;
    if draws == 0 {
        return Ok(out);
    }
    // Stratum assignment shared by the draws; jitter is per draw.
    let mut strata_rng = ChaCha8Rng::seed_from_u64(stream_key(seed, k as u64, u64::MAX));
    let strata: Vec<Vec<usize>> = (0..k)
        .map(|_| {
            let mut perm: Vec<usize> = (0..draws).collect();
            perm.shuffle(&mut strata_rng);
            perm
        })
        .collect();
    for r in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(seed, k as u64, r as u64));
        let mut u: Vec<f64> = (0..k).map(|i| (strata[i][r] as f64 + rng.random::<f64>()) / draws as f64).collect();
        u.sort_by(f64::total_cmp);
        // Keep the interval ends, where optimal designs put mass.
        u[0] = 0.0;
        u[k - 1] = 1.0;
        let pts = u.iter().map(|v| space.lower() + v * space.width()).collect();
        out.push(ApproximateDesign::uniform(pts, space)?);
    }
    Ok(out)
}

/// Mixes the seed with stream coordinates (splitmix64 finalizer).
pub(crate) fn stream_key(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct StartRun {
    outcome: StartOutcome,
    design: Option<ApproximateDesign>,
}

fn run_start(ctx: &CriterionContext, config: &OptimizerConfig, k: usize, index: usize, start: &ApproximateDesign) -> StartRun {
    let space = *ctx.target().space();
    let enc = Encoding::new(k, &space);
    let objective = |v: &DVector<f64>| -> f64 {
        let p = enc.project(v);
        let dist = (v - &p).norm();
        match enc.design(&p, &space).and_then(|d| bayes_criterion(ctx, &d)) {
            // Exact penalty keeps minimizers feasible.
            Ok(value) => value * (1.0 + 10.0 * dist),
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = enc.encode(start);
    let initial_value = objective(&x0);
    let min: Minimum = match config.strategy {
        Strategy::Cobyla => cobyla::minimize(
            objective,
            &x0,
            &enc.constraints(),
            &CobylaOptions {
                rho_begin: config.rho_begin,
                rho_end: config.rho_end,
                max_evals: config.max_evals,
            },
        ),
        Strategy::NelderMead => nelder_mead::minimize(
            objective,
            &x0,
            &NelderMeadOptions {
                initial_step: config.rho_begin,
                x_tol: config.rho_end,
                max_evals: config.max_evals,
            },
        ),
    };
    let design = if min.value < cobyla::PENALTY {
        enc.design(&enc.project(&min.x), &space).ok()
    } else {
        None
    };
    StartRun {
        outcome: StartOutcome {
            k,
            index,
            initial_value: if initial_value.is_finite() { initial_value } else { f64::INFINITY },
            value: if design.is_some() { min.value } else { f64::INFINITY },
            evals: min.evals + 1,
            converged: min.converged,
        },
        design,
    }
}

/// Minimizes the criterion of `ctx` over designs with `config.k_points`
/// support points, from several starts per support size.
///
/// The winner (lowest value, earliest start on ties) is canonicalized,
/// re-evaluated and checked against the equivalence condition.
pub fn optimize(ctx: &CriterionContext, config: &OptimizerConfig) -> Result<OptimResult> {
    config.validate()?;
    let space = *ctx.target().space();
    let mut jobs = Vec::new();
    for k in config.k_points.min..=config.k_points.max {
        for (index, d) in initial_designs(k, config.restarts, config.seed, &space)?.into_iter().enumerate() {
            jobs.push((k, index, d));
        }
    }
    finish(ctx, config, jobs)
}

/// Refines a given design locally, keeping its number of support points.
pub fn optimize_from(ctx: &CriterionContext, config: &OptimizerConfig, start: &ApproximateDesign) -> Result<OptimResult> {
    config.validate()?;
    if start.len() < 2 {
        return Err(Error::InvalidArgument("a start design needs at least two support points".into()));
    }
    finish(ctx, config, vec![(start.len(), 0, start.clone())])
}

fn finish(ctx: &CriterionContext, config: &OptimizerConfig, jobs: Vec<(usize, usize, ApproximateDesign)>) -> Result<OptimResult> {
    let runs: Vec<StartRun> = jobs.par_iter().map(|(k, index, d)| run_start(ctx, config, *k, *index, d)).collect();
    let evals = runs.iter().map(|r| r.outcome.evals).sum();
    let per_start_values: Vec<StartOutcome> = runs.iter().map(|r| r.outcome.clone()).collect();

    // Canonicalize every finished start, then take the best re-evaluated one.
    let mut best: Option<(f64, ApproximateDesign, bool)> = None;
    for run in &runs {
        let Some(d) = &run.design else { continue };
        let Ok(c) = canonicalize(d, config.merge_tol, config.weight_tol) else {
            continue;
        };
        let Ok(v) = bayes_criterion(ctx, &c) else { continue };
        if best.as_ref().is_none_or(|(bv, _, _)| v < *bv) {
            best = Some((v, c, run.outcome.converged));
        }
    }
    let Some((value, design, converged)) = best else {
        let detail: Vec<String> = per_start_values
            .iter()
            .map(|s| format!("k={} start={} initial={:e}", s.k, s.index, s.initial_value))
            .collect();
        return Err(Error::Optimizer(format!(
            "no start produced a finite criterion value [{}]",
            detail.join("; ")
        )));
    };
    let verified = verify_optimality(ctx, &design, config.verify_step)?;
    Ok(OptimResult {
        design,
        value,
        evals,
        per_start_values,
        verified,
        converged,
    })
}

/// Locally optimal design for estimating the target in the single model `g`.
pub fn optimize_local(g: &CandidateModel, target: TargetED, n: usize, config: &OptimizerConfig) -> Result<OptimResult> {
    let ctx = CriterionContext::new(
        TruthPrior::point(g.clone()),
        vec![(g.kind(), g.vartheta().to_vec())],
        AveragingWeights::uniform(1),
        target,
        n,
    )?;
    optimize(&ctx, config)
}
