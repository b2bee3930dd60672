//! Weighted nonlinear least squares `min_ϑ ½ Σ_i w_i (y_i - η(x_i, ϑ))²`.
//!
//! Every supported mean is linear in its first two parameters once the third
//! is fixed, so the nonlinear coordinate is first scanned on a log grid with
//! the linear part solved exactly. The best grid cells and any caller starts
//! are then polished by a damped Newton iteration using the exact Hessian
//! `Σ w (∇η∇ηᵀ - e ∇²η)`. The nonlinear coordinate is kept inside a compact
//! box; when the optimum sits on the box edge that coordinate is reported as
//! active and excluded from the gradient norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{mean_grad_hess, mean_value};
use crate::types::ModelKind;

/// Tuning knobs for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct LsqOptions {
    /// Box for the nonlinear coordinate; ignored for linear kinds.
    pub bounds: Option<(f64, f64)>,
    /// Log-spaced profile grid size over the box.
    pub scan_points: usize,
    /// Number of best grid cells polished.
    pub scan_polish: usize,
    /// Relative coordinate perturbation applied to each caller start.
    pub perturbation: f64,
    pub max_iter: usize,
    /// Gradient norm (free coordinates, max-norm) regarded as converged.
    pub gradient_tol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            bounds: None,
            scan_points: 64,
            scan_polish: 3,
            perturbation: 0.25,
            max_iter: 200,
            gradient_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqFit {
    pub vartheta: Vec<f64>,
    /// `Σ w e²` at the optimum (no ½).
    pub wsse: f64,
    /// Max-norm of `∇ ½Σ w e²` over free coordinates.
    pub gradient_norm: f64,
    pub converged: bool,
    /// Index into ϑ of a coordinate pinned to the box edge.
    pub active: Option<usize>,
}

/// Weighted data `(x_i, y_i, w_i)`.
#[derive(Debug, Clone, Copy)]
pub struct LsqData<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub w: &'a [f64],
}

fn wsse(kind: ModelKind, t: &[f64], d: &LsqData) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..d.x.len() {
        let e = d.y[i] - mean_value(kind, t, d.x[i])?;
        s += d.w[i] * e * e;
    }
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::InvalidArgument("non-finite residual".into()))
    }
}

/// Weighted linear least squares on the columns of `basis`, via SVD with
/// column equilibration so badly scaled polynomial columns stay accurate.
fn linear_solve(basis: &DMatrix<f64>, d: &LsqData) -> Option<DVector<f64>> {
    let (m, p) = basis.shape();
    let mut a = DMatrix::zeros(m, p);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        let sw = d.w[i].sqrt();
        for j in 0..p {
            a[(i, j)] = sw * basis[(i, j)];
        }
        b[i] = sw * d.y[i];
    }
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..p {
        a.column_mut(j).scale_mut(1.0 / scale[j]);
    }
    let sol = a.svd(true, true).solve(&b, 1e-13).ok()?;
    let out = DVector::from_fn(p, |j, _| sol[j] / scale[j]);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Second basis column of a partially linear kind at fixed nonlinear value `c`.
fn nonlinear_column(kind: ModelKind, c: f64, x: f64) -> f64 {
    match kind {
        ModelKind::LogLinear => (x + c).ln(),
        ModelKind::Emax => x / (c + x),
        ModelKind::Exponential => (x / c).exp(),
        _ => unreachable!("only partially linear kinds have a nonlinear column"),
    }
}

/// Exact solution for kinds that are linear in every parameter.
fn fit_linear(kind: ModelKind, d: &LsqData) -> Option<Vec<f64>> {
    let p = kind.n_mean_params();
    let basis = DMatrix::from_fn(d.x.len(), p, |i, j| d.x[i].powi(j as i32));
    linear_solve(&basis, d).map(|v| v.iter().copied().collect())
}

/// Best linear part for fixed `c`, from centered weighted moments; returns
/// the full ϑ.
fn profile_at(kind: ModelKind, c: f64, d: &LsqData) -> Option<Vec<f64>> {
    let mut sw = 0.0;
    let mut sphi = 0.0;
    let mut sy = 0.0;
    let mut phi = [0.0; 64];
    let m = d.x.len();
    let mut heap;
    let phi: &mut [f64] = if m <= phi.len() {
        &mut phi[..m]
    } else {
        heap = vec![0.0; m];
        &mut heap
    };
    for i in 0..m {
        phi[i] = nonlinear_column(kind, c, d.x[i]);
        if !phi[i].is_finite() {
            return None;
        }
        sw += d.w[i];
        sphi += d.w[i] * phi[i];
        sy += d.w[i] * d.y[i];
    }
    let (pbar, ybar) = (sphi / sw, sy / sw);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut scale = 0.0_f64;
    for i in 0..m {
        let dp = phi[i] - pbar;
        sxx += d.w[i] * dp * dp;
        sxy += d.w[i] * dp * (d.y[i] - ybar);
        scale = scale.max(phi[i].abs());
    }
    let b = if sxx > 1e-24 * sw * scale * scale { sxy / sxx } else { 0.0 };
    Some(vec![ybar - b * pbar, b, c])
}

fn grad_hess(kind: ModelKind, t: &[f64], d: &LsqData) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = t.len();
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for i in 0..d.x.len() {
        let (v, gr, hs) = mean_grad_hess(kind, t, d.x[i])?;
        let e = d.y[i] - v;
        let w = d.w[i];
        for j in 0..p {
            g[j] -= w * e * gr[j];
            for k in 0..p {
                h[j][k] += w * (gr[j] * gr[k] - e * hs[j][k]);
            }
        }
    }
    Ok((DVector::from_fn(p, |j, _| g[j]), DMatrix::from_fn(p, p, |j, k| h[j][k])))
}

/// Gradient of the objective at the profile point for `c`; its linear
/// components vanish up to round-off.
fn profile_gradient(kind: ModelKind, c: f64, d: &LsqData) -> Option<(Vec<f64>, DVector<f64>)> {
    let t = profile_at(kind, c, d)?;
    let (g, _) = grad_hess(kind, &t, d).ok()?;
    Some((t, g))
}

/// Root of the profiled derivative in the nonlinear coordinate by bracketing
/// and regula falsi. Newton steps on the full problem stall once the
/// objective change drops below round-off, which for badly conditioned fits
/// happens well before the gradient is at its floor.
fn refine_profile(kind: ModelKind, c0: f64, lo: f64, hi: f64, d: &LsqData, k: usize) -> Option<(Vec<f64>, f64, f64)> {
    let (_, g0) = profile_gradient(kind, c0, d)?;
    let dir = -g0[k].signum();
    if g0[k] == 0.0 {
        return None;
    }
    let (mut a, mut ga) = (c0, g0[k]);
    let mut step = 1e-8 * c0.abs().max(1e-3);
    let (mut b, mut gb);
    loop {
        b = (c0 + dir * step).clamp(lo, hi);
        gb = profile_gradient(kind, b, d)?.1[k];
        if gb.signum() != ga.signum() {
            break;
        }
        if b == lo || b == hi || step > hi - lo {
            return None;
        }
        (a, ga) = (b, gb);
        step *= 4.0;
    }
    let mut side = 0;
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()) {
            break;
        }
        let c = (a * gb - b * ga) / (gb - ga);
        let c = if c > a.min(b) && c < a.max(b) { c } else { 0.5 * (a + b) };
        let gc = profile_gradient(kind, c, d)?.1[k];
        if gc == 0.0 {
            a = c;
            break;
        }
        // Illinois modification keeps both ends moving.
        if gc.signum() == gb.signum() {
            (b, gb) = (c, gc);
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            (a, ga) = (c, gc);
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    let best = [a, b]
        .into_iter()
        .filter_map(|c| profile_gradient(kind, c, d))
        .map(|(t, g)| (g.amax(), t))
        .min_by(|x, y| x.0.total_cmp(&y.0))?;
    let f = wsse(kind, &best.1, d).ok()?;
    Some((best.1, f, best.0))
}

/// Damped Newton polish from `start`, keeping coordinate `nl` inside `bounds`.
fn polish(
    kind: ModelKind,
    start: Vec<f64>,
    d: &LsqData,
    nl: Option<usize>,
    bounds: Option<(f64, f64)>,
    opts: &LsqOptions,
) -> Option<LsqFit> {
    // Values within round-off of an edge are snapped onto it so the
    // active-set test sees them.
    let clamp = |t: &mut Vec<f64>| {
        if let (Some(k), Some((lo, hi))) = (nl, bounds) {
            let eps = 1e-12 * (hi - lo);
            t[k] = if t[k] <= lo + eps {
                lo
            } else if t[k] >= hi - eps {
                hi
            } else {
                t[k]
            };
        }
    };
    let mut t = start;
    clamp(&mut t);
    let mut f = wsse(kind, &t, d).ok()?;
    let mut lambda = 1e-6;
    let p = t.len();
    let mut active = None;
    let mut gnorm = f64::INFINITY;

    for _ in 0..opts.max_iter {
        let (g, h) = grad_hess(kind, &t, d).ok()?;
        active = None;
        if let (Some(k), Some((lo, hi))) = (nl, bounds) {
            if (t[k] <= lo && g[k] > 0.0) || (t[k] >= hi && g[k] < 0.0) {
                active = Some(k);
            }
        }
        let free: Vec<usize> = (0..p).filter(|&j| Some(j) != active).collect();
        gnorm = free.iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        if gnorm <= 1e-3 * opts.gradient_tol {
            break;
        }
        let hf = DMatrix::from_fn(free.len(), free.len(), |i, j| h[(free[i], free[j])]);
        let gf = DVector::from_fn(free.len(), |i, _| g[free[i]]);
        let diag_floor = 1e-12 * hf.diagonal().amax().max(f64::MIN_POSITIVE);

        let mut accepted = false;
        while lambda < 1e16 {
            let mut m = hf.clone();
            for i in 0..free.len() {
                m[(i, i)] += lambda * hf[(i, i)].abs().max(diag_floor);
            }
            let step = match m.cholesky() {
                Some(ch) => ch.solve(&(-&gf)),
                None => {
                    lambda = (lambda * 10.0).max(1e-6);
                    continue;
                }
            };
            let mut trial = t.clone();
            for (i, &j) in free.iter().enumerate() {
                trial[j] += step[i];
            }
            clamp(&mut trial);
            match wsse(kind, &trial, d) {
                Ok(ft) if ft < f => {
                    t = trial;
                    f = ft;
                    lambda = (lambda * 0.1).max(1e-15);
                    accepted = true;
                    break;
                }
                // Near the optimum the objective change drops below round-off;
                // the gradient still tells whether the step helped.
                Ok(ft) if ft <= f + 64.0 * f64::EPSILON * f.abs() => {
                    let improves = trial != t
                        && grad_hess(kind, &trial, d)
                            .map(|(gt, _)| free.iter().map(|&j| gt[j].abs()).fold(0.0, f64::max) < 0.5 * gnorm)
                            .unwrap_or(false);
                    if improves {
                        t = trial;
                        f = ft;
                        lambda = (lambda * 0.1).max(1e-15);
                        accepted = true;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No representable decrease left: the iterate is as good as f64 allows.
            let (g, _) = grad_hess(kind, &t, d).ok()?;
            gnorm = (0..p).filter(|&j| Some(j) != active).map(|j| g[j].abs()).fold(0.0, f64::max);
            break;
        }
    }
    if let (Some(k), Some((lo, hi)), None) = (nl, bounds, active) {
        if let Some((tr, fr, gr)) = refine_profile(kind, t[k], lo, hi, d, k) {
            if gr < gnorm {
                (t, f, gnorm) = (tr, fr, gr);
            }
        }
    }
    Some(LsqFit {
        converged: gnorm <= opts.gradient_tol,
        vartheta: t,
        wsse: f,
        gradient_norm: gnorm,
        active,
    })
}

fn log_grid(lo: f64, hi: f64, shift: f64, n: usize) -> Vec<f64> {
    // Spaced geometrically in the distance above the singular point `-shift`.
    let (ulo, uhi) = ((lo + shift).ln(), (hi + shift).ln());
    (0..n)
        .map(|i| {
            let f = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            match i {
                0 => lo,
                _ if i + 1 == n => hi,
                _ => ((ulo + f * (uhi - ulo)).exp() - shift).clamp(lo, hi),
            }
        })
        .collect()
}

/// Fits `kind` to weighted data. `starts` are optional ϑ starting points.
pub fn fit(kind: ModelKind, d: &LsqData, starts: &[Vec<f64>], opts: &LsqOptions) -> Result<LsqFit> {
    if d.x.is_empty() || d.x.len() != d.y.len() || d.x.len() != d.w.len() {
        return Err(Error::InvalidArgument("least squares needs equal-length nonempty data".into()));
    }
    let Some(nl) = kind.nonlinear_index() else {
        let t = fit_linear(kind, d).ok_or_else(|| Error::InvalidArgument("linear solve failed".into()))?;
        let f = wsse(kind, &t, d)?;
        let (g, _) = grad_hess(kind, &t, d)?;
        let gnorm = g.amax();
        return Ok(LsqFit {
            vartheta: t,
            wsse: f,
            gradient_norm: gnorm,
            converged: true,
            active: None,
        });
    };
    let (lo, hi) = opts
        .bounds
        .ok_or_else(|| Error::InvalidArgument(format!("{kind} fit needs bounds on its nonlinear parameter")))?;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("empty parameter box [{lo}, {hi}]")));
    }
    // Distance to the singularity of log(x + c) or x / (c + x) at the smallest dose.
    let xmin = d.x.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = match kind {
        ModelKind::Exponential => 0.0,
        _ => xmin,
    };
    let shift = if lo + shift > 0.0 { shift } else { -lo + 1e-12 * (hi - lo) };

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    if opts.scan_points > 0 {
        let mut scanned: Vec<(f64, Vec<f64>)> = log_grid(lo, hi, shift, opts.scan_points)
            .into_iter()
            .filter_map(|c| {
                let t = profile_at(kind, c, d)?;
                let f = wsse(kind, &t, d).ok()?;
                Some((f, t))
            })
            .collect();
        // Keep local minima of the profile, best first.
        let n = scanned.len();
        let mut minima: Vec<(f64, Vec<f64>)> = (0..n)
            .filter(|&i| (i == 0 || scanned[i].0 <= scanned[i - 1].0) && (i + 1 == n || scanned[i].0 <= scanned[i + 1].0))
            .map(|i| scanned[i].clone())
            .collect();
        minima.sort_by(|a, b| a.0.total_cmp(&b.0));
        if minima.is_empty() && n > 0 {
            scanned.sort_by(|a, b| a.0.total_cmp(&b.0));
            minima.push(scanned.swap_remove(0));
        }
        seeds.extend(minima.into_iter().take(opts.scan_polish.max(1)).map(|m| m.1));
    }
    for s in starts {
        if s.len() != kind.n_mean_params() || s.iter().any(|v| !v.is_finite()) {
            continue;
        }
        seeds.push(s.clone());
        if opts.perturbation > 0.0 {
            for j in 0..s.len() {
                for sign in [-1.0, 1.0] {
                    let mut p = s.clone();
                    p[j] *= 1.0 + sign * opts.perturbation;
                    seeds.push(p);
                }
            }
        }
    }
    if seeds.is_empty() {
        seeds.push(profile_at(kind, 0.5 * (lo + hi), d).unwrap_or_else(|| vec![0.0, 0.0, 0.5 * (lo + hi)]));
    }

    let mut best: Option<LsqFit> = None;
    for s in seeds {
        if let Some(r) = polish(kind, s, d, Some(nl), Some((lo, hi)), opts) {
            let better = match &best {
                None => true,
                Some(b) => r.wsse < b.wsse || (r.wsse == b.wsse && r.gradient_norm < b.gradient_norm),
            };
            if better {
                best = Some(r);
            }
        }
    }
    best.ok_or_else(|| Error::InvalidArgument(format!("{kind}: no admissible starting point")))
}
