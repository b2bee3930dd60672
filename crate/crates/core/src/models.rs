//! Mean functions with analytic parameter derivatives up to third order,
//! Gaussian log-density derivatives in `θ = (σ², ϑ)`, and the `ED_α` target
//! with its implicit gradient and Hessian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{CandidateModel, ModelKind, TargetED};

/// Dense cube `T[i][j][k]` of third derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.dim + j) * self.dim + k] = v;
    }

    /// Writes `v` into all six permutations of `(i, j, k)`.
    pub fn set_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.set(a, b, c, v);
        }
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, a: f64, other: &Tensor3) {
        assert_eq!(self.dim, other.dim, "tensor dimension mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `M[i][j] = Σ_k T[i][j][k] v[k]`.
    pub fn contract_last(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| (0..self.dim).map(|k| self.get(i, j, k) * v[k]).sum())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = self.get(i, j, k);
                    worst = worst
                        .max((v - self.get(j, i, k)).abs())
                        .max((v - self.get(i, k, j)).abs())
                        .max((v - self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }
}

/// Value and derivatives of a mean function at one dose.
///
/// `grad`, `hess` and `third` are with respect to ϑ; the `dx*` fields are
/// derivatives in the dose, needed for implicit differentiation of `ED_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub third: Tensor3,
    /// ∂η/∂x
    pub dx: f64,
    /// ∂²η/∂x²
    pub dxx: f64,
    /// ∂²η/∂x∂ϑ
    pub dx_grad: DVector<f64>,
}

fn check_len(kind: ModelKind, vartheta: &[f64]) -> Result<()> {
    if vartheta.len() != kind.n_mean_params() {
        return Err(Error::InvalidModel(format!(
            "{kind} expects {} mean parameters, got {}",
            kind.n_mean_params(),
            vartheta.len()
        )));
    }
    Ok(())
}

/// Mean value only; cheaper than [`mean_eval`] for scans and fitting.
pub fn mean_value(kind: ModelKind, t: &[f64], x: f64) -> Result<f64> {
    check_len(kind, t)?;
    let v = match kind {
        ModelKind::Constant => t[0],
        ModelKind::Linear => t[0] + t[1] * x,
        ModelKind::LogLinear => {
            let arg = x + t[2];
            if arg <= 0.0 {
                return Err(Error::Domain { kind: kind.name(), x });
            }
            t[0] + t[1] * arg.ln()
        }
        ModelKind::Emax => {
            let den = t[2] + x;
            if den == 0.0 {
                return Err(Error::Domain { kind: kind.name(), x });
            }
            t[0] + t[1] * x / den
        }
        ModelKind::Exponential => t[0] + t[1] * (x / t[2]).exp(),
        ModelKind::Quadratic => t[0] + t[1] * x + t[2] * x * x,
    };
    Ok(v)
}

/// Value, ϑ-derivatives up to third order and dose derivatives of `η(x, ϑ)`.
pub fn mean_eval(kind: ModelKind, t: &[f64], x: f64) -> Result<MeanEval> {
    let value = mean_value(kind, t, x)?;
    let p = kind.n_mean_params();
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut third = Tensor3::zeros(p);
    let mut dx_grad = DVector::zeros(p);
    grad[0] = 1.0;
    let (dx, dxx);
    match kind {
        ModelKind::Constant => {
            dx = 0.0;
            dxx = 0.0;
        }
        ModelKind::Linear => {
            grad[1] = x;
            dx = t[1];
            dxx = 0.0;
            dx_grad[1] = 1.0;
        }
        ModelKind::Quadratic => {
            grad[1] = x;
            grad[2] = x * x;
            dx = t[1] + 2.0 * t[2] * x;
            dxx = 2.0 * t[2];
            dx_grad[1] = 1.0;
            dx_grad[2] = 2.0 * x;
        }
        ModelKind::LogLinear => {
            let u = 1.0 / (x + t[2]);
            grad[1] = (x + t[2]).ln();
            grad[2] = t[1] * u;
            hess[(1, 2)] = u;
            hess[(2, 1)] = u;
            hess[(2, 2)] = -t[1] * u * u;
            third.set_sym(1, 2, 2, -u * u);
            third.set(2, 2, 2, 2.0 * t[1] * u * u * u);
            dx = t[1] * u;
            dxx = -t[1] * u * u;
            dx_grad[1] = u;
            dx_grad[2] = -t[1] * u * u;
        }
        ModelKind::Emax => {
            let u = 1.0 / (t[2] + x);
            grad[1] = x * u;
            grad[2] = -t[1] * x * u * u;
            hess[(1, 2)] = -x * u * u;
            hess[(2, 1)] = -x * u * u;
            hess[(2, 2)] = 2.0 * t[1] * x * u.powi(3);
            third.set_sym(1, 2, 2, 2.0 * x * u.powi(3));
            third.set(2, 2, 2, -6.0 * t[1] * x * u.powi(4));
            dx = t[1] * t[2] * u * u;
            dxx = -2.0 * t[1] * t[2] * u.powi(3);
            dx_grad[1] = t[2] * u * u;
            dx_grad[2] = t[1] * u * u - 2.0 * t[1] * t[2] * u.powi(3);
        }
        ModelKind::Exponential => {
            let d = t[2];
            let e = (x / d).exp();
            let q = x * x / d.powi(4) + 2.0 * x / d.powi(3);
            grad[1] = e;
            grad[2] = -t[1] * x * e / (d * d);
            hess[(1, 2)] = -x * e / (d * d);
            hess[(2, 1)] = -x * e / (d * d);
            hess[(2, 2)] = t[1] * e * q;
            third.set_sym(1, 2, 2, e * q);
            third.set(
                2,
                2,
                2,
                -t[1] * e * (x.powi(3) / d.powi(6) + 6.0 * x * x / d.powi(5) + 6.0 * x / d.powi(4)),
            );
            dx = t[1] * e / d;
            dxx = t[1] * e / (d * d);
            dx_grad[1] = e / d;
            dx_grad[2] = -t[1] * (x * e / d.powi(3) + e / (d * d));
        }
    }
    Ok(MeanEval {
        value,
        grad,
        hess,
        third,
        dx,
        dxx,
        dx_grad,
    })
}

/// Value, gradient and Hessian of a mean with at most three parameters,
/// without heap allocation. Entries beyond the kind's length are zero.
pub(crate) fn mean_grad_hess(kind: ModelKind, t: &[f64], x: f64) -> Result<(f64, [f64; 3], [[f64; 3]; 3])> {
    let value = mean_value(kind, t, x)?;
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    g[0] = 1.0;
    match kind {
        ModelKind::Constant => {}
        ModelKind::Linear => g[1] = x,
        ModelKind::Quadratic => {
            g[1] = x;
            g[2] = x * x;
        }
        ModelKind::LogLinear => {
            let u = 1.0 / (x + t[2]);
            g[1] = (x + t[2]).ln();
            g[2] = t[1] * u;
            h[1][2] = u;
            h[2][1] = u;
            h[2][2] = -t[1] * u * u;
        }
        ModelKind::Emax => {
            let u = 1.0 / (t[2] + x);
            g[1] = x * u;
            g[2] = -t[1] * x * u * u;
            h[1][2] = -x * u * u;
            h[2][1] = h[1][2];
            h[2][2] = 2.0 * t[1] * x * u * u * u;
        }
        ModelKind::Exponential => {
            let d = t[2];
            let e = (x / d).exp();
            g[1] = e;
            g[2] = -t[1] * x * e / (d * d);
            h[1][2] = -x * e / (d * d);
            h[2][1] = h[1][2];
            h[2][2] = t[1] * e * (x * x / d.powi(4) + 2.0 * x / d.powi(3));
        }
    }
    Ok((value, g, h))
}

/// Derivatives of `log f(y | x, θ)` for a Gaussian model, in `θ = (σ², ϑ)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityDerivs {
    pub score: DVector<f64>,
    pub hess: DMatrix<f64>,
    pub third: Tensor3,
}

/// Gaussian log-density derivatives built from the residual `r = y - η`.
pub fn log_density_derivs(model: &CandidateModel, x: f64, y: f64) -> Result<LogDensityDerivs> {
    let me = mean_eval(model.kind(), model.vartheta(), x)?;
    Ok(log_density_from_mean(&me, model.sigma2(), y - me.value))
}

pub(crate) fn log_density_from_mean(me: &MeanEval, v: f64, r: f64) -> LogDensityDerivs {
    log_density_poly(me, v).eval(r)
}

/// Log-density derivatives written as quadratics in the residual `r = y - η`.
///
/// Index `k` of each array holds the coefficient of `r^k`. Every Gaussian
/// expectation then reduces to residual moments of order at most four.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityPoly {
    pub score: [DVector<f64>; 3],
    pub hess: [DMatrix<f64>; 3],
    pub third: [Tensor3; 3],
}

impl LogDensityPoly {
    pub fn dim(&self) -> usize {
        self.score[0].len()
    }

    pub fn eval(&self, r: f64) -> LogDensityDerivs {
        let pw = [1.0, r, r * r];
        let p = self.dim();
        let mut score = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut third = Tensor3::zeros(p);
        for k in 0..3 {
            score.axpy(pw[k], &self.score[k], 1.0);
            hess += pw[k] * &self.hess[k];
            third.add_scaled(pw[k], &self.third[k]);
        }
        LogDensityDerivs { score, hess, third }
    }
}

/// Residual-polynomial coefficients of the score, Hessian and third
/// derivative of `log f` for mean derivatives `me` and variance `v`.
pub fn log_density_poly(me: &MeanEval, v: f64) -> LogDensityPoly {
    let q = me.grad.len();
    let p = q + 1;
    let g = &me.grad;
    let h = &me.hess;
    let (v2, v3, v4) = (v * v, v * v * v, v * v * v * v);

    let mut s0 = DVector::zeros(p);
    let mut s1 = DVector::zeros(p);
    let mut s2 = DVector::zeros(p);
    s0[0] = -0.5 / v;
    s2[0] = 0.5 / v2;
    for j in 0..q {
        s1[j + 1] = g[j] / v;
    }

    let mut h0 = DMatrix::zeros(p, p);
    let mut h1 = DMatrix::zeros(p, p);
    let mut h2 = DMatrix::zeros(p, p);
    h0[(0, 0)] = 0.5 / v2;
    h2[(0, 0)] = -1.0 / v3;
    for j in 0..q {
        h1[(0, j + 1)] = -g[j] / v2;
        h1[(j + 1, 0)] = -g[j] / v2;
        for k in 0..q {
            h0[(j + 1, k + 1)] = -g[j] * g[k] / v;
            h1[(j + 1, k + 1)] = h[(j, k)] / v;
        }
    }

    let mut t0 = Tensor3::zeros(p);
    let mut t1 = Tensor3::zeros(p);
    let mut t2 = Tensor3::zeros(p);
    t0.set(0, 0, 0, -1.0 / v3);
    t2.set(0, 0, 0, 3.0 / v4);
    for j in 0..q {
        t1.set_sym(0, 0, j + 1, 2.0 * g[j] / v3);
        for k in j..q {
            t0.set_sym(0, j + 1, k + 1, g[j] * g[k] / v2);
            t1.set_sym(0, j + 1, k + 1, -h[(j, k)] / v2);
            for l in k..q {
                let c = -(g[l] * h[(j, k)] + g[j] * h[(k, l)] + g[k] * h[(j, l)]) / v;
                t0.set_sym(j + 1, k + 1, l + 1, c);
                t1.set_sym(j + 1, k + 1, l + 1, me.third.get(j, k, l) / v);
            }
        }
    }
    LogDensityPoly {
        score: [s0, s1, s2],
        hess: [h0, h1, h2],
        third: [t0, t1, t2],
    }
}

/// Number of scan cells used to bracket the first threshold crossing.
pub const ED_SCAN_CELLS: usize = 512;

/// `ED_α`: the smallest dose in `[a, b]` where the normalized effect
/// `(η(x) - η(a)) / (η(b) - η(a))` reaches `α`.
pub fn ed_alpha(kind: ModelKind, t: &[f64], target: &TargetED) -> Result<f64> {
    let (a, b) = (target.space().lower(), target.space().upper());
    let ea = mean_value(kind, t, a)?;
    let eb = mean_value(kind, t, b)?;
    let span = eb - ea;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::TargetNotAttained { lower: a, upper: b });
    }
    let alpha = target.alpha();
    let excess = |x: f64| -> Result<f64> { Ok((mean_value(kind, t, x)? - ea) / span - alpha) };

    let h = (b - a) / ED_SCAN_CELLS as f64;
    let mut lo = a;
    let mut hi = None;
    for i in 1..=ED_SCAN_CELLS {
        let x = if i == ED_SCAN_CELLS { b } else { a + i as f64 * h };
        if excess(x)? >= 0.0 {
            hi = Some(x);
            break;
        }
        lo = x;
    }
    let mut hi = hi.ok_or(Error::TargetNotAttained { lower: a, upper: b })?;
    let tol = 1e-10 * (b - a);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // One Newton step from the bracket midpoint tightens to machine precision.
    let mid = 0.5 * (lo + hi);
    let slope = mean_eval(kind, t, mid)?.dx / span;
    if slope != 0.0 {
        let refined = mid - excess(mid)? / slope;
        if refined >= lo && refined <= hi {
            return Ok(refined);
        }
    }
    Ok(mid)
}

/// `ED_α` with its first and second derivatives in `θ = (σ², ϑ)`.
///
/// Derivatives follow from implicit differentiation of
/// `h(x, ϑ) = η(x) - η(a) - α (η(b) - η(a)) = 0`; σ² entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EdDerivs {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub fn ed_gradient(kind: ModelKind, t: &[f64], target: &TargetED) -> Result<EdDerivs> {
    let value = ed_alpha(kind, t, target)?;
    let (a, b) = (target.space().lower(), target.space().upper());
    let alpha = target.alpha();
    let ma = mean_eval(kind, t, a)?;
    let mb = mean_eval(kind, t, b)?;
    let mx = mean_eval(kind, t, value)?;
    let hx = mx.dx;
    let scale = (mb.value - ma.value).abs().max(f64::MIN_POSITIVE) / (b - a);
    if hx.abs() <= 1e-10 * scale {
        return Err(Error::NonRegularTarget { x: value });
    }
    let h_t = &mx.grad - &ma.grad - alpha * (&mb.grad - &ma.grad);
    let h_tt = &mx.hess - &ma.hess - alpha * (&mb.hess - &ma.hess);
    let dx = -&h_t / hx;
    let cross = &mx.dx_grad * dx.transpose();
    let d2x = -(h_tt + &cross + cross.transpose() + mx.dxx * &dx * dx.transpose()) / hx;

    let q = kind.n_mean_params();
    let mut grad = DVector::zeros(q + 1);
    grad.rows_mut(1, q).copy_from(&dx);
    let mut hess = DMatrix::zeros(q + 1, q + 1);
    hess.view_mut((1, 1), (q, q)).copy_from(&d2x);
    Ok(EdDerivs { value, grad, hess })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DesignSpace;

    fn target(alpha: f64) -> TargetED {
        TargetED::new(alpha, DesignSpace::new(0.0, 150.0).unwrap()).unwrap()
    }

    fn cases() -> Vec<(ModelKind, Vec<f64>)> {
        vec![
            (ModelKind::Constant, vec![0.3]),
            (ModelKind::Linear, vec![0.1, 0.02]),
            (ModelKind::LogLinear, vec![0.0, 0.0797, 1.0]),
            (ModelKind::Emax, vec![0.0, 0.467, 25.0]),
            (ModelKind::Exponential, vec![-0.08265, 0.08265, 85.0]),
            (ModelKind::Quadratic, vec![0.0, 0.00533, -0.00002]),
        ]
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn light_evaluator_agrees() {
        for kind in ModelKind::ALL {
            let t: Vec<f64> = match kind {
                ModelKind::Constant => vec![0.3],
                ModelKind::Linear => vec![0.3, 0.01],
                _ => vec![0.1, 0.4, 30.0],
            };
            for x in [0.0, 17.0, 150.0] {
                let me = mean_eval(kind, &t, x).unwrap();
                let (v, g, h) = mean_grad_hess(kind, &t, x).unwrap();
                assert_eq!(v, me.value);
                for j in 0..t.len() {
                    assert!((g[j] - me.grad[j]).abs() <= 1e-15 * (1.0 + g[j].abs()));
                    for k in 0..t.len() {
                        assert!((h[j][k] - me.hess[(j, k)]).abs() <= 1e-15 * (1.0 + h[j][k].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_values() {
        let v = mean_value(ModelKind::LogLinear, &[0.0, 0.0797, 1.0], 0.0).unwrap();
        assert_eq!(v, 0.0);
        let v = mean_value(ModelKind::Emax, &[0.0, 0.467, 25.0], 150.0).unwrap();
        assert!((v - 0.467 * 150.0 / 175.0).abs() < 1e-15);
        assert!((v - 0.40029).abs() < 1e-5);
    }

    #[test]
    fn log_of_nonpositive_argument_is_domain_error() {
        let err = mean_value(ModelKind::LogLinear, &[0.0, 1.0, -5.0], 2.0).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn mean_derivatives_match_finite_differences() {
        let h = 1e-5;
        for (kind, t) in cases() {
            for &x in &[0.0, 7.5, 40.0, 150.0] {
                let me = mean_eval(kind, &t, x).unwrap();
                for k in 0..t.len() {
                    let step = h * (1.0 + t[k].abs());
                    let mut tp = t.clone();
                    let mut tm = t.clone();
                    tp[k] += step;
                    tm[k] -= step;
                    let ep = mean_eval(kind, &tp, x).unwrap();
                    let em = mean_eval(kind, &tm, x).unwrap();
                    let fd = (ep.value - em.value) / (2.0 * step);
                    assert!(rel_close(me.grad[k], fd, 1e-6), "{kind} grad {k} at {x}");
                    for j in 0..t.len() {
                        let fd = (ep.grad[j] - em.grad[j]) / (2.0 * step);
                        assert!(rel_close(me.hess[(j, k)], fd, 1e-6), "{kind} hess {j}{k}");
                        for i in 0..t.len() {
                            let fd = (ep.hess[(i, j)] - em.hess[(i, j)]) / (2.0 * step);
                            assert!(rel_close(me.third.get(i, j, k), fd, 1e-6), "{kind} third");
                        }
                    }
                    let fd = (ep.dx - em.dx) / (2.0 * step);
                    assert!(rel_close(me.dx_grad[k], fd, 1e-6), "{kind} dx_grad {k}");
                }
                let hx = 1e-4 * (1.0 + x);
                let xp = mean_eval(kind, &t, x + hx).unwrap();
                let xm = mean_eval(kind, &t, (x - hx).max(-0.5)).unwrap();
                let span = x + hx - (x - hx).max(-0.5);
                assert!(rel_close(me.dx, (xp.value - xm.value) / span, 1e-6), "{kind} dx");
                assert!(rel_close(me.dxx, (xp.dx - xm.dx) / span, 1e-6), "{kind} dxx");
                assert!(me.third.max_asymmetry() == 0.0);
            }
        }
    }

    #[test]
    fn score_of_standard_constant_model() {
        let m = CandidateModel::new(ModelKind::Constant, vec![0.0], 1.0).unwrap();
        let d = log_density_derivs(&m, 3.0, 0.0).unwrap();
        assert_eq!(d.score.as_slice(), &[-0.5, 0.0]);
    }

    #[test]
    fn zero_residual_gives_zero_mean_score() {
        for (kind, t) in cases() {
            let m = CandidateModel::new(kind, t.clone(), 0.1).unwrap();
            let y = mean_value(kind, &t, 20.0).unwrap();
            let d = log_density_derivs(&m, 20.0, y).unwrap();
            assert!(d.score.rows(1, t.len()).iter().all(|v| *v == 0.0));
        }
    }

    fn log_density(m: &CandidateModel, x: f64, y: f64) -> f64 {
        let r = y - mean_value(m.kind(), m.vartheta(), x).unwrap();
        -0.5 * (2.0 * std::f64::consts::PI * m.sigma2()).ln() - r * r / (2.0 * m.sigma2())
    }

    #[test]
    fn log_density_derivatives_match_finite_differences() {
        let h = 1e-5;
        for (kind, t) in cases() {
            let m = CandidateModel::new(kind, t, 0.1).unwrap();
            let (x, y) = (30.0, 0.25);
            let d = log_density_derivs(&m, x, y).unwrap();
            let theta = m.theta();
            for k in 0..theta.len() {
                let step = h * (1.0 + theta[k].abs());
                let shifted = |s: f64| {
                    let mut th = theta.clone();
                    th[k] += s;
                    CandidateModel::from_theta(kind, &th).unwrap()
                };
                let (mp, mm) = (shifted(step), shifted(-step));
                let fd = (log_density(&mp, x, y) - log_density(&mm, x, y)) / (2.0 * step);
                assert!(rel_close(d.score[k], fd, 1e-6), "{kind} score {k}");
                let dp = log_density_derivs(&mp, x, y).unwrap();
                let dm = log_density_derivs(&mm, x, y).unwrap();
                for j in 0..theta.len() {
                    let fd = (dp.score[j] - dm.score[j]) / (2.0 * step);
                    assert!(rel_close(d.hess[(j, k)], fd, 1e-6), "{kind} hess {j}{k}");
                    for i in 0..theta.len() {
                        let fd = (dp.hess[(i, j)] - dm.hess[(i, j)]) / (2.0 * step);
                        assert!(rel_close(d.third.get(i, j, k), fd, 1e-6), "{kind} third {i}{j}{k}");
                    }
                }
            }
            assert!((&d.hess - d.hess.transpose()).amax() == 0.0);
            assert!(d.third.max_asymmetry() == 0.0);
        }
    }

    #[test]
    fn ed_closed_forms() {
        let t = target(0.4);
        let lin = ed_alpha(ModelKind::Linear, &[3.0, -0.7], &t).unwrap();
        assert!((lin - 60.0).abs() < 1e-8);
        let emax = ed_alpha(ModelKind::Emax, &[0.0, 0.467, 25.0], &t).unwrap();
        assert!((emax - 1500.0 / 115.0).abs() < 1e-8);
        let ll = ed_alpha(ModelKind::LogLinear, &[0.0, 0.0797, 1.0], &t).unwrap();
        assert!((ll - (151f64.powf(0.4) - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn ed_takes_first_crossing_for_nonmonotone_quadratic() {
        // Rises to a peak then falls back to the level reached at the upper end.
        let t = target(0.9);
        let q = [0.0, 0.02, -0.0001];
        let x = ed_alpha(ModelKind::Quadratic, &q, &t).unwrap();
        let eb = mean_value(ModelKind::Quadratic, &q, 150.0).unwrap();
        let ex = mean_value(ModelKind::Quadratic, &q, x).unwrap();
        assert!((ex - 0.9 * eb).abs() < 1e-10);
        assert!(x < 100.0);
    }

    #[test]
    fn flat_mean_has_no_target() {
        assert!(matches!(
            ed_alpha(ModelKind::Constant, &[1.0], &target(0.4)),
            Err(Error::TargetNotAttained { .. })
        ));
    }

    #[test]
    fn ed_monotone_in_alpha() {
        let mut prev = 0.0;
        for i in 1..20 {
            let alpha = i as f64 / 20.0;
            let x = ed_alpha(ModelKind::Emax, &[0.0, 0.467, 25.0], &target(alpha)).unwrap();
            assert!(x >= prev);
            prev = x;
        }
    }

    #[test]
    fn ed_gradient_matches_finite_differences() {
        let tg = target(0.4);
        for (kind, t) in cases().into_iter().skip(2) {
            let d = ed_gradient(kind, &t, &tg).unwrap();
            assert_eq!(d.grad[0], 0.0);
            assert!(d.hess.row(0).iter().all(|v| *v == 0.0));
            for k in 0..t.len() {
                let step = if t[k] == 0.0 { 1e-6 } else { 1e-4 * t[k].abs() };
                let mut tp = t.clone();
                let mut tm = t.clone();
                tp[k] += step;
                tm[k] -= step;
                let fd = (ed_alpha(kind, &tp, &tg).unwrap() - ed_alpha(kind, &tm, &tg).unwrap()) / (2.0 * step);
                assert!(rel_close(d.grad[k + 1], fd, 1e-6), "{kind} ed grad {k}: {} vs {fd}", d.grad[k + 1]);
                let gp = ed_gradient(kind, &tp, &tg).unwrap();
                let gm = ed_gradient(kind, &tm, &tg).unwrap();
                for j in 0..t.len() {
                    let fd = (gp.grad[j + 1] - gm.grad[j + 1]) / (2.0 * step);
                    assert!(
                        (d.hess[(j + 1, k + 1)] - fd).abs() <= 1e-6 * (1.0 + d.hess.amax()),
                        "{kind} ed hess {j}{k}: {} vs {fd}",
                        d.hess[(j + 1, k + 1)]
                    );
                }
            }
        }
    }

    #[test]
    fn linear_ed_is_parameter_free() {
        let d = ed_gradient(ModelKind::Linear, &[0.2, 0.01], &target(0.4)).unwrap();
        assert!((d.value - 60.0).abs() < 1e-8);
        assert!(d.grad.amax() < 1e-12);
    }
}
