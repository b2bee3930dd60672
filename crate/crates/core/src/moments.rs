//! Expectations under a homoscedastic Gaussian truth.
//!
//! The production path is analytic: every log-density derivative is a
//! quadratic in the residual, so expectations only need Gaussian moments up
//! to order four. Gauss–Hermite quadrature is kept as an independent check.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::hermite::GaussHermite;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::design::ApproximateDesign;
use crate::error::{Error, Result};
use crate::models::{log_density_derivs, log_density_poly, mean_eval, mean_value, LogDensityPoly, Tensor3};
use crate::types::CandidateModel;

/// Gauss–Hermite nodes used by the quadrature cross-check.
pub const DEFAULT_NODES: usize = 40;

/// Matrices with reciprocal condition number below this are rejected.
pub const RCOND_MIN: f64 = 1e-12;

/// A value that quadrature can accumulate.
pub trait QuadValue: Sized {
    fn zero_like(&self) -> Self;
    fn add_scaled(&mut self, w: f64, other: &Self);
    /// First non-finite entry, if any.
    fn first_nonfinite(&self) -> Option<f64>;
}

impl QuadValue for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
    fn first_nonfinite(&self) -> Option<f64> {
        (!self.is_finite()).then_some(*self)
    }
}

impl QuadValue for DVector<f64> {
    fn zero_like(&self) -> Self {
        DVector::zeros(self.len())
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        self.axpy(w, other, 1.0);
    }
    fn first_nonfinite(&self) -> Option<f64> {
        self.iter().copied().find(|v| !v.is_finite())
    }
}

impl QuadValue for DMatrix<f64> {
    fn zero_like(&self) -> Self {
        DMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        *self += w * other;
    }
    fn first_nonfinite(&self) -> Option<f64> {
        self.iter().copied().find(|v| !v.is_finite())
    }
}

impl QuadValue for Tensor3 {
    fn zero_like(&self) -> Self {
        Tensor3::zeros(self.dim())
    }
    fn add_scaled(&mut self, w: f64, other: &Self) {
        Tensor3::add_scaled(self, w, other);
    }
    fn first_nonfinite(&self) -> Option<f64> {
        self.as_slice().iter().copied().find(|v| !v.is_finite())
    }
}

fn hermite_rule(nodes: usize) -> Result<std::borrow::Cow<'static, GaussHermite>> {
    static DEFAULT: OnceLock<GaussHermite> = OnceLock::new();
    if nodes < 2 {
        return Err(Error::InvalidArgument(format!("quadrature needs at least 2 nodes, got {nodes}")));
    }
    if nodes == DEFAULT_NODES {
        return Ok(std::borrow::Cow::Borrowed(
            DEFAULT.get_or_init(|| GaussHermite::new(NonZeroUsize::new(DEFAULT_NODES).unwrap())),
        ));
    }
    Ok(std::borrow::Cow::Owned(GaussHermite::new(NonZeroUsize::new(nodes).unwrap())))
}

/// Gauss–Hermite approximation of `E[f(Y)]` for `Y ~ N(mean, variance)`.
pub fn expect_gaussian<T, F>(mut f: F, mean: f64, variance: f64, nodes: usize) -> Result<T>
where
    T: QuadValue,
    F: FnMut(f64) -> Result<T>,
{
    if !(variance > 0.0 && variance.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Gaussian expectation needs finite mean and positive variance, got N({mean}, {variance})"
        )));
    }
    let rule = hermite_rule(nodes)?;
    let scale = (2.0 * variance).sqrt();
    let norm = std::f64::consts::PI.sqrt();
    let mut acc: Option<T> = None;
    for &(u, w) in rule.as_node_weight_pairs() {
        let y = mean + scale * u;
        let v = f(y)?;
        if let Some(bad) = v.first_nonfinite() {
            return Err(Error::NonFiniteIntegrand { node: y, value: bad });
        }
        match acc.as_mut() {
            Some(a) => a.add_scaled(w / norm, &v),
            None => {
                let mut a = v.zero_like();
                a.add_scaled(w / norm, &v);
                acc = Some(a);
            }
        }
    }
    Ok(acc.expect("rule has at least two nodes"))
}

/// `E[z^k]` for `z ~ N(0, v)`.
fn central_moment(k: usize, v: f64) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut m = 1.0;
    let mut i = k as i64 - 1;
    while i > 0 {
        m *= i as f64 * v;
        i -= 2;
    }
    m
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[(z + a)^i (z + b)^j]` for `z ~ N(0, v)`.
pub fn joint_moment(i: usize, j: usize, a: f64, b: f64, v: f64) -> f64 {
    let mut total = 0.0;
    for p in 0..=i {
        for q in 0..=j {
            let m = central_moment(p + q, v);
            if m != 0.0 {
                total += binom(i, p) * binom(j, q) * a.powi((i - p) as i32) * b.powi((j - q) as i32) * m;
            }
        }
    }
    total
}

/// One candidate evaluated at one dose: its residual polynomial and the bias
/// `e = m(x) - η_s(x)` of the truth's mean relative to it.
#[derive(Debug, Clone)]
pub struct PointTerms {
    pub bias: f64,
    pub poly: LogDensityPoly,
}

impl PointTerms {
    pub fn new(truth_mean: f64, s: &CandidateModel, x: f64) -> Result<Self> {
        let me = mean_eval(s.kind(), s.vartheta(), x)?;
        Ok(Self {
            bias: truth_mean - me.value,
            poly: log_density_poly(&me, s.sigma2()),
        })
    }

    /// `E[score]` under residual variance `vg`.
    pub fn score(&self, vg: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.poly.dim());
        for k in 0..3 {
            out.axpy(joint_moment(k, 0, self.bias, 0.0, vg), &self.poly.score[k], 1.0);
        }
        out
    }

    /// `E[∂² log f]`.
    pub fn hessian(&self, vg: f64) -> DMatrix<f64> {
        let p = self.poly.dim();
        let mut out = DMatrix::zeros(p, p);
        for k in 0..3 {
            out += joint_moment(k, 0, self.bias, 0.0, vg) * &self.poly.hess[k];
        }
        out
    }

    /// `E[∂³ log f]`.
    pub fn third(&self, vg: f64) -> Tensor3 {
        let mut out = Tensor3::zeros(self.poly.dim());
        for k in 0..3 {
            out.add_scaled(joint_moment(k, 0, self.bias, 0.0, vg), &self.poly.third[k]);
        }
        out
    }

    /// `E[score_self · score_otherᵀ]`.
    pub fn score_outer(&self, other: &PointTerms, vg: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.poly.dim(), other.poly.dim());
        for i in 0..3 {
            for j in 0..3 {
                let m = joint_moment(i, j, self.bias, other.bias, vg);
                out += m * &self.poly.score[i] * other.poly.score[j].transpose();
            }
        }
        out
    }

    /// `E[hess_self · score_other[l]]`, one matrix per `l`.
    pub fn hess_score(&self, other: &PointTerms, vg: f64) -> Vec<DMatrix<f64>> {
        let p = self.poly.dim();
        let mut out = vec![DMatrix::zeros(p, p); other.poly.dim()];
        for i in 0..3 {
            for j in 0..3 {
                let m = joint_moment(i, j, self.bias, other.bias, vg);
                if m == 0.0 {
                    continue;
                }
                for (l, slot) in out.iter_mut().enumerate() {
                    let c = m * other.poly.score[j][l];
                    if c != 0.0 {
                        *slot += c * &self.poly.hess[i];
                    }
                }
            }
        }
        out
    }
}

/// `E_g[score_s]` at a single dose.
pub fn expected_score(g: &CandidateModel, s: &CandidateModel, x: f64) -> Result<DVector<f64>> {
    let m = mean_value(g.kind(), g.vartheta(), x)?;
    Ok(PointTerms::new(m, s, x)?.score(g.sigma2()))
}

/// `E_g[∂² log f_s]` at a single dose.
pub fn expected_hessian(g: &CandidateModel, s: &CandidateModel, x: f64) -> Result<DMatrix<f64>> {
    let m = mean_value(g.kind(), g.vartheta(), x)?;
    Ok(PointTerms::new(m, s, x)?.hessian(g.sigma2()))
}

/// `A_s(ξ) = Σ_i ξ_i E_g[∂² log f_s(Y | x_i)]`.
pub fn matrix_a(g: &CandidateModel, s: &CandidateModel, design: &ApproximateDesign) -> Result<DMatrix<f64>> {
    let p = s.n_params();
    let mut a = DMatrix::zeros(p, p);
    for (x, w) in design.iter() {
        a += w * expected_hessian(g, s, x)?;
    }
    Ok(a)
}

/// `B_st(ξ) = Σ_i ξ_i E_g[score_s score_tᵀ]`.
pub fn matrix_b(g: &CandidateModel, s: &CandidateModel, t: &CandidateModel, design: &ApproximateDesign) -> Result<DMatrix<f64>> {
    let mut b = DMatrix::zeros(s.n_params(), t.n_params());
    for (x, w) in design.iter() {
        let m = mean_value(g.kind(), g.vartheta(), x)?;
        let ps = PointTerms::new(m, s, x)?;
        let pt = PointTerms::new(m, t, x)?;
        b += w * ps.score_outer(&pt, g.sigma2());
    }
    Ok(b)
}

/// [`matrix_a`] computed by quadrature over the response.
pub fn matrix_a_quadrature(g: &CandidateModel, s: &CandidateModel, design: &ApproximateDesign, nodes: usize) -> Result<DMatrix<f64>> {
    let p = s.n_params();
    let mut a = DMatrix::zeros(p, p);
    for (x, w) in design.iter() {
        let m = mean_value(g.kind(), g.vartheta(), x)?;
        let e = expect_gaussian(|y| Ok(log_density_derivs(s, x, y)?.hess), m, g.sigma2(), nodes)?;
        a += w * e;
    }
    Ok(a)
}

/// [`matrix_b`] computed by quadrature over the response.
pub fn matrix_b_quadrature(
    g: &CandidateModel,
    s: &CandidateModel,
    t: &CandidateModel,
    design: &ApproximateDesign,
    nodes: usize,
) -> Result<DMatrix<f64>> {
    let mut b = DMatrix::zeros(s.n_params(), t.n_params());
    for (x, w) in design.iter() {
        let m = mean_value(g.kind(), g.vartheta(), x)?;
        let e = expect_gaussian(
            |y| {
                let ss = log_density_derivs(s, x, y)?.score;
                let st = log_density_derivs(t, x, y)?.score;
                Ok(ss * st.transpose())
            },
            m,
            g.sigma2(),
            nodes,
        )?;
        b += w * e;
    }
    Ok(b)
}

/// Ratio of smallest to largest absolute eigenvalue of a symmetric matrix
/// after unit-diagonal scaling, so parameters in different units (a variance
/// next to an ED50 in dose) do not count as ill-conditioning.
pub fn rcond_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let d: Vec<f64> = (0..m.nrows()).map(|i| m[(i, i)].abs()).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return 0.0;
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / (d[i] * d[j]).sqrt());
    let sym = 0.5 * (&scaled + scaled.transpose());
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if max == 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

/// Sandwich matrices of a candidate set under one truth and design.
///
/// `A` and `B` are expressed on each candidate's free coordinates; `sigma`
/// stacks the blocks `A_s⁻¹ B_st A_t⁻¹` in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichSet {
    a: Vec<DMatrix<f64>>,
    a_inv: Vec<DMatrix<f64>>,
    b: Vec<Vec<DMatrix<f64>>>,
    sigma: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl SandwichSet {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn a(&self, s: usize) -> &DMatrix<f64> {
        &self.a[s]
    }

    pub fn a_inv(&self, s: usize) -> &DMatrix<f64> {
        &self.a_inv[s]
    }

    pub fn b(&self, s: usize, t: usize) -> &DMatrix<f64> {
        &self.b[s][t]
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_block(&self, s: usize, t: usize) -> DMatrix<f64> {
        let (rs, rt) = (self.a[s].nrows(), self.a[t].nrows());
        self.sigma.view((self.offsets[s], self.offsets[t]), (rs, rt)).into_owned()
    }
}

/// Restricts a matrix to the rows `rows` and columns `cols`.
pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Assembles `A`, `B` and `Σ` for candidates already at their projections.
pub fn sandwich(g: &CandidateModel, candidates: &[CandidateModel], design: &ApproximateDesign) -> Result<SandwichSet> {
    let free: Vec<Vec<usize>> = candidates.iter().map(|c| (0..c.n_params()).collect()).collect();
    sandwich_restricted(g, candidates, &free, design)
}

/// [`sandwich`] on a subset of coordinates per candidate, used when a
/// parameter sits on a bound and is held fixed.
pub fn sandwich_restricted(
    g: &CandidateModel,
    candidates: &[CandidateModel],
    free: &[Vec<usize>],
    design: &ApproximateDesign,
) -> Result<SandwichSet> {
    if free.len() != candidates.len() {
        return Err(Error::InvalidArgument("one free-index set per candidate required".into()));
    }
    let r = candidates.len();
    let vg = g.sigma2();
    let mut a: Vec<DMatrix<f64>> = free.iter().map(|f| DMatrix::zeros(f.len(), f.len())).collect();
    let mut b: Vec<Vec<DMatrix<f64>>> = (0..r)
        .map(|s| (0..r).map(|t| DMatrix::zeros(free[s].len(), free[t].len())).collect())
        .collect();
    for (x, w) in design.iter() {
        let m = mean_value(g.kind(), g.vartheta(), x)?;
        let terms = candidates.iter().map(|c| PointTerms::new(m, c, x)).collect::<Result<Vec<_>>>()?;
        for s in 0..r {
            a[s] += w * submatrix(&terms[s].hessian(vg), &free[s], &free[s]);
            for t in s..r {
                let bst = w * submatrix(&terms[s].score_outer(&terms[t], vg), &free[s], &free[t]);
                if t != s {
                    b[t][s] += bst.transpose();
                }
                b[s][t] += bst;
            }
        }
    }
    for s in 0..r {
        // Symmetrize away round-off so downstream quadratic forms are exact.
        b[s][s] = 0.5 * (&b[s][s] + b[s][s].transpose());
        a[s] = 0.5 * (&a[s] + a[s].transpose());
    }

    let mut a_inv = Vec::with_capacity(r);
    for s in 0..r {
        let rc = rcond_symmetric(&a[s]);
        if !(rc >= RCOND_MIN) {
            return Err(Error::Singular {
                candidate: candidates[s].label(),
                which: "A",
                rcond: rc,
            });
        }
        let rb = rcond_symmetric(&b[s][s]);
        if !(rb >= RCOND_MIN) {
            return Err(Error::Singular {
                candidate: candidates[s].label(),
                which: "B",
                rcond: rb,
            });
        }
        let inv = a[s].clone().try_inverse().ok_or_else(|| Error::Singular {
            candidate: candidates[s].label(),
            which: "A",
            rcond: rc,
        })?;
        a_inv.push(0.5 * (&inv + inv.transpose()));
    }

    let mut offsets = Vec::with_capacity(r);
    let mut total = 0;
    for f in free {
        offsets.push(total);
        total += f.len();
    }
    let mut sigma = DMatrix::zeros(total, total);
    for s in 0..r {
        for t in s..r {
            let block = &a_inv[s] * &b[s][t] * &a_inv[t];
            sigma
                .view_mut((offsets[s], offsets[t]), (free[s].len(), free[t].len()))
                .copy_from(&block);
            if t != s {
                sigma
                    .view_mut((offsets[t], offsets[s]), (free[t].len(), free[s].len()))
                    .copy_from(&block.transpose());
            }
        }
    }
    Ok(SandwichSet {
        a,
        a_inv,
        b,
        sigma,
        offsets,
    })
}
