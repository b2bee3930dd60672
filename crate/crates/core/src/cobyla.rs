//! Derivative-free minimization under linear inequality constraints by
//! linear interpolation on a simplex inside a shrinking trust region
//! (COBYLA-style).
//!
//! The objective is modelled by the affine function interpolating it on
//! `n + 1` vertices. Constraints `A·x ≥ b` are linear, so they enter the
//! trust-region subproblem exactly instead of through interpolation. The
//! objective must accept any point; callers that cannot evaluate outside
//! the feasible set should map such points back and penalize them.

use nalgebra::{DMatrix, DVector};

/// Linear inequalities `rows·x ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearConstraints {
    pub fn none(n: usize) -> Self {
        Self {
            rows: DMatrix::zeros(0, n),
            rhs: DVector::zeros(0),
        }
    }

    /// `a·x - b`, nonnegative when satisfied.
    pub fn slack(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.rows * x - &self.rhs
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.slack(x).iter().all(|&s| s >= -tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CobylaOptions {
    pub rho_begin: f64,
    pub rho_end: f64,
    pub max_evals: usize,
}

impl Default for CobylaOptions {
    fn default() -> Self {
        Self {
            rho_begin: 0.1,
            rho_end: 1e-7,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub evals: usize,
    /// Whether the trust radius reached its final value before the budget ran out.
    pub converged: bool,
}

// Powell's constants: acceptable simplex edge (`DELTA·ρ`), minimal vertex
// height (`ALPHA·ρ`) and length of geometry-repair steps (`GAMMA·ρ`).
const ALPHA: f64 = 0.25;
const DELTA: f64 = 1.1;
const GAMMA: f64 = 0.5;

struct Simplex {
    base: DVector<f64>,
    f_base: f64,
    /// Column `j` is vertex `j` minus the base.
    edges: DMatrix<f64>,
    f: Vec<f64>,
}

impl Simplex {
    /// Makes the lowest vertex the base.
    fn rebase(&mut self) {
        let Some(j) = (0..self.f.len())
            .filter(|&j| self.f[j] < self.f_base)
            .min_by(|&a, &b| self.f[a].total_cmp(&self.f[b]))
        else {
            return;
        };
        let shift = self.edges.column(j).clone_owned();
        self.base += &shift;
        for i in 0..self.f.len() {
            if i == j {
                self.edges.column_mut(i).copy_from(&(-&shift));
            } else {
                let mut c = self.edges.column_mut(i);
                c -= &shift;
            }
        }
        std::mem::swap(&mut self.f_base, &mut self.f[j]);
    }
}

/// Minimizes `f` from the feasible point `x0`.
///
/// Evaluations that return a non-finite value are replaced by a large
/// penalty so the interpolation model stays finite.
pub fn minimize(mut f: impl FnMut(&DVector<f64>) -> f64, x0: &DVector<f64>, cons: &LinearConstraints, opts: &CobylaOptions) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &DVector<f64>, evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            PENALTY
        }
    };
    let mut rho = opts.rho_begin;
    let f0 = eval(x0, &mut evals);
    let mut s = Simplex {
        base: x0.clone(),
        f_base: f0,
        edges: DMatrix::zeros(n, n),
        f: vec![0.0; n],
    };
    if n == 0 {
        return Minimum {
            x: x0.clone(),
            value: f0,
            evals,
            converged: true,
        };
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = rho;
        // Prefer the feasible direction when the base sits on a constraint.
        if !cons.is_feasible(&(&s.base + &e), 0.0) && cons.is_feasible(&(&s.base - &e), 0.0) {
            e[j] = -rho;
        }
        s.edges.set_column(j, &e);
        s.f[j] = eval(&(&s.base + &e), &mut evals);
    }

    let mut converged = false;
    // Set after a step that failed to make enough progress: the next pass
    // either repairs the simplex or shrinks the trust region.
    let mut stalled = false;
    loop {
        s.rebase();
        if evals >= opts.max_evals {
            break;
        }
        let Some(inv) = s.edges.clone().try_inverse() else {
            reset_simplex(&mut s, rho, cons, &mut |x| eval(x, &mut evals));
            continue;
        };
        // Vertex heights over the opposite face and edge lengths.
        let vsig: Vec<f64> = (0..n).map(|j| 1.0 / inv.row(j).norm()).collect();
        let veta: Vec<f64> = (0..n).map(|j| s.edges.column(j).norm()).collect();
        let geometry_ok = (0..n).all(|j| vsig[j] >= ALPHA * rho && veta[j] <= DELTA * rho);
        // Affine model gradient: edgesᵀ·g = f_j - f_base.
        let df = DVector::from_iterator(n, s.f.iter().map(|v| v - s.f_base));
        let g = inv.transpose() * df;

        if stalled {
            stalled = false;
            if !geometry_ok {
                repair_geometry(&mut s, &inv, &vsig, &veta, rho, &g, cons, &mut |x| eval(x, &mut evals));
                continue;
            }
            if rho <= opts.rho_end {
                converged = true;
                break;
            }
            rho *= 0.5;
            if rho <= 1.5 * opts.rho_end {
                rho = opts.rho_end;
            }
            continue;
        }

        let step = trust_region_step(&g, &cons.rows, &cons.slack(&s.base), rho);
        let predicted = -g.dot(&step);
        if step.norm() < 0.5 * rho || !(predicted > 0.0) {
            stalled = true;
            continue;
        }
        let ft = eval(&(&s.base + &step), &mut evals);
        let actual = s.f_base - ft;
        // Replace the vertex whose removal keeps the simplex best
        // conditioned, overridden by the farthest sufficiently tall one.
        let coeffs = &inv * &step;
        let mut drop = None;
        let mut best = if actual > 0.0 { 0.0 } else { 1.0 };
        for j in 0..n {
            if coeffs[j].abs() > best {
                best = coeffs[j].abs();
                drop = Some(j);
            }
        }
        let mut edge_max = DELTA * rho;
        for j in 0..n {
            let sigbar = coeffs[j].abs() * vsig[j];
            if sigbar >= ALPHA * rho || sigbar >= vsig[j] {
                let len = if actual > 0.0 {
                    (s.edges.column(j) - &step).norm()
                } else {
                    veta[j]
                };
                if len > edge_max {
                    edge_max = len;
                    drop = Some(j);
                }
            }
        }
        if let Some(j) = drop {
            s.edges.set_column(j, &step);
            s.f[j] = ft;
        }
        if !(actual > 0.0 && actual >= 0.1 * predicted) {
            stalled = true;
        }
    }
    s.rebase();
    Minimum {
        x: s.base,
        value: s.f_base,
        evals,
        converged,
    }
}

/// Value substituted for non-finite objective evaluations.
pub const PENALTY: f64 = 1e20;

fn reset_simplex(s: &mut Simplex, rho: f64, cons: &LinearConstraints, eval: &mut impl FnMut(&DVector<f64>) -> f64) {
    let n = s.f.len();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = rho;
        if !cons.is_feasible(&(&s.base + &e), 0.0) && cons.is_feasible(&(&s.base - &e), 0.0) {
            e[j] = -rho;
        }
        s.edges.set_column(j, &e);
        s.f[j] = eval(&(&s.base + &e));
    }
}

/// Replaces the worst-shaped vertex by a step of length `GAMMA·ρ` normal
/// to the opposite face, on the side the model predicts to be lower.
#[allow(clippy::too_many_arguments)]
fn repair_geometry(
    s: &mut Simplex,
    inv: &DMatrix<f64>,
    vsig: &[f64],
    veta: &[f64],
    rho: f64,
    g: &DVector<f64>,
    cons: &LinearConstraints,
    eval: &mut impl FnMut(&DVector<f64>) -> f64,
) {
    let n = vsig.len();
    let long = (0..n)
        .filter(|&j| veta[j] > DELTA * rho)
        .max_by(|&a, &b| veta[a].total_cmp(&veta[b]));
    let j = long.unwrap_or_else(|| (0..n).min_by(|&a, &b| vsig[a].total_cmp(&vsig[b])).unwrap_or(0));
    let normal = inv.row(j).transpose();
    let mut d = normal * (GAMMA * rho * vsig[j]);
    let plus_ok = cons.is_feasible(&(&s.base + &d), 0.0);
    let minus_ok = cons.is_feasible(&(&s.base - &d), 0.0);
    if (g.dot(&d) > 0.0 && minus_ok) || !plus_ok && minus_ok {
        d = -d;
    }
    let v = &s.base + &d;
    s.f[j] = eval(&v);
    s.edges.set_column(j, &d);
}

/// Minimizes `g·d` subject to `‖d‖ ≤ radius` and `rows·d ≥ -max(slack, 0)`.
///
/// Active-set descent: move along the projection of `-g` onto the null
/// space of the active constraints until a constraint or the ball boundary
/// is hit; release constraints with negative multipliers at stationary points.
pub fn trust_region_step(g: &DVector<f64>, rows: &DMatrix<f64>, slack: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = g.len();
    let m = rows.nrows();
    let floor: Vec<f64> = slack.iter().map(|&s| -s.max(0.0)).collect();
    let mut d = DVector::zeros(n);
    let mut active: Vec<usize> = Vec::new();
    let gnorm = g.norm();
    if gnorm == 0.0 {
        return d;
    }
    for _ in 0..4 * (n + m) + 8 {
        let (p, multipliers) = projected_descent(g, rows, &active);
        if p.norm() <= 1e-13 * gnorm {
            match multipliers
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < 0.0)
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                Some((pos, _)) => {
                    active.remove(pos);
                    continue;
                }
                None => return d,
            }
        }
        let pp = p.norm_squared();
        let dp = d.dot(&p);
        let room = (radius * radius - d.norm_squared()).max(0.0);
        let t_ball = (-dp + (dp * dp + pp * room).sqrt()) / pp;
        let mut t_con = f64::INFINITY;
        let mut hit = None;
        for i in (0..m).filter(|i| !active.contains(i)) {
            let ap = rows.row(i).dot(&p.transpose());
            if ap < -1e-14 * pp.sqrt() * rows.row(i).norm() {
                let t = ((rows.row(i).dot(&d.transpose()) - floor[i]) / -ap).max(0.0);
                if t < t_con {
                    t_con = t;
                    hit = Some(i);
                }
            }
        }
        match hit {
            Some(i) if t_con < t_ball => {
                d += t_con * &p;
                active.push(i);
            }
            _ => {
                d += t_ball * &p;
                return d;
            }
        }
    }
    d
}

/// `-(g - Aᵀλ)` with λ the least-squares multipliers of the active rows.
fn projected_descent(g: &DVector<f64>, rows: &DMatrix<f64>, active: &[usize]) -> (DVector<f64>, Vec<f64>) {
    if active.is_empty() {
        return (-g, Vec::new());
    }
    let a = DMatrix::from_fn(active.len(), g.len(), |r, c| rows[(active[r], c)]);
    let gram = &a * a.transpose();
    let rhs = &a * g;
    let lambda = gram.clone().cholesky().map(|c| c.solve(&rhs)).unwrap_or_else(|| {
        gram.svd(true, true)
            .solve(&rhs, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(active.len()))
    });
    let p = -(g - a.transpose() * &lambda);
    (p, lambda.iter().copied().collect())
}
