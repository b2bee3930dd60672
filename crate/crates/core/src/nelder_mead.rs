//! Nelder–Mead simplex search, used as an alternative to the
//! linear-approximation method. Constraints must be folded into the
//! objective by the caller.

use nalgebra::DVector;

use crate::cobyla::{Minimum, PENALTY};

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Edge length of the initial right-angled simplex.
    pub initial_step: f64,
    /// Stop once every vertex is within this distance of the best one.
    pub x_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            x_tol: 1e-7,
            max_evals: 4000,
        }
    }
}

/// Minimizes `f` from `x0` with the standard reflection, expansion,
/// contraction and shrink coefficients (1, 2, 1/2, 1/2).
pub fn minimize(mut f: impl FnMut(&DVector<f64>) -> f64, x0: &DVector<f64>, opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &DVector<f64>| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            PENALTY
        }
    };
    let mut pts: Vec<DVector<f64>> = vec![x0.clone()];
    for j in 0..n {
        let mut p = x0.clone();
        p[j] += opts.initial_step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(&mut eval).collect();
    let mut converged = false;
    // A zero-dimensional problem has nothing to search.
    while n > 0 && !converged {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let size = pts[1..].iter().map(|p| (p - &pts[0]).amax()).fold(0.0, f64::max);
        if size <= opts.x_tol {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }
        let centroid = pts[..n].iter().fold(DVector::zeros(n), |acc, p| acc + p) / n as f64;
        let toward = |t: f64| &centroid + (&pts[n] - &centroid) * t;
        let xr = toward(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = toward(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                (pts[n], vals[n]) = (xe, fe);
            } else {
                (pts[n], vals[n]) = (xr, fr);
            }
        } else if fr < vals[n - 1] {
            (pts[n], vals[n]) = (xr, fr);
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = toward(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = toward(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                (pts[n], vals[n]) = (xc, fc);
            } else {
                for i in 1..=n {
                    pts[i] = &pts[0] + (&pts[i] - &pts[0]) * 0.5;
                    vals[i] = eval(&pts[i]);
                }
            }
        }
    }
    let best = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Minimum {
        x: pts[best].clone(),
        value: vals[best],
        evals: evals.get(),
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let m = minimize(
            |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
            &DVector::from_column_slice(&[-1.2, 1.0]),
            &NelderMeadOptions {
                initial_step: 0.5,
                x_tol: 1e-9,
                max_evals: 5000,
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }
}
