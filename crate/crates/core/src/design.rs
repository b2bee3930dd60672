//! Approximate and exact designs, canonicalization and efficient rounding.

use crate::error::{Error, Result};
use crate::types::{DesignSpace, MASS_TOL};

/// Default tolerances used when canonicalizing optimizer output.
pub const DEFAULT_MERGE_TOL: f64 = 1e-6;
pub const DEFAULT_WEIGHT_TOL: f64 = 1e-9;

/// Probability measure with finite support on a [`DesignSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximateDesign {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ApproximateDesign {
    /// Builds a design, sorting the support and renormalizing the weights.
    ///
    /// Weights must be positive and sum to one up to [`MASS_TOL`].
    pub fn new(points: Vec<f64>, weights: Vec<f64>, space: &DesignSpace) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidDesign(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.is_empty() {
            return Err(Error::InvalidDesign("empty support".into()));
        }
        if let Some(x) = points.iter().find(|x| !space.contains(**x)) {
            return Err(Error::InvalidDesign(format!(
                "point {x} outside [{}, {}]",
                space.lower(),
                space.upper()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidDesign(format!("weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDesign(format!("weights sum to {total}, not 1")));
        }
        Ok(Self::from_pairs_unchecked(
            points.into_iter().zip(weights.into_iter().map(|w| w / total)).collect(),
        ))
    }

    /// Like [`ApproximateDesign::new`] but rescales weights of any positive total.
    pub fn normalized(points: Vec<f64>, weights: Vec<f64>, space: &DesignSpace) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateDesign);
        }
        Self::new(points, weights.iter().map(|w| w / total).collect(), space)
    }

    /// Equal weights on the given points.
    pub fn uniform(points: Vec<f64>, space: &DesignSpace) -> Result<Self> {
        let k = points.len().max(1);
        Self::new(points, vec![1.0 / k as f64; k], space)
    }

    fn from_pairs_unchecked(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (points, weights) = pairs.into_iter().unzip();
        Self { points, weights }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }

    /// `(1 - alpha)·self + alpha·δ_x`, merging `x` into an identical support point.
    pub fn mix_with_point(&self, x: f64, alpha: f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = self.iter().map(|(p, w)| (p, (1.0 - alpha) * w)).collect();
        match pairs.iter_mut().find(|(p, _)| *p == x) {
            Some(pair) => pair.1 += alpha,
            None => pairs.push((x, alpha)),
        }
        Self::from_pairs_unchecked(pairs)
    }

    /// True when points are strictly increasing.
    pub fn is_sorted_strict(&self) -> bool {
        self.points.windows(2).all(|w| w[0] < w[1])
    }
}

/// Merges nearby points, drops negligible weights and sorts the support.
///
/// Points whose consecutive gaps are at most `merge_tol` form one cluster,
/// placed at the weight-averaged location and carrying the summed weight.
/// Clusters with weight below `weight_tol` are then dropped and the
/// remaining mass renormalized.
pub fn canonicalize(design: &ApproximateDesign, merge_tol: f64, weight_tol: f64) -> Result<ApproximateDesign> {
    if !(merge_tol >= 0.0 && weight_tol >= 0.0) {
        return Err(Error::InvalidDesign("tolerances must be nonnegative".into()));
    }
    let mut clusters: Vec<(f64, f64)> = Vec::with_capacity(design.len());
    let mut last_point = f64::NEG_INFINITY;
    for (x, w) in design.iter() {
        match clusters.last_mut() {
            Some((sx, sw)) if x - last_point <= merge_tol => {
                *sx += w * x;
                *sw += w;
            }
            _ => clusters.push((w * x, w)),
        }
        last_point = x;
    }
    let kept: Vec<(f64, f64)> = clusters
        .into_iter()
        .map(|(sx, sw)| (sx / sw, sw))
        .filter(|(_, w)| *w >= weight_tol && *w > 0.0)
        .collect();
    let total: f64 = kept.iter().map(|(_, w)| w).sum();
    if kept.is_empty() || total <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    Ok(ApproximateDesign::from_pairs_unchecked(
        kept.into_iter().map(|(x, w)| (x, w / total)).collect(),
    ))
}

/// Integer allocation of `n` observations over support points.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDesign {
    points: Vec<f64>,
    counts: Vec<usize>,
    n: usize,
}

impl ExactDesign {
    pub fn new(points: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if points.len() != counts.len() || points.is_empty() {
            return Err(Error::InvalidDesign("points and counts must be nonempty and aligned".into()));
        }
        if counts.contains(&0) {
            return Err(Error::InvalidDesign("every count must be positive".into()));
        }
        let n = counts.iter().sum();
        Ok(Self { points, counts, n })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Empirical design with weights `counts / n`.
    pub fn to_approximate(&self, space: &DesignSpace) -> Result<ApproximateDesign> {
        let n = self.n as f64;
        ApproximateDesign::new(self.points.clone(), self.counts.iter().map(|&c| c as f64 / n).collect(), space)
    }
}

/// Efficient rounding of an approximate design to `n` observations.
///
/// Starts from `⌈(n - k/2)·ξ_i⌉` and then repeatedly increments the count
/// with the smallest `n_i/ξ_i` (or decrements the one with the largest
/// `(n_i - 1)/ξ_i`) until the counts sum to `n`.
pub fn round_design(design: &ApproximateDesign, n: usize) -> Result<ExactDesign> {
    let k = design.len();
    if n < k {
        return Err(Error::RoundingTooFew { n, k });
    }
    let w = design.weights();
    let scale = n as f64 - 0.5 * k as f64;
    let mut counts: Vec<usize> = w.iter().map(|wi| ((scale * wi).ceil() as usize).max(1)).collect();
    let mut total: usize = counts.iter().sum();
    while total < n {
        let j = argmin_by(k, |i| counts[i] as f64 / w[i]);
        counts[j] += 1;
        total += 1;
    }
    while total > n {
        let j = argmax_by(k, |i| {
            if counts[i] > 1 {
                (counts[i] - 1) as f64 / w[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        counts[j] -= 1;
        total -= 1;
    }
    ExactDesign::new(design.points().to_vec(), counts)
}

fn argmin_by(k: usize, f: impl Fn(usize) -> f64) -> usize {
    (0..k).fold(0, |best, i| if f(i) < f(best) { i } else { best })
}

fn argmax_by(k: usize, f: impl Fn(usize) -> f64) -> usize {
    (0..k).fold(0, |best, i| if f(i) > f(best) { i } else { best })
}
