//! Domain types shared by every module: the dose interval, model families,
//! parameterized models, the discrete prior over truths, the effective-dose
//! target and the fixed averaging weights.
//!
//! Parameter vectors always use the ordering `θ = (σ², ϑ₁, ϑ₂, …)`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Tolerance on probability vectors (weights, prior masses) before renormalization.
pub const MASS_TOL: f64 = 1e-9;

/// Compact dose interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    lower: f64,
    upper: f64,
}

impl DesignSpace {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidDesignSpace { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Mean-function family.
///
/// `Constant` and `Linear` are small families with hand-computable moments,
/// used mostly as test oracles. The other four are the dose-response shapes
/// used throughout the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Constant,
    Linear,
    /// `ϑ₁ + ϑ₂ log(x + ϑ₃)`
    LogLinear,
    /// `ϑ₁ + ϑ₂ x / (ϑ₃ + x)`
    Emax,
    /// `ϑ₁ + ϑ₂ exp(x / ϑ₃)`
    Exponential,
    /// `ϑ₁ + ϑ₂ x + ϑ₃ x²`
    Quadratic,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Constant,
        ModelKind::Linear,
        ModelKind::LogLinear,
        ModelKind::Emax,
        ModelKind::Exponential,
        ModelKind::Quadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Constant => "constant",
            ModelKind::Linear => "linear",
            ModelKind::LogLinear => "log-linear",
            ModelKind::Emax => "emax",
            ModelKind::Exponential => "exponential",
            ModelKind::Quadratic => "quadratic",
        }
    }

    /// Length of the mean parameter ϑ.
    pub fn n_mean_params(self) -> usize {
        match self {
            ModelKind::Constant => 1,
            ModelKind::Linear => 2,
            _ => 3,
        }
    }

    /// Total parameter count `p_s` including the variance.
    pub fn n_params(self) -> usize {
        1 + self.n_mean_params()
    }

    /// Index (into ϑ) of the single parameter entering the mean nonlinearly.
    pub fn nonlinear_index(self) -> Option<usize> {
        match self {
            ModelKind::LogLinear | ModelKind::Emax | ModelKind::Exponential => Some(2),
            _ => None,
        }
    }

    /// Compact search interval for the nonlinear parameter on `space`.
    ///
    /// Emax ED50 in `[0.001, 1.5]·width`, exponential rate in `[0.1, 2]·width`
    /// and log-linear offset in `[0.001, 10]·width`, each shifted by `-lower`
    /// so that denominators and log arguments stay positive on the interval.
    pub fn default_bounds(self, space: &DesignSpace) -> Option<(f64, f64)> {
        let w = space.width();
        let shift = -space.lower();
        match self {
            ModelKind::LogLinear => Some((shift + 1e-3 * w, shift + 10.0 * w)),
            ModelKind::Emax => Some((shift + 1e-3 * w, shift + 1.5 * w)),
            ModelKind::Exponential => Some((0.1 * w, 2.0 * w)),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidModel(format!("unknown model kind '{s}'")))
    }
}

/// A Gaussian regression model: mean family, mean parameter ϑ and variance σ².
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateModel {
    kind: ModelKind,
    vartheta: Vec<f64>,
    sigma2: f64,
}

impl CandidateModel {
    pub fn new(kind: ModelKind, vartheta: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "{kind}: variance must be positive and finite, got {sigma2}"
            )));
        }
        check_mean_params(kind, &vartheta)?;
        Ok(Self { kind, vartheta, sigma2 })
    }

    /// Like [`CandidateModel::new`] but also checks the mean is defined on `space`.
    pub fn on_space(kind: ModelKind, vartheta: Vec<f64>, sigma2: f64, space: &DesignSpace) -> Result<Self> {
        let m = Self::new(kind, vartheta, sigma2)?;
        m.check_space(space)?;
        Ok(m)
    }

    pub fn check_space(&self, space: &DesignSpace) -> Result<()> {
        if let ModelKind::LogLinear | ModelKind::Emax = self.kind {
            if self.vartheta[2] <= -space.lower() {
                return Err(Error::InvalidModel(format!(
                    "{}: ϑ₃ = {} must exceed -lower = {}",
                    self.kind,
                    self.vartheta[2],
                    -space.lower()
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn vartheta(&self) -> &[f64] {
        &self.vartheta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }

    /// Full parameter vector `(σ², ϑ)`.
    pub fn theta(&self) -> Vec<f64> {
        std::iter::once(self.sigma2).chain(self.vartheta.iter().copied()).collect()
    }

    pub fn from_theta(kind: ModelKind, theta: &[f64]) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::InvalidModel("empty parameter vector".into()));
        }
        Self::new(kind, theta[1..].to_vec(), theta[0])
    }

    pub fn with_vartheta(&self, vartheta: Vec<f64>) -> Result<Self> {
        Self::new(self.kind, vartheta, self.sigma2)
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(self.kind, self.vartheta.clone(), sigma2)
    }

    pub fn label(&self) -> String {
        let params: Vec<String> = self.vartheta.iter().map(|v| format!("{v}")).collect();
        format!("{}({})", self.kind, params.join(","))
    }
}

fn check_mean_params(kind: ModelKind, vartheta: &[f64]) -> Result<()> {
    if vartheta.len() != kind.n_mean_params() {
        return Err(Error::InvalidModel(format!(
            "{kind} expects {} mean parameters, got {}",
            kind.n_mean_params(),
            vartheta.len()
        )));
    }
    if vartheta.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("{kind}: non-finite parameter in {vartheta:?}")));
    }
    if kind == ModelKind::Exponential && vartheta[2] == 0.0 {
        return Err(Error::InvalidModel("exponential: ϑ₃ must be nonzero".into()));
    }
    Ok(())
}

/// One atom of a discrete prior over truths.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorAtom {
    pub model: CandidateModel,
    pub prob: f64,
}

/// Finite discrete prior over candidate truths `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPrior {
    atoms: Vec<PriorAtom>,
}

impl TruthPrior {
    pub fn new(atoms: Vec<(CandidateModel, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidPrior("prior has no atoms".into()));
        }
        if let Some((_, p)) = atoms.iter().find(|(_, p)| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidPrior(format!("atom probability {p} is not positive")));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidPrior(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self {
            atoms: atoms.into_iter().map(|(model, p)| PriorAtom { model, prob: p / total }).collect(),
        })
    }

    pub fn uniform(models: Vec<CandidateModel>) -> Result<Self> {
        let p = 1.0 / models.len().max(1) as f64;
        Self::new(models.into_iter().map(|m| (m, p)).collect())
    }

    pub fn point(model: CandidateModel) -> Self {
        Self {
            atoms: vec![PriorAtom { model, prob: 1.0 }],
        }
    }

    pub fn atoms(&self) -> &[PriorAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Effective-dose target `ED_α` on a design space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetED {
    alpha: f64,
    space: DesignSpace,
}

impl TargetED {
    pub fn new(alpha: f64, space: DesignSpace) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidModel(format!("ED fraction must lie in (0,1), got {alpha}")));
        }
        Ok(Self { alpha, space })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }
}

/// Fixed, nonnegative model-averaging weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingWeights {
    w: Vec<f64>,
}

impl AveragingWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidWeights(format!("negative or non-finite weight in {w:?}")));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            w: w.into_iter().map(|v| v / total).collect(),
        })
    }

    pub fn uniform(r: usize) -> Self {
        Self {
            w: vec![1.0 / r as f64; r],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_space_rejects_inverted_or_infinite() {
        assert!(DesignSpace::new(1.0, 1.0).is_err());
        assert!(DesignSpace::new(2.0, 1.0).is_err());
        assert!(DesignSpace::new(0.0, f64::INFINITY).is_err());
        assert!(DesignSpace::new(0.0, 150.0).is_ok());
    }

    #[test]
    fn model_invariants() {
        let space = DesignSpace::new(0.0, 150.0).unwrap();
        assert!(CandidateModel::new(ModelKind::Emax, vec![0.0, 0.467, 25.0], 0.0).is_err());
        assert!(CandidateModel::new(ModelKind::Emax, vec![0.0, 0.467], 0.1).is_err());
        assert!(CandidateModel::on_space(ModelKind::Emax, vec![0.0, 1.0, -1.0], 0.1, &space).is_err());
        assert!(CandidateModel::on_space(ModelKind::LogLinear, vec![0.0, 1.0, 0.0], 0.1, &space).is_err());
        let m = CandidateModel::new(ModelKind::Quadratic, vec![0.0, 0.00533, -0.00002], 0.1).unwrap();
        assert_eq!(m.theta(), vec![0.1, 0.0, 0.00533, -0.00002]);
        assert_eq!(CandidateModel::from_theta(m.kind(), &m.theta()).unwrap(), m);
    }

    #[test]
    fn prior_and_weights_validate_mass() {
        let m = CandidateModel::new(ModelKind::Constant, vec![0.0], 1.0).unwrap();
        assert!(TruthPrior::new(vec![(m.clone(), 0.5)]).is_err());
        assert!(TruthPrior::new(vec![(m.clone(), 0.5), (m.clone(), 0.5)]).is_ok());
        assert!(TruthPrior::new(vec![(m.clone(), 1.5), (m, -0.5)]).is_err());
        assert!(AveragingWeights::new(vec![0.5, 0.6]).is_err());
        assert!(AveragingWeights::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(AveragingWeights::uniform(4).as_slice(), &[0.25; 4]);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }
}
