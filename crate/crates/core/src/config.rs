//! Versioned TOML run configuration shared by every CLI command.
//!
//! Schema (version 1):
//!
//! ```toml
//! version = 1
//! output_dir = "out"
//! n = 100
//! alpha = 0.4
//! weights = "uniform"            # or an explicit list, one per candidate
//!
//! [design_space]
//! lower = 0.0
//! upper = 150.0
//!
//! [[candidates]]
//! kind = "log-linear"            # linear | log-linear | emax | exponential | quadratic
//! start = [0.0, 0.0797, 1.0]     # optional projection start
//!
//! [[prior]]                      # a single truth
//! kind = "emax"
//! vartheta = [0.0, 0.467, 25.0]
//! sigma2 = 0.1
//! prob = 0.5
//!
//! [[prior]]                      # a uniform grid around a reference truth
//! kind = "log-linear"
//! vartheta = [0.0, 0.0797, 1.0]
//! sigma2 = 0.1
//! prob = 0.5                     # total mass of the block
//! grid = { vary = [1, 2], spread = 0.1 }
//!
//! [design]                       # evaluated by project and verify
//! points = [0.0, 13.026, 150.0]
//! weights = [0.281, 0.498, 0.221]
//!
//! [verify]
//! step = 0.25
//! rel_tol = 1e-5
//!
//! [optimizer]                    # see OptimizerConfig; every key optional
//! k_points = { min = 3, max = 3 }
//!
//! [simulation]
//! reps = 1000
//! seed = 1
//! n_list = [100]
//! [[simulation.truths]]
//! name = "f1"
//! kind = "log-linear"
//! vartheta = [0.0, 0.0797, 1.0]
//! sigma2 = 0.1
//! [[simulation.designs]]
//! name = "xi1"
//! points = [0.0, 10.0, 25.0, 50.0, 100.0, 150.0]
//! weights = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]   # normalized on load
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::criterion::CriterionContext;
use crate::design::ApproximateDesign;
use crate::optimizer::OptimizerConfig;
use crate::simulate::Study;
use crate::types::{AveragingWeights, CandidateModel, DesignSpace, ModelKind, TargetED, TruthPrior};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub n: usize,
    pub alpha: f64,
    #[serde(default)]
    pub weights: WeightSpec,
    pub design_space: SpaceSpec,
    pub candidates: Vec<CandidateSpec>,
    #[serde(default)]
    pub prior: Vec<AtomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub lower: f64,
    pub upper: f64,
}

/// `"uniform"` or one fixed weight per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scheme(String),
    Fixed(Vec<f64>),
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec::Scheme("uniform".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub start: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub kind: ModelKind,
    pub vartheta: Vec<f64>,
    pub sigma2: f64,
    pub prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

/// Every index in `vary` takes the values `ϑ_j·(1 - spread, 1, 1 + spread)`;
/// the block mass is split evenly over the product grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub vary: Vec<usize>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Grid spacing in dose units.
    pub step: f64,
    /// Allowed violation relative to the criterion value.
    pub rel_tol: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { step: 0.25, rel_tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub reps: usize,
    pub seed: u64,
    pub n_list: Vec<usize>,
    pub truths: Vec<NamedModel>,
    pub designs: Vec<NamedDesign>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedModel {
    pub name: String,
    pub kind: ModelKind,
    pub vartheta: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedDesign {
    pub name: String,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds every derived object once so that all module invariants are
    /// checked at load time.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if let WeightSpec::Scheme(s) = &self.weights {
            if s != "uniform" {
                return Err(Error::Config(format!("unknown weights scheme '{s}'")));
            }
        }
        self.target()?;
        self.averaging_weights()?;
        if !self.prior.is_empty() {
            self.context()?;
        }
        if let Some(d) = &self.design {
            self.build_design(&d.points, &d.weights)?;
        }
        if !(self.verify.step > 0.0 && self.verify.rel_tol >= 0.0) {
            return Err(Error::Config("verify.step must be positive and verify.rel_tol nonnegative".into()));
        }
        self.optimizer.validate()?;
        if self.simulation.is_some() {
            self.study()?;
        }
        Ok(())
    }

    pub fn space(&self) -> Result<DesignSpace> {
        DesignSpace::new(self.design_space.lower, self.design_space.upper)
    }

    pub fn target(&self) -> Result<TargetED> {
        TargetED::new(self.alpha, self.space()?)
    }

    pub fn candidate_kinds(&self) -> Vec<ModelKind> {
        self.candidates.iter().map(|c| c.kind).collect()
    }

    pub fn averaging_weights(&self) -> Result<AveragingWeights> {
        match &self.weights {
            WeightSpec::Scheme(_) => Ok(AveragingWeights::uniform(self.candidates.len())),
            WeightSpec::Fixed(w) => AveragingWeights::new(w.clone()),
        }
    }

    /// Expands grid blocks into individual atoms.
    pub fn truth_prior(&self) -> Result<TruthPrior> {
        if self.prior.is_empty() {
            return Err(Error::Config("no prior atoms given".into()));
        }
        let space = self.space()?;
        let mut atoms = Vec::new();
        for (i, a) in self.prior.iter().enumerate() {
            let wrap = |e: Error| Error::Config(format!("prior entry {i} ({}): {e}", a.kind));
            let grid = match &a.grid {
                None => vec![a.vartheta.clone()],
                Some(g) => expand_grid(&a.vartheta, g).map_err(wrap)?,
            };
            let mass = a.prob / grid.len() as f64;
            for t in grid {
                let m = CandidateModel::on_space(a.kind, t, a.sigma2, &space).map_err(wrap)?;
                atoms.push((m, mass));
            }
        }
        TruthPrior::new(atoms)
    }

    pub fn context(&self) -> Result<CriterionContext> {
        let candidates = self.candidates.iter().map(|c| (c.kind, c.start.clone())).collect();
        CriterionContext::new(self.truth_prior()?, candidates, self.averaging_weights()?, self.target()?, self.n)
    }

    /// The `[design]` section; weights are normalized.
    pub fn design(&self) -> Result<ApproximateDesign> {
        let d = self
            .design
            .as_ref()
            .ok_or_else(|| Error::Config("missing [design] section".into()))?;
        self.build_design(&d.points, &d.weights)
    }

    fn build_design(&self, points: &[f64], weights: &[f64]) -> Result<ApproximateDesign> {
        ApproximateDesign::normalized(points.to_vec(), weights.to_vec(), &self.space()?)
    }

    pub fn study(&self) -> Result<Study> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
        let space = self.space()?;
        let truths = sim
            .truths
            .iter()
            .map(|t| {
                CandidateModel::on_space(t.kind, t.vartheta.clone(), t.sigma2, &space)
                    .map(|m| (t.name.clone(), m))
                    .map_err(|e| Error::Config(format!("simulation truth '{}': {e}", t.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let designs = sim
            .designs
            .iter()
            .map(|d| {
                self.build_design(&d.points, &d.weights)
                    .map(|x| (d.name.clone(), x))
                    .map_err(|e| Error::Config(format!("simulation design '{}': {e}", d.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        if truths.is_empty() || designs.is_empty() || sim.n_list.is_empty() || sim.reps == 0 {
            return Err(Error::Config("simulation needs truths, designs, n_list and reps ≥ 1".into()));
        }
        Ok(Study {
            truths,
            candidates: self.candidate_kinds(),
            designs,
            n_list: sim.n_list.clone(),
            reps: sim.reps,
            seed: sim.seed,
            target: self.target()?,
        })
    }
}

fn expand_grid(base: &[f64], grid: &GridSpec) -> Result<Vec<Vec<f64>>> {
    if !(grid.spread >= 0.0 && grid.spread < 1.0) {
        return Err(Error::InvalidPrior(format!("grid spread must lie in [0, 1), got {}", grid.spread)));
    }
    let mut out = vec![base.to_vec()];
    for &j in &grid.vary {
        if j >= base.len() {
            return Err(Error::InvalidPrior(format!("grid index {j} out of range")));
        }
        out = out
            .into_iter()
            .flat_map(|t| {
                [1.0 - grid.spread, 1.0, 1.0 + grid.spread].map(|f| {
                    let mut t = t.clone();
                    t[j] *= f;
                    t
                })
            })
            .collect();
    }
    Ok(out)
}
