use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfp::Scheme;
use crate::loss::EpsilonModel;
use crate::params::Params;
use crate::staleness::StalenessModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Analyze,
    SampleStaleness,
    SimAsgd,
    SimSme,
    SolvePde,
    Compare,
    SweepThreshold,
    Speedup,
}

impl ExperimentKind {
    /// Kinds that draw random numbers and therefore need an explicit seed.
    pub fn needs_seed(&self) -> bool {
        !matches!(self, ExperimentKind::Analyze | ExperimentKind::SweepThreshold)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Analyze => "analyze",
            ExperimentKind::SampleStaleness => "sample-staleness",
            ExperimentKind::SimAsgd => "sim-asgd",
            ExperimentKind::SimSme => "sim-sme",
            ExperimentKind::SolvePde => "solve-pde",
            ExperimentKind::Compare => "compare",
            ExperimentKind::SweepThreshold => "sweep-threshold",
            ExperimentKind::Speedup => "speedup",
        }
    }
}

fn zero_eps() -> EpsilonModel {
    EpsilonModel::Zero
}

/// Discretization and sampling controls. Unset optional fields get
/// experiment-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Hermite truncation degree N.
    pub truncation: usize,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub output_dt: f64,
    pub steps: usize,
    pub stride: usize,
    pub ensemble: usize,
    pub fit_window: Option<(f64, f64)>,
    pub scheme: Scheme,
    /// Rate sacrificed at critical damping.
    pub delta: f64,
    pub half_width: f64,
    pub resolution: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            truncation: 16,
            dt: None,
            t_final: None,
            output_dt: 0.1,
            steps: 1000,
            stride: 10,
            ensemble: 10_000,
            fit_window: None,
            scheme: Scheme::Rk4,
            delta: 0.1,
            half_width: 6.0,
            resolution: 401,
        }
    }
}

/// Grids for the sweep experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    /// Explicit learning rates; overrides `eta_factors`.
    pub etas: Vec<f64>,
    /// Multiples of the threshold learning rate.
    pub eta_factors: Vec<f64>,
    pub kappas: Vec<f64>,
    pub workers: Vec<usize>,
    pub target: f64,
    pub horizon: usize,
    pub boundary: f64,
    pub t_compare: f64,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            etas: Vec::new(),
            eta_factors: vec![0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
            kappas: Vec::new(),
            workers: vec![1, 2, 4, 8],
            target: 1e-8,
            horizon: 3000,
            boundary: 0.2,
            t_compare: 1.0,
        }
    }
}

/// One experiment, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub params: Params,
    #[serde(default = "zero_eps")]
    pub epsilon: EpsilonModel,
    /// Delay law; geometric with `params.kappa` when absent.
    #[serde(default)]
    pub staleness: Option<StalenessModel>,
    /// Initial iterate; all ones when absent.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::ConfigNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = &self.staleness {
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(t) = &self.theta0 {
            if t.len() != self.params.d {
                return Err(Error::Config(format!(
                    "theta0 has {} entries but params.d = {}",
                    t.len(),
                    self.params.d
                )));
            }
        }
        if self.numerics.ensemble < 2 {
            return Err(Error::Config("numerics.ensemble must be at least 2".into()));
        }
        Ok(())
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.theta0.clone().unwrap_or_else(|| vec![1.0; self.params.d])
    }

    pub fn staleness(&self) -> StalenessModel {
        self.staleness.unwrap_or(StalenessModel::Geometric {
            kappa: self.params.kappa,
        })
    }
}
