//! Run configuration shared by the command-line subcommands. Accepted as
//! TOML or JSON; every section has defaults so small files stay small.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fir::{FirSpec, RhsMode};
use crate::graph::{generate_er, generate_sbm, Graph};
use crate::noisy::{NoisyEstimator, SignalSpec};
use crate::spectral::MaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Sbm { n_per_cluster: usize, p_intra: f64, p_inter: f64 },
    Er { n: usize, p: f64 },
    File { path: PathBuf },
}

impl GraphSpec {
    /// Two clusters of 20 nodes, intra 0.7, inter 0.08.
    pub fn two_cluster() -> Self {
        GraphSpec::Sbm { n_per_cluster: 20, p_intra: 0.7, p_inter: 0.08 }
    }

    pub fn erdos_renyi_100() -> Self {
        GraphSpec::Er { n: 100, p: 0.5 }
    }

    pub fn build(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Sbm { n_per_cluster, p_intra, p_inter } => {
                generate_sbm(*n_per_cluster, *p_intra, *p_inter, seed)
            }
            GraphSpec::Er { n, p } => generate_er(*n, *p, seed),
            GraphSpec::File { path } => Graph::load(path),
        }
    }

    pub fn is_random(&self) -> bool {
        !matches!(self, GraphSpec::File { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPolicy {
    /// Half removals of existing edges, half additions of absent ones.
    #[default]
    Mixed,
    Remove,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Fractions of the nominal edge count that are perturbed.
    pub fractions: Vec<f64>,
    /// Per-edge probability handed to the designers and used for error
    /// evaluation.
    pub probability: f64,
    pub sign_policy: SignPolicy,
    pub keep_connected: bool,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            fractions: vec![0.0, 0.01, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12, 0.14, 0.16, 0.18, 0.20],
            probability: 1.0,
            sign_policy: SignPolicy::Mixed,
            keep_connected: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// γ for the noise-variance sweep.
    pub gamma: f64,
    /// σ² for the γ sweep.
    pub noise_variance: f64,
    pub signal: SignalSpec,
    pub variances: Vec<f64>,
    pub gammas: Vec<f64>,
    /// Perturbation fractions for both noisy sweeps.
    pub levels: Vec<f64>,
    pub estimator: NoisyEstimator,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            noise_variance: 0.1,
            signal: SignalSpec::default(),
            variances: vec![0.01, 0.05, 0.1, 0.5, 1.0],
            gammas: vec![1e-3, 1e-1, 1.0, 1e1, 1e3],
            levels: vec![0.01, 0.05, 0.10],
            estimator: NoisyEstimator::Enumeration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    #[default]
    Spectral,
    Fir,
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSpec {
    pub kind: DesignKind,
    /// Perturbation model file. When absent one is drawn with `fraction`.
    pub model: Option<PathBuf>,
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSpec {
    pub instances: usize,
    pub max_nodes: usize,
    pub max_edges: usize,
    pub order: usize,
    pub tolerance: f64,
    /// Also run the literal compatibility variants and report their
    /// deviations.
    pub literal: bool,
}

impl Default for ValidateSpec {
    fn default() -> Self {
        Self { instances: 50, max_nodes: 20, max_edges: 8, order: 3, tolerance: 1e-8, literal: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    /// Draw a perturbation set of this fraction alongside the graph.
    pub fraction: Option<f64>,
    pub perturbation_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub experiment: Option<ExperimentKind>,
    /// Defaults to the two-cluster graph for `fig1` and ER(100, 0.5)
    /// otherwise.
    pub graph: Option<GraphSpec>,
    /// Defaults to 100 for `fig1` and 25 otherwise.
    pub trials: Option<usize>,
    pub mask: MaskSpec,
    /// Defaults to order 5 fit to `mask`.
    pub fir: Option<FirSpec>,
    pub rhs_mode: RhsMode,
    /// Sample count for Monte-Carlo estimates when enumeration is too large.
    pub mc_samples: usize,
    pub perturbation: PerturbationSpec,
    pub noise: NoiseSpec,
    pub design: DesignSpec,
    pub validate: ValidateSpec,
    pub gen: GenSpec,
    pub gnuplot: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            experiment: None,
            graph: None,
            trials: None,
            mask: MaskSpec::Heat { tau: 1.0 },
            fir: None,
            rhs_mode: RhsMode::Auto,
            mc_samples: 2000,
            perturbation: PerturbationSpec::default(),
            noise: NoiseSpec::default(),
            design: DesignSpec::default(),
            validate: ValidateSpec::default(),
            gen: GenSpec::default(),
            gnuplot: false,
        }
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validated()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validated()
    }

    /// Parses by extension, falling back to sniffing the first character.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            Some("json") => Self::from_json_str(&text),
            _ if text.trim_start().starts_with('{') => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    fn validated(self) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(msg));
        for &f in self
            .perturbation
            .fractions
            .iter()
            .chain(&self.noise.levels)
            .chain(&self.design.fraction)
            .chain(&self.gen.fraction)
        {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("perturbation fraction {f} outside [0, 1)"));
            }
        }
        let p = self.perturbation.probability;
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("perturbation probability {p} outside [0, 1]"));
        }
        if self.trials == Some(0) {
            return bad("trials must be at least 1".into());
        }
        if self.noise.variances.iter().chain(&self.noise.gammas).any(|v| !(v.is_finite() && *v >= 0.0))
            || !(self.noise.gamma >= 0.0 && self.noise.noise_variance >= 0.0)
        {
            return bad("noise variances and gammas must be non-negative".into());
        }
        Ok(self)
    }

    pub fn graph_spec(&self) -> GraphSpec {
        self.graph.clone().unwrap_or(match self.experiment {
            Some(ExperimentKind::Fig1) | None => GraphSpec::two_cluster(),
            _ => GraphSpec::erdos_renyi_100(),
        })
    }

    pub fn trial_count(&self) -> usize {
        self.trials.unwrap_or(match self.experiment {
            Some(ExperimentKind::Fig1) | None => 100,
            _ => 25,
        })
    }

    pub fn fir_spec(&self) -> FirSpec {
        self.fir.clone().unwrap_or(FirSpec { order: 5, taps: None, fit_to_mask: Some(self.mask.clone()) })
    }

    /// Hex SHA-256 of the canonical JSON form, so TOML and JSON versions of
    /// one configuration hash alike. The output path is left out.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&Config { output: None, ..self.clone() }).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
