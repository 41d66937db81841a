//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use divboot_core::estimation::MdeOptions;
use divboot_core::ldp::{EventSpec, FitOptions};
use divboot_core::models::{ExpFamilyModel, GridModel, ParametricModel};
use divboot_core::{Alphabet, ProbVector};
use serde::{Deserialize, Serialize};

/// A finite-support model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `P_theta(d_j) proportional to exp(table[j] . theta)` on a box.
    ExpFamily {
        alphabet: Alphabet,
        table: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    /// `(1 - theta) components[0] + theta components[1]`, `theta in [0, 1]`.
    Mixture {
        alphabet: Alphabet,
        components: [ProbVector; 2],
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn ParametricModel>> {
        Ok(match self {
            Self::ExpFamily { alphabet, table, lower, upper } => Box::new(ExpFamilyModel::new(
                alphabet.clone(),
                table.clone(),
                lower.clone(),
                upper.clone(),
            )?),
            Self::Mixture { alphabet, components } => Box::new(GridModel::mixture(
                alphabet.clone(),
                components[0].clone(),
                components[1].clone(),
            )?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read model file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid model file {}", path.display()))
    }
}

/// The base law of a rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Probabilities { probabilities: ProbVector },
    ModelPoint { model: ModelSpec, theta: Vec<f64> },
}

impl LawSpec {
    pub fn resolve(&self) -> Result<ProbVector> {
        match self {
            Self::Probabilities { probabilities } => Ok(probabilities.clone()),
            Self::ModelPoint { model, theta } => Ok(model.build()?.prob(theta)?),
        }
    }
}

/// Sample sizes: an explicit list, or multiples `c / t` of the inverse
/// threshold (rounded) for tail experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    Explicit(Vec<usize>),
    Scaled { per_inverse_threshold: Vec<f64> },
}

impl NGrid {
    pub fn resolve(&self, threshold: Option<f64>) -> Result<Vec<usize>> {
        match self {
            Self::Explicit(v) => Ok(v.clone()),
            Self::Scaled { per_inverse_threshold } => {
                let Some(t) = threshold else {
                    bail!("a scaled n_grid needs a threshold");
                };
                Ok(per_inverse_threshold.iter().map(|c| (c / t).round() as usize).collect())
            }
        }
    }
}

fn default_alternative_draws() -> usize {
    201
}

fn default_k_sigma() -> f64 {
    3.0
}

/// One experiment, selected by its `command` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    LdpRate {
        law: LawSpec,
        gamma_weights: f64,
        event: EventSpec,
        n_grid: Vec<usize>,
        replicas: usize,
        seed: u64,
        #[serde(default)]
        fit: FitOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    TailRate {
        law: LawSpec,
        gamma_div: f64,
        gamma_weights: f64,
        threshold: f64,
        n_grid: NGrid,
        replicas: usize,
        seed: u64,
        #[serde(default)]
        fit: FitOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    Bahadur {
        model: ModelSpec,
        theta: Vec<f64>,
        theta_prime: Vec<f64>,
        gamma: f64,
        n_grid: Vec<usize>,
        replicas: usize,
        #[serde(default = "default_alternative_draws")]
        alternative_draws: usize,
        seed: u64,
        #[serde(default)]
        fit: FitOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    Neighborhood {
        model: ModelSpec,
        theta: Vec<f64>,
        theta_true: Vec<f64>,
        epsilon: f64,
        gamma_weights: f64,
        n_grid: Vec<usize>,
        replicas: usize,
        seed: u64,
        #[serde(default)]
        fit: FitOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    WeightsCheck {
        gammas: Vec<f64>,
        n: usize,
        seed: u64,
        #[serde(default = "default_k_sigma")]
        k_sigma: f64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    Estimate {
        model: ModelSpec,
        data: PathBuf,
        gamma: f64,
        #[serde(default)]
        options: MdeOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    Bootstrap {
        model: ModelSpec,
        data: PathBuf,
        gamma: f64,
        #[serde(default)]
        gamma_weights: Option<f64>,
        draws: usize,
        seed: u64,
        #[serde(default)]
        options: MdeOptions,
        #[serde(default)]
        output: Option<PathBuf>,
    },
    Selftest {
        seed: u64,
        #[serde(default)]
        output: Option<PathBuf>,
    },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {} violates the schema", path.display()))
    }

    pub fn command(&self) -> &'static str {
        match self {
            Self::LdpRate { .. } => "ldp_rate",
            Self::TailRate { .. } => "tail_rate",
            Self::Bahadur { .. } => "bahadur",
            Self::Neighborhood { .. } => "neighborhood",
            Self::WeightsCheck { .. } => "weights_check",
            Self::Estimate { .. } => "estimate",
            Self::Bootstrap { .. } => "bootstrap",
            Self::Selftest { .. } => "selftest",
        }
    }

    pub fn output(&self) -> Option<&Path> {
        match self {
            Self::LdpRate { output, .. }
            | Self::TailRate { output, .. }
            | Self::Bahadur { output, .. }
            | Self::Neighborhood { output, .. }
            | Self::WeightsCheck { output, .. }
            | Self::Estimate { output, .. }
            | Self::Bootstrap { output, .. }
            | Self::Selftest { output, .. } => output.as_deref(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::LdpRate { seed, .. }
            | Self::TailRate { seed, .. }
            | Self::Bahadur { seed, .. }
            | Self::Neighborhood { seed, .. }
            | Self::WeightsCheck { seed, .. }
            | Self::Bootstrap { seed, .. }
            | Self::Selftest { seed, .. } => Some(*seed),
            Self::Estimate { .. } => None,
        }
    }

    /// Applies `--seed` and `--replicas` overrides.
    pub fn override_with(&mut self, new_seed: Option<u64>, new_replicas: Option<usize>) {
        if let Some(s) = new_seed {
            match self {
                Self::LdpRate { seed, .. }
                | Self::TailRate { seed, .. }
                | Self::Bahadur { seed, .. }
                | Self::Neighborhood { seed, .. }
                | Self::WeightsCheck { seed, .. }
                | Self::Bootstrap { seed, .. }
                | Self::Selftest { seed, .. } => *seed = s,
                Self::Estimate { .. } => {}
            }
        }
        if let Some(r) = new_replicas {
            match self {
                Self::LdpRate { replicas, .. }
                | Self::TailRate { replicas, .. }
                | Self::Bahadur { replicas, .. }
                | Self::Neighborhood { replicas, .. } => *replicas = r,
                Self::WeightsCheck { n, .. } => *n = r,
                Self::Bootstrap { draws, .. } => *draws = r,
                Self::Estimate { .. } | Self::Selftest { .. } => {}
            }
        }
    }

    /// SHA-256 of the canonical JSON of the config with the output path
    /// removed.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut value = serde_json::to_value(self).expect("configs serialize");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
        }
        let bytes = serde_json::to_vec(&value).expect("values serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
