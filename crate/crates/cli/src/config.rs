use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tightprop::oracle::{CorrectnessConfig, TightnessConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Correctness,
    Tightness,
    Polytope,
    Train,
    Evaluate,
    Stats,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Correctness => "correctness",
            ExperimentKind::Tightness => "tightness",
            ExperimentKind::Polytope => "polytope",
            ExperimentKind::Train => "train",
            ExperimentKind::Evaluate => "evaluate",
            ExperimentKind::Stats => "stats",
        }
    }
}

/// A complete experiment description. Exactly the section named by
/// `experiment` must be present.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Stem for the CSV files; defaults to the experiment name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Free text, e.g. how this configuration was scaled down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<CorrectnessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tightness: Option<TightnessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polytope: Option<PolytopeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeSection {
    /// Layer widths; the last must be 2.
    pub dims: Vec<usize>,
    pub eps: f64,
    pub samples: usize,
    /// Box centre; drawn from a standard normal when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub networks: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Mnist {
        /// Defaults to `TIGHTPROP_DATA_DIR` or the bundled sample.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        #[serde(default = "train_fraction")]
        train_fraction: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model_id: String,
    pub kappa: f64,
    pub eps_train: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgdSection {
    pub eps_test: Vec<f64>,
    #[serde(default = "pgd_steps")]
    pub steps: usize,
    #[serde(default = "one")]
    pub restarts: usize,
    #[serde(default)]
    pub accuracy_floor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: DatasetSpec,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "unit")]
    pub temperature: f64,
    #[serde(default)]
    pub momentum: f64,
    pub runs: Vec<RunSpec>,
    /// When present, the trained models are attacked and a scatter table written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<PgdSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    pub model_id: String,
    pub path: PathBuf,
    pub kappa: f64,
    pub eps_train: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub dataset: DatasetSpec,
    pub models: Vec<ModelRef>,
    pub pgd: PgdSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop2Section {
    #[serde(default = "unit")]
    pub sigma: f64,
    pub n: usize,
    pub eps: f64,
    /// Input point; standard normal entries when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default = "four")]
    pub outputs: usize,
    #[serde(default = "prop2_draws")]
    pub draws: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop3Section {
    pub ks: Vec<usize>,
    pub draws: usize,
    #[serde(default = "prop3_tol")]
    pub rel_tol: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltSection {
    pub n_values: Vec<usize>,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockScanSection {
    pub n: usize,
    pub k: usize,
    pub eps: f64,
    pub trials: usize,
    /// Output samples per trial used to estimate the slack multiplier.
    #[serde(default = "slack_samples")]
    pub samples: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop2: Option<Prop2Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop3: Option<Prop3Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltSection>,
    /// Estimates the slack multiplier of the Gaussian approximation and
    /// checks the resulting bounds cover the samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_consistency: Option<BlockScanSection>,
    /// Fraction of hidden units satisfying the sign hypothesis of the
    /// two-layer tightness result over random first layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theorem2: Option<BlockScanSection>,
}

fn one() -> usize {
    1
}

fn four() -> usize {
    4
}

fn unit() -> f64 {
    1.0
}

fn train_fraction() -> f64 {
    0.8
}

fn pgd_steps() -> usize {
    tightprop::robust::PGD_DEFAULT_STEPS
}

fn prop2_draws() -> usize {
    100_000
}

fn prop3_tol() -> f64 {
    0.01
}

fn slack_samples() -> usize {
    2000
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: String::new(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn stem(&self) -> &str {
        self.name.as_deref().unwrap_or(self.experiment.name())
    }

    /// Checks that the section matching `experiment` is present and no other.
    pub fn check_sections(&self) -> Result<(), CliError> {
        let present = [
            (ExperimentKind::Correctness, self.correctness.is_some()),
            (ExperimentKind::Tightness, self.tightness.is_some()),
            (ExperimentKind::Polytope, self.polytope.is_some()),
            (ExperimentKind::Train, self.train.is_some()),
            (ExperimentKind::Evaluate, self.evaluate.is_some()),
            (ExperimentKind::Stats, self.stats.is_some()),
        ];
        for (kind, there) in present {
            if kind == self.experiment && !there {
                return Err(CliError::config(kind.name(), "section required by `experiment` is missing"));
            }
            if kind != self.experiment && there {
                return Err(CliError::config(
                    kind.name(),
                    format!("section does not belong to a `{}` experiment", self.experiment.name()),
                ));
            }
        }
        Ok(())
    }

    /// Overrides every trial count in the active section.
    pub fn override_trials(&mut self, trials: usize) {
        if let Some(c) = &mut self.correctness {
            c.trials = trials;
        }
        if let Some(c) = &mut self.tightness {
            c.trials = trials;
        }
        if let Some(s) = &mut self.stats {
            if let Some(c) = &mut s.clt {
                c.trials = trials;
            }
            if let Some(c) = &mut s.self_consistency {
                c.trials = trials;
            }
            if let Some(c) = &mut s.theorem2 {
                c.trials = trials;
            }
        }
        if let Some(p) = &mut self.polytope {
            p.networks = trials;
        }
    }

    /// SHA-256 of the resolved configuration in compact JSON, leaving out
    /// where the outputs go.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut cfg = self.clone();
        cfg.output_dir = None;
        let text = serde_json::to_string(&cfg).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
