//! Experiment configuration: one JSON document describes a full run.
//!
//! Every knob of the pipeline lives in [`ExperimentConfig`]. The document is
//! self-contained on purpose: hashing its canonical serialization gives a
//! stable identity for the run, and two runs with equal hashes must produce
//! byte-identical artifacts (timestamps live only in the manifest).

use std::fs;
use std::path::{Path, PathBuf};

use grasp_core::data::SyntheticKind;
use grasp_core::inversion::InversionConfig;
use grasp_core::metrics::UnlearnConfig;
use grasp_core::nn::{mlp_arch, small_cnn_arch, LayerSpec, TrainConfig};
use grasp_core::poison::{load_trigger, Corner, PoisonPlan, Trigger};
use grasp_core::robustness::RobustnessQuery;
use grasp_core::rng;
use grasp_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Seed tags for the per-stage streams derived from the run seed. Values are
/// disjoint from the library's internal tags so a derived stage seed never
/// collides with a stream the stage itself derives.
pub(crate) mod seeds {
    pub const DATA_TRAIN: u64 = 101;
    pub const DATA_TEST: u64 = 102;
    pub const TRAIN: u64 = 103;
    pub const POISON: u64 = 104;
    pub const INVERSION: u64 = 105;
    pub const ROBUSTNESS: u64 = 106;
    pub const UNLEARN: u64 = 107;
    pub const OPT_SET: u64 = 108;
    pub const EVAL_SET: u64 = 109;
    pub const LIPSCHITZ: u64 = 110;
}

/// Where the pipeline's input data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// IDX image/label file pairs on disk (the classic digit format).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Seeded synthetic corpus generated at run time.
    Synthetic {
        kind: SyntheticKind,
        n_train: usize,
        n_test: usize,
    },
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetSpec::Idx { .. } => Ok(()),
            DatasetSpec::Synthetic { n_train, n_test, .. } => {
                if *n_train < 2 || *n_test < 2 {
                    return Err(Error::Config(format!(
                        "synthetic datasets need at least 2 samples per split, \
                         got {n_train} train / {n_test} test"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Network architecture, either a named preset or an explicit layer stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ArchSpec {
    /// Flatten, one hidden ReLU layer, linear head.
    Mlp { hidden: usize },
    /// Two stride-2 convolutions and two dense layers; image inputs only.
    SmallCnn,
    /// Explicit layer stack for everything else.
    Custom { layers: Vec<LayerSpec> },
}

impl ArchSpec {
    /// Resolves the preset into concrete layer specs for the given data.
    pub fn layer_specs(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
        match self {
            ArchSpec::Mlp { hidden } => {
                if *hidden == 0 {
                    return Err(Error::Config("mlp hidden width must be at least 1".into()));
                }
                Ok(mlp_arch(input_shape, *hidden, num_classes))
            }
            ArchSpec::SmallCnn => small_cnn_arch(input_shape, num_classes),
            ArchSpec::Custom { layers } => {
                if layers.is_empty() {
                    return Err(Error::Config("custom architecture has no layers".into()));
                }
                Ok(layers.clone())
            }
        }
    }
}

/// How the attack trigger is obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerSpec {
    /// Load a previously saved trigger document.
    File { path: PathBuf },
    /// Solid square patch of the given side length in a corner.
    Patch { size: usize, corner: Corner, value: f32 },
}

impl TriggerSpec {
    /// Builds the trigger for items of the given shape.
    pub fn build(&self, item_shape: &[usize]) -> Result<Trigger> {
        match self {
            TriggerSpec::File { path } => load_trigger(path),
            TriggerSpec::Patch { size, corner, value } => {
                Trigger::patch(item_shape, *size, *corner, *value)
            }
        }
    }
}

/// Full description of one experiment run.
///
/// `seed` is the run's master seed: dataset synthesis derives from it
/// directly, and [`ExperimentConfig::with_master_seed`] rewires every nested
/// stage seed from it so zoo members differ by a single number. Nested seeds
/// loaded from JSON are otherwise used exactly as written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub trigger: TriggerSpec,
    pub poison: PoisonPlan,
    pub inversion: InversionConfig,
    pub robustness: RobustnessQuery,
    /// Test samples drawn for the per-sample robustness report.
    pub robustness_samples: usize,
    pub unlearn: UnlearnConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                kind: SyntheticKind::Digits,
                n_train: 2000,
                n_test: 1000,
            },
            arch: ArchSpec::SmallCnn,
            train: TrainConfig::default(),
            trigger: TriggerSpec::Patch {
                size: 3,
                corner: Corner::BottomRight,
                value: 1.0,
            },
            poison: PoisonPlan {
                alpha: 0.1,
                beta: 0.5,
                noise_scale: 0.1,
                noise: grasp_core::poison::NoiseKind::Normal,
                target: 0,
                seed: 0,
            },
            inversion: InversionConfig::default(),
            robustness: RobustnessQuery::default(),
            robustness_samples: 16,
            unlearn: UnlearnConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
        }
        .with_master_seed(0)
    }
}

impl ExperimentConfig {
    /// Sets the run seed and re-derives every nested stage seed from it.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = rng::derive_seed(seed, seeds::TRAIN);
        self.poison.seed = rng::derive_seed(seed, seeds::POISON);
        self.inversion.seed = rng::derive_seed(seed, seeds::INVERSION);
        self.robustness.seed = rng::derive_seed(seed, seeds::ROBUSTNESS);
        self.unlearn.seed = rng::derive_seed(seed, seeds::UNLEARN);
        self
    }

    /// Checks every nested config before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.poison.validate()?;
        self.inversion.validate()?;
        self.robustness.validate()?;
        if self.robustness_samples == 0 {
            return Err(Error::Config(
                "robustness_samples must be at least 1".into(),
            ));
        }
        if self.unlearn.batch_size == 0 {
            return Err(Error::Config("unlearn batch_size must be at least 1".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        Ok(())
    }
}

/// Reads and parses a config document. Parse failures are reported as
/// configuration errors so the command line maps them to the validation
/// exit code.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse config {}: {e}", path.display())))
}

/// FNV-1a hash of the canonical JSON serialization, as 16 hex digits.
/// Identifies the experiment content: equal hashes mean equal artifacts.
/// Where the artifacts land is not part of the experiment, so the output
/// directory is cleared before hashing.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut ident = cfg.clone();
    ident.out_dir = PathBuf::new();
    let text = serde_json::to_string(&ident)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("{h:016x}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn master_seed_rewires_stage_seeds() {
        let a = ExperimentConfig::default().with_master_seed(5);
        let b = ExperimentConfig::default().with_master_seed(6);
        assert_ne!(a.train.seed, b.train.seed);
        assert_ne!(a.poison.seed, b.poison.seed);
        assert_ne!(a.inversion.seed, b.inversion.seed);
        let c = ExperimentConfig::default().with_master_seed(5);
        assert_eq!(a.train.seed, c.train.seed);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::default().with_master_seed(3);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config_hash(&cfg).unwrap(), config_hash(&back).unwrap());
    }

    #[test]
    fn hash_changes_with_any_field() {
        let base = ExperimentConfig::default();
        let mut other = base.clone();
        other.poison.alpha = 0.2;
        assert_ne!(config_hash(&base).unwrap(), config_hash(&other).unwrap());
    }

    #[test]
    fn hash_ignores_artifact_location() {
        let base = ExperimentConfig::default();
        let mut moved = base.clone();
        moved.out_dir = PathBuf::from("elsewhere/run");
        assert_eq!(config_hash(&base).unwrap(), config_hash(&moved).unwrap());
    }

    #[test]
    fn unknown_arch_preset_is_a_validation_error() {
        let text = r#"{"preset": "resnet"}"#;
        let parsed: std::result::Result<ArchSpec, _> = serde_json::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn bad_config_file_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, "{ not json").unwrap();
        let err = load_config(&path).unwrap_err();
        assert!(err.is_validation());
        let missing = load_config(&dir.path().join("nope.json")).unwrap_err();
        assert!(missing.is_validation());
    }

    #[test]
    fn zero_samples_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.robustness_samples = 0;
        assert!(cfg.validate().unwrap_err().is_validation());
    }
}
