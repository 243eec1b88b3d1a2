//! Run configuration: one JSON document with a section per pipeline stage.
//!
//! All randomness comes from the root `seed`. Each stage derives its own
//! seed with [`datesort_core::seed::derive`] and a fixed label, so the
//! `seed` fields inside `model`, `evolve.ga` and `evolve.base_model` are
//! overwritten at run time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use datesort_core::adaptor::AdaptConfig;
use datesort_core::evolver::GaConfig;
use datesort_core::neuralmodel::{ConvBlock, ModelConfig};
use datesort_core::pipeline::PreprocessConfig;
use datesort_core::seed;
use datesort_core::synthcrop::{DatasetSpec, DriftConfig, SimConfig, Variety};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Seed labels, one per consumer of randomness.
pub mod labels {
    pub const DATASET: &str = "dataset";
    pub const SPLIT: &str = "split";
    pub const MODEL: &str = "model";
    pub const EVOLVE_SUBSET: &str = "evolve-subset";
    pub const EVOLVE_MODEL: &str = "evolve-model";
    pub const GA: &str = "ga";
    pub const SIMULATE: &str = "simulate";
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Imbalanced 935-sample benchmark.
    #[default]
    PaperShaped,
    /// `per_variety` samples of each variety.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub preset: Preset,
    pub per_variety: usize,
    /// Explicit per-variety counts; overrides `preset` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<Variety, usize>>,
    pub sim: SimConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            preset: Preset::PaperShaped,
            per_variety: 40,
            counts: None,
            sim: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of each variety held out for `eval` and `simulate`.
    pub eval_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { eval_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub ga: GaConfig,
    /// Model the genome is applied to during fitness evaluation.
    pub base_model: ModelConfig,
    /// Cap on the training samples used for fitness; `None` uses all.
    pub sample_limit: Option<usize>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            ga: GaConfig::default(),
            base_model: ModelConfig {
                input_height: 32,
                input_width: 32,
                conv_blocks: vec![ConvBlock {
                    filters: 8,
                    kernel: 3,
                }],
                epochs: 4,
                ..ModelConfig::default()
            },
            sample_limit: Some(320),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub adapt: AdaptConfig,
    pub drift: DriftConfig,
    /// Final steps over which the A/B accuracies are measured.
    pub tail_steps: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            adapt: AdaptConfig::default(),
            drift: DriftConfig::default(),
            tail_steps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub evolve: EvolveConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            evolve: EvolveConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

fn invalid(section: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{section}: {e}"))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                file: origin.display().to_string(),
                key: path,
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            file: path.display().to_string(),
            key: ".".into(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    /// Canonical pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.sim.validate().map_err(|e| invalid("dataset.sim", e))?;
        let spec = self.dataset_spec();
        if spec.counts.is_empty() {
            return Err(invalid("dataset", "no varieties selected"));
        }
        if let Some((v, _)) = spec.counts.iter().find(|(_, n)| *n == 0) {
            return Err(invalid("dataset", format!("count for {v} must be at least 1")));
        }
        self.preprocess.validate().map_err(|e| invalid("preprocess", e))?;
        let f = self.split.eval_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("split", format!("eval_fraction {f} must lie in (0, 1)")));
        }
        self.model.validate().map_err(|e| invalid("model", e))?;
        self.evolve.ga.validate().map_err(|e| invalid("evolve.ga", e))?;
        self.evolve.base_model.validate().map_err(|e| invalid("evolve.base_model", e))?;
        if self.evolve.sample_limit == Some(0) {
            return Err(invalid("evolve", "sample_limit must be positive"));
        }
        self.simulate.adapt.validate().map_err(|e| invalid("simulate.adapt", e))?;
        self.simulate.drift.validate().map_err(|e| invalid("simulate.drift", e))?;
        if self.simulate.tail_steps == 0 || self.simulate.tail_steps > self.simulate.adapt.steps {
            return Err(invalid("simulate", "tail_steps must lie in [1, adapt.steps]"));
        }
        Ok(())
    }

    pub fn derived_seed(&self, label: &str) -> u64 {
        seed::derive(self.seed, label)
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let seed = self.derived_seed(labels::DATASET);
        match (&self.dataset.counts, self.dataset.preset) {
            (Some(counts), _) => DatasetSpec {
                counts: counts.iter().map(|(&v, &n)| (v, n)).collect(),
                seed,
            },
            (None, Preset::PaperShaped) => DatasetSpec::paper_shaped(seed),
            (None, Preset::Uniform) => DatasetSpec::uniform(self.dataset.per_variety, seed),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.derived_seed(labels::MODEL),
            ..self.model.clone()
        }
    }

    pub fn ga_config(&self) -> GaConfig {
        GaConfig {
            seed: self.derived_seed(labels::GA),
            ..self.evolve.ga.clone()
        }
    }

    pub fn evolve_base_model(&self) -> ModelConfig {
        ModelConfig {
            seed: self.derived_seed(labels::EVOLVE_MODEL),
            ..self.evolve.base_model.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_json().unwrap(), Path::new("x.json")).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::parse("{}", Path::new("x")).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = RunConfig::parse(r#"{"dataset": {"sim": {"size": 3}}}"#, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("dataset.sim"), "{err}");
        assert!(err.contains("size"), "{err}");
    }

    #[test]
    fn bad_variety_name_is_named() {
        let err = RunConfig::parse(r#"{"dataset": {"counts": {"MANGO": 3}}}"#, Path::new("c.json"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("MANGO"), "{err}");
        assert!(err.contains("dataset.counts"), "{err}");
    }

    #[test]
    fn explicit_counts_override_the_preset() {
        let c = RunConfig::parse(r#"{"dataset": {"counts": {"AJWA": 3, "IRAQI": 5}}}"#, Path::new("c"))
            .unwrap();
        let spec = c.dataset_spec();
        assert_eq!(spec.counts, vec![(Variety::Iraqi, 5), (Variety::Ajwa, 3)]);
    }

    #[test]
    fn default_preset_has_over_900_samples() {
        assert!(RunConfig::default().dataset_spec().total() > 900);
    }

    #[test]
    fn stage_seeds_follow_the_root() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 43,
            ..RunConfig::default()
        };
        assert_eq!(a.model_config().seed, seed::derive(42, labels::MODEL));
        assert_ne!(a.model_config().seed, b.model_config().seed);
        assert_ne!(a.dataset_spec().seed, a.model_config().seed);
    }

    #[test]
    fn validation_names_the_section() {
        let mut c = RunConfig::default();
        c.split.eval_fraction = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("split:"));
        let mut c = RunConfig::default();
        c.evolve.ga.population_size = 2;
        assert!(c.validate().unwrap_err().to_string().contains("evolve.ga:"));
    }
}
