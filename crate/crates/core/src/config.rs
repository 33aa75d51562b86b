//! Scenario files: flat TOML, one key per line, unknown keys rejected.
//!
//! ```toml
//! n_users = 100
//! n_rounds = 10
//! unlearn_probability = 0.1
//! shards = 4
//! capacity = "2GB"        # or a slot count: capacity = 64
//! model_profile = "resnet34"
//! variants = ["cause", "sisa"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ShardControllerConfig;
use crate::engine::VariantTag;
use crate::learner::{profile_by_name, EnergyModel, ModelSizeProfile};
use crate::workload::WorkloadConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario file: {0}")]
    Parse(String),
    #[error("{key}: {message}")]
    Range { key: &'static str, message: String },
    #[error("unknown variant {0:?}")]
    UnknownVariant(String),
    #[error("unknown model profile {0:?}")]
    UnknownProfile(String),
    #[error("bad capacity {0:?}: expected a slot count or a size like \"2GB\" / \"512MB\"")]
    Capacity(String),
}

fn range(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        key,
        message: message.into(),
    }
}

/// Checkpoint store capacity: a slot count, or a memory budget in MiB that is
/// converted through the model size profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Slots(usize),
    Memory { mb: f64 },
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Slots(n) => write!(f, "{n}"),
            Self::Memory { mb } if *mb >= 1024.0 && mb % 1024.0 == 0.0 => {
                write!(f, "{}GB", mb / 1024.0)
            }
            Self::Memory { mb } => write!(f, "{mb}MB"),
        }
    }
}

impl FromStr for Capacity {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::Capacity(s.to_string());
        let t = s.trim();
        let upper = t.to_ascii_uppercase();
        let (num, scale) = if let Some(n) = upper.strip_suffix("GB") {
            (n, 1024.0)
        } else if let Some(n) = upper.strip_suffix("MB") {
            (n, 1.0)
        } else {
            return t.parse::<usize>().map(Self::Slots).map_err(|_| bad());
        };
        let value: f64 = num.trim().parse().map_err(|_| bad())?;
        if !(value.is_finite() && value > 0.0) {
            return Err(bad());
        }
        Ok(Self::Memory { mb: value * scale })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CapacityRepr {
    Slots(u64),
    Text(String),
}

impl Serialize for Capacity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Slots(n) => CapacityRepr::Slots(*n as u64),
            Self::Memory { .. } => CapacityRepr::Text(self.to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match CapacityRepr::deserialize(d)? {
            CapacityRepr::Slots(n) => Ok(Self::Slots(n as usize)),
            CapacityRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// How the store accounts for capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    /// Every checkpoint takes one slot.
    Slots,
    /// Checkpoints take their profile file size out of a byte budget.
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_users: u32,
    pub n_rounds: u32,
    pub unlearn_probability: f64,
    pub seed: u64,
    pub label_space: u32,
    pub feature_dims: usize,
    pub feature_spread: f64,
    pub feature_noise: f64,
    pub test_samples: usize,
    pub chunk_size_min: u32,
    pub chunk_size_max: u32,
    pub labels_per_user_min: u32,
    pub labels_per_user_max: u32,
    pub activity_probability: f64,
    pub partial_delete_probability: f64,
    pub shards: u32,
    pub sc_gamma: f64,
    pub sc_p: f64,
    pub capacity: Capacity,
    pub memory_mode: MemoryMode,
    pub model_profile: String,
    pub prune_rate: f64,
    pub prune_steps: u32,
    pub energy_a: f64,
    pub energy_b: f64,
    pub variants: Vec<String>,
    pub output_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let w = WorkloadConfig::default();
        Self {
            n_users: w.n_users,
            n_rounds: w.n_rounds,
            unlearn_probability: w.unlearn_probability,
            seed: w.rng_seed,
            label_space: w.label_space,
            feature_dims: 8,
            feature_spread: 3.0,
            feature_noise: 2.0,
            test_samples: 1000,
            chunk_size_min: w.chunk_size_min,
            chunk_size_max: w.chunk_size_max,
            labels_per_user_min: w.labels_per_user_min,
            labels_per_user_max: w.labels_per_user_max,
            activity_probability: w.activity_probability,
            partial_delete_probability: w.partial_delete_probability,
            shards: 4,
            sc_gamma: 0.5,
            sc_p: 0.5,
            capacity: Capacity::Memory { mb: 2048.0 },
            memory_mode: MemoryMode::Slots,
            model_profile: "resnet34".into(),
            prune_rate: 0.7,
            prune_steps: 5,
            energy_a: 1.0,
            energy_b: 0.0,
            variants: ["cause", "sisa", "arcane", "omp70", "omp95"]
                .map(String::from)
                .to_vec(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ScenarioConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn workload(&self) -> WorkloadConfig {
        WorkloadConfig {
            n_users: self.n_users,
            n_rounds: self.n_rounds,
            unlearn_probability: self.unlearn_probability,
            rng_seed: self.seed,
            label_space: self.label_space,
            chunk_size_min: self.chunk_size_min,
            chunk_size_max: self.chunk_size_max,
            labels_per_user_min: self.labels_per_user_min,
            labels_per_user_max: self.labels_per_user_max,
            activity_probability: self.activity_probability,
            partial_delete_probability: self.partial_delete_probability,
        }
    }

    pub fn controller(&self) -> ShardControllerConfig {
        ShardControllerConfig {
            base_shards: self.shards,
            floor_fraction: self.sc_gamma,
            decay_rate: self.sc_p,
        }
    }

    pub fn energy(&self) -> EnergyModel {
        EnergyModel {
            joules_per_sample: self.energy_a,
            fixed_overhead: self.energy_b,
        }
    }

    pub fn profile(&self) -> Result<ModelSizeProfile, ConfigError> {
        profile_by_name(&self.model_profile, self.label_space as usize, self.feature_dims)
            .map_err(|_| ConfigError::UnknownProfile(self.model_profile.clone()))
    }

    pub fn variant_tags(&self) -> Result<Vec<VariantTag>, ConfigError> {
        self.variants
            .iter()
            .map(|v| v.parse().map_err(|_| ConfigError::UnknownVariant(v.clone())))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.workload()
            .validate()
            .map_err(|e| ConfigError::Range {
                key: "workload",
                message: e.to_string(),
            })?;
        self.controller().validate().map_err(|e| match e {
            crate::controller::ControllerError::ZeroShards => range("shards", "must be at least 1"),
            crate::controller::ControllerError::FloorFraction(_) => {
                range("sc_gamma", format!("must lie in [0, 1], got {}", self.sc_gamma))
            }
            crate::controller::ControllerError::DecayRate(_) => {
                range("sc_p", format!("must be finite and non-negative, got {}", self.sc_p))
            }
        })?;
        if self.feature_dims == 0 {
            return Err(range("feature_dims", "must be at least 1"));
        }
        if !(self.feature_spread.is_finite() && self.feature_spread >= 0.0) {
            return Err(range("feature_spread", "must be finite and non-negative"));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(range("feature_noise", "must be finite and non-negative"));
        }
        if self.capacity == Capacity::Slots(0) {
            return Err(range("capacity", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(range("prune_rate", format!("must lie in [0, 1), got {}", self.prune_rate)));
        }
        if self.prune_steps == 0 {
            return Err(range("prune_steps", "must be at least 1"));
        }
        if !(self.energy_a.is_finite() && self.energy_a >= 0.0) {
            return Err(range("energy_a", "must be finite and non-negative"));
        }
        if !(self.energy_b.is_finite() && self.energy_b >= 0.0) {
            return Err(range("energy_b", "must be finite and non-negative"));
        }
        if self.variants.is_empty() {
            return Err(range("variants", "list at least one variant"));
        }
        let tags = self.variant_tags()?;
        if tags.iter().any(|t| t.variant(self).partition == crate::PartitionStrategy::ClassBased)
            && self.shards > self.label_space
        {
            return Err(range(
                "shards",
                format!("class-based variants need shards <= label_space ({})", self.label_space),
            ));
        }
        let profile = self.profile()?;
        if self.prune_rate > 0.9 {
            profile
                .extrapolated_size(self.prune_rate)
                .map_err(|e| range("prune_rate", e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = ScenarioConfig::default();
        let text = c.to_toml();
        assert!(text.contains("capacity = \"2GB\""));
        assert_eq!(ScenarioConfig::parse_str(&text).unwrap(), c);
    }

    #[test]
    fn shipped_default_file_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(ScenarioConfig::parse_str(text).unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(ScenarioConfig::parse_str("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ScenarioConfig::parse_str("shard = 4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(ref m) if m.contains("unknown field")), "{err}");
    }

    #[test]
    fn gamma_out_of_range() {
        let err = ScenarioConfig::parse_str("sc_gamma = 1.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Range { key: "sc_gamma", .. }), "{err}");
    }

    #[test]
    fn capacity_forms() {
        assert_eq!("2GB".parse::<Capacity>().unwrap(), Capacity::Memory { mb: 2048.0 });
        assert_eq!("512mb".parse::<Capacity>().unwrap(), Capacity::Memory { mb: 512.0 });
        assert_eq!("64".parse::<Capacity>().unwrap(), Capacity::Slots(64));
        assert!("2TB".parse::<Capacity>().is_err());
        assert!("-1GB".parse::<Capacity>().is_err());
        let c = ScenarioConfig::parse_str("capacity = 32\n").unwrap();
        assert_eq!(c.capacity, Capacity::Slots(32));
        let c = ScenarioConfig::parse_str("capacity = \"1.5GB\"\n").unwrap();
        assert_eq!(c.capacity, Capacity::Memory { mb: 1536.0 });
        assert_eq!(ScenarioConfig::parse_str(&c.to_toml()).unwrap(), c);
        assert!(ScenarioConfig::parse_str("capacity = 0\n").is_err());
    }

    #[test]
    fn unknown_variant_and_profile() {
        assert!(matches!(
            ScenarioConfig::parse_str("variants = [\"cause\", \"nope\"]\n"),
            Err(ConfigError::UnknownVariant(_))
        ));
        assert!(matches!(
            ScenarioConfig::parse_str("model_profile = \"alexnet\"\n"),
            Err(ConfigError::UnknownProfile(_))
        ));
    }

    #[test]
    fn class_variants_bound_shards() {
        assert!(ScenarioConfig::parse_str("shards = 12\nvariants = [\"cause\"]\n").is_ok());
        assert!(ScenarioConfig::parse_str("shards = 12\nvariants = [\"arcane\"]\n").is_err());
    }
}
