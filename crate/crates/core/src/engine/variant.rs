use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Capacity, ConfigError, MemoryMode, ScenarioConfig};
use crate::learner::{ModelSizeProfile, PruningMode};
use crate::memory::{PolicyKind, StoreCapacity};
use crate::partition::PartitionStrategy;

const MIB: f64 = 1024.0 * 1024.0;

/// The systems the engine can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantTag {
    Cause,
    CauseNoSc,
    CauseU,
    CauseC,
    Sisa,
    Arcane,
    Omp70,
    Omp95,
    CauseFifo,
    CauseRandom,
    CauseNoReplace,
}

impl VariantTag {
    pub const ALL: [VariantTag; 11] = [
        Self::Cause,
        Self::CauseNoSc,
        Self::CauseU,
        Self::CauseC,
        Self::Sisa,
        Self::Arcane,
        Self::Omp70,
        Self::Omp95,
        Self::CauseFifo,
        Self::CauseRandom,
        Self::CauseNoReplace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cause => "cause",
            Self::CauseNoSc => "cause_no_sc",
            Self::CauseU => "cause_u",
            Self::CauseC => "cause_c",
            Self::Sisa => "sisa",
            Self::Arcane => "arcane",
            Self::Omp70 => "omp70",
            Self::Omp95 => "omp95",
            Self::CauseFifo => "cause_fifo",
            Self::CauseRandom => "cause_random",
            Self::CauseNoReplace => "cause_no_replace",
        }
    }

    /// The full system description under `config`'s pruning settings.
    pub fn variant(&self, config: &ScenarioConfig) -> SystemVariant {
        let iterative = PruningMode::Iterative {
            rate: config.prune_rate,
            steps: config.prune_steps,
        };
        let (partition, policy, shard_control, pruning) = match self {
            Self::Cause => (PartitionStrategy::Ucdp, PolicyKind::Fibor, true, iterative),
            Self::CauseNoSc => (PartitionStrategy::Ucdp, PolicyKind::Fibor, false, iterative),
            Self::CauseU => (PartitionStrategy::Uniform, PolicyKind::Fibor, true, iterative),
            Self::CauseC => (PartitionStrategy::ClassBased, PolicyKind::Fibor, true, iterative),
            Self::Sisa => (
                PartitionStrategy::Uniform,
                PolicyKind::StaticPerShard,
                false,
                PruningMode::None,
            ),
            Self::Arcane => (
                PartitionStrategy::ClassBased,
                PolicyKind::StaticPerShard,
                false,
                PruningMode::None,
            ),
            Self::Omp70 => (
                PartitionStrategy::Uniform,
                PolicyKind::Fifo,
                false,
                PruningMode::OneShot { rate: 0.7 },
            ),
            Self::Omp95 => (
                PartitionStrategy::Uniform,
                PolicyKind::Fifo,
                false,
                PruningMode::OneShot { rate: 0.95 },
            ),
            Self::CauseFifo => (PartitionStrategy::Ucdp, PolicyKind::Fifo, true, iterative),
            Self::CauseRandom => (PartitionStrategy::Ucdp, PolicyKind::Random, true, iterative),
            Self::CauseNoReplace => {
                (PartitionStrategy::Ucdp, PolicyKind::NoReplacement, true, iterative)
            }
        };
        SystemVariant {
            tag: *self,
            partition,
            policy,
            shard_control,
            pruning,
        }
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown variant {0:?}; expected one of: {names}", names = VariantTag::ALL.map(|t| t.name()).join(", "))]
pub struct UnknownVariant(pub String);

impl FromStr for VariantTag {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s.trim())
            .ok_or_else(|| UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SystemVariant {
    pub tag: VariantTag,
    pub partition: PartitionStrategy,
    pub policy: PolicyKind,
    pub shard_control: bool,
    pub pruning: PruningMode,
}

impl SystemVariant {
    /// File size of one checkpoint under this variant's pruning rate.
    pub fn checkpoint_mb(&self, profile: &ModelSizeProfile) -> Result<f64, ConfigError> {
        let rate = self.pruning.rate();
        profile
            .extrapolated_size(rate)
            .map(|(_, mb)| mb)
            .map_err(|e| ConfigError::Range {
                key: "prune_rate",
                message: e.to_string(),
            })
    }

    pub fn checkpoint_bytes(&self, profile: &ModelSizeProfile) -> Result<u64, ConfigError> {
        Ok((self.checkpoint_mb(profile)? * MIB).round() as u64)
    }

    /// Store capacity for this variant. Static per-shard stores hold exactly
    /// `shards` checkpoints; everything else follows the configured capacity,
    /// translating a memory budget through the pruned checkpoint size.
    pub fn store_capacity(&self, config: &ScenarioConfig) -> Result<StoreCapacity, ConfigError> {
        if self.policy == PolicyKind::StaticPerShard {
            return Ok(StoreCapacity::Slots(config.shards as usize));
        }
        let profile = config.profile()?;
        match (config.capacity, config.memory_mode) {
            (Capacity::Slots(n), _) => Ok(StoreCapacity::Slots(n)),
            (Capacity::Memory { mb }, MemoryMode::Slots) => {
                let slots = (mb / self.checkpoint_mb(&profile)?).floor() as usize;
                if slots == 0 {
                    return Err(ConfigError::Range {
                        key: "capacity",
                        message: format!("{mb} MB holds no {} checkpoint", profile.name),
                    });
                }
                Ok(StoreCapacity::Slots(slots))
            }
            (Capacity::Memory { mb }, MemoryMode::Bytes) => {
                Ok(StoreCapacity::Bytes((mb * MIB).round() as u64))
            }
        }
    }
}
