//! Exact machine unlearning on memory-constrained edge devices.
//!
//! The crate simulates a device that learns from a stream of per-user data
//! chunks, trains one sub-model per shard, keeps pruned checkpoints in a
//! bounded store, and services unlearning requests by retraining from the
//! closest clean checkpoint. Every retrained sample is counted, so competing
//! system designs can be compared on retrained-sample number (RSN) and energy.
//!
//! Module map:
//!
//! - [`workload`]: seeded multi-user data and unlearning request streams.
//! - [`partition`]: user-centered, uniform and class-based shard partitions.
//! - [`controller`]: the decaying shard-count schedule.
//! - [`memory`]: the checkpoint store and its replacement policies.
//! - [`learner`]: the exact toy learner, pruning, size profiles, voting, energy.
//! - [`engine`]: per-round orchestration, unlearning and metrics.
//! - [`config`] / [`report`]: scenario files and CSV/JSON emission.

pub mod config;
pub mod controller;
pub mod engine;
pub mod learner;
pub mod memory;
pub mod partition;
pub mod report;
pub mod sample;
pub mod workload;

mod seed;

pub use config::{Capacity, ConfigError, MemoryMode, ScenarioConfig};
pub use controller::{ShardController, ShardControllerConfig};
pub use engine::{
    run_scenario, run_workload, Dataset, Engine, EngineError, LineageId, MetricsRecord,
    ScenarioResult, SystemVariant, UnlearningOutcome, VariantRun, VariantTag,
};
pub use learner::{EnergyModel, LearnerError, LearnerState, ModelSizeProfile, PruningMode};
pub use memory::{MemoryStore, ModelCheckpoint, PolicyKind, ReplacementEvent, StoreCapacity};
pub use partition::{PartitionStrategy, ShardAssignment};
pub use sample::Samples;
pub use workload::{
    DataChunk, FeatureSpace, RoundBatch, UpdateRequest, Workload, WorkloadConfig, WorkloadError,
};

/// Class label of a sample.
pub type Label = u32;
/// Workload user identifier.
pub type UserId = u32;
/// Globally unique chunk identifier, assigned in generation order.
pub type ChunkId = u64;
/// Unlearning request identifier.
pub type RequestId = u64;
/// Checkpoint identifier, unique within one engine run.
pub type CheckpointId = u64;
