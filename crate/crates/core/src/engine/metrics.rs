use serde::{Deserialize, Serialize};

use super::{UnlearningOutcome, VariantTag};
use crate::config::ScenarioConfig;
use crate::memory::ReplacementEvent;
use crate::partition::ShardAssignment;

/// Accounting for one (round, variant) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u32,
    pub variant: VariantTag,
    pub rsn_round: u64,
    pub rsn_cum: u64,
    /// Mean over the round's requests of request RSN divided by the live
    /// sample count right after that request.
    pub retrain_ratio: f64,
    /// Retraining energy spent this round.
    pub energy_j: f64,
    pub occupancy: usize,
    /// Evictions so far.
    pub replacements: u64,
    /// Checkpoints refused by a full no-replacement store so far.
    pub drops: u64,
    pub accuracy: Option<f64>,
}

/// Everything one variant produced over a workload.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub tag: VariantTag,
    pub capacity_slots: Option<usize>,
    pub metrics: Vec<MetricsRecord>,
    pub events: Vec<ReplacementEvent>,
    pub assignments: Vec<ShardAssignment>,
    pub outcomes: Vec<UnlearningOutcome>,
    /// Retraining episodes that produced a checkpoint.
    pub episodes: u64,
}

impl VariantRun {
    pub fn rsn_total(&self) -> u64 {
        self.metrics.last().map_or(0, |m| m.rsn_cum)
    }

    pub fn energy_total(&self) -> f64 {
        self.metrics.iter().map(|m| m.energy_j).sum()
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.accuracy)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub config: ScenarioConfig,
    pub chunks: usize,
    pub delete_requests: usize,
    pub samples_added: u64,
    /// In config variant order.
    pub runs: Vec<VariantRun>,
}

impl ScenarioResult {
    /// All metrics rows ordered by (variant in config order, round).
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.runs.iter().flat_map(|r| r.metrics.iter())
    }

    pub fn run(&self, tag: VariantTag) -> Option<&VariantRun> {
        self.runs.iter().find(|r| r.tag == tag)
    }

    pub fn rsn_total(&self, tag: VariantTag) -> Option<u64> {
        self.run(tag).map(VariantRun::rsn_total)
    }
}
