//! Round orchestration and exact unlearning.
//!
//! Every round the engine asks the controller for the shard count, partitions
//! the round's chunks, extends one lineage per shard index, trains it from the
//! lineage's latest stored checkpoint, prunes, and stores the new checkpoint
//! through the variant's replacement policy. Delete requests are then served
//! first-come-first-served: each touched lineage restarts from its latest
//! checkpoint that never saw the deleted data, drops every checkpoint that
//! did, and replays the retained remainder. Replayed samples are the RSN.
//!
//! Training always proceeds in round segments and prunes after each one, with
//! the prune's retraining pass running over everything the lineage covers. A
//! lineage state is therefore a pure function of its retained data, which is
//! what makes replay from any clean checkpoint exact.

mod dataset;
mod lineage;
mod metrics;
mod variant;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

pub use self::dataset::Dataset;
pub use self::lineage::{ChunkState, Lineage, LineageEntry};
pub use self::metrics::{MetricsRecord, ScenarioResult, VariantRun};
pub use self::variant::{SystemVariant, UnknownVariant, VariantTag};
pub use crate::memory::LineageId;

use crate::config::{ConfigError, ScenarioConfig};
use crate::controller::{ControllerError, ShardController};
use crate::learner::{ensemble_accuracy, EnergyModel, LearnerError, LearnerState, PruningMode};
use crate::memory::{MemoryError, MemoryStore, ModelCheckpoint, StoreCapacity};
use crate::partition::{partition, PartitionError, ShardAssignment};
use crate::sample::Samples;
use crate::workload::{
    generate_workload, removed_samples, RoundBatch, UpdateRequest, Workload, WorkloadError,
};
use crate::{CheckpointId, ChunkId, Label, RequestId};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("request {request} references unknown chunk {chunk}")]
    UnknownChunk { request: RequestId, chunk: ChunkId },
    #[error("request {request} references chunk {chunk}, which is already unlearned")]
    AlreadyUnlearned { request: RequestId, chunk: ChunkId },
    #[error("chunk {0} has no materialized samples")]
    MissingSamples(ChunkId),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// What unlearning did to one lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct LineageRetrain {
    pub lineage: LineageId,
    /// Clean checkpoint the replay started from; `None` means from scratch.
    pub start: Option<CheckpointId>,
    pub start_entries: usize,
    pub replayed: u64,
    pub deleted: Vec<CheckpointId>,
    /// The retrained checkpoint, unless the store dropped it or the lineage
    /// has no data left.
    pub stored: Option<CheckpointId>,
    pub state: LearnerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearningOutcome {
    pub request_id: RequestId,
    pub round: u32,
    pub rsn: u64,
    pub energy_j: f64,
    pub removed_samples: u64,
    pub retrains: Vec<LineageRetrain>,
}

/// Read-only view of the retained data.
struct DataView<'a> {
    dataset: &'a Dataset,
    chunks: &'a BTreeMap<ChunkId, ChunkState>,
}

impl<'a> DataView<'a> {
    fn samples(&self, e: &LineageEntry) -> impl Iterator<Item = (Label, &'a [f64])> + 'a {
        let retained = self.chunks[&e.chunk].retained as usize;
        self.dataset
            .samples(e.chunk)
            .expect("checked at registration")
            .view(retained, e.labels.clone())
    }

    fn count(&self, e: &LineageEntry) -> u64 {
        match e.labels {
            None => u64::from(self.chunks[&e.chunk].retained),
            Some(_) => self.samples(e).count() as u64,
        }
    }

    fn lineage_samples(&self, lineage: &Lineage) -> u64 {
        lineage.entries.iter().map(|e| self.count(e)).sum()
    }

    fn coverage(&self, lineage: &Lineage, upto: usize) -> BTreeMap<ChunkId, u32> {
        lineage.entries[..upto]
            .iter()
            .map(|e| (e.chunk, self.chunks[&e.chunk].retained))
            .filter(|(_, r)| *r > 0)
            .collect()
    }

    /// Trains `lineage.entries[start..upto]` on top of `start`, one round
    /// segment at a time, pruning after each. Returns the state and the
    /// number of samples trained (prune retraining excluded).
    fn replay(
        &self,
        lineage: &Lineage,
        start: Option<&ModelCheckpoint>,
        upto: usize,
        pruning: PruningMode,
        labels: usize,
        dims: usize,
    ) -> Result<(LearnerState, u64), LearnerError> {
        let mut state = start.map_or_else(|| LearnerState::new(labels, dims), |c| c.state.clone());
        let mut pos = start.map_or(0, |c| c.covered_entries);
        let mut trained = 0;
        while pos < upto {
            let end = lineage.segment_end(pos, upto);
            for e in &lineage.entries[pos..end] {
                trained += state.train_samples(self.samples(e))?;
            }
            state = pruning.apply(&state, |st| {
                for e in &lineage.entries[..end] {
                    st.train_samples(self.samples(e))?;
                }
                Ok(())
            })?;
            pos = end;
        }
        Ok((state, trained))
    }
}

/// One variant's simulation state.
pub struct Engine {
    variant: SystemVariant,
    controller: ShardController,
    label_space: u32,
    dims: usize,
    seed: u64,
    energy: EnergyModel,
    checkpoint_bytes: u64,
    capacity_slots: Option<usize>,
    dataset: Arc<Dataset>,
    store: MemoryStore<ModelCheckpoint>,
    lineages: BTreeMap<LineageId, Lineage>,
    /// Active lineage per shard index.
    slots: Vec<Option<LineageId>>,
    chunks: BTreeMap<ChunkId, ChunkState>,
    next_checkpoint: CheckpointId,
    round: u32,
    live_samples: u64,
    rsn_cum: u64,
    episodes: u64,
    metrics: Vec<MetricsRecord>,
    assignments: Vec<ShardAssignment>,
    outcomes: Vec<UnlearningOutcome>,
    check_each_round: bool,
}

impl Engine {
    pub fn new(
        config: &ScenarioConfig,
        tag: VariantTag,
        dataset: Arc<Dataset>,
    ) -> Result<Self, EngineError> {
        let variant = tag.variant(config);
        let controller = if variant.shard_control {
            ShardController::new(config.controller())?
        } else {
            ShardController::fixed(config.shards)?
        };
        let capacity = variant.store_capacity(config)?;
        let profile = config.profile()?;
        Ok(Self {
            variant,
            controller,
            label_space: config.label_space,
            dims: config.feature_dims,
            seed: config.seed,
            energy: config.energy(),
            checkpoint_bytes: variant.checkpoint_bytes(&profile)?,
            capacity_slots: match capacity {
                StoreCapacity::Slots(n) => Some(n),
                StoreCapacity::Bytes(_) => None,
            },
            dataset,
            store: MemoryStore::new(capacity, variant.policy, config.seed)?,
            lineages: BTreeMap::new(),
            slots: Vec::new(),
            chunks: BTreeMap::new(),
            next_checkpoint: 1,
            round: 0,
            live_samples: 0,
            rsn_cum: 0,
            episodes: 0,
            metrics: Vec::new(),
            assignments: Vec::new(),
            outcomes: Vec::new(),
            check_each_round: true,
        })
    }

    /// Turns the per-round invariant check off (it walks every sample).
    pub fn set_invariant_checks(&mut self, on: bool) {
        self.check_each_round = on;
    }

    pub fn variant(&self) -> &SystemVariant {
        &self.variant
    }

    pub fn store(&self) -> &MemoryStore<ModelCheckpoint> {
        &self.store
    }

    pub fn lineages(&self) -> &BTreeMap<LineageId, Lineage> {
        &self.lineages
    }

    pub fn chunk(&self, id: ChunkId) -> Option<&ChunkState> {
        self.chunks.get(&id)
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn outcomes(&self) -> &[UnlearningOutcome] {
        &self.outcomes
    }

    pub fn live_samples(&self) -> u64 {
        self.live_samples
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    fn view(&self) -> DataView<'_> {
        DataView {
            dataset: &self.dataset,
            chunks: &self.chunks,
        }
    }

    /// Removes a stored checkpoint as if memory pressure had evicted it.
    pub fn evict_checkpoint(&mut self, id: CheckpointId) -> Option<ModelCheckpoint> {
        self.store.remove(id)
    }

    pub fn run(&mut self, workload: &Workload) -> Result<(), EngineError> {
        for batch in &workload.rounds {
            self.run_round(batch)?;
        }
        Ok(())
    }

    fn store_checkpoint(
        &mut self,
        lineage: LineageId,
        state: LearnerState,
        covered_entries: usize,
    ) -> Option<CheckpointId> {
        let id = self.next_checkpoint;
        self.next_checkpoint += 1;
        let coverage = self.view().coverage(&self.lineages[&lineage], covered_entries);
        let checkpoint = ModelCheckpoint {
            id,
            lineage,
            round: self.round,
            coverage,
            covered_entries,
            size_bytes: self.checkpoint_bytes,
            state,
        };
        let (event, _) = self.store.store(checkpoint, self.round);
        (!event.dropped).then_some(id)
    }

    /// The lineage that receives shard `index` this round: the active one if
    /// it still has a stored checkpoint, otherwise a fresh lineage.
    fn lineage_for(&mut self, index: usize) -> LineageId {
        if let Some(id) = self.slots[index] {
            if self.store.latest_of(id).is_some() {
                return id;
            }
            self.lineages.get_mut(&id).expect("slot lineage exists").active = false;
        }
        let id = LineageId {
            shard: index,
            created: self.round,
        };
        self.lineages.insert(id, Lineage::new(id));
        self.slots[index] = Some(id);
        id
    }

    fn register(&mut self, batch: &RoundBatch) -> Result<(), EngineError> {
        for c in &batch.chunks {
            if self.dataset.samples(c.chunk_id).map(Samples::len) != Some(c.sample_count as usize) {
                return Err(EngineError::MissingSamples(c.chunk_id));
            }
            if self.chunks.contains_key(&c.chunk_id) {
                return Err(EngineError::Invariant(format!("chunk {} added twice", c.chunk_id)));
            }
            self.chunks.insert(
                c.chunk_id,
                ChunkState {
                    chunk: c.clone(),
                    retained: c.sample_count,
                    unlearned: false,
                    lineages: Vec::new(),
                },
            );
            self.live_samples += u64::from(c.sample_count);
        }
        Ok(())
    }

    /// Learns one round's chunks, then serves its delete requests.
    pub fn run_round(&mut self, batch: &RoundBatch) -> Result<&MetricsRecord, EngineError> {
        self.round = batch.round;
        let shard_count = self.controller.shards_at(batch.round) as usize;
        for slot in self.slots.iter_mut().skip(shard_count) {
            if let Some(id) = slot.take() {
                self.lineages.get_mut(&id).expect("slot lineage exists").active = false;
            }
        }
        if self.slots.len() < shard_count {
            self.slots.resize(shard_count, None);
        }
        self.register(batch)?;
        let assignment = partition(
            self.variant.partition,
            shard_count,
            &batch.chunks,
            batch.round,
            self.seed,
            self.label_space,
        )?;
        for (index, shard) in assignment.shards.iter().enumerate() {
            if shard.is_empty() {
                continue;
            }
            let labels = assignment.label_ranges.as_ref().map(|r| r[index].clone());
            let lid = self.lineage_for(index);
            let mut entries: Vec<LineageEntry> = shard
                .iter()
                .map(|id| {
                    let c = &self.chunks[id].chunk;
                    LineageEntry {
                        chunk: *id,
                        round: batch.round,
                        owner: c.owner,
                        labels: labels.clone(),
                    }
                })
                .collect();
            entries.sort_by_key(LineageEntry::canonical_key);
            for e in &entries {
                self.chunks.get_mut(&e.chunk).expect("registered").lineages.push(lid);
            }
            self.lineages.get_mut(&lid).expect("just resolved").entries.extend(entries);
            self.train_lineage(lid)?;
        }
        self.assignments.push(assignment);

        let (mut rsn, mut energy, mut ratio_sum) = (0, 0.0, 0.0);
        for request in &batch.requests {
            let outcome = self.handle_unlearning(request)?;
            rsn += outcome.rsn;
            energy += outcome.energy_j;
            if self.live_samples > 0 {
                ratio_sum += outcome.rsn as f64 / self.live_samples as f64;
            }
            self.outcomes.push(outcome);
        }
        self.rsn_cum += rsn;
        if self.check_each_round {
            self.check_invariants()?;
        }
        let accuracy = self.evaluate_accuracy(self.dataset.test_set()).ok();
        self.metrics.push(MetricsRecord {
            round: batch.round,
            variant: self.variant.tag,
            rsn_round: rsn,
            rsn_cum: self.rsn_cum,
            retrain_ratio: if batch.requests.is_empty() {
                0.0
            } else {
                ratio_sum / batch.requests.len() as f64
            },
            energy_j: energy,
            occupancy: self.store.occupancy(),
            replacements: self.store.replacement_count(),
            drops: self.store.drop_count(),
            accuracy,
        });
        Ok(self.metrics.last().expect("just pushed"))
    }

    /// Continues `lineage` from its latest stored checkpoint through its last
    /// entry and stores the result.
    fn train_lineage(&mut self, lid: LineageId) -> Result<(), EngineError> {
        let start = self.store.latest_of(lid).cloned();
        let lineage = &self.lineages[&lid];
        let upto = lineage.entries.len();
        let (state, _) = self.view().replay(
            lineage,
            start.as_ref(),
            upto,
            self.variant.pruning,
            self.label_space as usize,
            self.dims,
        )?;
        self.store_checkpoint(lid, state, upto);
        Ok(())
    }

    /// Unlearns the request's chunks (or the requested fraction of each).
    pub fn handle_unlearning(
        &mut self,
        request: &UpdateRequest,
    ) -> Result<UnlearningOutcome, EngineError> {
        let mut forbidden = BTreeSet::new();
        for &chunk in &request.chunk_refs {
            let state = self.chunks.get(&chunk).ok_or(EngineError::UnknownChunk {
                request: request.request_id,
                chunk,
            })?;
            if state.unlearned || !forbidden.insert(chunk) {
                return Err(EngineError::AlreadyUnlearned {
                    request: request.request_id,
                    chunk,
                });
            }
        }
        let mut removed = 0u64;
        let mut touched = BTreeSet::new();
        for chunk in &forbidden {
            let state = self.chunks.get_mut(chunk).expect("validated");
            let k = removed_samples(state.chunk.sample_count, request.sample_fraction);
            state.retained -= k;
            state.unlearned = true;
            removed += u64::from(k);
            touched.extend(state.lineages.iter().copied());
        }
        self.live_samples -= removed;

        let mut outcome = UnlearningOutcome {
            request_id: request.request_id,
            round: self.round,
            rsn: 0,
            energy_j: 0.0,
            removed_samples: removed,
            retrains: Vec::new(),
        };
        for lid in touched {
            let clean = self.store.lookup_latest_clean(lid, &forbidden);
            let deleted: Vec<CheckpointId> = self
                .store
                .iter()
                .filter(|c| c.lineage == lid && c.coverage.keys().any(|k| forbidden.contains(k)))
                .map(|c| c.id)
                .collect();
            for id in &deleted {
                self.store.remove(*id);
            }
            let start = clean.and_then(|id| self.store.get(id)).cloned();
            let lineage = &self.lineages[&lid];
            let upto = lineage.entries.len();
            let view = self.view();
            let (state, replayed) = view.replay(
                lineage,
                start.as_ref(),
                upto,
                self.variant.pruning,
                self.label_space as usize,
                self.dims,
            )?;
            let has_data = view.lineage_samples(lineage) > 0;
            let stored = if has_data {
                self.episodes += 1;
                outcome.energy_j += self.energy.energy_of(replayed);
                self.store_checkpoint(lid, state.clone(), upto)
            } else {
                None
            };
            outcome.rsn += replayed;
            outcome.retrains.push(LineageRetrain {
                lineage: lid,
                start: start.as_ref().map(|c| c.id),
                start_entries: start.as_ref().map_or(0, |c| c.covered_entries),
                replayed,
                deleted,
                stored,
                state,
            });
        }
        Ok(outcome)
    }

    /// Majority-vote accuracy of the latest stored checkpoint of every lineage
    /// that still holds data.
    pub fn evaluate_accuracy(&self, test: &Samples) -> Result<f64, EngineError> {
        let view = self.view();
        let members: Vec<&LearnerState> = self
            .lineages
            .values()
            .filter(|l| view.lineage_samples(l) > 0)
            .filter_map(|l| self.store.latest_of(l.id))
            .map(|c| &c.state)
            .collect();
        Ok(ensemble_accuracy(&members, test)?)
    }

    /// Structural checks: store consistency, no stale or resurrected coverage,
    /// one lineage per chunk (per label range for class-based partitions), and
    /// sample conservation.
    pub fn check_invariants(&self) -> Result<(), EngineError> {
        let fail = |m: String| Err(EngineError::Invariant(m));
        self.store.check().map_err(EngineError::Invariant)?;
        let view = self.view();
        for c in self.store.iter() {
            let Some(lineage) = self.lineages.get(&c.lineage) else {
                return fail(format!("checkpoint {} belongs to unknown lineage {}", c.id, c.lineage));
            };
            if c.covered_entries > lineage.entries.len() {
                return fail(format!("checkpoint {} covers past its lineage", c.id));
            }
            if view.coverage(lineage, c.covered_entries) != c.coverage {
                return fail(format!("checkpoint {} covers unlearned data", c.id));
            }
        }
        let mut membership: BTreeMap<ChunkId, usize> = BTreeMap::new();
        let mut total = 0;
        for lineage in self.lineages.values() {
            for e in &lineage.entries {
                *membership.entry(e.chunk).or_default() += 1;
                total += view.count(e);
            }
        }
        let class_based = self.variant.partition == crate::PartitionStrategy::ClassBased;
        for (id, state) in &self.chunks {
            let n = membership.get(id).copied().unwrap_or(0);
            if n != state.lineages.len() || n == 0 || (!class_based && n != 1) {
                return fail(format!("chunk {id} sits in {n} lineages"));
            }
        }
        if total != self.live_samples {
            return fail(format!(
                "lineages hold {total} samples but {} are live",
                self.live_samples
            ));
        }
        Ok(())
    }

    pub fn into_run(self) -> VariantRun {
        VariantRun {
            tag: self.variant.tag,
            capacity_slots: self.capacity_slots,
            metrics: self.metrics,
            events: self.store.events().to_vec(),
            assignments: self.assignments,
            outcomes: self.outcomes,
            episodes: self.episodes,
        }
    }
}

/// Runs one variant over a workload.
pub fn run_variant(
    config: &ScenarioConfig,
    tag: VariantTag,
    workload: &Workload,
    dataset: Arc<Dataset>,
) -> Result<VariantRun, EngineError> {
    let mut engine = Engine::new(config, tag, dataset)?;
    engine.run(workload)?;
    Ok(engine.into_run())
}

/// Runs every configured variant over one shared workload, in parallel.
/// Results come back in config order regardless of completion order.
pub fn run_workload(config: &ScenarioConfig, workload: &Workload) -> Result<ScenarioResult, EngineError> {
    config.validate()?;
    let dataset = Arc::new(Dataset::for_config(config, workload));
    let runs = config
        .variant_tags()?
        .into_par_iter()
        .map(|tag| run_variant(config, tag, workload, Arc::clone(&dataset)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScenarioResult {
        config: config.clone(),
        chunks: workload.chunks().count(),
        delete_requests: workload.delete_count(),
        samples_added: workload.chunks().map(|c| u64::from(c.sample_count)).sum(),
        runs,
    })
}

/// Generates the configured workload and runs every variant over it.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioResult, EngineError> {
    config.validate()?;
    let workload = generate_workload(&config.workload())?;
    run_workload(config, &workload)
}
