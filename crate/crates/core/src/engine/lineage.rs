use std::ops::Range;

use serde::Serialize;

use crate::memory::LineageId;
use crate::workload::DataChunk;
use crate::{ChunkId, Label, UserId};

/// One chunk as learned by one lineage. Class-based lineages see only the
/// samples inside their label range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineageEntry {
    pub chunk: ChunkId,
    pub round: u32,
    pub owner: UserId,
    pub labels: Option<Range<Label>>,
}

impl LineageEntry {
    pub fn canonical_key(&self) -> (u32, UserId, ChunkId) {
        (self.round, self.owner, self.chunk)
    }
}

/// The cross-round history of one shard's sub-model. Entries are appended in
/// canonical order and never removed; unlearned data shows up as a reduced
/// retained count in the chunk table instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lineage {
    pub id: LineageId,
    pub entries: Vec<LineageEntry>,
    /// Frozen lineages stop receiving data but stay in the ensemble.
    pub active: bool,
}

impl Lineage {
    pub fn new(id: LineageId) -> Self {
        Self {
            id,
            entries: Vec::new(),
            active: true,
        }
    }

    /// End index of the round segment starting at `start`.
    pub fn segment_end(&self, start: usize, upto: usize) -> usize {
        let round = self.entries[start].round;
        start
            + self.entries[start..upto]
                .iter()
                .take_while(|e| e.round == round)
                .count()
    }
}

/// Per-chunk ledger state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkState {
    pub chunk: DataChunk,
    /// Retained samples: a prefix of the chunk's sample sequence.
    pub retained: u32,
    /// Set once a delete request has consumed the chunk.
    pub unlearned: bool,
    pub lineages: Vec<LineageId>,
}
