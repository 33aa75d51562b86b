//! Capacity-bounded checkpoint store.
//!
//! Capacity is either a number of equally sized slots or a byte budget. New
//! residents always take free room first (the lowest free slot in slot mode).
//! Once the store is full a [`PolicyKind`] picks the victim:
//!
//! - `Fibor` keeps a replacement cursor `I` and a sequence index `k` for the
//!   whole life of the store. Each eviction moves the cursor by the `k`-th
//!   distinct Fibonacci number, `I = (I + f(k) mod N) mod N`, evicts slot `I`
//!   and increments `k`. With `f = 0, 1, 2, 3, 5, 8, ...` and a full store of
//!   eight, the first six victims are slots 1, 2, 4, 7, 4, 4 (1-based).
//! - `Fifo` evicts the longest-resident entry.
//! - `Random` evicts a seeded uniformly random slot.
//! - `NoReplacement` refuses: the newcomer is dropped.
//! - `StaticPerShard` pins shard `s` to slot `s mod N` and overwrites it.
//!
//! Slots are 0-based in code and 1-based in every exported trace.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::LearnerState;
use crate::{seed, CheckpointId, ChunkId};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("store capacity must be positive")]
    ZeroCapacity,
    #[error("the static per-shard policy needs slot capacity")]
    StaticNeedsSlots,
}

/// `f(0) = 0, f(1) = 1, f(2) = 2, f(k) = f(k-1) + f(k-2)`: the Fibonacci
/// numbers without the repeated 1. `None` once the value overflows `u64`.
pub fn fib_distinct(k: u32) -> Option<u64> {
    match k {
        0 => Some(0),
        1 => Some(1),
        _ => {
            let (mut a, mut b) = (1u64, 2u64);
            for _ in 2..k {
                let c = a.checked_add(b)?;
                a = b;
                b = c;
            }
            Some(b)
        }
    }
}

/// `(F(n) mod m, F(n+1) mod m)` for the standard sequence, by fast doubling.
fn fib_pair_mod(n: u64, m: u64) -> (u64, u64) {
    if n == 0 {
        return (0, 1 % m);
    }
    let (a, b) = fib_pair_mod(n / 2, m);
    let (a, b, m128) = (u128::from(a), u128::from(b), u128::from(m));
    // F(2j) = F(j) * (2F(j+1) - F(j)), F(2j+1) = F(j)^2 + F(j+1)^2
    let c = (a * ((2 * b + m128 - a) % m128)) % m128;
    let d = (a * a + b * b) % m128;
    if n.is_multiple_of(2) {
        (c as u64, d as u64)
    } else {
        (d as u64, ((c + d) % m128) as u64)
    }
}

/// `f(k) mod m` without materializing `f(k)`.
pub fn fib_distinct_mod(k: u64, m: u64) -> u64 {
    assert!(m > 0, "modulus must be positive");
    if k == 0 {
        0
    } else {
        fib_pair_mod(k + 1, m).0
    }
}

/// The sequence of 0-based slots FiboR evicts from a full store of
/// `capacity` slots, starting from a fresh cursor.
pub fn fibor_slot_sequence(capacity: usize, evictions: usize) -> Vec<usize> {
    let n = capacity as u64;
    let mut cursor = 0u64;
    (0..evictions as u64)
        .map(|k| {
            cursor = (cursor + fib_distinct_mod(k, n)) % n;
            cursor as usize
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Fibor,
    Fifo,
    NoReplacement,
    Random,
    StaticPerShard,
}

impl PolicyKind {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Fibor => "fibor",
            Self::Fifo => "fifo",
            Self::NoReplacement => "no_replacement",
            Self::Random => "random",
            Self::StaticPerShard => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreCapacity {
    Slots(usize),
    Bytes(u64),
}

/// Something the store can hold.
pub trait Resident {
    fn resident_id(&self) -> CheckpointId;
    fn size_bytes(&self) -> u64 {
        0
    }
    /// Slot preference for [`PolicyKind::StaticPerShard`].
    fn shard_hint(&self) -> usize {
        0
    }
}

impl Resident for CheckpointId {
    fn resident_id(&self) -> CheckpointId {
        *self
    }
}

/// Identity of a shard lineage: the shard index it was created at and the
/// round it was created in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineageId {
    pub shard: usize,
    pub created: u32,
}

impl fmt::Display for LineageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}@r{}", self.shard, self.created)
    }
}

/// A stored sub-model snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub id: CheckpointId,
    pub lineage: LineageId,
    pub round: u32,
    /// Chunk id to the number of its retained samples the model has seen.
    pub coverage: BTreeMap<ChunkId, u32>,
    /// Length of the lineage's entry list this snapshot covers.
    pub covered_entries: usize,
    pub size_bytes: u64,
    pub state: LearnerState,
}

impl Resident for ModelCheckpoint {
    fn resident_id(&self) -> CheckpointId {
        self.id
    }
    fn size_bytes(&self) -> u64 {
        self.size_bytes
    }
    fn shard_hint(&self) -> usize {
        self.lineage.shard
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementEvent {
    pub round: u32,
    pub inserted: CheckpointId,
    pub evicted: Option<CheckpointId>,
    /// 0-based; `None` when the newcomer was dropped.
    pub slot: Option<usize>,
    pub dropped: bool,
}

#[derive(Serialize)]
struct TraceLine {
    round: u32,
    inserted: CheckpointId,
    evicted: Option<CheckpointId>,
    slot: Option<usize>,
    dropped: bool,
}

impl ReplacementEvent {
    /// One JSON object with a 1-based slot.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&TraceLine {
            round: self.round,
            inserted: self.inserted,
            evicted: self.evicted,
            slot: self.slot.map(|s| s + 1),
            dropped: self.dropped,
        })
        .expect("trace line serializes")
    }
}

#[derive(Debug, Clone)]
enum Layout<T> {
    Slots {
        slots: Vec<Option<T>>,
        inserted_at: Vec<u64>,
    },
    Bytes {
        budget: u64,
        used: u64,
        /// Ordered list of residents with their insertion sequence numbers.
        residents: Vec<(T, u64)>,
    },
}

#[derive(Debug, Clone)]
pub struct MemoryStore<T> {
    policy: PolicyKind,
    layout: Layout<T>,
    /// FiboR replacement cursor, 0-based.
    i_replace: u64,
    /// FiboR sequence index; counts FiboR evictions over the store's life.
    i_fibor: u64,
    rng: ChaCha8Rng,
    sequence: u64,
    events: Vec<ReplacementEvent>,
    replacements: u64,
    drops: u64,
}

impl<T: Resident> MemoryStore<T> {
    pub fn new(capacity: StoreCapacity, policy: PolicyKind, rng_seed: u64) -> Result<Self, MemoryError> {
        let layout = match capacity {
            StoreCapacity::Slots(0) | StoreCapacity::Bytes(0) => return Err(MemoryError::ZeroCapacity),
            StoreCapacity::Slots(n) => Layout::Slots {
                slots: (0..n).map(|_| None).collect(),
                inserted_at: vec![0; n],
            },
            StoreCapacity::Bytes(_) if policy == PolicyKind::StaticPerShard => {
                return Err(MemoryError::StaticNeedsSlots)
            }
            StoreCapacity::Bytes(budget) => Layout::Bytes {
                budget,
                used: 0,
                residents: Vec::new(),
            },
        };
        Ok(Self {
            policy,
            layout,
            i_replace: 0,
            i_fibor: 0,
            rng: seed::stream(rng_seed, seed::STORE, 0),
            sequence: 0,
            events: Vec::new(),
            replacements: 0,
            drops: 0,
        })
    }

    pub fn slots(capacity: usize, policy: PolicyKind) -> Result<Self, MemoryError> {
        Self::new(StoreCapacity::Slots(capacity), policy, 0)
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    /// Slot count, or the current resident count in byte mode.
    pub fn capacity(&self) -> usize {
        match &self.layout {
            Layout::Slots { slots, .. } => slots.len(),
            Layout::Bytes { residents, .. } => residents.len(),
        }
    }

    pub fn occupancy(&self) -> usize {
        match &self.layout {
            Layout::Slots { slots, .. } => slots.iter().filter(|s| s.is_some()).count(),
            Layout::Bytes { residents, .. } => residents.len(),
        }
    }

    pub fn used_bytes(&self) -> u64 {
        self.iter().map(|r| r.size_bytes()).sum()
    }

    pub fn events(&self) -> &[ReplacementEvent] {
        &self.events
    }

    pub fn replacement_count(&self) -> u64 {
        self.replacements
    }

    pub fn drop_count(&self) -> u64 {
        self.drops
    }

    pub fn fibor_index(&self) -> u64 {
        self.i_fibor
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match &self.layout {
            Layout::Slots { slots, .. } => Box::new(slots.iter().flatten()),
            Layout::Bytes { residents, .. } => Box::new(residents.iter().map(|(r, _)| r)),
        }
    }

    /// `(0-based slot, resident)` pairs; in byte mode the slot is the list position.
    pub fn slot_contents(&self) -> Vec<(usize, &T)> {
        match &self.layout {
            Layout::Slots { slots, .. } => slots
                .iter()
                .enumerate()
                .filter_map(|(i, s)| s.as_ref().map(|r| (i, r)))
                .collect(),
            Layout::Bytes { residents, .. } => {
                residents.iter().enumerate().map(|(i, (r, _))| (i, r)).collect()
            }
        }
    }

    pub fn get(&self, id: CheckpointId) -> Option<&T> {
        self.iter().find(|r| r.resident_id() == id)
    }

    pub fn contains(&self, id: CheckpointId) -> bool {
        self.get(id).is_some()
    }

    /// Removes a resident, freeing its room without touching policy state.
    pub fn remove(&mut self, id: CheckpointId) -> Option<T> {
        match &mut self.layout {
            Layout::Slots { slots, .. } => slots
                .iter_mut()
                .find(|s| s.as_ref().is_some_and(|r| r.resident_id() == id))
                .and_then(Option::take),
            Layout::Bytes {
                used, residents, ..
            } => {
                let pos = residents.iter().position(|(r, _)| r.resident_id() == id)?;
                let (r, _) = residents.remove(pos);
                *used -= r.size_bytes();
                Some(r)
            }
        }
    }

    fn advance_fibor(&mut self, n: usize) -> usize {
        let n = n as u64;
        self.i_replace = (self.i_replace + fib_distinct_mod(self.i_fibor, n)) % n;
        self.i_fibor += 1;
        self.i_replace as usize
    }

    fn record(&mut self, event: ReplacementEvent) -> ReplacementEvent {
        if event.evicted.is_some() {
            self.replacements += 1;
        }
        if event.dropped {
            self.drops += 1;
        }
        self.events.push(event.clone());
        event
    }

    /// Inserts `item`, evicting per policy when full. Returns the event and
    /// the evicted resident, if any.
    pub fn store(&mut self, item: T, round: u32) -> (ReplacementEvent, Option<T>) {
        match self.layout {
            Layout::Slots { .. } => self.store_slot(item, round),
            Layout::Bytes { .. } => self.store_bytes(item, round),
        }
    }

    fn store_slot(&mut self, item: T, round: u32) -> (ReplacementEvent, Option<T>) {
        self.sequence += 1;
        let seq = self.sequence;
        let id = item.resident_id();
        let n = self.capacity();
        let free = match &self.layout {
            Layout::Slots { slots, .. } => slots.iter().position(Option::is_none),
            Layout::Bytes { .. } => unreachable!("slot layout"),
        };
        let slot = if self.policy == PolicyKind::StaticPerShard {
            Some(item.shard_hint() % n)
        } else if let Some(free) = free {
            Some(free)
        } else {
            match self.policy {
                PolicyKind::Fibor => Some(self.advance_fibor(n)),
                PolicyKind::Fifo => match &self.layout {
                    Layout::Slots { inserted_at, .. } => inserted_at
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, s)| **s)
                        .map(|(i, _)| i),
                    Layout::Bytes { .. } => unreachable!("slot layout"),
                },
                PolicyKind::Random => Some(self.rng.gen_range(0..n)),
                PolicyKind::NoReplacement => None,
                PolicyKind::StaticPerShard => unreachable!("handled above"),
            }
        };
        let Some(slot) = slot else {
            let ev = self.record(ReplacementEvent {
                round,
                inserted: id,
                evicted: None,
                slot: None,
                dropped: true,
            });
            return (ev, None);
        };
        let Layout::Slots { slots, inserted_at } = &mut self.layout else {
            unreachable!("slot layout")
        };
        let old = slots[slot].replace(item);
        inserted_at[slot] = seq;
        let ev = self.record(ReplacementEvent {
            round,
            inserted: id,
            evicted: old.as_ref().map(Resident::resident_id),
            slot: Some(slot),
            dropped: false,
        });
        (ev, old)
    }

    fn store_bytes(&mut self, item: T, round: u32) -> (ReplacementEvent, Option<T>) {
        self.sequence += 1;
        let seq = self.sequence;
        let id = item.resident_id();
        let size = item.size_bytes();
        let Layout::Bytes { budget, used, .. } = self.layout else {
            unreachable!("byte layout")
        };
        let must_free = (used + size).saturating_sub(budget);
        if size > budget || (must_free > 0 && self.policy == PolicyKind::NoReplacement) {
            let ev = self.record(ReplacementEvent {
                round,
                inserted: id,
                evicted: None,
                slot: None,
                dropped: true,
            });
            return (ev, None);
        }
        let mut evicted: Vec<(usize, T)> = Vec::new();
        loop {
            let Layout::Bytes {
                budget,
                used,
                residents,
            } = &self.layout
            else {
                unreachable!("byte layout")
            };
            if *used + size <= *budget {
                break;
            }
            let n = residents.len();
            let victim = match self.policy {
                PolicyKind::Fibor => self.advance_fibor(n),
                PolicyKind::Fifo => residents
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, (_, s))| *s)
                    .map(|(i, _)| i)
                    .expect("non-empty when over budget"),
                PolicyKind::Random => self.rng.gen_range(0..n),
                PolicyKind::NoReplacement | PolicyKind::StaticPerShard => {
                    unreachable!("rejected earlier")
                }
            };
            let Layout::Bytes {
                used, residents, ..
            } = &mut self.layout
            else {
                unreachable!("byte layout")
            };
            let (r, _) = residents.remove(victim);
            *used -= r.size_bytes();
            evicted.push((victim, r));
        }
        let Layout::Bytes {
            used, residents, ..
        } = &mut self.layout
        else {
            unreachable!("byte layout")
        };
        let pos = evicted.last().map_or(residents.len(), |(p, _)| (*p).min(residents.len()));
        residents.insert(pos, (item, seq));
        *used += size;
        let mut last = None;
        let mut first_event = None;
        let count = evicted.len();
        for (i, (p, r)) in evicted.into_iter().enumerate() {
            let ev = self.record(ReplacementEvent {
                round,
                inserted: id,
                evicted: Some(r.resident_id()),
                slot: Some(p),
                dropped: false,
            });
            first_event.get_or_insert(ev);
            if i + 1 == count {
                last = Some(r);
            }
        }
        let ev = match first_event {
            Some(ev) => ev,
            None => self.record(ReplacementEvent {
                round,
                inserted: id,
                evicted: None,
                slot: Some(pos),
                dropped: false,
            }),
        };
        (ev, last)
    }

    /// Checks the structural invariants: unique ids, occupancy within capacity,
    /// bytes within budget.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for r in self.iter() {
            if !seen.insert(r.resident_id()) {
                return Err(format!("checkpoint {} stored twice", r.resident_id()));
            }
        }
        if let Layout::Bytes { budget, used, .. } = &self.layout {
            if *used > *budget || *used != self.used_bytes() {
                return Err(format!("byte accounting off: used {used} of {budget}"));
            }
        }
        Ok(())
    }
}

impl MemoryStore<ModelCheckpoint> {
    /// Latest stored checkpoint of `lineage` whose coverage avoids `forbidden`.
    pub fn lookup_latest_clean(
        &self,
        lineage: LineageId,
        forbidden: &BTreeSet<ChunkId>,
    ) -> Option<CheckpointId> {
        self.iter()
            .filter(|c| c.lineage == lineage)
            .filter(|c| !c.coverage.keys().any(|k| forbidden.contains(k)))
            .max_by_key(|c| (c.covered_entries, c.id))
            .map(|c| c.id)
    }

    /// Latest stored checkpoint of `lineage`, clean or not.
    pub fn latest_of(&self, lineage: LineageId) -> Option<&ModelCheckpoint> {
        self.iter()
            .filter(|c| c.lineage == lineage)
            .max_by_key(|c| (c.covered_entries, c.id))
    }
}
