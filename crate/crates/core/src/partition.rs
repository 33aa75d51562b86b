//! Per-round shard partitioning.
//!
//! Three strategies split one round's chunks into shards:
//!
//! - **User-centered** (`ucdp`): every user's chunks of the round stay in one
//!   shard. When there are no more users than shards each user gets a shard of
//!   their own. Otherwise `S` randomly chosen users seed the shards and the
//!   remaining users are dealt out pass by pass: in each pass every shard, in
//!   order, takes the remaining user whose addition keeps the shard's per-user
//!   data size closest to (and preferably not above) the mean user size. The
//!   penalty is the hinge `max(0, (size_s + size_k) / (users_s + 1) − mean)`;
//!   ties go to the smallest user id.
//! - **Uniform**: seeded shuffle of the chunks, dealt round-robin into exactly
//!   `S` shards regardless of ownership.
//! - **Class-based**: the label space is cut into `S` contiguous, near-equal
//!   ranges and each chunk's samples are routed by label, so one chunk may be
//!   present in several shards.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::DataChunk;
use crate::{seed, ChunkId, Label, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("cannot split {labels} labels into {shards} class shards")]
    TooManyShards { shards: usize, labels: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    Ucdp,
    Uniform,
    ClassBased,
}

impl PartitionStrategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Ucdp => "ucdp",
            Self::Uniform => "uniform",
            Self::ClassBased => "class_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub round: u32,
    #[serde(rename = "strategy")]
    pub strategy_tag: PartitionStrategy,
    pub shards: Vec<Vec<ChunkId>>,
    /// Label range of each shard, class-based only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_ranges: Option<Vec<Range<Label>>>,
}

impl ShardAssignment {
    fn empty(round: u32, strategy: PartitionStrategy) -> Self {
        Self {
            round,
            strategy_tag: strategy,
            shards: Vec::new(),
            label_ranges: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("assignment serializes")
    }
}

/// Seed users for round `round` drawn from the scenario seed.
fn partition_rng(seed: u64, round: u32) -> rand_chacha::ChaCha8Rng {
    seed::stream(seed, seed::PARTITION, u64::from(round))
}

fn by_owner(chunks: &[DataChunk]) -> BTreeMap<UserId, (u64, Vec<ChunkId>)> {
    let mut users: BTreeMap<UserId, (u64, Vec<ChunkId>)> = BTreeMap::new();
    for c in chunks {
        let e = users.entry(c.owner).or_default();
        e.0 += u64::from(c.sample_count);
        e.1.push(c.chunk_id);
    }
    for (_, ids) in users.values_mut() {
        ids.sort_unstable();
    }
    users
}

/// User-centered partition of one round's chunks into at most `shards` shards.
pub fn ucdp_partition(
    shards: usize,
    chunks: &[DataChunk],
    round: u32,
    rng_seed: u64,
) -> Result<ShardAssignment, PartitionError> {
    if shards == 0 {
        return Err(PartitionError::ZeroShards);
    }
    let users = by_owner(chunks);
    if users.is_empty() {
        return Ok(ShardAssignment::empty(round, PartitionStrategy::Ucdp));
    }
    let sizes: Vec<(UserId, u64)> = users.iter().map(|(u, (s, _))| (*u, *s)).collect();
    let groups = if users.len() <= shards {
        sizes.iter().map(|(u, _)| vec![*u]).collect()
    } else {
        let mut ids: Vec<UserId> = users.keys().copied().collect();
        ids.shuffle(&mut partition_rng(rng_seed, round));
        ucdp_groups(&sizes, &ids[..shards])
    };
    let shards = groups
        .iter()
        .map(|g| {
            let mut ids: Vec<ChunkId> = g.iter().flat_map(|u| users[u].1.iter().copied()).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    Ok(ShardAssignment {
        round,
        strategy_tag: PartitionStrategy::Ucdp,
        shards,
        label_ranges: None,
    })
}

/// The greedy assignment loop for a fixed choice of seed users. `sizes` holds
/// every contributing user sorted by id; the result lists user ids per shard in
/// the order they joined.
pub fn ucdp_groups(sizes: &[(UserId, u64)], seeds: &[UserId]) -> Vec<Vec<UserId>> {
    let total: u64 = sizes.iter().map(|(_, s)| s).sum();
    let mean = total as f64 / sizes.len() as f64;
    let mut groups: Vec<(u64, Vec<UserId>)> = seeds
        .iter()
        .map(|u| {
            let size = sizes.iter().find(|(id, _)| id == u).map_or(0, |(_, s)| *s);
            (size, vec![*u])
        })
        .collect();
    let mut remaining: Vec<(UserId, u64)> = sizes
        .iter()
        .filter(|(u, _)| !seeds.contains(u))
        .copied()
        .collect();
    'passes: while !remaining.is_empty() {
        for (shard_size, members) in groups.iter_mut() {
            if remaining.is_empty() {
                break 'passes;
            }
            let denom = (members.len() + 1) as f64;
            let penalty = |size: u64| (((*shard_size + size) as f64) / denom - mean).max(0.0);
            // `remaining` is sorted by id, so the first minimum is the smallest id.
            let best = remaining
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |best, (i, (_, s))| {
                    let p = penalty(*s);
                    match best {
                        Some((_, bp)) if bp <= p => best,
                        _ => Some((i, p)),
                    }
                })
                .map(|(i, _)| i)
                .expect("remaining is non-empty");
            let (user, size) = remaining.remove(best);
            *shard_size += size;
            members.push(user);
        }
    }
    groups.into_iter().map(|(_, m)| m).collect()
}

/// Uniform partition: seeded shuffle then round-robin into exactly `shards`.
pub fn uniform_partition(
    shards: usize,
    chunks: &[DataChunk],
    round: u32,
    rng_seed: u64,
) -> Result<ShardAssignment, PartitionError> {
    if shards == 0 {
        return Err(PartitionError::ZeroShards);
    }
    let mut ids: Vec<ChunkId> = chunks.iter().map(|c| c.chunk_id).collect();
    ids.sort_unstable();
    ids.shuffle(&mut partition_rng(rng_seed, round));
    let mut out = vec![Vec::new(); shards];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % shards].push(id);
    }
    for s in &mut out {
        s.sort_unstable();
    }
    Ok(ShardAssignment {
        round,
        strategy_tag: PartitionStrategy::Uniform,
        shards: out,
        label_ranges: None,
    })
}

/// Contiguous label range owned by class shard `group` out of `shards`.
pub fn class_range(group: usize, shards: usize, label_space: u32) -> Range<Label> {
    let bound = |g: usize| ((g as u64 * u64::from(label_space)).div_ceil(shards as u64)) as Label;
    bound(group)..bound(group + 1)
}

/// Class shard holding `label`.
pub fn class_of(label: Label, shards: usize, label_space: u32) -> usize {
    (u64::from(label) * shards as u64 / u64::from(label_space)) as usize
}

/// Class-based partition. A chunk is listed in every shard whose label range
/// intersects its histogram.
pub fn class_partition(
    shards: usize,
    chunks: &[DataChunk],
    round: u32,
    label_space: u32,
) -> Result<ShardAssignment, PartitionError> {
    if shards == 0 {
        return Err(PartitionError::ZeroShards);
    }
    if shards > label_space as usize {
        return Err(PartitionError::TooManyShards {
            shards,
            labels: label_space,
        });
    }
    let ranges: Vec<Range<Label>> = (0..shards)
        .map(|g| class_range(g, shards, label_space))
        .collect();
    let mut out = vec![Vec::new(); shards];
    let mut sorted: Vec<&DataChunk> = chunks.iter().collect();
    sorted.sort_by_key(|c| c.chunk_id);
    for c in sorted {
        for (g, r) in ranges.iter().enumerate() {
            if c.samples_in(r) > 0 {
                out[g].push(c.chunk_id);
            }
        }
    }
    Ok(ShardAssignment {
        round,
        strategy_tag: PartitionStrategy::ClassBased,
        shards: out,
        label_ranges: Some(ranges),
    })
}

pub fn partition(
    strategy: PartitionStrategy,
    shards: usize,
    chunks: &[DataChunk],
    round: u32,
    rng_seed: u64,
    label_space: u32,
) -> Result<ShardAssignment, PartitionError> {
    match strategy {
        PartitionStrategy::Ucdp => ucdp_partition(shards, chunks, round, rng_seed),
        PartitionStrategy::Uniform => uniform_partition(shards, chunks, round, rng_seed),
        PartitionStrategy::ClassBased => class_partition(shards, chunks, round, label_space),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn chunk(id: ChunkId, owner: UserId, size: u32) -> DataChunk {
        DataChunk {
            chunk_id: id,
            owner,
            round: 1,
            sample_count: size,
            label_histogram: BTreeMap::from([(owner % 10, size)]),
        }
    }

    #[test]
    fn fewer_users_than_shards_gives_one_shard_each() {
        let chunks = vec![chunk(0, 1, 10), chunk(1, 2, 10), chunk(2, 3, 10)];
        let a = ucdp_partition(4, &chunks, 1, 9).unwrap();
        assert_eq!(a.shards, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn single_user_single_shard() {
        let chunks = vec![chunk(0, 7, 10), chunk(1, 7, 20)];
        for s in 1..5 {
            let a = ucdp_partition(s, &chunks, 1, 3).unwrap();
            assert_eq!(a.shards, vec![vec![0, 1]]);
        }
    }

    /// Independent re-trace: try every remaining user at every step and pick
    /// the lexicographically smallest (penalty, id).
    fn retrace(sizes: &[(UserId, u64)], seeds: &[UserId]) -> Vec<Vec<UserId>> {
        let mean = sizes.iter().map(|s| s.1 as f64).sum::<f64>() / sizes.len() as f64;
        let size_of = |u: UserId| sizes.iter().find(|s| s.0 == u).unwrap().1;
        let mut shards: Vec<Vec<UserId>> = seeds.iter().map(|u| vec![*u]).collect();
        let mut left: BTreeSet<UserId> = sizes.iter().map(|s| s.0).collect();
        for u in seeds {
            left.remove(u);
        }
        let mut s = 0;
        while !left.is_empty() {
            let total: u64 = shards[s].iter().map(|u| size_of(*u)).sum();
            let n = shards[s].len() as f64 + 1.0;
            let mut best: Option<(f64, UserId)> = None;
            for u in &left {
                let p = (((total + size_of(*u)) as f64) / n - mean).max(0.0);
                if best.is_none_or(|(bp, bu)| p < bp || (p == bp && *u < bu)) {
                    best = Some((p, *u));
                }
            }
            let (_, u) = best.unwrap();
            left.remove(&u);
            shards[s].push(u);
            s = (s + 1) % shards.len();
        }
        shards
    }

    #[test]
    fn greedy_trace_five_users() {
        let sizes = [(1, 10), (2, 20), (3, 30), (4, 40), (5, 50)];
        let groups = ucdp_groups(&sizes, &[1, 2]);
        assert_eq!(groups, vec![vec![1, 3, 5], vec![2, 4]]);
        assert_eq!(groups, retrace(&sizes, &[1, 2]));
        let totals: Vec<u64> = groups
            .iter()
            .map(|g| g.iter().map(|u| sizes[*u as usize - 1].1).sum())
            .collect();
        assert_eq!(totals, vec![90, 60]);
    }

    #[test]
    fn uniform_even_split() {
        let chunks: Vec<_> = (0..8).map(|i| chunk(i, i as u32, 10)).collect();
        let a = uniform_partition(4, &chunks, 2, 5).unwrap();
        assert!(a.shards.iter().all(|s| s.len() == 2));
        assert_eq!(a, uniform_partition(4, &chunks, 2, 5).unwrap());
    }

    #[test]
    fn uniform_single_chunk_leaves_empty_shards() {
        let a = uniform_partition(4, &[chunk(0, 0, 5)], 1, 1).unwrap();
        assert_eq!(a.shards.len(), 4);
        assert_eq!(a.shards.iter().filter(|s| s.is_empty()).count(), 3);
    }

    #[test]
    fn class_ranges_are_contiguous() {
        assert_eq!(class_range(0, 2, 10), 0..5);
        assert_eq!(class_range(1, 2, 10), 5..10);
        for l in 0..10 {
            assert_eq!(class_of(l, 10, 10), l as usize);
            assert_eq!(class_range(l as usize, 10, 10), l..l + 1);
            let g = class_of(l, 4, 10);
            assert!(class_range(g, 4, 10).contains(&l));
        }
    }

    #[test]
    fn class_chunk_spanning_groups() {
        let c = DataChunk {
            chunk_id: 3,
            owner: 0,
            round: 1,
            sample_count: 4,
            label_histogram: BTreeMap::from([(1, 2), (7, 2)]),
        };
        let a = class_partition(2, &[c], 1, 10).unwrap();
        assert_eq!(a.shards, vec![vec![3], vec![3]]);
        assert!(class_partition(11, &[], 1, 10).is_err());
    }

    #[test]
    fn zero_shards_rejected() {
        assert_eq!(
            ucdp_partition(0, &[], 1, 0).unwrap_err(),
            PartitionError::ZeroShards
        );
        assert!(uniform_partition(0, &[], 1, 0).is_err());
        assert!(class_partition(0, &[], 1, 10).is_err());
    }

    #[test]
    fn empty_round() {
        assert!(ucdp_partition(3, &[], 1, 0).unwrap().shards.is_empty());
    }

    #[test]
    fn json_shape() {
        let a = ucdp_partition(4, &[chunk(0, 1, 10)], 3, 0).unwrap();
        assert_eq!(a.to_json(), r#"{"round":3,"strategy":"ucdp","shards":[[0]]}"#);
    }

    fn arb_chunks() -> impl Strategy<Value = Vec<DataChunk>> {
        prop::collection::vec((0u32..12, 1u32..200), 1..30).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (owner, size))| chunk(i as ChunkId, owner, size))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ucdp_covers_and_keeps_users_together(chunks in arb_chunks(), s in 1usize..6, seed in any::<u64>()) {
            let a = ucdp_partition(s, &chunks, 1, seed).unwrap();
            let users: BTreeSet<_> = chunks.iter().map(|c| c.owner).collect();
            prop_assert_eq!(a.shards.len(), users.len().min(s));
            prop_assert!(a.shards.iter().all(|sh| !sh.is_empty()));
            let mut seen = BTreeSet::new();
            for sh in &a.shards {
                for id in sh {
                    prop_assert!(seen.insert(*id));
                }
            }
            prop_assert_eq!(seen.len(), chunks.len());
            for u in users {
                let idx: BTreeSet<_> = chunks.iter().filter(|c| c.owner == u)
                    .map(|c| a.shards.iter().position(|sh| sh.contains(&c.chunk_id)).unwrap())
                    .collect();
                prop_assert_eq!(idx.len(), 1);
            }
            prop_assert_eq!(&a, &ucdp_partition(s, &chunks, 1, seed).unwrap());
        }

        #[test]
        fn ucdp_balance_bound(sizes in prop::collection::vec(1u64..500, 2..20), s in 1usize..6) {
            let sizes: Vec<(UserId, u64)> = sizes.into_iter().enumerate().map(|(i, x)| (i as UserId, x)).collect();
            prop_assume!(sizes.len() > s);
            let seeds: Vec<UserId> = (0..s as UserId).collect();
            let groups = ucdp_groups(&sizes, &seeds);
            prop_assert_eq!(&groups, &retrace(&sizes, &seeds));
            let mean = sizes.iter().map(|x| x.1 as f64).sum::<f64>() / sizes.len() as f64;
            let max_user = sizes.iter().map(|x| x.1).max().unwrap() as f64;
            for g in &groups {
                let per_user = g.iter().map(|u| sizes[*u as usize].1 as f64).sum::<f64>() / g.len() as f64;
                prop_assert!((per_user - mean).abs() <= max_user);
            }
        }

        #[test]
        fn uniform_covers(chunks in arb_chunks(), s in 1usize..6, seed in any::<u64>()) {
            let a = uniform_partition(s, &chunks, 1, seed).unwrap();
            prop_assert_eq!(a.shards.len(), s);
            let mut all: Vec<_> = a.shards.concat();
            all.sort_unstable();
            let mut expect: Vec<_> = chunks.iter().map(|c| c.chunk_id).collect();
            expect.sort_unstable();
            prop_assert_eq!(all, expect);
        }

        #[test]
        fn class_pairs_covered_once(chunks in arb_chunks(), s in 1usize..=10) {
            let a = class_partition(s, &chunks, 1, 10).unwrap();
            let ranges = a.label_ranges.clone().unwrap();
            for c in &chunks {
                for l in c.label_histogram.keys() {
                    let holders = ranges.iter().enumerate()
                        .filter(|(g, r)| r.contains(l) && a.shards[*g].contains(&c.chunk_id))
                        .count();
                    prop_assert_eq!(holders, 1);
                }
            }
        }
    }
}
