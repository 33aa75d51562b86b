//! Independent oracles shared by the integration tests.
//!
//! The exactness oracle rebuilds every retrained lineage from an empty state
//! using only the workload stream (for retained counts) and the lineage's
//! chunk membership, then compares bit patterns with what the engine stored.
//! The RSN oracle recounts the replayed samples straight from the raw sample
//! sequences.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use edge_unlearn::engine::{Dataset, Engine, LineageEntry};
use edge_unlearn::workload::{generate_workload, Workload};
use edge_unlearn::{Capacity, ChunkId, LearnerState, ScenarioConfig, VariantTag};
use rand::Rng;

pub fn small_config(rng: &mut impl Rng, seed: u64) -> ScenarioConfig {
    let label_space = rng.gen_range(3..=6);
    ScenarioConfig {
        n_users: rng.gen_range(1..=5),
        n_rounds: rng.gen_range(1..=6),
        unlearn_probability: rng.gen_range(0.2..=1.0),
        seed,
        label_space,
        feature_dims: rng.gen_range(1..=4),
        test_samples: 50,
        chunk_size_min: 3,
        chunk_size_max: rng.gen_range(3..=40),
        labels_per_user_min: 1,
        labels_per_user_max: rng.gen_range(1..=label_space),
        activity_probability: rng.gen_range(0.5..=1.0),
        partial_delete_probability: rng.gen_range(0.0..=1.0),
        shards: rng.gen_range(1..=label_space.min(4)),
        capacity: Capacity::Slots(rng.gen_range(1..=6)),
        prune_rate: rng.gen_range(0.0..0.95),
        prune_steps: rng.gen_range(1..=4),
        ..ScenarioConfig::default()
    }
}

/// Lineage retrains verified, and how many of them resumed from a stored
/// checkpoint instead of an empty state.
#[derive(Debug, Default, Clone, Copy)]
pub struct Checked {
    pub retrains: usize,
    pub resumed: usize,
}

fn removed(count: u32, fraction: f64) -> u32 {
    let k = (fraction * f64::from(count)).round() as u32;
    k.max(1).min(count)
}

/// Replays `tag` over the config's workload and checks every unlearning
/// episode against the oracles.
pub fn check_exactness(config: &ScenarioConfig, tag: VariantTag) -> Result<Checked, String> {
    let workload = generate_workload(&config.workload()).map_err(|e| e.to_string())?;
    check_workload(config, tag, &workload)
}

/// Like [`check_exactness`], over an explicit workload.
pub fn check_workload(
    config: &ScenarioConfig,
    tag: VariantTag,
    workload: &Workload,
) -> Result<Checked, String> {
    let dataset = Arc::new(Dataset::for_config(config, workload));
    let mut engine = Engine::new(config, tag, Arc::clone(&dataset)).map_err(|e| e.to_string())?;
    engine.run(workload).map_err(|e| e.to_string())?;
    let variant = tag.variant(config);

    let mut retained: BTreeMap<ChunkId, u32> =
        workload.chunks().map(|c| (c.chunk_id, c.sample_count)).collect();
    let requests: Vec<_> = workload.rounds.iter().flat_map(|b| &b.requests).collect();
    if requests.len() != engine.outcomes().len() {
        return Err(format!(
            "{} requests but {} outcomes",
            requests.len(),
            engine.outcomes().len()
        ));
    }
    let mut checked = Checked::default();
    let mut tombstones = BTreeSet::new();
    for (request, outcome) in requests.iter().zip(engine.outcomes()) {
        for c in &request.chunk_refs {
            let r = retained.get_mut(c).ok_or("unknown chunk")?;
            *r -= removed(*r, request.sample_fraction);
            if *r == 0 {
                tombstones.insert(*c);
            }
        }
        let forbidden: BTreeSet<ChunkId> = request.chunk_refs.iter().copied().collect();
        let mut touched = BTreeSet::new();
        for lineage in engine.lineages().values() {
            if lineage
                .entries
                .iter()
                .any(|e| e.round <= outcome.round && forbidden.contains(&e.chunk))
            {
                touched.insert(lineage.id);
            }
        }
        let reported: BTreeSet<_> = outcome.retrains.iter().map(|r| r.lineage).collect();
        if touched != reported {
            return Err(format!("request {}: touched {touched:?}, engine retrained {reported:?}", request.request_id));
        }
        let mut rsn = 0;
        for retrain in &outcome.retrains {
            let lineage = &engine.lineages()[&retrain.lineage];
            let entries: Vec<&LineageEntry> =
                lineage.entries.iter().filter(|e| e.round <= outcome.round).collect();
            let samples = |e: &LineageEntry| {
                let keep = retained[&e.chunk] as usize;
                let range = e.labels.clone();
                dataset
                    .samples(e.chunk)
                    .expect("materialized")
                    .iter()
                    .take(keep)
                    .filter(move |(l, _)| range.as_ref().is_none_or(|r| r.contains(l)))
            };
            if entries[..retrain.start_entries]
                .iter()
                .any(|e| forbidden.contains(&e.chunk))
            {
                return Err(format!("request {}: start checkpoint saw deleted data", request.request_id));
            }
            let expected_rsn: u64 = entries[retrain.start_entries..]
                .iter()
                .map(|e| samples(e).count() as u64)
                .sum();
            if expected_rsn != retrain.replayed {
                return Err(format!(
                    "request {} lineage {}: replayed {} but oracle counts {expected_rsn}",
                    request.request_id, retrain.lineage, retrain.replayed
                ));
            }
            rsn += expected_rsn;

            let mut state = LearnerState::new(config.label_space as usize, config.feature_dims);
            let rounds: BTreeSet<u32> = entries.iter().map(|e| e.round).collect();
            for round in rounds {
                for e in entries.iter().filter(|e| e.round == round) {
                    state.train_samples(samples(e)).map_err(|e| e.to_string())?;
                }
                state = variant
                    .pruning
                    .apply(&state, |st| {
                        for e in entries.iter().filter(|e| e.round <= round) {
                            st.train_samples(samples(e))?;
                        }
                        Ok(())
                    })
                    .map_err(|e| e.to_string())?;
            }
            if !state.bit_identical(&retrain.state) {
                return Err(format!(
                    "request {} lineage {}: retrained state differs from scratch retrain",
                    request.request_id, retrain.lineage
                ));
            }
            checked.retrains += 1;
            checked.resumed += usize::from(retrain.start.is_some());
        }
        if rsn != outcome.rsn {
            return Err(format!("request {}: total rsn mismatch", request.request_id));
        }
    }
    for c in engine.store().iter() {
        if c.coverage.keys().any(|k| tombstones.contains(k)) {
            return Err(format!("checkpoint {} resurrects unlearned data", c.id));
        }
    }
    engine.check_invariants().map_err(|e| e.to_string())?;
    Ok(checked)
}
