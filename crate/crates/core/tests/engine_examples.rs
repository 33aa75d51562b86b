use std::collections::BTreeMap;
use std::sync::Arc;

use edge_unlearn::engine::{Dataset, Engine, EngineError};
use edge_unlearn::workload::{FeatureSpace, RequestKind, RoundBatch, UpdateRequest, Workload};
use edge_unlearn::{run_scenario, Capacity, DataChunk, LearnerState, ScenarioConfig, Samples, VariantTag};

fn chunk(id: u64, owner: u32, round: u32, histogram: &[(u32, u32)]) -> DataChunk {
    let label_histogram: BTreeMap<_, _> = histogram.iter().copied().collect();
    DataChunk {
        chunk_id: id,
        owner,
        round,
        sample_count: label_histogram.values().sum(),
        label_histogram,
    }
}

fn delete(id: u64, owner: u32, round: u32, chunks: &[u64], fraction: f64) -> UpdateRequest {
    UpdateRequest {
        request_id: id,
        kind: RequestKind::Delete,
        owner,
        chunk_refs: chunks.to_vec(),
        sample_fraction: fraction,
        arrival_round: round,
    }
}

fn tiny_config(shards: u32) -> ScenarioConfig {
    ScenarioConfig {
        shards,
        label_space: 2,
        feature_dims: 2,
        test_samples: 200,
        capacity: Capacity::Slots(16),
        ..ScenarioConfig::default()
    }
}

fn engine_for(config: &ScenarioConfig, tag: VariantTag, workload: &Workload) -> Engine {
    let space = FeatureSpace::new(config.seed, config.label_space, config.feature_dims, 3.0, 1.0);
    let dataset = Arc::new(Dataset::new(space, workload, config.test_samples));
    Engine::new(config, tag, dataset).unwrap()
}

/// One lineage learns D1, D2, D3 (100 samples each), then a user asks to
/// remove 10 samples of D2.
fn three_round_history() -> (ScenarioConfig, Workload) {
    let rounds = (1..=3)
        .map(|r| RoundBatch {
            round: r,
            chunks: vec![chunk(u64::from(r), 0, r, &[(0, 50), (1, 50)])],
            requests: Vec::new(),
        })
        .chain(std::iter::once(RoundBatch {
            round: 4,
            chunks: Vec::new(),
            requests: vec![delete(1, 0, 4, &[2], 0.1)],
        }))
        .collect();
    (tiny_config(1), Workload { rounds })
}

fn checkpoint_of_round(engine: &Engine, round: u32) -> u64 {
    engine.store().iter().find(|c| c.round == round).unwrap().id
}

#[test]
fn clean_checkpoint_before_deleted_chunk_bounds_replay() {
    let (config, workload) = three_round_history();
    let mut engine = engine_for(&config, VariantTag::CauseNoSc, &workload);
    for batch in &workload.rounds[..3] {
        engine.run_round(batch).unwrap();
    }
    let m2 = checkpoint_of_round(&engine, 2);
    engine.evict_checkpoint(m2).unwrap();
    let m1 = checkpoint_of_round(&engine, 1);
    let m3 = checkpoint_of_round(&engine, 3);
    let record = engine.run_round(&workload.rounds[3]).unwrap().clone();
    assert_eq!(record.rsn_round, 190);
    let retrain = &engine.outcomes()[0].retrains[0];
    assert_eq!(retrain.start, Some(m1));
    assert_eq!(retrain.deleted, vec![m3]);
    assert!(engine.store().contains(m1));
    assert!(!engine.store().contains(m3));
}

#[test]
fn without_clean_checkpoint_replay_starts_from_scratch() {
    let (config, workload) = three_round_history();
    let mut engine = engine_for(&config, VariantTag::CauseNoSc, &workload);
    for batch in &workload.rounds[..3] {
        engine.run_round(batch).unwrap();
    }
    for round in 1..=2 {
        let id = checkpoint_of_round(&engine, round);
        engine.evict_checkpoint(id).unwrap();
    }
    let record = engine.run_round(&workload.rounds[3]).unwrap().clone();
    assert_eq!(record.rsn_round, 290);
    assert_eq!(engine.outcomes()[0].retrains[0].start, None);
    assert_eq!(engine.live_samples(), 290);
}

#[test]
fn unlearning_the_only_chunk_replays_nothing() {
    let config = tiny_config(1);
    let workload = Workload {
        rounds: vec![
            RoundBatch {
                round: 1,
                chunks: vec![chunk(1, 0, 1, &[(0, 20), (1, 20)])],
                requests: Vec::new(),
            },
            RoundBatch {
                round: 2,
                chunks: Vec::new(),
                requests: vec![delete(1, 0, 2, &[1], 1.0)],
            },
        ],
    };
    let mut engine = engine_for(&config, VariantTag::CauseNoSc, &workload);
    engine.run(&workload).unwrap();
    let outcome = &engine.outcomes()[0];
    assert_eq!(outcome.rsn, 0);
    assert_eq!(outcome.retrains[0].stored, None);
    assert_eq!(engine.live_samples(), 0);
    assert_eq!(engine.store().occupancy(), 0);
}

#[test]
fn first_round_opens_one_lineage_per_shard() {
    let config = ScenarioConfig { label_space: 4, ..tiny_config(4) };
    let chunks = (0..8).map(|u| chunk(u64::from(u) + 1, u, 1, &[(u % 4, 30)])).collect();
    let workload = Workload {
        rounds: vec![RoundBatch { round: 1, chunks, requests: Vec::new() }],
    };
    let mut engine = engine_for(&config, VariantTag::CauseNoSc, &workload);
    let record = engine.run_round(&workload.rounds[0]).unwrap().clone();
    assert_eq!(engine.lineages().len(), 4);
    assert_eq!(record.occupancy, 4);
    assert_eq!(record.rsn_round, 0);
}

#[test]
fn empty_round_reports_zero() {
    let config = tiny_config(2);
    let workload = Workload {
        rounds: vec![RoundBatch { round: 1, chunks: Vec::new(), requests: Vec::new() }],
    };
    let mut engine = engine_for(&config, VariantTag::Cause, &workload);
    let record = engine.run_round(&workload.rounds[0]).unwrap();
    assert_eq!(record.rsn_round, 0);
    assert_eq!(record.occupancy, 0);
}

#[test]
fn static_store_overwrites_per_shard() {
    let config = tiny_config(2);
    let rounds = (1..=2)
        .map(|r| RoundBatch {
            round: r,
            chunks: (0..2).map(|u| chunk(u64::from(2 * r + u), u, r, &[(0, 10), (1, 10)])).collect(),
            requests: Vec::new(),
        })
        .collect();
    let workload = Workload { rounds };
    let mut engine = engine_for(&config, VariantTag::Sisa, &workload);
    engine.run(&workload).unwrap();
    assert_eq!(engine.store().occupancy(), 2);
    assert!(engine.store().iter().all(|c| c.round == 2));
    assert_eq!(engine.store().replacement_count(), 2);
}

#[test]
fn unknown_and_repeated_chunks_are_rejected() {
    let (config, workload) = three_round_history();
    let mut engine = engine_for(&config, VariantTag::CauseNoSc, &workload);
    engine.run(&workload).unwrap();
    assert!(matches!(
        engine.handle_unlearning(&delete(9, 0, 4, &[99], 1.0)),
        Err(EngineError::UnknownChunk { chunk: 99, .. })
    ));
    assert!(matches!(
        engine.handle_unlearning(&delete(10, 0, 4, &[2], 1.0)),
        Err(EngineError::AlreadyUnlearned { chunk: 2, .. })
    ));
}

#[test]
fn accuracy_beats_chance_and_needs_a_test_set() {
    let config = tiny_config(1);
    let workload = Workload {
        rounds: vec![RoundBatch {
            round: 1,
            chunks: vec![chunk(1, 0, 1, &[(0, 200), (1, 200)])],
            requests: Vec::new(),
        }],
    };
    let mut engine = engine_for(&config, VariantTag::Sisa, &workload);
    engine.run(&workload).unwrap();
    let acc = engine.evaluate_accuracy(engine.dataset().test_set()).unwrap();
    assert!(acc > 0.5, "accuracy {acc}");
    assert!(engine.evaluate_accuracy(&Samples::new(2)).is_err());
}

#[test]
fn ensemble_of_identical_members_matches_single_member() {
    let space = FeatureSpace::new(3, 3, 2, 3.0, 2.0);
    let c = chunk(1, 0, 1, &[(0, 40), (1, 40), (2, 40)]);
    let train = space.chunk_samples(&c);
    let test = space.test_set(300);
    let mut state = LearnerState::new(3, 2);
    state.train_samples(train.iter()).unwrap();
    let single = edge_unlearn::learner::ensemble_accuracy(&[&state], &test).unwrap();
    let triple = edge_unlearn::learner::ensemble_accuracy(&[&state, &state, &state], &test).unwrap();
    assert_eq!(single, triple);
}

#[test]
fn no_deletes_means_no_retraining() {
    let config = ScenarioConfig {
        n_users: 20,
        n_rounds: 4,
        unlearn_probability: 0.0,
        chunk_size_max: 60,
        test_samples: 50,
        variants: VariantTag::ALL.iter().map(ToString::to_string).collect(),
        ..ScenarioConfig::default()
    };
    let result = run_scenario(&config).unwrap();
    assert_eq!(result.runs.len(), VariantTag::ALL.len());
    for run in &result.runs {
        assert_eq!(run.rsn_total(), 0, "{}", run.tag);
    }
}

#[test]
fn scenario_runs_are_deterministic() {
    let config = ScenarioConfig {
        n_users: 15,
        n_rounds: 5,
        unlearn_probability: 0.3,
        chunk_size_max: 80,
        test_samples: 100,
        ..ScenarioConfig::default()
    };
    let a = run_scenario(&config).unwrap();
    let b = run_scenario(&config).unwrap();
    assert_eq!(
        a.records().cloned().collect::<Vec<_>>(),
        b.records().cloned().collect::<Vec<_>>()
    );
}

#[test]
fn retrain_ratio_stays_in_unit_interval() {
    let config = ScenarioConfig {
        n_users: 30,
        n_rounds: 6,
        unlearn_probability: 0.5,
        chunk_size_max: 80,
        test_samples: 50,
        variants: VariantTag::ALL.iter().map(ToString::to_string).collect(),
        ..ScenarioConfig::default()
    };
    let result = run_scenario(&config).unwrap();
    for m in result.records() {
        assert!((0.0..=1.0).contains(&m.retrain_ratio), "{m:?}");
    }
    assert!(result.records().any(|m| m.retrain_ratio > 0.0));
}
