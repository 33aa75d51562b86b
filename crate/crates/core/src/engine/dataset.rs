use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::sample::Samples;
use crate::workload::{FeatureSpace, Workload};
use crate::ChunkId;

/// Materialized feature vectors for every chunk of a workload, plus a held-out
/// test set. Built once and shared read-only between variant runs.
#[derive(Debug, Clone)]
pub struct Dataset {
    space: FeatureSpace,
    samples: BTreeMap<ChunkId, Samples>,
    test: Samples,
}

impl Dataset {
    pub fn new(space: FeatureSpace, workload: &Workload, test_samples: usize) -> Self {
        let chunks: Vec<_> = workload.chunks().collect();
        let samples = chunks
            .par_iter()
            .map(|c| (c.chunk_id, space.chunk_samples(c)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        let test = space.test_set(test_samples);
        Self {
            space,
            samples,
            test,
        }
    }

    pub fn for_config(config: &ScenarioConfig, workload: &Workload) -> Self {
        let space = FeatureSpace::new(
            config.seed,
            config.label_space,
            config.feature_dims,
            config.feature_spread,
            config.feature_noise,
        );
        Self::new(space, workload, config.test_samples)
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn samples(&self, chunk: ChunkId) -> Option<&Samples> {
        self.samples.get(&chunk)
    }

    pub fn test_set(&self) -> &Samples {
        &self.test
    }
}
