//! The toy learner and everything that operates on sub-models.
//!
//! [`LearnerState`] is a nearest-centroid classifier backed by exact per-label
//! sample counters and per-coordinate sums. Sums are accumulated in the order
//! samples are presented, so training on `A` and then on `B` performs the very
//! same floating-point additions as training on `A ++ B`; checkpoint-based
//! retraining is therefore bit-exact.
//!
//! Parameters are the flattened centroid matrix (`label * dims + dim`). Pruning
//! deletes coordinates outright: their sums are dropped and the state shrinks.
//! A deleted coordinate behaves as a zero centroid entry at prediction time.

mod profile;
mod pruning;

pub use profile::{
    profile_by_name, model_size_profiles, toy_profile, ModelSizeProfile, ProfilePoint, MODEL_SIZES_CSV,
};
pub use pruning::{prune_iterative, prune_oneshot, PruningMode};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::Samples;
use crate::Label;

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("feature dimension mismatch: model has {expected}, samples have {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} outside label space of {labels}")]
    UnknownLabel { label: Label, labels: usize },
    #[error("pruning rate must lie in [0, 1), got {0}")]
    PruneRate(f64),
    #[error("pruning needs at least one step")]
    ZeroSteps,
    #[error("cannot prune an empty parameter vector")]
    NoParameters,
    #[error("pruning rate {0} outside the tabulated range [0, 0.9]")]
    OutsideTable(f64),
    #[error("unknown model profile {0:?}")]
    UnknownProfile(String),
    #[error("majority vote over an empty ensemble")]
    EmptyEnsemble,
    #[error("accuracy over an empty test set")]
    EmptyTestSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    labels: usize,
    dims: usize,
    counts: Vec<u64>,
    /// Flattened indices of the parameters still present, ascending.
    retained: Vec<usize>,
    /// Per-retained-parameter sums, aligned with `retained`.
    sums: Vec<f64>,
    /// For each label, the range of `retained` holding its coordinates.
    label_spans: Vec<(usize, usize)>,
    pruned_mask: BTreeSet<usize>,
    trained_sample_count: u64,
}

impl LearnerState {
    pub fn new(labels: usize, dims: usize) -> Self {
        let n = labels * dims;
        Self {
            labels,
            dims,
            counts: vec![0; labels],
            retained: (0..n).collect(),
            sums: vec![0.0; n],
            label_spans: (0..labels).map(|l| (l * dims, (l + 1) * dims)).collect(),
            pruned_mask: BTreeSet::new(),
            trained_sample_count: 0,
        }
    }

    /// A state whose centroids equal `params`, as if each label had seen one
    /// sample. Meant for exercising pruning in isolation.
    pub fn from_parameters(labels: usize, dims: usize, params: &[f64]) -> Self {
        assert_eq!(params.len(), labels * dims);
        let mut s = Self::new(labels, dims);
        s.counts = vec![1; labels];
        s.sums = params.to_vec();
        s.trained_sample_count = labels as u64;
        s
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn trained_sample_count(&self) -> u64 {
        self.trained_sample_count
    }

    pub fn label_counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn pruned_mask(&self) -> &BTreeSet<usize> {
        &self.pruned_mask
    }

    /// Total parameters before any pruning.
    pub fn full_parameter_count(&self) -> usize {
        self.labels * self.dims
    }

    pub fn parameter_count(&self) -> usize {
        self.retained.len()
    }

    pub fn retained_indices(&self) -> &[usize] {
        &self.retained
    }

    /// Retained centroid coordinates, aligned with [`Self::retained_indices`].
    pub fn parameters(&self) -> Vec<f64> {
        self.retained
            .iter()
            .zip(&self.sums)
            .map(|(idx, sum)| {
                let n = self.counts[idx / self.dims];
                if n == 0 {
                    0.0
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }

    /// Bitwise equality, so `-0.0` and `0.0` or differing NaNs are told apart.
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.labels == other.labels
            && self.dims == other.dims
            && self.counts == other.counts
            && self.retained == other.retained
            && self.pruned_mask == other.pruned_mask
            && self.trained_sample_count == other.trained_sample_count
            && self.sums.len() == other.sums.len()
            && self
                .sums
                .iter()
                .zip(&other.sums)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_sample(&self, label: Label, features: &[f64]) -> Result<(), LearnerError> {
        if features.len() != self.dims {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dims,
                found: features.len(),
            });
        }
        if label as usize >= self.labels {
            return Err(LearnerError::UnknownLabel {
                label,
                labels: self.labels,
            });
        }
        Ok(())
    }

    /// Adds samples in iteration order.
    pub fn train_samples<'a>(
        &mut self,
        samples: impl IntoIterator<Item = (Label, &'a [f64])>,
    ) -> Result<u64, LearnerError> {
        let mut n = 0;
        for (label, x) in samples {
            self.check_sample(label, x)?;
            let (lo, hi) = self.label_spans[label as usize];
            for pos in lo..hi {
                self.sums[pos] += x[self.retained[pos] % self.dims];
            }
            self.counts[label as usize] += 1;
            n += 1;
        }
        self.trained_sample_count += n;
        Ok(n)
    }

    fn reset_statistics(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.sums.iter_mut().for_each(|s| *s = 0.0);
        self.trained_sample_count = 0;
    }

    /// Deletes the given flattened parameter indices.
    fn remove_parameters(&mut self, doomed: &BTreeSet<usize>) {
        let mut retained = Vec::with_capacity(self.retained.len());
        let mut sums = Vec::with_capacity(self.sums.len());
        for (idx, sum) in self.retained.iter().zip(&self.sums) {
            if !doomed.contains(idx) {
                retained.push(*idx);
                sums.push(*sum);
            }
        }
        self.retained = retained;
        self.sums = sums;
        self.pruned_mask.extend(doomed.iter().copied());
        let dims = self.dims;
        self.label_spans = (0..self.labels)
            .map(|l| {
                let lo = self.retained.partition_point(|i| *i < l * dims);
                let hi = self.retained.partition_point(|i| *i < (l + 1) * dims);
                (lo, hi)
            })
            .collect();
    }

    /// Nearest retained centroid; `None` when the model has seen no data.
    pub fn predict(&self, x: &[f64]) -> Option<Label> {
        let norm: f64 = x.iter().map(|v| v * v).sum();
        let params = self.parameters();
        let mut best: Option<(f64, Label)> = None;
        for (label, &(lo, hi)) in self.label_spans.iter().enumerate() {
            if self.counts[label] == 0 {
                continue;
            }
            // Deleted coordinates act as zeros: start from |x|^2 and swap in
            // the retained terms.
            let mut d = norm;
            for pos in lo..hi {
                let xv = x[self.retained[pos] % self.dims];
                let diff = xv - params[pos];
                d += diff * diff - xv * xv;
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, label as Label));
            }
        }
        best.map(|(_, l)| l)
    }
}

/// Trains `chunks` in order on top of `state`.
pub fn train_incremental(
    state: &LearnerState,
    chunks: &[&Samples],
) -> Result<LearnerState, LearnerError> {
    let mut next = state.clone();
    for chunk in chunks {
        if chunk.dims() != state.dims() {
            return Err(LearnerError::DimensionMismatch {
                expected: state.dims(),
                found: chunk.dims(),
            });
        }
        next.train_samples(chunk.iter())?;
    }
    Ok(next)
}

/// Most frequent label; ties go to the smallest label.
pub fn majority_vote(votes: &[Label]) -> Result<Label, LearnerError> {
    let mut counts = std::collections::BTreeMap::new();
    for v in votes {
        *counts.entry(*v).or_insert(0usize) += 1;
    }
    counts
        .into_iter()
        .fold(None::<(Label, usize)>, |best, (label, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((label, n)),
        })
        .map(|(l, _)| l)
        .ok_or(LearnerError::EmptyEnsemble)
}

/// Majority-vote accuracy of an ensemble on `test`. Members that have seen no
/// data abstain; a sample nobody votes on counts as wrong.
pub fn ensemble_accuracy(members: &[&LearnerState], test: &Samples) -> Result<f64, LearnerError> {
    if members.is_empty() {
        return Err(LearnerError::EmptyEnsemble);
    }
    if test.is_empty() {
        return Err(LearnerError::EmptyTestSet);
    }
    let mut correct = 0usize;
    let mut votes = Vec::with_capacity(members.len());
    for (label, x) in test.iter() {
        votes.clear();
        votes.extend(members.iter().filter_map(|m| m.predict(x)));
        if majority_vote(&votes).ok() == Some(label) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Linear retraining energy: `a * rsn + b` joules per retraining episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub joules_per_sample: f64,
    pub fixed_overhead: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            joules_per_sample: 1.0,
            fixed_overhead: 0.0,
        }
    }
}

impl EnergyModel {
    pub fn energy_of(&self, rsn: u64) -> f64 {
        self.joules_per_sample * rsn as f64 + self.fixed_overhead
    }
}
