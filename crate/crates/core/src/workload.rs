//! Synthetic multi-user learning and unlearning streams.
//!
//! Each user owns a label subset and contributes at most one chunk per round.
//! From the second round on, each user independently raises an unlearning
//! request with probability `unlearn_probability`, targeting a uniformly chosen
//! non-empty subset of the chunks they contributed in earlier rounds and that
//! are still live.
//!
//! Randomness is split per user: user `u` draws its profile, chunks and request
//! decisions from one ChaCha stream of the master seed and its subset choices
//! from a second one. Adding users never changes the streams of existing users,
//! and changing `unlearn_probability` never changes the data that is added.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sample::Samples;
use crate::{seed, ChunkId, Label, RequestId, UserId};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
    #[error("malformed workload event on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("workload stream is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub n_users: u32,
    pub n_rounds: u32,
    pub unlearn_probability: f64,
    pub rng_seed: u64,
    pub label_space: u32,
    pub chunk_size_min: u32,
    pub chunk_size_max: u32,
    pub labels_per_user_min: u32,
    pub labels_per_user_max: u32,
    pub activity_probability: f64,
    /// Probability that a request removes only a fraction of each targeted chunk.
    pub partial_delete_probability: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_rounds: 10,
            unlearn_probability: 0.1,
            rng_seed: 42,
            label_space: 10,
            chunk_size_min: 50,
            chunk_size_max: 500,
            labels_per_user_min: 2,
            labels_per_user_max: 5,
            activity_probability: 1.0,
            partial_delete_probability: 0.0,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<(), WorkloadError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(WorkloadError::InvalidConfig(format!(
            "{name} must lie in [0, 1], got {p}"
        )))
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.to_string()));
        if self.n_users == 0 {
            return bad("n_users must be positive");
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be positive");
        }
        if self.label_space == 0 {
            return bad("label_space must be positive");
        }
        if self.chunk_size_min == 0 || self.chunk_size_min > self.chunk_size_max {
            return bad("chunk sizes must satisfy 0 < min <= max");
        }
        if self.labels_per_user_min == 0 || self.labels_per_user_min > self.labels_per_user_max {
            return bad("labels per user must satisfy 0 < min <= max");
        }
        check_probability("unlearn_probability", self.unlearn_probability)?;
        check_probability("activity_probability", self.activity_probability)?;
        check_probability("partial_delete_probability", self.partial_delete_probability)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user_id: UserId,
    /// Sorted, non-empty.
    pub label_subset: Vec<Label>,
    pub chunk_size_distribution: (u32, u32),
    pub activity_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataChunk {
    pub chunk_id: ChunkId,
    pub owner: UserId,
    pub round: u32,
    pub sample_count: u32,
    pub label_histogram: BTreeMap<Label, u32>,
}

impl DataChunk {
    /// Canonical replay order: (round, owner, chunk id).
    pub fn canonical_key(&self) -> (u32, UserId, ChunkId) {
        (self.round, self.owner, self.chunk_id)
    }

    pub fn samples_in(&self, labels: &std::ops::Range<Label>) -> u32 {
        self.label_histogram
            .range(labels.clone())
            .map(|(_, c)| *c)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Add,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRequest {
    pub request_id: RequestId,
    pub kind: RequestKind,
    pub owner: UserId,
    /// Sorted ascending.
    pub chunk_refs: Vec<ChunkId>,
    /// Fraction of each referenced chunk to remove, in (0, 1].
    pub sample_fraction: f64,
    pub arrival_round: u32,
}

/// Number of samples a deletion with `fraction` removes from a chunk of
/// `count` samples: nearest integer, at least one, at most all.
pub fn removed_samples(count: u32, fraction: f64) -> u32 {
    let k = (fraction * f64::from(count)).round() as u32;
    k.clamp(1, count)
}

/// Orders one round's requests first-come-first-served (by request id).
pub fn enqueue_fcfs(mut requests: Vec<UpdateRequest>) -> Vec<UpdateRequest> {
    requests.sort_by_key(|r| r.request_id);
    requests
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundBatch {
    pub round: u32,
    pub chunks: Vec<DataChunk>,
    /// Delete requests in FCFS order.
    pub requests: Vec<UpdateRequest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub rounds: Vec<RoundBatch>,
}

enum Event {
    Add(DataChunk),
    Delete(UpdateRequest),
}

/// Sample count and label histogram of one round's chunk.
type Contribution = (u32, BTreeMap<Label, u32>);

struct UserStream {
    profile: UserProfile,
    content: rand_chacha::ChaCha8Rng,
    deletes: rand_chacha::ChaCha8Rng,
    live: Vec<ChunkId>,
}

impl UserStream {
    fn new(config: &WorkloadConfig, user_id: UserId) -> Self {
        let mut content = seed::stream(config.rng_seed, seed::USER_CONTENT, u64::from(user_id));
        let deletes = seed::stream(config.rng_seed, seed::USER_DELETE, u64::from(user_id));
        let max_labels = config.labels_per_user_max.min(config.label_space);
        let min_labels = config.labels_per_user_min.min(max_labels);
        let n_labels = content.gen_range(min_labels..=max_labels) as usize;
        let all: Vec<Label> = (0..config.label_space).collect();
        let mut label_subset: Vec<Label> = all
            .choose_multiple(&mut content, n_labels)
            .copied()
            .collect();
        label_subset.sort_unstable();
        Self {
            profile: UserProfile {
                user_id,
                label_subset,
                chunk_size_distribution: (config.chunk_size_min, config.chunk_size_max),
                activity_probability: config.activity_probability,
            },
            content,
            deletes,
            live: Vec::new(),
        }
    }

    /// Draws this round's contribution. Consumes a fixed number of values from
    /// the content stream regardless of the outcome.
    fn draw_round(&mut self) -> (Option<Contribution>, f64) {
        let active: f64 = self.content.gen();
        let (lo, hi) = self.profile.chunk_size_distribution;
        let size = self.content.gen_range(lo..=hi);
        let k = self.profile.label_subset.len();
        let mut cuts: Vec<u32> = (0..k - 1).map(|_| self.content.gen_range(0..=size)).collect();
        let unlearn: f64 = self.content.gen();
        cuts.sort_unstable();
        cuts.push(size);
        let mut histogram = BTreeMap::new();
        let mut prev = 0;
        for (label, cut) in self.profile.label_subset.iter().zip(cuts) {
            if cut > prev {
                histogram.insert(*label, cut - prev);
            }
            prev = cut;
        }
        let chunk = (active < self.profile.activity_probability).then_some((size, histogram));
        (chunk, unlearn)
    }

    fn choose_subset(&mut self, partial_probability: f64) -> (Vec<ChunkId>, f64) {
        let subset = loop {
            let picked: Vec<ChunkId> = self
                .live
                .iter()
                .copied()
                .filter(|_| self.deletes.gen_bool(0.5))
                .collect();
            if !picked.is_empty() {
                break picked;
            }
        };
        let partial: f64 = self.deletes.gen();
        let fraction = if partial < partial_probability {
            1.0 - self.deletes.gen::<f64>()
        } else {
            1.0
        };
        (subset, fraction)
    }
}

/// Generates the full round-by-round stream for `config`.
pub fn generate_workload(config: &WorkloadConfig) -> Result<Workload, WorkloadError> {
    config.validate()?;
    let mut users: Vec<UserStream> = (0..config.n_users)
        .map(|u| UserStream::new(config, u))
        .collect();
    let mut next_chunk: ChunkId = 0;
    let mut next_request: RequestId = 0;
    let mut rounds = Vec::with_capacity(config.n_rounds as usize);
    for round in 1..=config.n_rounds {
        let mut chunks = Vec::new();
        let mut requests = Vec::new();
        let mut fresh = Vec::with_capacity(users.len());
        for user in users.iter_mut() {
            let (chunk, unlearn) = user.draw_round();
            if unlearn < config.unlearn_probability && !user.live.is_empty() {
                let (chunk_refs, sample_fraction) =
                    user.choose_subset(config.partial_delete_probability);
                user.live.retain(|c| !chunk_refs.contains(c));
                requests.push(UpdateRequest {
                    request_id: next_request,
                    kind: RequestKind::Delete,
                    owner: user.profile.user_id,
                    chunk_refs,
                    sample_fraction,
                    arrival_round: round,
                });
                next_request += 1;
            }
            if let Some((sample_count, label_histogram)) = chunk {
                chunks.push(DataChunk {
                    chunk_id: next_chunk,
                    owner: user.profile.user_id,
                    round,
                    sample_count,
                    label_histogram,
                });
                fresh.push((user.profile.user_id, next_chunk));
                next_chunk += 1;
            }
        }
        // New chunks become deletable from the next round on.
        for (user, chunk) in fresh {
            users[user as usize].live.push(chunk);
        }
        rounds.push(RoundBatch {
            round,
            chunks,
            requests: enqueue_fcfs(requests),
        });
    }
    Ok(Workload { rounds })
}

/// Profiles the generator assigns to each user.
pub fn user_profiles(config: &WorkloadConfig) -> Result<Vec<UserProfile>, WorkloadError> {
    config.validate()?;
    Ok((0..config.n_users)
        .map(|u| UserStream::new(config, u).profile)
        .collect())
}

impl Workload {
    pub fn delete_count(&self) -> usize {
        self.rounds.iter().map(|r| r.requests.len()).sum()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &DataChunk> {
        self.rounds.iter().flat_map(|r| r.chunks.iter())
    }

    /// Writes one JSON object per line: adds of a round first, then its deletes.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), WorkloadError> {
        for batch in &self.rounds {
            for chunk in &batch.chunks {
                serde_json::to_writer(&mut out, &EventRef::Add(chunk))
                    .map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            for request in &batch.requests {
                serde_json::to_writer(&mut out, &EventRef::Delete { round: batch.round, request })
                    .map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Reads a stream written by [`Workload::write_jsonl`] and checks that every
    /// delete references chunks added in strictly earlier rounds, at most once.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, WorkloadError> {
        let mut rounds: Vec<RoundBatch> = Vec::new();
        let mut added: BTreeMap<ChunkId, u32> = BTreeMap::new();
        let mut deleted = std::collections::BTreeSet::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| WorkloadError::Parse {
                line: idx + 1,
                message,
            };
            let raw: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let round = raw
                .get("round")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| parse_err("missing round".into()))? as u32;
            // Dispatch on the tag by hand: serde's buffered internal tagging
            // cannot parse the histogram's integer map keys.
            let event = match raw.get("type").and_then(|v| v.as_str()) {
                Some("add") => serde_json::from_value(raw).map(Event::Add),
                Some("delete") => serde_json::from_value(raw).map(Event::Delete),
                other => return Err(parse_err(format!("unknown event type {other:?}"))),
            }
            .map_err(|e| parse_err(e.to_string()))?;
            if rounds.last().is_none_or(|b| b.round < round) {
                rounds.push(RoundBatch {
                    round,
                    chunks: Vec::new(),
                    requests: Vec::new(),
                });
            } else if rounds.last().map(|b| b.round) != Some(round) {
                return Err(parse_err(format!("round {round} out of order")));
            }
            let batch = rounds.last_mut().expect("pushed above");
            match event {
                Event::Add(chunk) => {
                    if chunk.round != round {
                        return Err(parse_err("chunk round disagrees with event round".into()));
                    }
                    if chunk.sample_count == 0
                        || chunk.label_histogram.values().sum::<u32>() != chunk.sample_count
                    {
                        return Err(parse_err("label histogram does not sum to sample_count".into()));
                    }
                    if added.insert(chunk.chunk_id, round).is_some() {
                        return Err(parse_err(format!("duplicate chunk {}", chunk.chunk_id)));
                    }
                    batch.chunks.push(chunk);
                }
                Event::Delete(request) => {
                    if !(request.sample_fraction > 0.0 && request.sample_fraction <= 1.0) {
                        return Err(parse_err("sample_fraction outside (0, 1]".into()));
                    }
                    for c in &request.chunk_refs {
                        match added.get(c) {
                            Some(r) if *r < round => {}
                            _ => {
                                return Err(WorkloadError::Inconsistent(format!(
                                    "request {} references chunk {c} not added before round {round}",
                                    request.request_id
                                )))
                            }
                        }
                        if !deleted.insert(*c) {
                            return Err(WorkloadError::Inconsistent(format!(
                                "chunk {c} unlearned twice"
                            )));
                        }
                    }
                    batch.requests.push(request);
                }
            }
        }
        for batch in &mut rounds {
            batch.requests = enqueue_fcfs(std::mem::take(&mut batch.requests));
        }
        Ok(Self { rounds })
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum EventRef<'a> {
    Add(&'a DataChunk),
    Delete {
        round: u32,
        #[serde(flatten)]
        request: &'a UpdateRequest,
    },
}

/// Seeded synthetic feature generator. Label `c` has a fixed Gaussian mean;
/// each sample is that mean plus isotropic Gaussian noise.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    seed: u64,
    dims: usize,
    label_space: u32,
    noise: f64,
    means: Vec<f64>,
}

impl FeatureSpace {
    pub fn new(seed: u64, label_space: u32, dims: usize, spread: f64, noise: f64) -> Self {
        let mut rng = seed::stream(seed, seed::LABEL_MEANS, 0);
        let normal = Normal::new(0.0, spread).expect("spread must be finite and non-negative");
        let means = (0..label_space as usize * dims)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            seed,
            dims,
            label_space,
            noise,
            means,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn label_space(&self) -> u32 {
        self.label_space
    }

    pub fn label_mean(&self, label: Label) -> &[f64] {
        let i = label as usize * self.dims;
        &self.means[i..i + self.dims]
    }

    fn draw(&self, label: Label, rng: &mut impl Rng, normal: &Normal<f64>, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.label_mean(label).iter().map(|m| m + normal.sample(rng)));
    }

    /// Materializes a chunk's samples. The label order is a seeded shuffle of
    /// the histogram, so a retained prefix is a label-mixed subset.
    pub fn chunk_samples(&self, chunk: &DataChunk) -> Samples {
        let mut rng = seed::stream(self.seed, seed::CHUNK_SAMPLES, chunk.chunk_id);
        let mut labels: Vec<Label> = chunk
            .label_histogram
            .iter()
            .flat_map(|(l, c)| std::iter::repeat_n(*l, *c as usize))
            .collect();
        labels.shuffle(&mut rng);
        let normal = Normal::new(0.0, self.noise).expect("noise must be finite");
        let mut samples = Samples::with_capacity(self.dims, labels.len());
        let mut buf = Vec::with_capacity(self.dims);
        for label in labels {
            self.draw(label, &mut rng, &normal, &mut buf);
            samples.push(label, &buf);
        }
        samples
    }

    /// A held-out test set with uniformly drawn labels.
    pub fn test_set(&self, n: usize) -> Samples {
        let mut rng = seed::stream(self.seed, seed::TEST_SET, 0);
        let normal = Normal::new(0.0, self.noise).expect("noise must be finite");
        let mut samples = Samples::with_capacity(self.dims, n);
        let mut buf = Vec::with_capacity(self.dims);
        for _ in 0..n {
            let label = rng.gen_range(0..self.label_space);
            self.draw(label, &mut rng, &normal, &mut buf);
            samples.push(label, &buf);
        }
        samples
    }
}
