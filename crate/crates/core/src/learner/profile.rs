use serde::{Deserialize, Serialize};

use super::LearnerError;

/// Measured model sizes under magnitude pruning (CIFAR-10 / CIFAR-100 backbones).
pub const MODEL_SIZES_CSV: &str = include_str!("../../data/model_sizes.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub rate: f64,
    pub params_m: f64,
    pub file_mb: f64,
    /// Metadata only; simulator accuracy comes from the toy learner.
    pub accuracy_pruned: f64,
    pub accuracy_degradation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSizeProfile {
    pub name: String,
    pub dataset: String,
    pub base_params_m: f64,
    pub base_file_mb: f64,
    pub base_accuracy: f64,
    /// Sorted by rate, strictly inside (0, 1).
    pub prune_curve: Vec<ProfilePoint>,
}

const MAX_TABULATED: f64 = 0.9;
const RATE_EPS: f64 = 1e-9;

impl ModelSizeProfile {
    fn knots(&self) -> Vec<(f64, f64, f64)> {
        std::iter::once((0.0, self.base_params_m, self.base_file_mb))
            .chain(self.prune_curve.iter().map(|p| (p.rate, p.params_m, p.file_mb)))
            .collect()
    }

    /// `(params_millions, file_mb)` at pruning rate `rate`: tabulated values at
    /// table points, linear interpolation in between.
    pub fn pruned_size(&self, rate: f64) -> Result<(f64, f64), LearnerError> {
        if !(-RATE_EPS..=MAX_TABULATED + RATE_EPS).contains(&rate) {
            return Err(LearnerError::OutsideTable(rate));
        }
        let knots = self.knots();
        if let Some(k) = knots.iter().find(|k| (k.0 - rate).abs() < RATE_EPS) {
            return Ok((k.1, k.2));
        }
        let hi = knots
            .iter()
            .position(|k| k.0 > rate)
            .ok_or(LearnerError::OutsideTable(rate))?;
        let (a, b) = (knots[hi - 1], knots[hi]);
        let w = (rate - a.0) / (b.0 - a.0);
        Ok((a.1 + w * (b.1 - a.1), a.2 + w * (b.2 - a.2)))
    }

    /// Like [`Self::pruned_size`], but rates above the table are extrapolated
    /// along its last segment (floored at 1% of the base size).
    pub fn extrapolated_size(&self, rate: f64) -> Result<(f64, f64), LearnerError> {
        if rate <= MAX_TABULATED + RATE_EPS {
            return self.pruned_size(rate);
        }
        if rate >= 1.0 {
            return Err(LearnerError::PruneRate(rate));
        }
        let knots = self.knots();
        let (a, b) = (knots[knots.len() - 2], knots[knots.len() - 1]);
        let w = (rate - a.0) / (b.0 - a.0);
        let lerp = |x: f64, y: f64, base: f64| (x + w * (y - x)).max(base * 0.01);
        Ok((
            lerp(a.1, b.1, self.base_params_m),
            lerp(a.2, b.2, self.base_file_mb),
        ))
    }
}

fn parse_table(text: &str) -> Vec<ModelSizeProfile> {
    let mut profiles: Vec<ModelSizeProfile> = Vec::new();
    let mut lines = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    lines.next().expect("table header");
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> f64 { f[i].parse().expect("numeric table cell") };
        let point = ProfilePoint {
            rate: num(2) / 100.0,
            params_m: num(7),
            file_mb: num(10),
            accuracy_pruned: num(4),
            accuracy_degradation_pct: num(5),
        };
        match profiles.iter_mut().find(|p| p.name == f[0]) {
            Some(p) => p.prune_curve.push(point),
            None => profiles.push(ModelSizeProfile {
                name: f[0].to_string(),
                dataset: f[1].to_string(),
                base_params_m: num(6),
                base_file_mb: num(9),
                base_accuracy: num(3),
                prune_curve: vec![point],
            }),
        }
    }
    for p in &mut profiles {
        p.prune_curve.sort_by(|a, b| a.rate.total_cmp(&b.rate));
    }
    profiles
}

/// The four tabulated backbones: vgg16, resnet34, densenet121, mobilenetv2.
pub fn model_size_profiles() -> Vec<ModelSizeProfile> {
    parse_table(MODEL_SIZES_CSV)
}

/// Size profile of the toy learner itself: 8 bytes per parameter, shrinking
/// linearly with the pruning rate.
pub fn toy_profile(labels: usize, dims: usize) -> ModelSizeProfile {
    let n = (labels * dims) as f64;
    let mb = |params: f64| params * 8.0 / (1024.0 * 1024.0);
    ModelSizeProfile {
        name: "toy".into(),
        dataset: "synthetic".into(),
        base_params_m: n / 1e6,
        base_file_mb: mb(n),
        base_accuracy: 0.0,
        prune_curve: [0.1, 0.3, 0.5, 0.7, 0.9]
            .iter()
            .map(|&rate| {
                let kept = (n * (1.0 - rate)).round();
                ProfilePoint {
                    rate,
                    params_m: kept / 1e6,
                    file_mb: mb(kept),
                    accuracy_pruned: 0.0,
                    accuracy_degradation_pct: 0.0,
                }
            })
            .collect(),
    }
}

/// Looks a profile up by name (`toy` needs the learner shape).
pub fn profile_by_name(
    name: &str,
    labels: usize,
    dims: usize,
) -> Result<ModelSizeProfile, LearnerError> {
    if name == "toy" {
        return Ok(toy_profile(labels, dims));
    }
    model_size_profiles()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| LearnerError::UnknownProfile(name.to_string()))
}
