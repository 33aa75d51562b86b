use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{LearnerError, LearnerState};
use crate::sample::Samples;

/// How sub-models are pruned after training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PruningMode {
    None,
    /// Prune-and-retrain in `steps` equal increments up to `rate`.
    Iterative { rate: f64, steps: u32 },
    OneShot { rate: f64 },
}

impl PruningMode {
    pub fn rate(&self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Iterative { rate, .. } | Self::OneShot { rate } => *rate,
        }
    }

    /// Applies the mode. `retrain` must re-accumulate the state's statistics
    /// from the data the model was trained on.
    pub fn apply<F>(&self, state: &LearnerState, retrain: F) -> Result<LearnerState, LearnerError>
    where
        F: FnMut(&mut LearnerState) -> Result<(), LearnerError>,
    {
        match *self {
            Self::None => Ok(state.clone()),
            Self::Iterative { rate, steps } => prune_with(state, rate, steps, retrain),
            Self::OneShot { rate } => prune_with(state, rate, 1, retrain),
        }
    }
}

/// Magnitude pruning in `steps` sub-prunes. Sub-prune `i` deletes the
/// smallest-magnitude retained parameters until `round(rate * n * i / steps)`
/// of the `n` original parameters are gone, then rebuilds the statistics of
/// the survivors with `retrain`. Sub-prunes with nothing left to delete leave
/// the state untouched.
pub fn prune_with<F>(
    state: &LearnerState,
    rate: f64,
    steps: u32,
    mut retrain: F,
) -> Result<LearnerState, LearnerError>
where
    F: FnMut(&mut LearnerState) -> Result<(), LearnerError>,
{
    if !(0.0..1.0).contains(&rate) {
        return Err(LearnerError::PruneRate(rate));
    }
    if steps == 0 {
        return Err(LearnerError::ZeroSteps);
    }
    let n = state.full_parameter_count();
    if n == 0 {
        return Err(LearnerError::NoParameters);
    }
    let mut next = state.clone();
    for i in 1..=steps {
        let target = (rate * n as f64 * f64::from(i) / f64::from(steps)).round() as usize;
        let already = next.pruned_mask().len();
        if target <= already {
            continue;
        }
        let params = next.parameters();
        let mut order: Vec<(f64, usize)> = next
            .retained_indices()
            .iter()
            .zip(&params)
            .map(|(idx, p)| (p.abs(), *idx))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let doomed: BTreeSet<usize> = order
            .into_iter()
            .take(target - already)
            .map(|(_, idx)| idx)
            .collect();
        next.remove_parameters(&doomed);
        next.reset_statistics();
        retrain(&mut next)?;
    }
    Ok(next)
}

fn retrain_on<'a>(chunks: &'a [&'a Samples]) -> impl FnMut(&mut LearnerState) -> Result<(), LearnerError> + 'a {
    move |st| {
        for c in chunks {
            if c.dims() != st.dims() {
                return Err(LearnerError::DimensionMismatch {
                    expected: st.dims(),
                    found: c.dims(),
                });
            }
            st.train_samples(c.iter())?;
        }
        Ok(())
    }
}

/// Iterative prune-and-retrain to `rate` in `steps` sub-prunes, retraining the
/// survivors on `retrain_chunks` after each.
pub fn prune_iterative(
    state: &LearnerState,
    rate: f64,
    steps: u32,
    retrain_chunks: &[&Samples],
) -> Result<LearnerState, LearnerError> {
    prune_with(state, rate, steps, retrain_on(retrain_chunks))
}

/// One-shot magnitude pruning: [`prune_iterative`] with a single step.
pub fn prune_oneshot(
    state: &LearnerState,
    rate: f64,
    retrain_chunks: &[&Samples],
) -> Result<LearnerState, LearnerError> {
    prune_iterative(state, rate, 1, retrain_chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_rate_is_identity() {
        let st = LearnerState::from_parameters(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let out = prune_iterative(&st, 0.0, 3, &[]).unwrap();
        assert!(out.bit_identical(&st));
    }

    #[test]
    fn removes_smallest_magnitudes() {
        let params = [0.1, -3.0, 2.0, 0.05];
        let st = LearnerState::from_parameters(1, 4, &params);
        let out = prune_oneshot(&st, 0.5, &[]).unwrap();
        let removed: Vec<usize> = out.pruned_mask().iter().copied().collect();
        assert_eq!(removed, vec![0, 3]);
        assert_eq!(out.parameter_count(), 2);

        // Brute force over every 2-subset: the removed pair minimizes the
        // total magnitude removed.
        let mut best = (f64::INFINITY, (0, 0));
        for i in 0..4 {
            for j in i + 1..4 {
                let m = params[i].abs() + params[j].abs();
                if m < best.0 {
                    best = (m, (i, j));
                }
            }
        }
        assert_eq!(best.1, (0, 3));
    }

    #[test]
    fn survivors_recomputed_on_retrain_data() {
        let st = LearnerState::from_parameters(1, 4, &[0.1, -3.0, 2.0, 0.05]);
        let mut data = Samples::new(4);
        data.push(0, &[1.0, 2.0, 3.0, 4.0]);
        data.push(0, &[3.0, 4.0, 5.0, 6.0]);
        let out = prune_oneshot(&st, 0.5, &[&data]).unwrap();
        assert_eq!(out.retained_indices(), &[1, 2]);
        assert_eq!(out.parameters(), vec![3.0, 4.0]);
        assert_eq!(out.trained_sample_count(), 2);
    }

    #[test]
    fn rejects_bad_arguments() {
        let st = LearnerState::from_parameters(1, 2, &[1.0, 2.0]);
        assert_eq!(prune_iterative(&st, 1.0, 1, &[]).unwrap_err(), LearnerError::PruneRate(1.0));
        assert_eq!(prune_iterative(&st, 0.5, 0, &[]).unwrap_err(), LearnerError::ZeroSteps);
        let empty = LearnerState::new(0, 3);
        assert_eq!(prune_oneshot(&empty, 0.5, &[]).unwrap_err(), LearnerError::NoParameters);
    }

    #[test]
    fn mode_dispatch() {
        let st = LearnerState::from_parameters(2, 5, &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10.]);
        let none = PruningMode::None.apply(&st, |_| Ok(())).unwrap();
        assert!(none.bit_identical(&st));
        let one = PruningMode::OneShot { rate: 0.7 }.apply(&st, |_| Ok(())).unwrap();
        assert_eq!(one.parameter_count(), 3);
        let it = PruningMode::Iterative { rate: 0.7, steps: 4 }.apply(&st, |_| Ok(())).unwrap();
        assert_eq!(it.parameter_count(), 3);
    }

    proptest! {
        #[test]
        fn removed_fraction_hits_target(
            params in prop::collection::vec(-5.0f64..5.0, 1..60),
            rate in 0.0f64..0.99,
            steps in 1u32..6,
        ) {
            let n = params.len();
            let st = LearnerState::from_parameters(1, n, &params);
            for s in [1, steps] {
                let out = prune_iterative(&st, rate, s, &[]).unwrap();
                let removed = out.pruned_mask().len() as f64;
                prop_assert!((removed - rate * n as f64).abs() <= 1.0);
                prop_assert_eq!(out.parameter_count() + out.pruned_mask().len(), n);
            }
        }

        #[test]
        fn higher_rate_never_keeps_more(
            params in prop::collection::vec(-5.0f64..5.0, 1..40),
            a in 0.0f64..0.99,
            b in 0.0f64..0.99,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let st = LearnerState::from_parameters(1, params.len(), &params);
            let keep_lo = prune_oneshot(&st, lo, &[]).unwrap().parameter_count();
            let keep_hi = prune_oneshot(&st, hi, &[]).unwrap().parameter_count();
            prop_assert!(keep_hi <= keep_lo);
        }
    }
}
