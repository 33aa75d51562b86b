//! Decaying shard-count schedule.
//!
//! The shard count in round `t` is `S_t = γ·S + (1 − γ)·S·e^(−p·t)`: it starts
//! near `S`, decays exponentially at rate `p` and levels off at the floor `γ·S`.
//! Rounds are 1-based; `t = 0` evaluates to `S` exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("base shard count must be at least 1")]
    ZeroShards,
    #[error("floor fraction must lie in [0, 1], got {0}")]
    FloorFraction(f64),
    #[error("decay rate must be finite and non-negative, got {0}")]
    DecayRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShardControllerConfig {
    pub base_shards: u32,
    pub floor_fraction: f64,
    pub decay_rate: f64,
}

impl ShardControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.base_shards == 0 {
            return Err(ControllerError::ZeroShards);
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return Err(ControllerError::FloorFraction(self.floor_fraction));
        }
        if !(self.decay_rate.is_finite() && self.decay_rate >= 0.0) {
            return Err(ControllerError::DecayRate(self.decay_rate));
        }
        Ok(())
    }
}

/// A validated schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShardController {
    config: ShardControllerConfig,
}

impl ShardController {
    pub fn new(config: ShardControllerConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self { config })
    }

    /// A controller that always returns `shards`.
    pub fn fixed(shards: u32) -> Result<Self, ControllerError> {
        Self::new(ShardControllerConfig {
            base_shards: shards,
            floor_fraction: 1.0,
            decay_rate: 0.0,
        })
    }

    pub fn config(&self) -> &ShardControllerConfig {
        &self.config
    }

    /// Unrounded shard count for round `t`.
    pub fn real_shards_at(&self, t: u32) -> f64 {
        let s = f64::from(self.config.base_shards);
        let g = self.config.floor_fraction;
        g * s + (1.0 - g) * s * (-self.config.decay_rate * f64::from(t)).exp()
    }

    /// Shard count for round `t`, rounded half away from zero, never below 1.
    pub fn shards_at(&self, t: u32) -> u32 {
        (self.real_shards_at(t).round() as u32).max(1)
    }
}
