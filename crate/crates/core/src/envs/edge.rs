use rand::Rng as _;

use super::{Dynamics, StepOutcome};
use crate::rng::Rng;

/// Slide along an edge for as long and as fast as the grip allows.
///
/// State is `[progress, elapsed]` with `elapsed = t / horizon`. The single
/// action is the sliding speed. While `speed <= grip_limit` the reward equals
/// the speed and progress advances by `speed / horizon` (never below zero).
/// A faster action loses the edge: zero reward and a terminal transition.
/// The episode also terminates when `elapsed` reaches one.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFollowing {
    pub grip_limit: f64,
    pub expert_speed: f64,
    pub horizon: usize,
}

impl EdgeFollowing {
    pub const NAME: &'static str = "edge-following";

    fn step_index(&self, elapsed: f64) -> usize {
        (elapsed * self.horizon as f64).round().max(0.0) as usize
    }
}

impl Default for EdgeFollowing {
    fn default() -> Self {
        EdgeFollowing {
            grip_limit: 0.75,
            expert_speed: 0.5,
            horizon: 50,
        }
    }
}

impl Dynamics for EdgeFollowing {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.random_range(0.0..0.1), 0.0]
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> StepOutcome {
        let speed = action[0];
        let t = self.step_index(state[1]) + 1;
        let elapsed = t as f64 / self.horizon as f64;
        let timed_out = t >= self.horizon;
        if speed > self.grip_limit {
            return StepOutcome {
                next_state: vec![state[0], elapsed],
                reward: 0.0,
                done: true,
            };
        }
        let progress = (state[0] + speed / self.horizon as f64).max(0.0);
        StepOutcome {
            next_state: vec![progress, elapsed],
            reward: speed,
            done: timed_out,
        }
    }

    /// Sliding at exactly the grip limit for every remaining step.
    fn value_upper_bound(&self, state: &[f64], gamma: f64) -> f64 {
        let remaining = self.horizon.saturating_sub(self.step_index(state[1]));
        let steps: f64 = (0..remaining).map(|k| gamma.powi(k as i32)).sum();
        self.grip_limit * steps
    }

    fn expert_action(&self, _state: &[f64]) -> Vec<f64> {
        vec![self.expert_speed]
    }
}
