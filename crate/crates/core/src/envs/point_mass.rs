use rand::Rng as _;

use super::{Dynamics, StepOutcome};
use crate::rng::Rng;

/// Double integrator on the plane steering toward the origin.
///
/// `v' = clamp(v + dt * a, -max_speed, max_speed)`, `p' = p + dt * v'`.
/// Reward is `-|p'|`, plus `goal_bonus` on the step that brings `|p'|` within
/// `goal_radius`, which also terminates the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub dt: f64,
    pub max_speed: f64,
    pub goal_radius: f64,
    pub goal_bonus: f64,
    pub horizon: usize,
    /// Proportional and derivative gains of the scripted expert.
    pub expert_gains: (f64, f64),
}

impl PointMass {
    pub const NAME: &'static str = "point-mass";
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass {
            dt: 0.1,
            max_speed: 1.0,
            goal_radius: 0.1,
            goal_bonus: 10.0,
            horizon: 100,
            expert_gains: (2.0, 2.5),
        }
    }
}

impl Dynamics for PointMass {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        loop {
            let x: f64 = rng.random_range(-1.0..1.0);
            let y: f64 = rng.random_range(-1.0..1.0);
            if x.hypot(y) > 3.0 * self.goal_radius {
                return vec![x, y, 0.0, 0.0];
            }
        }
    }

    fn transition(&self, state: &[f64], action: &[f64]) -> StepOutcome {
        let vx = (state[2] + self.dt * action[0]).clamp(-self.max_speed, self.max_speed);
        let vy = (state[3] + self.dt * action[1]).clamp(-self.max_speed, self.max_speed);
        let px = state[0] + self.dt * vx;
        let py = state[1] + self.dt * vy;
        let dist = px.hypot(py);
        let arrived = dist <= self.goal_radius;
        StepOutcome {
            next_state: vec![px, py, vx, vy],
            reward: if arrived {
                self.goal_bonus - dist
            } else {
                -dist
            },
            done: arrived,
        }
    }

    /// Every reward is at most zero except the arrival bonus, collected once.
    fn value_upper_bound(&self, _state: &[f64], _gamma: f64) -> f64 {
        self.goal_bonus
    }

    fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        let (kp, kd) = self.expert_gains;
        vec![
            (-kp * state[0] - kd * state[2]).clamp(-1.0, 1.0),
            (-kp * state[1] - kd * state[3]).clamp(-1.0, 1.0),
        ]
    }
}
