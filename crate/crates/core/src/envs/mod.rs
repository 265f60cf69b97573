//! Toy continuous-control environments, offline datasets and their generators.
//!
//! Two environments ship:
//!
//! * [`PointMass`]: 2-d goal reaching. State `[px, py, vx, vy]`, action is a
//!   2-d acceleration, reward is minus the distance to the goal at the origin
//!   plus a bonus on arrival (which terminates the episode). Horizon 100.
//!   Reaching the horizon is a timeout, not a terminal transition.
//! * [`EdgeFollowing`]: slide along an edge as fast as possible without losing
//!   it. State `[progress, elapsed_fraction]`, 1-d action is the sliding
//!   speed, reward equals the speed while the edge is held. Speeds above the
//!   grip limit lose the edge: zero reward and an absorbing failure. The
//!   elapsed fraction is part of the state, so the horizon (50) is a genuine
//!   terminal transition.
//!
//! All actions live in `[-1, 1]^d`. Out-of-range actions are clipped and
//! counted (see [`ToyEnv::clipped_actions`]).

mod dataset;
mod edge;
pub mod generate;
pub mod online;
mod point_mass;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub use dataset::{Batch, DatasetMetadata, GeneratorKind, Transition, TransitionDataset};
pub use edge::EdgeFollowing;
pub use point_mass::PointMass;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Deterministic dynamics shared by the toy tasks.
pub trait Dynamics: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut Rng) -> Vec<f64>;
    /// `action` is already inside `[-1, 1]^d`.
    fn transition(&self, state: &[f64], action: &[f64]) -> StepOutcome;
    /// Largest discounted return obtainable from `state`.
    fn value_upper_bound(&self, state: &[f64], gamma: f64) -> f64;
    /// Hand-written controller used as the expert behavior.
    fn expert_action(&self, state: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
enum Kind {
    PointMass(PointMass),
    EdgeFollowing(EdgeFollowing),
}

/// One of the shipped environments plus a counter of clipped actions.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    kind: Kind,
    clipped: Arc<AtomicU64>,
}

impl ToyEnv {
    pub const NAMES: [&'static str; 2] = [PointMass::NAME, EdgeFollowing::NAME];

    pub fn point_mass() -> Self {
        Self::wrap(Kind::PointMass(PointMass::default()))
    }

    pub fn edge_following() -> Self {
        Self::wrap(Kind::EdgeFollowing(EdgeFollowing::default()))
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            PointMass::NAME => Ok(Self::point_mass()),
            EdgeFollowing::NAME => Ok(Self::edge_following()),
            _ => Err(Error::Unknown {
                what: "environment",
                name: name.to_string(),
            }),
        }
    }

    fn wrap(kind: Kind) -> Self {
        ToyEnv {
            kind,
            clipped: Arc::new(AtomicU64::new(0)),
        }
    }

    fn dynamics(&self) -> &dyn Dynamics {
        match &self.kind {
            Kind::PointMass(env) => env,
            Kind::EdgeFollowing(env) => env,
        }
    }

    pub fn name(&self) -> &'static str {
        self.dynamics().name()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics().state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.dynamics().action_dim()
    }

    pub fn horizon(&self) -> usize {
        self.dynamics().horizon()
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        self.dynamics().reset(rng)
    }

    /// Advances one step. Actions outside `[-1, 1]` are clipped and counted.
    pub fn step(&self, state: &[f64], action: &[f64]) -> Result<StepOutcome> {
        if state.len() != self.state_dim() {
            return Err(Error::shape(
                "environment state",
                self.state_dim(),
                state.len(),
            ));
        }
        if action.len() != self.action_dim() {
            return Err(Error::shape(
                "environment action",
                self.action_dim(),
                action.len(),
            ));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::non_finite("environment action"));
        }
        let clipped: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        if clipped.as_slice() != action {
            self.clipped.fetch_add(1, Ordering::Relaxed);
        }
        Ok(self.dynamics().transition(state, &clipped))
    }

    /// Number of out-of-range actions clipped since construction (shared by clones).
    pub fn clipped_actions(&self) -> u64 {
        self.clipped.load(Ordering::Relaxed)
    }

    pub fn value_upper_bound(&self, state: &[f64], gamma: f64) -> f64 {
        self.dynamics().value_upper_bound(state, gamma)
    }

    pub fn expert_action(&self, state: &[f64]) -> Vec<f64> {
        self.dynamics().expert_action(state)
    }

    /// Uniform action in `[-scale, scale]^d`.
    pub fn random_action(&self, rng: &mut Rng, scale: f64) -> Vec<f64> {
        (0..self.action_dim())
            .map(|_| rng.random_range(-scale..=scale))
            .collect()
    }
}

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

impl<F> Policy for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self(state))
    }
}

/// The scripted expert controller of an environment.
pub struct ExpertPolicy<'a>(pub &'a ToyEnv);

impl Policy for ExpertPolicy<'_> {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.expert_action(state))
    }
}

/// One finished episode. `transitions.last().done` is false on a timeout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
}

impl Episode {
    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Runs one episode from a freshly reset state until termination or the horizon.
pub fn rollout<P: Policy + ?Sized>(env: &ToyEnv, policy: &P, rng: &mut Rng) -> Result<Episode> {
    let mut state = env.reset(rng);
    let mut transitions = Vec::with_capacity(env.horizon());
    for _ in 0..env.horizon() {
        let action = policy.act(&state)?;
        let action: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let out = env.step(&state, &action)?;
        let done = out.done;
        transitions.push(Transition {
            state: std::mem::replace(&mut state, out.next_state.clone()),
            action,
            reward: out.reward,
            next_state: out.next_state,
            done,
        });
        if done {
            break;
        }
    }
    Ok(Episode { transitions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalSummary {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        EvalSummary {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

/// Undiscounted returns of `episodes` deterministic rollouts.
///
/// Episode `i` resets from its own stream keyed by `(seed, i)`, so two
/// policies evaluated with the same seed face the same start states.
pub fn evaluate<P: Policy + ?Sized>(
    env: &ToyEnv,
    policy: &P,
    episodes: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let returns = (0..episodes)
        .map(|i| {
            let mut rng = rng::indexed_stream(seed, rng::streams::EVALUATION, i as u64);
            rollout(env, policy, &mut rng).map(|ep| ep.undiscounted_return())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_returns(returns))
}

/// Returns of a uniform-random policy and of the scripted expert, the two
/// anchors of normalized scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScores {
    pub random: f64,
    pub expert: f64,
}

/// The versioned reference file shipped in `data/reference_scores.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFile {
    pub version: u32,
    pub episodes: usize,
    pub seed: u64,
    pub envs: BTreeMap<String, ReferenceScores>,
}

const BUNDLED_REFERENCES: &str = include_str!("../../data/reference_scores.json");

impl ReferenceFile {
    pub fn bundled() -> Result<Self> {
        Ok(serde_json::from_str(BUNDLED_REFERENCES)?)
    }

    /// Recomputes every entry from scratch.
    pub fn compute(episodes: usize, seed: u64) -> Result<Self> {
        let envs = ToyEnv::NAMES
            .iter()
            .map(|name| {
                let env = ToyEnv::by_name(name)?;
                Ok((
                    name.to_string(),
                    ReferenceScores::compute(&env, episodes, seed)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(ReferenceFile {
            version: 1,
            episodes,
            seed,
            envs,
        })
    }
}

impl ReferenceScores {
    /// Mean undiscounted returns over `episodes` rollouts each.
    pub fn compute(env: &ToyEnv, episodes: usize, seed: u64) -> Result<Self> {
        let expert = evaluate(env, &ExpertPolicy(env), episodes, seed)?.mean;
        let mut total = 0.0;
        for i in 0..episodes {
            let action_rng = RefCell::new(rng::indexed_stream(
                seed,
                rng::streams::EXPLORATION,
                i as u64,
            ));
            let random = |_: &[f64]| env.random_action(&mut action_rng.borrow_mut(), 1.0);
            let mut reset = rng::indexed_stream(seed, rng::streams::EVALUATION, i as u64);
            total += rollout(env, &random, &mut reset)?.undiscounted_return();
        }
        Ok(ReferenceScores {
            random: total / episodes.max(1) as f64,
            expert,
        })
    }

    /// The bundled references for `env`.
    pub fn for_env(env: &ToyEnv) -> Result<Self> {
        ReferenceFile::bundled()?
            .envs
            .get(env.name())
            .copied()
            .ok_or_else(|| Error::Unknown {
                what: "reference scores for environment",
                name: env.name().to_string(),
            })
    }

    pub fn normalize(&self, raw: f64) -> Result<f64> {
        crate::experiment::normalize_score(raw, self.random, self.expert)
    }
}
