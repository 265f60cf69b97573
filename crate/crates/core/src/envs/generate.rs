//! Offline dataset generators.
//!
//! | kind | behavior |
//! |------|----------|
//! | `random` | uniform actions on `[-s, s]^d`, `s = random_action_scale` (1 by default) |
//! | `medium` | early-stopped online policy plus Gaussian noise |
//! | `medium_replay` | the online run's replay buffer up to the stopping point |
//! | `medium_expert` | `medium` followed by `expert`, half the transitions each |
//! | `expert` | the scripted expert plus Gaussian noise |
//! | `custom` | a configured synthetic behavior (default: bimodal actions) |
//!
//! Rollout-based kinds collect whole episodes until `size` transitions are
//! gathered; the final episode may be cut short. The tuple
//! `(env, kind, size, seed, config)` fixes the dataset byte for byte.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::online::{train_online, OnlineConfig};
use super::{GeneratorKind, Policy, ReferenceScores, ToyEnv, Transition, TransitionDataset};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

/// Synthetic behaviors for the `custom` kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case", deny_unknown_fields)]
pub enum CustomBehavior {
    /// Each step picks one of `centers` uniformly (the same center on every
    /// action dimension) and adds `N(0, noise^2)`, independent of the state.
    Bimodal { centers: Vec<f64>, noise: f64 },
}

impl Default for CustomBehavior {
    fn default() -> Self {
        CustomBehavior::Bimodal {
            centers: vec![-0.5, 0.5],
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub random_action_scale: f64,
    pub medium_noise: f64,
    pub expert_noise: f64,
    pub online: OnlineConfig,
    pub custom: CustomBehavior,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            random_action_scale: 1.0,
            medium_noise: 0.1,
            expert_noise: 0.05,
            online: OnlineConfig::default(),
            custom: CustomBehavior::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        if !(self.random_action_scale > 0.0 && self.random_action_scale <= 1.0) {
            return Err(Error::invalid(
                field("random_action_scale"),
                "must lie in (0, 1]",
            ));
        }
        for (name, v) in [
            ("medium_noise", self.medium_noise),
            ("expert_noise", self.expert_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(field(name), "must be >= 0"));
            }
        }
        match &self.custom {
            CustomBehavior::Bimodal { centers, noise } => {
                if centers.is_empty() || centers.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                    return Err(Error::invalid(
                        field("custom.centers"),
                        "need centers inside [-1, 1]",
                    ));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::invalid(field("custom.noise"), "must be >= 0"));
                }
            }
        }
        self.online.validate(&field("online."))
    }
}

/// [`generate_with`] under the default [`GeneratorConfig`].
pub fn generate_dataset(
    env: &ToyEnv,
    kind: GeneratorKind,
    size: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    generate_with(env, kind, size, seed, &GeneratorConfig::default())
}

pub fn generate_with(
    env: &ToyEnv,
    kind: GeneratorKind,
    size: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<TransitionDataset> {
    if size == 0 {
        return Err(Error::invalid("size", "must be at least 1"));
    }
    config.validate("generator.")?;
    match kind {
        GeneratorKind::Random => {
            let scale = config.random_action_scale;
            let t = collect(env, size, seed, 0, |_, rng| {
                Ok(env.random_action(rng, scale))
            })?;
            Ok(
                TransitionDataset::from_transitions(env.name(), kind, seed, t)?
                    .with_param("random_action_scale", scale),
            )
        }
        GeneratorKind::Expert => {
            let t = expert_transitions(env, size, seed, 0, config.expert_noise)?;
            Ok(
                TransitionDataset::from_transitions(env.name(), kind, seed, t)?
                    .with_param("expert_noise", config.expert_noise),
            )
        }
        GeneratorKind::Medium => {
            let (t, score) = medium_transitions(env, size, seed, config)?;
            Ok(
                TransitionDataset::from_transitions(env.name(), kind, seed, t)?
                    .with_param("medium_noise", config.medium_noise)
                    .with_param("medium_score", score),
            )
        }
        GeneratorKind::MediumReplay => {
            let refs = ReferenceScores::for_env(env)?;
            let run = train_online(env, &config.online, &refs, seed)?;
            let mut buffer = run.buffer;
            buffer.truncate(size);
            Ok(
                TransitionDataset::from_transitions(env.name(), kind, seed, buffer)?
                    .with_param("medium_score", run.normalized_score)
                    .with_param("online_env_steps", run.env_steps as f64),
            )
        }
        GeneratorKind::MediumExpert => {
            let medium_size = size.div_ceil(2);
            let expert_size = size - medium_size;
            let (mut t, score) = medium_transitions(env, medium_size, seed, config)?;
            if expert_size > 0 {
                t.extend(expert_transitions(
                    env,
                    expert_size,
                    seed,
                    1,
                    config.expert_noise,
                )?);
            }
            Ok(
                TransitionDataset::from_transitions(env.name(), kind, seed, t)?
                    .with_param("medium_size", medium_size as f64)
                    .with_param("expert_size", expert_size as f64)
                    .with_param("medium_score", score),
            )
        }
        GeneratorKind::Custom => match &config.custom {
            CustomBehavior::Bimodal { centers, noise } => {
                let normal = normal(*noise)?;
                let t = collect(env, size, seed, 0, |_, rng| {
                    let c = centers[rng.random_range(0..centers.len())];
                    Ok((0..env.action_dim())
                        .map(|_| (c + normal.sample(rng)).clamp(-1.0, 1.0))
                        .collect())
                })?;
                Ok(
                    TransitionDataset::from_transitions(env.name(), kind, seed, t)?
                        .with_param("bimodal_noise", *noise),
                )
            }
        },
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::invalid("noise", e.to_string()))
}

fn expert_transitions(
    env: &ToyEnv,
    size: usize,
    seed: u64,
    part: u64,
    noise: f64,
) -> Result<Vec<Transition>> {
    noisy_policy_transitions(env, &super::ExpertPolicy(env), size, seed, part, noise)
}

fn medium_transitions(
    env: &ToyEnv,
    size: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<(Vec<Transition>, f64)> {
    let refs = ReferenceScores::for_env(env)?;
    let run = train_online(env, &config.online, &refs, seed)?;
    let t = noisy_policy_transitions(env, &run.policy, size, seed, 0, config.medium_noise)?;
    Ok((t, run.normalized_score))
}

fn noisy_policy_transitions<P: Policy + ?Sized>(
    env: &ToyEnv,
    policy: &P,
    size: usize,
    seed: u64,
    part: u64,
    noise: f64,
) -> Result<Vec<Transition>> {
    let normal = normal(noise)?;
    collect(env, size, seed, part, |state, rng| {
        Ok(policy
            .act(state)?
            .into_iter()
            .map(|a| (a + normal.sample(rng)).clamp(-1.0, 1.0))
            .collect())
    })
}

/// Rolls out `behavior` from fresh resets until `size` transitions exist.
///
/// `part` separates the random streams of datasets that are later concatenated.
fn collect<F>(
    env: &ToyEnv,
    size: usize,
    seed: u64,
    part: u64,
    mut behavior: F,
) -> Result<Vec<Transition>>
where
    F: FnMut(&[f64], &mut Rng) -> Result<Vec<f64>>,
{
    let mut reset_rng = rng::indexed_stream(seed, streams::ENV_RESET, part);
    let mut behavior_rng = rng::indexed_stream(seed, streams::BEHAVIOR_NOISE, part);
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let mut state = env.reset(&mut reset_rng);
        for _ in 0..env.horizon() {
            if out.len() == size {
                break;
            }
            let action = behavior(&state, &mut behavior_rng)?;
            let step = env.step(&state, &action)?;
            let done = step.done;
            out.push(Transition {
                state: std::mem::replace(&mut state, step.next_state.clone()),
                action,
                reward: step.reward,
                next_state: step.next_state,
                done,
            });
            if done {
                break;
            }
        }
    }
    Ok(out)
}
