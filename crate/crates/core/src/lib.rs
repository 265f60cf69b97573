//! Offline reinforcement learning with a policy in the latent action space
//! of a conditional variational autoencoder.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`diffnet`] | MLPs with reverse-mode gradients, Adam, Polyak averaging |
//! | [`envs`] | toy continuous-control environments, transition datasets and generators |
//! | [`cvae`] | the state-conditional VAE that models the behavior policy |
//! | [`agent`] | latent actor, perturbation head, twin critics and the offline training loop |
//! | [`baselines`] | behavior cloning and the unconstrained off-policy learner |
//! | [`diagnostics`] | Q-error reports against Monte-Carlo returns, support distances |
//! | [`mmd`] | sampled-MMD simulations of explicit distribution constraints |
//! | [`experiment`] | configs, the end-to-end pipeline, sweeps and score normalisation |
//!
//! The runnable programs under `examples/` walk through each of these.

pub mod agent;
pub mod baselines;
pub mod checkpoint;
pub mod cvae;
pub mod diagnostics;
pub mod diffnet;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod mmd;
pub mod rng;

pub use error::{Error, Result};
