//! State-conditional VAE over actions.
//!
//! The encoder maps `(s, a)` to a diagonal Gaussian `(mu, log_std)` over the
//! latent space, the decoder maps `(s, z)` back to an action through a tanh
//! output layer. The prior is a state-independent `N(0, I)`. After
//! [`train_cvae`] returns, the model is only ever read: policies hold it
//! behind an `Arc` and backpropagate through the decoder without touching
//! its parameters.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::diffnet::{hex_digest, Activation, AdamState, Gradients, Mlp, Trace};
use crate::envs::TransitionDataset;
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};

pub const CHECKPOINT_FORMAT: &str = "plas.cvae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeConfig {
    pub hidden: Vec<usize>,
    /// `None` means twice the action dimension.
    pub latent_dim: Option<usize>,
    pub kl_weight: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub log_interval: usize,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig {
            hidden: vec![128, 128],
            latent_dim: None,
            kl_weight: 0.5,
            log_std_min: -4.0,
            log_std_max: 15.0,
            learning_rate: 1e-3,
            batch_size: 100,
            steps: 50_000,
            log_interval: 500,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        if self.hidden.contains(&0) {
            return Err(Error::invalid(
                field("hidden"),
                "hidden widths must be positive",
            ));
        }
        if self.latent_dim == Some(0) {
            return Err(Error::invalid(field("latent_dim"), "must be positive"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid(
                field("kl_weight"),
                "must be finite and non-negative",
            ));
        }
        if self.log_std_min.partial_cmp(&self.log_std_max) != Some(std::cmp::Ordering::Less) {
            return Err(Error::invalid(
                field("log_std_min"),
                "must be below log_std_max",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(field("learning_rate"), "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(field("batch_size"), "must be positive"));
        }
        if self.log_interval == 0 {
            return Err(Error::invalid(field("log_interval"), "must be positive"));
        }
        Ok(())
    }
}

/// Loss terms of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    /// Mean squared error over batch rows and action dimensions.
    pub reconstruction_loss: f64,
    /// Batch mean of the KL divergence to the prior.
    pub kl_loss: f64,
    /// `reconstruction_loss + kl_weight * kl_loss`.
    pub total: f64,
}

/// One line of the CVAE training log, averaged over the logging interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeLogEntry {
    pub step: usize,
    #[serde(flatten)]
    pub report: ElboReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorCvae {
    encoder: Mlp,
    decoder: Mlp,
    state_dim: usize,
    action_dim: usize,
    latent_dim: usize,
    log_std_bounds: (f64, f64),
}

/// Gradients of the ELBO loss for both halves of the model.
#[derive(Debug, Clone)]
pub struct ElboGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl BehaviorCvae {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        config: &CvaeConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let latent_dim = config.latent_dim.unwrap_or(2 * action_dim);
        let enc_sizes = sizes(state_dim + action_dim, &config.hidden, 2 * latent_dim);
        let dec_sizes = sizes(state_dim + latent_dim, &config.hidden, action_dim);
        let encoder = Mlp::new(&enc_sizes, Activation::Relu, Activation::Identity, rng)?;
        let decoder = Mlp::new(&dec_sizes, Activation::Relu, Activation::Tanh, rng)?;
        Self::from_parts(encoder, decoder, (config.log_std_min, config.log_std_max))
    }

    /// Assembles a model from explicit networks, checking that their widths agree.
    pub fn from_parts(encoder: Mlp, decoder: Mlp, log_std_bounds: (f64, f64)) -> Result<Self> {
        let latent2 = encoder.output_dim();
        if latent2 == 0 || !latent2.is_multiple_of(2) {
            return Err(Error::invalid(
                "encoder",
                "output width must be 2 * latent_dim",
            ));
        }
        let latent_dim = latent2 / 2;
        let action_dim = decoder.output_dim();
        if decoder.input_dim() <= latent_dim || encoder.input_dim() <= action_dim {
            return Err(Error::invalid(
                "cvae",
                "encoder and decoder widths disagree",
            ));
        }
        let state_dim = decoder.input_dim() - latent_dim;
        if encoder.input_dim() != state_dim + action_dim {
            return Err(Error::shape(
                "encoder input",
                state_dim + action_dim,
                encoder.input_dim(),
            ));
        }
        if decoder.layers().last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(Error::invalid("decoder", "output layer must be tanh"));
        }
        Ok(BehaviorCvae {
            encoder,
            decoder,
            state_dim,
            action_dim,
            latent_dim,
            log_std_bounds,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        self.log_std_bounds
    }

    /// Posterior parameters `(mu, log_std)` for one state-action pair.
    /// `log_std` is already clamped.
    pub fn encode(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("state", self.state_dim, state.len())?;
        check_len("action", self.action_dim, action.len())?;
        let input: Vec<f64> = state.iter().chain(action).copied().collect();
        let out = self.encoder.forward(&input)?;
        let (lo, hi) = self.log_std_bounds;
        let mu = out[..self.latent_dim].to_vec();
        let log_std = out[self.latent_dim..]
            .iter()
            .map(|v| v.clamp(lo, hi))
            .collect();
        Ok((mu, log_std))
    }

    pub fn decode(&self, state: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.state_dim, state.len())?;
        check_len("latent", self.latent_dim, z.len())?;
        let input: Vec<f64> = state.iter().chain(z).copied().collect();
        self.decoder.forward(&input)
    }

    pub fn decode_batch(&self, states: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder
            .forward_batch(self.decoder_input(states, z)?.view())
    }

    /// Decoder pass that keeps activations for [`BehaviorCvae::decoder_latent_grad`].
    pub fn decode_trace(&self, states: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Trace> {
        self.decoder
            .forward_trace(self.decoder_input(states, z)?.view())
    }

    /// Pulls an action-space gradient back to the latent input of the decoder.
    /// Parameter gradients are discarded; the decoder is never updated here.
    pub fn decoder_latent_grad(
        &self,
        trace: &Trace,
        action_grad: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        let (_, input_grad) = self.decoder.backward(trace, action_grad)?;
        Ok(input_grad.slice(s![.., self.state_dim..]).to_owned())
    }

    /// Decodes a prior sample `z ~ N(0, I)`.
    pub fn sample(&self, state: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let z: Vec<f64> = (0..self.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.decode(state, &z)
    }

    fn decoder_input(&self, states: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_len("state", self.state_dim, states.ncols())?;
        check_len("latent", self.latent_dim, z.ncols())?;
        check_len("latent rows", states.nrows(), z.nrows())?;
        Ok(concatenate![Axis(1), states, z])
    }

    /// ELBO loss and its gradients for one minibatch.
    ///
    /// `noise` holds one standard-normal draw per row and latent dimension;
    /// `z = mu + exp(log_std) * noise`.
    pub fn elbo(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        noise: ArrayView2<f64>,
        kl_weight: f64,
    ) -> Result<(ElboReport, ElboGradients)> {
        let n = states.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        check_len("action rows", n, actions.nrows())?;
        check_len("action", self.action_dim, actions.ncols())?;
        check_len("noise", self.latent_dim, noise.ncols())?;
        check_len("noise rows", n, noise.nrows())?;
        let ld = self.latent_dim;
        let (lo, hi) = self.log_std_bounds;

        let enc_trace = self
            .encoder
            .forward_trace(concatenate![Axis(1), states, actions].view())?;
        let enc_out = enc_trace.output();
        let mu = enc_out.slice(s![.., ..ld]);
        let raw_log_std = enc_out.slice(s![.., ld..]);
        let log_std = raw_log_std.mapv(|v| v.clamp(lo, hi));
        let std = log_std.mapv(f64::exp);
        let z = &mu + &(&std * &noise);

        let dec_trace = self.decode_trace(states, z.view())?;
        let recon = dec_trace.output();
        let diff = recon - &actions;
        let count = (n * self.action_dim) as f64;
        let reconstruction_loss = diff.mapv(|d| d * d).sum() / count;
        let kl_loss = Zip::from(&mu)
            .and(&log_std)
            .fold(0.0, |acc, &m, &l| acc + kl_term(m, l))
            / n as f64;
        let report = ElboReport {
            reconstruction_loss,
            kl_loss,
            total: reconstruction_loss + kl_weight * kl_loss,
        };

        let recon_grad = diff.mapv(|d| 2.0 * d / count);
        let (decoder_grads, dec_input_grad) =
            self.decoder.backward(&dec_trace, recon_grad.view())?;
        let z_grad = dec_input_grad.slice(s![.., self.state_dim..]);

        let mut enc_grad = Array2::zeros((n, 2 * ld));
        let kl_scale = kl_weight / n as f64;
        for b in 0..n {
            for j in 0..ld {
                let (m, l, raw) = (mu[[b, j]], log_std[[b, j]], raw_log_std[[b, j]]);
                enc_grad[[b, j]] = z_grad[[b, j]] + kl_scale * m;
                let inside = (lo..=hi).contains(&raw);
                enc_grad[[b, ld + j]] = if inside {
                    z_grad[[b, j]] * noise[[b, j]] * std[[b, j]]
                        + kl_scale * ((2.0 * l).exp() - 1.0)
                } else {
                    0.0
                };
            }
        }
        let (encoder_grads, _) = self.encoder.backward(&enc_trace, enc_grad.view())?;
        Ok((
            report,
            ElboGradients {
                encoder: encoder_grads,
                decoder: decoder_grads,
            },
        ))
    }

    /// SHA-256 over both networks and the clamp bounds.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.encoder.feed_hash(&mut hasher);
        self.decoder.feed_hash(&mut hasher);
        hasher.update(self.log_std_bounds.0.to_bits().to_le_bytes());
        hasher.update(self.log_std_bounds.1.to_bits().to_le_bytes());
        hex_digest(hasher)
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_FORMAT, config_hash, self)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let c = checkpoint::load::<BehaviorCvae>(path, CHECKPOINT_FORMAT)?;
        let BehaviorCvae {
            encoder,
            decoder,
            log_std_bounds,
            ..
        } = c.payload;
        Ok((
            Self::from_parts(encoder, decoder, log_std_bounds)?,
            c.config_hash,
        ))
    }
}

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(context, expected, actual));
    }
    Ok(())
}

fn kl_term(mu: f64, log_std: f64) -> f64 {
    0.5 * (mu * mu + (2.0 * log_std).exp() - 1.0 - 2.0 * log_std)
}

/// `KL(N(mu, exp(log_std)^2) || N(0, 1))` summed over dimensions.
pub fn kl_to_standard_normal(mu: &[f64], log_std: &[f64]) -> Result<f64> {
    check_len("log_std", mu.len(), log_std.len())?;
    Ok(mu.iter().zip(log_std).map(|(&m, &l)| kl_term(m, l)).sum())
}

/// `z = mu + exp(log_std) * noise`, elementwise.
pub fn reparameterize(mu: &[f64], log_std: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_len("log_std", mu.len(), log_std.len())?;
    check_len("noise", mu.len(), noise.len())?;
    Ok(mu
        .iter()
        .zip(log_std)
        .zip(noise)
        .map(|((&m, &l), &e)| m + l.exp() * e)
        .collect())
}

/// Fits a CVAE to the dataset's `(s, a)` pairs.
///
/// Returns the model with a log entry (interval means) every
/// `config.log_interval` steps.
pub fn train_cvae(
    dataset: &TransitionDataset,
    config: &CvaeConfig,
    seed: u64,
) -> Result<(BehaviorCvae, Vec<CvaeLogEntry>)> {
    config.validate("cvae.")?;
    let mut init_rng = rng::stream(seed, streams::CVAE_INIT);
    let mut cvae = BehaviorCvae::new(
        dataset.state_dim(),
        dataset.action_dim(),
        config,
        &mut init_rng,
    )?;
    let mut enc_opt = AdamState::new(&cvae.encoder, config.learning_rate);
    let mut dec_opt = AdamState::new(&cvae.decoder, config.learning_rate);
    let mut batch_rng = rng::stream(seed, streams::CVAE_MINIBATCH);
    let mut noise_rng = rng::stream(seed, streams::CVAE_NOISE);
    let batch_size = config.batch_size.min(dataset.len());

    let mut log = Vec::new();
    let mut acc = [0.0; 3];
    let mut acc_n = 0usize;
    for step in 1..=config.steps {
        let batch = dataset.sample_batch(batch_size, &mut batch_rng)?;
        let noise = Array2::from_shape_simple_fn((batch_size, cvae.latent_dim), || {
            StandardNormal.sample(&mut noise_rng)
        });
        let (report, grads) = cvae.elbo(
            batch.states.view(),
            batch.actions.view(),
            noise.view(),
            config.kl_weight,
        )?;
        if !report.total.is_finite() || !grads.encoder.is_finite() || !grads.decoder.is_finite() {
            return Err(Error::Diverged {
                iteration: step,
                context: format!(
                    "cvae loss: reconstruction {}, kl {}",
                    report.reconstruction_loss, report.kl_loss
                ),
            });
        }
        enc_opt.step(&mut cvae.encoder, &grads.encoder)?;
        dec_opt.step(&mut cvae.decoder, &grads.decoder)?;
        acc[0] += report.reconstruction_loss;
        acc[1] += report.kl_loss;
        acc[2] += report.total;
        acc_n += 1;
        if step % config.log_interval == 0 || step == config.steps {
            let k = acc_n as f64;
            log.push(CvaeLogEntry {
                step,
                report: ElboReport {
                    reconstruction_loss: acc[0] / k,
                    kl_loss: acc[1] / k,
                    total: acc[2] / k,
                },
            });
            acc = [0.0; 3];
            acc_n = 0;
        }
    }
    Ok((cvae, log))
}

/// Decodes `n` prior samples at each of `states`, row `i * n + j` being
/// sample `j` at state `i`.
pub fn sample_decoded(
    cvae: &BehaviorCvae,
    states: ArrayView2<f64>,
    n: usize,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let rows = states.nrows() * n;
    let repeated = Array2::from_shape_fn((rows, states.ncols()), |(r, c)| states[[r / n, c]]);
    let z = Array2::from_shape_simple_fn((rows, cvae.latent_dim), || StandardNormal.sample(rng));
    cvae.decode_batch(repeated.view(), z.view())
}

/// Column means of the posterior standard deviation over the given pairs.
pub fn mean_posterior_std(
    cvae: &BehaviorCvae,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let out = cvae
        .encoder
        .forward_batch(concatenate![Axis(1), states, actions].view())?;
    let (lo, hi) = cvae.log_std_bounds;
    let std = out
        .slice(s![.., cvae.latent_dim..])
        .mapv(|v| v.clamp(lo, hi).exp());
    Ok(std.mean_axis(Axis(0)).expect("non-empty batch"))
}
