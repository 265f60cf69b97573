use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::cvae::BehaviorCvae;
use crate::diffnet::{Activation, Gradients, Mlp, Trace};
use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A differentiable deterministic policy `s -> a` with trainable networks.
///
/// The off-policy learner only talks to policies through this trait, so the
/// latent-space policy and the unconstrained baseline share every line of
/// critic and optimizer code.
pub trait PolicyHead: Clone + Send + Sync {
    type Trace;

    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Actions for a batch of states plus whatever [`PolicyHead::backward`] needs.
    fn forward(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Self::Trace)>;

    fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(states)?.0)
    }

    /// Parameter gradients of `sum(action_grad * actions)`, one entry per
    /// network in [`PolicyHead::trainable`] order.
    fn backward(&self, trace: &Self::Trace, action_grad: ArrayView2<f64>)
        -> Result<Vec<Gradients>>;

    fn trainable(&self) -> Vec<&Mlp>;
    fn trainable_mut(&mut self) -> Vec<&mut Mlp>;
}

fn single_row<P: PolicyHead>(policy: &P, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != policy.state_dim() {
        return Err(Error::shape(
            "policy state",
            policy.state_dim(),
            state.len(),
        ));
    }
    let x = ArrayView2::from_shape((1, state.len()), state).expect("slice viewed as a row");
    Ok(policy.act_batch(x)?.into_raw_vec_and_offset().0)
}

fn mlp_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// Plain tanh-output actor mapping states straight to actions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPolicy {
    pub net: Mlp,
}

impl DirectPolicy {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        let sizes = mlp_sizes(state_dim, hidden, action_dim);
        Self::from_net(Mlp::new(&sizes, Activation::Relu, Activation::Tanh, rng)?)
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.layers().last().map(|l| l.activation) != Some(Activation::Tanh) {
            return Err(Error::invalid("policy", "output layer must be tanh"));
        }
        Ok(DirectPolicy { net })
    }
}

impl PolicyHead for DirectPolicy {
    type Trace = Trace;

    fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn forward(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Trace)> {
        let trace = self.net.forward_trace(states)?;
        Ok((trace.output().clone(), trace))
    }

    fn act_batch(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.net.forward_batch(states)
    }

    fn backward(&self, trace: &Trace, action_grad: ArrayView2<f64>) -> Result<Vec<Gradients>> {
        Ok(vec![self.net.backward(trace, action_grad)?.0])
    }

    fn trainable(&self) -> Vec<&Mlp> {
        vec![&self.net]
    }

    fn trainable_mut(&mut self) -> Vec<&mut Mlp> {
        vec![&mut self.net]
    }
}

impl Policy for DirectPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        single_row(self, state)
    }
}

/// Deterministic actor over the latent space: `z = max_latent_action * tanh(net(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentActor {
    pub net: Mlp,
    pub max_latent_action: f64,
}

impl LatentActor {
    pub fn latent(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward_batch(states)? * self.max_latent_action)
    }
}

/// Residual head `clip(a_dec + epsilon * tanh(net(s, a_dec)), -1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationHead {
    pub net: Mlp,
    pub epsilon: f64,
}

/// Latent actor, frozen decoder and optional perturbation head.
#[derive(Debug, Clone)]
pub struct LatentPolicy {
    pub actor: LatentActor,
    pub perturbation: Option<PerturbationHead>,
    cvae: Arc<BehaviorCvae>,
}

pub struct LatentTrace {
    actor: Trace,
    decoder: Trace,
    perturbation: Option<(Trace, Array2<f64>)>,
}

impl LatentPolicy {
    /// `perturbation_rng` is only drawn from when `epsilon` is `Some`, so the
    /// actor's initialization does not depend on whether a head is present.
    pub fn new(
        cvae: Arc<BehaviorCvae>,
        hidden: &[usize],
        max_latent_action: f64,
        epsilon: Option<f64>,
        actor_rng: &mut Rng,
        perturbation_rng: &mut Rng,
    ) -> Result<Self> {
        if !(max_latent_action > 0.0 && max_latent_action.is_finite()) {
            return Err(Error::invalid("max_latent_action", "must be positive"));
        }
        let (sd, ad, ld) = (cvae.state_dim(), cvae.action_dim(), cvae.latent_dim());
        let net = Mlp::new(
            &mlp_sizes(sd, hidden, ld),
            Activation::Relu,
            Activation::Tanh,
            actor_rng,
        )?;
        let perturbation = match epsilon {
            None => None,
            Some(eps) if eps >= 0.0 && eps.is_finite() => Some(PerturbationHead {
                net: Mlp::new(
                    &mlp_sizes(sd + ad, hidden, ad),
                    Activation::Relu,
                    Activation::Tanh,
                    perturbation_rng,
                )?,
                epsilon: eps,
            }),
            Some(eps) => return Err(Error::invalid("epsilon", format!("{eps} must be >= 0"))),
        };
        Ok(LatentPolicy {
            actor: LatentActor {
                net,
                max_latent_action,
            },
            perturbation,
            cvae,
        })
    }

    pub fn from_parts(
        cvae: Arc<BehaviorCvae>,
        actor: LatentActor,
        perturbation: Option<PerturbationHead>,
    ) -> Result<Self> {
        if actor.net.input_dim() != cvae.state_dim() {
            return Err(Error::shape(
                "latent actor input",
                cvae.state_dim(),
                actor.net.input_dim(),
            ));
        }
        if actor.net.output_dim() != cvae.latent_dim() {
            return Err(Error::shape(
                "latent actor output",
                cvae.latent_dim(),
                actor.net.output_dim(),
            ));
        }
        if let Some(p) = &perturbation {
            if p.net.input_dim() != cvae.state_dim() + cvae.action_dim()
                || p.net.output_dim() != cvae.action_dim()
            {
                return Err(Error::invalid(
                    "perturbation",
                    "head widths do not match the cvae",
                ));
            }
        }
        Ok(LatentPolicy {
            actor,
            perturbation,
            cvae,
        })
    }

    pub fn cvae(&self) -> &Arc<BehaviorCvae> {
        &self.cvae
    }

    pub fn latent_actions(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.actor.latent(states)
    }

    /// Decoder output before any perturbation.
    pub fn decoded_actions(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.actor.latent(states)?;
        self.cvae.decode_batch(states, z.view())
    }

    /// The same policy with the perturbation head removed.
    pub fn without_perturbation(&self) -> Self {
        LatentPolicy {
            perturbation: None,
            ..self.clone()
        }
    }
}

impl PolicyHead for LatentPolicy {
    type Trace = LatentTrace;

    fn state_dim(&self) -> usize {
        self.cvae.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.cvae.action_dim()
    }

    fn forward(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, LatentTrace)> {
        let actor = self.actor.net.forward_trace(states)?;
        let z = actor.output() * self.actor.max_latent_action;
        let decoder = self.cvae.decode_trace(states, z.view())?;
        let decoded = decoder.output();
        match &self.perturbation {
            None => Ok((
                decoded.clone(),
                LatentTrace {
                    actor,
                    decoder,
                    perturbation: None,
                },
            )),
            Some(head) => {
                let input = concatenate![Axis(1), states, decoded.view()];
                let p = head.net.forward_trace(input.view())?;
                let raw = decoded + &(p.output() * head.epsilon);
                let action = raw.mapv(|v| v.clamp(-1.0, 1.0));
                Ok((
                    action,
                    LatentTrace {
                        actor,
                        decoder,
                        perturbation: Some((p, raw)),
                    },
                ))
            }
        }
    }

    fn backward(
        &self,
        trace: &LatentTrace,
        action_grad: ArrayView2<f64>,
    ) -> Result<Vec<Gradients>> {
        let sd = self.state_dim();
        let mut head_grads = None;
        let decoded_grad = match (&self.perturbation, &trace.perturbation) {
            (Some(head), Some((p_trace, raw))) => {
                let mut g = action_grad.to_owned();
                Zip::from(&mut g)
                    .and(raw)
                    .for_each(|g, &r| *g = if (-1.0..=1.0).contains(&r) { *g } else { 0.0 });
                let (grads, input_grad) = head.net.backward(p_trace, (&g * head.epsilon).view())?;
                head_grads = Some(grads);
                g + input_grad.slice(s![.., sd..])
            }
            (None, None) => action_grad.to_owned(),
            _ => {
                return Err(Error::invalid(
                    "policy trace",
                    "perturbation head changed since forward",
                ))
            }
        };
        let z_grad = self
            .cvae
            .decoder_latent_grad(&trace.decoder, decoded_grad.view())?;
        let actor_out_grad = z_grad * self.actor.max_latent_action;
        let (actor_grads, _) = self
            .actor
            .net
            .backward(&trace.actor, actor_out_grad.view())?;
        let mut out = vec![actor_grads];
        out.extend(head_grads);
        Ok(out)
    }

    fn trainable(&self) -> Vec<&Mlp> {
        let mut nets = vec![&self.actor.net];
        nets.extend(self.perturbation.as_ref().map(|p| &p.net));
        nets
    }

    fn trainable_mut(&mut self) -> Vec<&mut Mlp> {
        let mut nets = vec![&mut self.actor.net];
        nets.extend(self.perturbation.as_mut().map(|p| &mut p.net));
        nets
    }
}

impl Policy for LatentPolicy {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        single_row(self, state)
    }
}
