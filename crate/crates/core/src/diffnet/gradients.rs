use ndarray::{Array1, Array2};

use super::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One gradient entry per parameter of an [`Mlp`], in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<LayerGradients>,
}

impl Gradients {
    pub(crate) fn from_layers(layers: Vec<LayerGradients>) -> Self {
        Gradients { layers }
    }

    pub fn zeros_like(params: &Mlp) -> Self {
        let layers = params
            .layers()
            .iter()
            .map(|l| LayerGradients {
                weight: Array2::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        Gradients { layers }
    }

    pub fn layers(&self) -> &[LayerGradients] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [LayerGradients] {
        &mut self.layers
    }

    /// Shape-congruence with `params`.
    pub fn matches(&self, params: &Mlp) -> bool {
        self.layers.len() == params.layers().len()
            && self
                .layers
                .iter()
                .zip(params.layers())
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.len() == l.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    /// Same ordering as [`Mlp::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub(crate) fn from_flat(params: &Mlp, values: &[f64]) -> Result<Self> {
        let mut grads = Gradients::zeros_like(params);
        if values.len() != params.param_count() {
            return Err(Error::shape(
                "flat gradient vector",
                params.param_count(),
                values.len(),
            ));
        }
        let mut it = values.iter().copied();
        for l in &mut grads.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(grads)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
