use rand::Rng;

use super::mlp::{Activation, Mlp};
use crate::autodiff::{kl_value, KlForm, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};

/// Diagonal Gaussian `N(μ, diag exp(log_var))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl LatentPosterior {
    pub fn standard(k: usize) -> Self {
        LatentPosterior {
            mu: vec![0.0; k],
            log_var: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| (0.5 * l).exp()).collect()
    }

    /// `z = μ + σ·ε`
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.mu.len() || self.log_var.len() != self.mu.len() {
            return Err(Error::Dimension {
                op: "sample_latent",
                left: (1, self.mu.len()),
                right: (1, eps.len()),
            });
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect())
    }

    pub fn kl(&self, form: KlForm) -> f64 {
        kl_value(&self.mu, &self.log_var, form)
    }
}

/// Prior-knowledge vector appended to the latent code: one-hot or all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionVector(Vec<f64>);

impl ConditionVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!(
                "condition entries must lie in [0, 1], got {values:?}"
            )));
        }
        Ok(ConditionVector(values))
    }

    pub fn zeros(m: usize) -> Self {
        ConditionVector(vec![0.0; m])
    }

    pub fn one_hot(m: usize, index: usize) -> Result<Self> {
        if index >= m {
            return Err(Error::Label(format!(
                "condition index {index} out of range for {m} conditions"
            )));
        }
        let mut v = vec![0.0; m];
        v[index] = 1.0;
        Ok(ConditionVector(v))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Tape nodes holding a posterior (each 1×k).
#[derive(Clone, Copy, Debug)]
pub struct LatentNodes {
    pub mu: NodeId,
    pub log_var: NodeId,
}

impl LatentNodes {
    pub fn read(&self, tape: &Tape) -> LatentPosterior {
        LatentPosterior {
            mu: tape.value(self.mu).data().to_vec(),
            log_var: tape.value(self.log_var).data().to_vec(),
        }
    }
}

/// Maps a (concatenated) signature to `(μ, log σ²)`.
#[derive(Clone, Debug)]
pub struct EncoderHead {
    mlp: Mlp,
    k: usize,
}

impl EncoderHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        k: usize,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(2 * k);
        EncoderHead {
            mlp: Mlp::new(store, prefix, &widths, Activation::Identity, zero_last, rng),
            k,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.k
    }

    pub fn forward(&self, tape: &mut Tape, signature: NodeId) -> Result<LatentNodes> {
        let out = self.mlp.forward(tape, signature)?;
        let mu = tape.slice_cols(out, 0, self.k)?;
        let log_var = tape.slice_cols(out, self.k, self.k)?;
        Ok(LatentNodes { mu, log_var })
    }
}

/// Reparameterized draw `z = μ + exp(½·log σ²)·ε` on the tape.
pub fn sample_latent(tape: &mut Tape, post: LatentNodes, eps: &[f64]) -> Result<NodeId> {
    tape.reparameterize(post.mu, post.log_var, eps)
}

pub fn kl_loss(tape: &mut Tape, post: LatentNodes, form: KlForm) -> Result<NodeId> {
    tape.kl_divergence(post.mu, post.log_var, form)
}
