use rand::Rng;
use serde::{Deserialize, Serialize};

use super::latent::ConditionVector;
use super::mlp::{Activation, Mlp};
use crate::autodiff::{NodeId, ParamStore, Tape, Tensor2};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: vec![256, 512],
        }
    }
}

/// `[z, c] ↦ (P_0, …, P_K)`: a dense MLP with a tanh output reshaped into
/// one N×3 cloud per structure.
#[derive(Clone, Debug)]
pub struct Decoder {
    mlp: Mlp,
    latent_dim: usize,
    condition_dim: usize,
    points: usize,
    structures: usize,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &DecoderConfig,
        latent_dim: usize,
        condition_dim: usize,
        points: usize,
        structures: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![latent_dim + condition_dim];
        widths.extend_from_slice(&config.hidden);
        widths.push(structures * points * 3);
        Decoder {
            mlp: Mlp::new(store, prefix, &widths, Activation::Tanh, false, rng),
            latent_dim,
            condition_dim,
            points,
            structures,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn structures(&self) -> usize {
        self.structures
    }

    /// One N×3 node per structure.
    pub fn forward(&self, tape: &mut Tape, z: NodeId, c: &ConditionVector) -> Result<Vec<NodeId>> {
        let zv = tape.value(z);
        if zv.shape() != (1, self.latent_dim) {
            return Err(Error::Dimension {
                op: "decoder_forward",
                left: zv.shape(),
                right: (1, self.latent_dim),
            });
        }
        if c.len() != self.condition_dim {
            return Err(Error::Dimension {
                op: "decoder_forward",
                left: (1, c.len()),
                right: (1, self.condition_dim),
            });
        }
        let input = if c.is_empty() {
            z
        } else {
            let cn = tape.input(Tensor2::row(c.values().to_vec()));
            tape.concat_cols(z, cn)?
        };
        let out = self.mlp.forward(tape, input)?;
        let width = self.points * 3;
        (0..self.structures)
            .map(|s| {
                let flat = tape.slice_cols(out, s * width, width)?;
                tape.reshape(flat, self.points, 3)
            })
            .collect()
    }

    pub fn decode(
        &self,
        store: &ParamStore,
        z: &[f64],
        c: &ConditionVector,
    ) -> Result<Vec<PointCloud>> {
        let mut tape = Tape::new(store);
        let zn = tape.input(Tensor2::row(z.to_vec()));
        let outs = self.forward(&mut tape, zn, c)?;
        outs.into_iter()
            .map(|n| PointCloud::from_tensor(tape.value(n)))
            .collect()
    }
}
