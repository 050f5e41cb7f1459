//! Computational blocks: global signature network, rotation network,
//! variational encoder head and conditional decoder.

mod decoder;
mod gsn;
mod latent;
mod mlp;
mod rotation;

pub use decoder::{Decoder, DecoderConfig};
pub use gsn::{Gsn, GsnConfig, Signature};
pub use latent::{
    kl_loss, sample_latent, ConditionVector, EncoderHead, LatentNodes, LatentPosterior,
};
pub use mlp::{Activation, Mlp};
pub use rotation::{alignment_loss, RotationBlock, RotationConfig, RotationParams};
