use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsnConfig {
    /// Widths of the per-point layers before the signature layer.
    pub hidden: Vec<usize>,
    /// Signature dimension `F`.
    pub features: usize,
}

impl GsnConfig {
    pub fn with_features(features: usize) -> Self {
        GsnConfig {
            hidden: vec![64, 128],
            features,
        }
    }
}

/// Global shape descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature(pub Vec<f64>);

/// Global signature network: a per-point MLP with shared weights followed
/// by a column-wise max over points.
#[derive(Clone, Debug)]
pub struct Gsn {
    mlp: Mlp,
    features: usize,
}

impl Gsn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &GsnConfig,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![3];
        widths.extend_from_slice(&config.hidden);
        widths.push(config.features);
        Gsn {
            mlp: Mlp::new(store, prefix, &widths, Activation::Relu, false, rng),
            features: config.features,
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Per-point features `H` (N×F) before pooling.
    pub fn point_features(&self, tape: &mut Tape, points: NodeId) -> Result<NodeId> {
        if tape.value(points).rows() == 0 {
            return Err(Error::EmptySet("gsn_forward"));
        }
        self.mlp.forward(tape, points)
    }

    /// 1×F signature node.
    pub fn forward(&self, tape: &mut Tape, points: NodeId) -> Result<NodeId> {
        let h = self.point_features(tape, points)?;
        tape.set_maxpool(h)
    }

    pub fn signature(&self, store: &ParamStore, cloud: &PointCloud) -> Result<Signature> {
        let mut tape = Tape::new(store);
        let p = tape.input(cloud.to_tensor());
        let v = self.forward(&mut tape, p)?;
        Ok(Signature(tape.value(v).data().to_vec()))
    }
}
