use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gsn::{Gsn, GsnConfig};
use super::mlp::{Activation, Mlp};
use crate::autodiff::{euler_matrix, NodeId, ParamStore, Tape};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::transport::TransportConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationConfig {
    pub gsn: GsnConfig,
    pub hidden: Vec<usize>,
}

impl Default for RotationConfig {
    fn default() -> Self {
        RotationConfig {
            gsn: GsnConfig::with_features(256),
            hidden: vec![128],
        }
    }
}

/// Euler angles `(θx, θy, θz)` in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationParams(pub [f64; 3]);

impl RotationParams {
    /// `Rz(θz)·Ry(θy)·Rx(θx)`
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        euler_matrix(self.0)
    }
}

/// Regresses Euler angles from a cloud's signature and applies the rotation.
#[derive(Clone, Debug)]
pub struct RotationBlock {
    gsn: Gsn,
    head: Mlp,
}

impl RotationBlock {
    /// The head's output layer is zero-initialized so an untrained block is
    /// the identity rotation.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &RotationConfig,
        rng: &mut R,
    ) -> Self {
        let gsn = Gsn::new(store, &format!("{prefix}.gsn"), &config.gsn, rng);
        let mut widths = vec![config.gsn.features];
        widths.extend_from_slice(&config.hidden);
        widths.push(3);
        let head = Mlp::new(
            store,
            &format!("{prefix}.head"),
            &widths,
            Activation::Identity,
            true,
            rng,
        );
        RotationBlock { gsn, head }
    }

    /// Returns `(θ, T(θ)·P)` as tape nodes (1×3 and N×3).
    pub fn forward(&self, tape: &mut Tape, points: NodeId) -> Result<(NodeId, NodeId)> {
        let v = self.gsn.forward(tape, points)?;
        let theta = self.head.forward(tape, v)?;
        let t = tape.euler_rotation(theta)?;
        // Row-vector clouds: (T·pᵀ)ᵀ = p·Tᵀ.
        let aligned = tape.matmul(points, t, true)?;
        Ok((theta, aligned))
    }

    pub fn align(
        &self,
        store: &ParamStore,
        cloud: &PointCloud,
    ) -> Result<(RotationParams, PointCloud)> {
        let mut tape = Tape::new(store);
        let p = tape.input(cloud.to_tensor());
        let (theta, aligned) = self.forward(&mut tape, p)?;
        let t = tape.value(theta);
        let params = RotationParams([t.get(0, 0), t.get(0, 1), t.get(0, 2)]);
        Ok((params, PointCloud::from_tensor(tape.value(aligned))?))
    }
}

/// Mean-per-point EMD between an aligned cloud node and a reference node.
pub fn alignment_loss(
    tape: &mut Tape,
    aligned: NodeId,
    reference: NodeId,
    transport: &TransportConfig,
) -> Result<NodeId> {
    let (na, nr) = (tape.value(aligned).rows(), tape.value(reference).rows());
    if na != nr {
        return Err(Error::UnequalCardinality(na, nr));
    }
    tape.transport_cost(aligned, reference, transport, 1.0 / na as f64)
}
