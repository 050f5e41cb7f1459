use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape, Tensor2};
use crate::blocks::{alignment_loss, Gsn, GsnConfig, RotationBlock, RotationConfig};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::transport::TransportConfig;

/// Per-structure pipeline: optional rotation block followed by a signature
/// network with its own parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    /// `None` disables alignment for the branch.
    pub rotation: Option<RotationConfig>,
    pub gsn: GsnConfig,
}

impl BranchConfig {
    pub fn with_features(features: usize) -> Self {
        BranchConfig {
            rotation: Some(RotationConfig::default()),
            gsn: GsnConfig::with_features(features),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    rotation: Option<RotationBlock>,
    gsn: Gsn,
    reference: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    pub aligned: NodeId,
    pub signature: NodeId,
    pub theta: Option<NodeId>,
    pub align: Option<NodeId>,
}

impl Branch {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        index: usize,
        config: &BranchConfig,
        points: usize,
        rng: &mut R,
    ) -> Self {
        let prefix = format!("s{index}");
        let rotation = config
            .rotation
            .as_ref()
            .map(|rc| RotationBlock::new(store, &format!("{prefix}.rot"), rc, rng));
        let gsn = Gsn::new(store, &format!("{prefix}.gsn"), &config.gsn, rng);
        let reference = rotation
            .as_ref()
            .map(|_| store.add_frozen(format!("reference.{index}"), Tensor2::zeros(points, 3)));
        Branch {
            rotation,
            gsn,
            reference,
        }
    }

    pub fn features(&self) -> usize {
        self.gsn.features()
    }

    pub fn reference(&self) -> Option<ParamId> {
        self.reference
    }

    pub fn rotation(&self) -> Option<&RotationBlock> {
        self.rotation.as_ref()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        points: NodeId,
        transport: &TransportConfig,
    ) -> Result<BranchOutput> {
        let (theta, aligned, align) = match (&self.rotation, self.reference) {
            (Some(rot), Some(r)) => {
                let (theta, aligned) = rot.forward(tape, points)?;
                let rn = tape.param(r);
                let loss = alignment_loss(tape, aligned, rn, transport)?;
                (Some(theta), aligned, Some(loss))
            }
            _ => (None, points, None),
        };
        let signature = self.gsn.forward(tape, aligned)?;
        Ok(BranchOutput {
            aligned,
            signature,
            theta,
            align,
        })
    }
}

/// Checks that `clouds` has one cloud per branch with `points` points each.
pub(crate) fn check_inputs(clouds: &[PointCloud], structures: usize, points: usize) -> Result<()> {
    if clouds.len() != structures {
        return Err(Error::config(format!(
            "model expects {structures} structure(s) but the sample has {}",
            clouds.len()
        )));
    }
    for (s, c) in clouds.iter().enumerate() {
        if c.len() != points {
            return Err(Error::config(format!(
                "structure {s} has {} points but the model expects {points}",
                c.len()
            )));
        }
    }
    Ok(())
}

/// Writes reference clouds into the frozen reference tensors.
pub(crate) fn set_references(
    store: &mut ParamStore,
    branches: &[Branch],
    references: &[PointCloud],
    points: usize,
) -> Result<()> {
    check_inputs(references, branches.len(), points)?;
    for (b, r) in branches.iter().zip(references) {
        if let Some(id) = b.reference {
            store.get_mut(id).value = r.to_tensor();
        }
    }
    Ok(())
}
