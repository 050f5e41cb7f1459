//! Discriminative and conditional generative shape models over one or more
//! structures. A single-structure model is the one-branch case of the same
//! code.

mod any;
mod branch;
mod discriminative;
mod generative;

pub use any::{condition_for, target_for, Model, ModelConfig};
pub use branch::{Branch, BranchConfig, BranchOutput};
pub use discriminative::{
    discriminative_loss, DiscriminativeConfig, DiscriminativeModel, Prediction, Task,
};
pub use generative::{
    generative_loss, GenerativeConfig, GenerativeModel, GenerativeOutput, LossWeights,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;

/// Supervision attached to a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
    None,
}

/// Loss components of one sample or the mean over a set of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub align: f64,
    pub rec: f64,
    pub latent: f64,
    pub cls: f64,
    pub total: f64,
}

impl LossReport {
    pub fn add_assign(&mut self, other: &LossReport) {
        self.align += other.align;
        self.rec += other.rec;
        self.latent += other.latent;
        self.cls += other.cls;
        self.total += other.total;
    }

    pub fn scale(&mut self, s: f64) {
        self.align *= s;
        self.rec *= s;
        self.latent *= s;
        self.cls *= s;
        self.total *= s;
    }

    pub fn is_finite(&self) -> bool {
        [self.align, self.rec, self.latent, self.cls, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Mean of a sequence of reports, summed in order.
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a LossReport>) -> LossReport {
        let mut acc = LossReport::default();
        let mut n = 0usize;
        for r in reports {
            acc.add_assign(r);
            n += 1;
        }
        if n > 0 {
            acc.scale(1.0 / n as f64);
        }
        acc
    }
}

/// Mean of scalar nodes, or `None` when there are none.
pub(crate) fn mean_node(tape: &mut Tape, nodes: &[NodeId]) -> Result<Option<NodeId>> {
    if nodes.is_empty() {
        return Ok(None);
    }
    let w = 1.0 / nodes.len() as f64;
    let terms: Vec<(NodeId, f64)> = nodes.iter().map(|&n| (n, w)).collect();
    tape.linear_combination(&terms).map(Some)
}
