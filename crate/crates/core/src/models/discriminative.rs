use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::branch::{check_inputs, set_references, Branch, BranchConfig, BranchOutput};
use super::{mean_node, LossReport, Target};
use crate::autodiff::{Gradients, NodeId, ParamStore, Tape};
use crate::blocks::{Activation, Mlp};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::transport::TransportConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Task {
    Classification { classes: usize },
    Regression,
}

impl Task {
    fn outputs(self) -> usize {
        match self {
            Task::Classification { classes } => classes,
            Task::Regression => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminativeConfig {
    /// Number of structure branches `K+1`.
    pub structures: usize,
    /// Points per structure.
    pub points: usize,
    pub branch: BranchConfig,
    pub head_hidden: Vec<usize>,
    pub task: Task,
    pub transport: TransportConfig,
}

impl Default for DiscriminativeConfig {
    fn default() -> Self {
        DiscriminativeConfig {
            structures: 1,
            points: 512,
            branch: BranchConfig::with_features(1024),
            head_hidden: vec![512, 128],
            task: Task::Classification { classes: 2 },
            transport: TransportConfig::default(),
        }
    }
}

impl DiscriminativeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.structures == 0 || self.points == 0 {
            return Err(Error::config("structures and points must be at least 1"));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return Err(Error::config("classification needs at least 2 classes"));
            }
        }
        if self.branch.gsn.features == 0 {
            return Err(Error::config("signature dimension must be positive"));
        }
        Ok(())
    }
}

/// Head output for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Logits(Vec<f64>),
    Value(f64),
}

impl Prediction {
    /// Arg-max class, lowest index on ties.
    pub fn class(&self) -> Option<usize> {
        match self {
            Prediction::Logits(l) => {
                let mut best = 0;
                for (i, &v) in l.iter().enumerate() {
                    if v > l[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            Prediction::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Prediction::Value(v) => Some(*v),
            Prediction::Logits(_) => None,
        }
    }
}

/// One rotation and signature branch per structure, concatenated signatures
/// and a dense head producing class logits or a real value.
#[derive(Clone, Debug)]
pub struct DiscriminativeModel {
    pub config: DiscriminativeConfig,
    pub params: ParamStore,
    branches: Vec<Branch>,
    head: Mlp,
}

impl DiscriminativeModel {
    pub fn new(config: DiscriminativeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let branches: Vec<Branch> = (0..config.structures)
            .map(|s| Branch::new(&mut params, s, &config.branch, config.points, &mut rng))
            .collect();
        let mut widths = vec![config.structures * config.branch.gsn.features];
        widths.extend_from_slice(&config.head_hidden);
        widths.push(config.task.outputs());
        let head = Mlp::new(
            &mut params,
            "head",
            &widths,
            Activation::Identity,
            false,
            &mut rng,
        );
        Ok(DiscriminativeModel {
            config,
            params,
            branches,
            head,
        })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn set_references(&mut self, references: &[PointCloud]) -> Result<()> {
        set_references(
            &mut self.params,
            &self.branches,
            references,
            self.config.points,
        )
    }

    /// Prediction node plus the per-branch outputs.
    pub fn forward(
        &self,
        tape: &mut Tape,
        clouds: &[NodeId],
    ) -> Result<(NodeId, Vec<BranchOutput>)> {
        let outs = self
            .branches
            .iter()
            .zip(clouds)
            .map(|(b, &c)| b.forward(tape, c, &self.config.transport))
            .collect::<Result<Vec<_>>>()?;
        let sigs: Vec<NodeId> = outs.iter().map(|o| o.signature).collect();
        let joint = tape.concat_many(&sigs)?;
        let pred = self.head.forward(tape, joint)?;
        Ok((pred, outs))
    }

    /// Builds the full loss graph for one sample on `tape`.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        clouds: &[PointCloud],
        target: Target,
    ) -> Result<(NodeId, LossReport)> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let (pred, outs) = self.forward(tape, &nodes)?;
        let aligns: Vec<NodeId> = outs.iter().filter_map(|o| o.align).collect();
        discriminative_loss(tape, pred, target, &aligns, self.config.task)
    }

    pub fn loss_and_gradients(
        &self,
        store: &ParamStore,
        clouds: &[PointCloud],
        target: Target,
    ) -> Result<(LossReport, Gradients)> {
        let mut tape = Tape::new(store);
        let (total, report) = self.loss_on_tape(&mut tape, clouds, target)?;
        Ok((report, tape.backward(total)?.params))
    }

    pub fn loss(
        &self,
        store: &ParamStore,
        clouds: &[PointCloud],
        target: Target,
    ) -> Result<LossReport> {
        let mut tape = Tape::new(store);
        Ok(self.loss_on_tape(&mut tape, clouds, target)?.1)
    }

    pub fn predict(&self, clouds: &[PointCloud]) -> Result<Prediction> {
        self.predict_with(&self.params, clouds)
    }

    pub fn predict_with(&self, store: &ParamStore, clouds: &[PointCloud]) -> Result<Prediction> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let mut tape = Tape::new(store);
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let (pred, _) = self.forward(&mut tape, &nodes)?;
        let v = tape.value(pred);
        Ok(match self.config.task {
            Task::Classification { .. } => Prediction::Logits(v.data().to_vec()),
            Task::Regression => Prediction::Value(v.item()),
        })
    }

    /// Concatenated signatures of all structures after alignment.
    pub fn joint_signature(&self, clouds: &[PointCloud]) -> Result<Vec<f64>> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let mut tape = Tape::new(&self.params);
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let (_, outs) = self.forward(&mut tape, &nodes)?;
        Ok(outs
            .iter()
            .flat_map(|o| tape.value(o.signature).data().to_vec())
            .collect())
    }
}

/// `total = mean(align) + cls` with softmax cross-entropy for
/// classification and squared error for regression.
pub fn discriminative_loss(
    tape: &mut Tape,
    pred: NodeId,
    target: Target,
    align_losses: &[NodeId],
    task: Task,
) -> Result<(NodeId, LossReport)> {
    let cls = match (task, target) {
        (Task::Classification { .. }, Target::Class(c)) => tape.softmax_cross_entropy(pred, c)?,
        (Task::Regression, Target::Value(v)) => tape.squared_error(pred, v)?,
        (Task::Classification { .. }, _) => {
            return Err(Error::Label("classification needs a class label".into()))
        }
        (Task::Regression, _) => {
            return Err(Error::Label("regression needs a real-valued target".into()))
        }
    };
    let align = mean_node(tape, align_losses)?;
    let mut terms = vec![(cls, 1.0)];
    if let Some(a) = align {
        terms.push((a, 1.0));
    }
    let total = tape.linear_combination(&terms)?;
    let report = LossReport {
        align: align.map_or(0.0, |a| tape.value(a).item()),
        rec: 0.0,
        latent: 0.0,
        cls: tape.value(cls).item(),
        total: tape.value(total).item(),
    };
    Ok((total, report))
}
