use serde::{Deserialize, Serialize};

use super::{
    DiscriminativeConfig, DiscriminativeModel, GenerativeConfig, GenerativeModel, LossReport,
    Target, Task,
};
use crate::autodiff::{Gradients, ParamStore};
use crate::blocks::ConditionVector;
use crate::cloud::PointCloud;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::transport::TransportConfig;

/// Architecture of either model family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum ModelConfig {
    Discriminative(DiscriminativeConfig),
    Generative(GenerativeConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Discriminative(_) => "discriminative",
            ModelConfig::Generative(_) => "generative",
        }
    }

    pub fn transport(&self) -> &TransportConfig {
        match self {
            ModelConfig::Discriminative(c) => &c.transport,
            ModelConfig::Generative(c) => &c.transport,
        }
    }

    pub fn structures(&self) -> usize {
        match self {
            ModelConfig::Discriminative(c) => c.structures,
            ModelConfig::Generative(c) => c.structures,
        }
    }

    pub fn points(&self) -> usize {
        match self {
            ModelConfig::Discriminative(c) => c.points,
            ModelConfig::Generative(c) => c.points,
        }
    }
}

/// A model of either family with its parameters.
#[derive(Clone, Debug)]
pub enum Model {
    Discriminative(DiscriminativeModel),
    Generative(GenerativeModel),
}

impl From<DiscriminativeModel> for Model {
    fn from(m: DiscriminativeModel) -> Self {
        Model::Discriminative(m)
    }
}

impl From<GenerativeModel> for Model {
    fn from(m: GenerativeModel) -> Self {
        Model::Generative(m)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        Ok(match config {
            ModelConfig::Discriminative(c) => DiscriminativeModel::new(c, seed)?.into(),
            ModelConfig::Generative(c) => GenerativeModel::new(c, seed)?.into(),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Discriminative(m) => ModelConfig::Discriminative(m.config.clone()),
            Model::Generative(m) => ModelConfig::Generative(m.config.clone()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Discriminative(m) => &m.params,
            Model::Generative(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Discriminative(m) => &mut m.params,
            Model::Generative(m) => &mut m.params,
        }
    }

    pub fn branches(&self) -> &[super::Branch] {
        match self {
            Model::Discriminative(m) => m.branches(),
            Model::Generative(m) => m.branches(),
        }
    }

    /// Length of the per-sample noise vector consumed by training.
    pub fn latent_dim(&self) -> usize {
        match self {
            Model::Discriminative(_) => 0,
            Model::Generative(m) => m.config.latent_dim,
        }
    }

    pub fn set_references(&mut self, references: &[PointCloud]) -> Result<()> {
        match self {
            Model::Discriminative(m) => m.set_references(references),
            Model::Generative(m) => m.set_references(references),
        }
    }

    pub fn as_discriminative(&self) -> Result<&DiscriminativeModel> {
        match self {
            Model::Discriminative(m) => Ok(m),
            Model::Generative(_) => Err(Error::config("expected a discriminative model")),
        }
    }

    pub fn as_generative(&self) -> Result<&GenerativeModel> {
        match self {
            Model::Generative(m) => Ok(m),
            Model::Discriminative(_) => Err(Error::config("expected a generative model")),
        }
    }

    /// Loss and parameter gradients of one sample under `store`.
    pub fn sample_gradients(
        &self,
        store: &ParamStore,
        sample: &Sample,
        eps: &[f64],
    ) -> Result<(LossReport, Gradients)> {
        match self {
            Model::Discriminative(m) => {
                m.loss_and_gradients(store, &sample.clouds, target_for(m.config.task, sample)?)
            }
            Model::Generative(m) => {
                let c = condition_for(m, sample)?;
                m.loss_and_gradients(store, &sample.clouds, &c, eps)
            }
        }
    }

    pub fn sample_loss(
        &self,
        store: &ParamStore,
        sample: &Sample,
        eps: &[f64],
    ) -> Result<LossReport> {
        match self {
            Model::Discriminative(m) => {
                m.loss(store, &sample.clouds, target_for(m.config.task, sample)?)
            }
            Model::Generative(m) => {
                let c = condition_for(m, sample)?;
                m.loss(store, &sample.clouds, &c, eps)
            }
        }
    }
}

/// Supervision a discriminative task needs from a sample.
pub fn target_for(task: Task, sample: &Sample) -> Result<Target> {
    match task {
        Task::Classification { .. } => sample
            .class
            .map(Target::Class)
            .ok_or_else(|| Error::Label(format!("sample {} has no class label", sample.id))),
        Task::Regression => sample
            .target
            .map(Target::Value)
            .ok_or_else(|| Error::Label(format!("sample {} has no regression target", sample.id))),
    }
}

/// Explicit condition from the sample if present, otherwise the one-hot
/// class encoding (or nothing for an unconditional model).
pub fn condition_for(model: &GenerativeModel, sample: &Sample) -> Result<ConditionVector> {
    match &sample.condition {
        Some(c) if model.config.condition_dim > 0 => {
            if c.len() != model.config.condition_dim {
                return Err(Error::config(format!(
                    "sample {} condition has length {} but the model expects {}",
                    sample.id,
                    c.len(),
                    model.config.condition_dim
                )));
            }
            ConditionVector::new(c.clone())
        }
        _ => {
            let target = sample.class.map_or(Target::None, Target::Class);
            model.condition_for(target)
        }
    }
}
