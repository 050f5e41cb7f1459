//! Run configuration shared by every command-line subcommand: a JSON
//! document whose fields all have defaults, with dotted `key=value`
//! overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::KlForm;
use crate::blocks::{DecoderConfig, GsnConfig, RotationConfig};
use crate::data::{load_cloud, prepare_cloud, Dataset, LoadOptions};
use crate::error::{Error, Result};
use crate::evaluation::{CurveSetup, Scenario, SynthSetup};
use crate::models::{BranchConfig, DiscriminativeConfig, GenerativeConfig, LossWeights, Task};
use crate::training::TrainConfig;
use crate::transport::TransportConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

/// Architecture hyperparameters. Counts left unset are taken from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub structures: Option<usize>,
    pub points: Option<usize>,
    pub classes: Option<usize>,
    pub features: usize,
    pub gsn_hidden: Vec<usize>,
    pub rotation: bool,
    pub rotation_features: usize,
    pub rotation_gsn_hidden: Vec<usize>,
    pub rotation_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub task: TaskKind,
    pub latent_dim: usize,
    /// Condition generative models on the one-hot class.
    pub conditional: bool,
    pub posterior_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub weights: LossWeights,
    pub kl_form: KlForm,
}

impl Default for ModelSection {
    fn default() -> Self {
        let rotation = RotationConfig::default();
        ModelSection {
            structures: None,
            points: None,
            classes: None,
            features: 1024,
            gsn_hidden: GsnConfig::with_features(1024).hidden,
            rotation: true,
            rotation_features: rotation.gsn.features,
            rotation_gsn_hidden: rotation.gsn.hidden,
            rotation_hidden: rotation.hidden,
            head_hidden: DiscriminativeConfig::default().head_hidden,
            task: TaskKind::Classification,
            latent_dim: 4,
            conditional: true,
            posterior_hidden: GenerativeConfig::default().posterior_hidden,
            decoder_hidden: DecoderConfig::default().hidden,
            weights: LossWeights::default(),
            kl_form: KlForm::Standard,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Center and scale every cloud to the unit sphere on load.
    pub normalize: bool,
    /// Resample every cloud to this many points on load.
    pub points: Option<usize>,
    /// Alignment reference clouds, one per structure.
    pub references: Option<Vec<PathBuf>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub ks: Vec<usize>,
    pub scenarios: Vec<Scenario>,
}

impl Default for CurveSection {
    fn default() -> Self {
        let setup = CurveSetup::default();
        CurveSection {
            ks: setup.ks,
            scenarios: setup.scenarios,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub sizes: Vec<usize>,
    /// Independent repetitions; the reported accuracy is their median.
    pub repeats: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            sizes: SynthSetup::default().sizes,
            repeats: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelSection,
    pub transport: TransportConfig,
    pub data: DataSection,
    pub curve: CurveSection,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelSection::default(),
            transport: TransportConfig::default(),
            data: DataSection {
                normalize: true,
                ..DataSection::default()
            },
            curve: CurveSection::default(),
            synth: SynthSection::default(),
        }
    }
}

/// Parses an override value as JSON, falling back to a plain string.
fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key.path=value` to a JSON document, creating nothing: every
/// key on the path must already exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    let mut node = doc;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| Error::config(format!("unknown configuration key {path:?}")))?;
    }
    *node = override_value(raw);
    Ok(())
}

/// Deserializes `doc` after applying `overrides` to the fully defaulted
/// document, so overrides may target keys the file left out.
pub fn resolve<T>(doc: Option<Value>, overrides: &[String], label: &str) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de> + Default,
{
    let parsed: T = match doc {
        Some(v) => serde_json::from_value(v).map_err(|e| Error::config(format!("{label}: {e}")))?,
        None => T::default(),
    };
    let mut full = serde_json::to_value(&parsed).expect("configuration serializes");
    for o in overrides {
        apply_override(&mut full, o)?;
    }
    serde_json::from_value(full).map_err(|e| Error::config(format!("{label}: {e}")))
}

/// Reads a JSON file into a document.
pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let doc = path.map(read_json).transpose()?;
        let label = path.map_or("run configuration".to_string(), |p| p.display().to_string());
        let cfg: RunConfig = resolve(doc, overrides, &label)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.model.features == 0 || self.model.latent_dim == 0 {
            return Err(Error::config(
                "model.features and model.latent_dim must be at least 1",
            ));
        }
        if !(self.transport.epsilon > 0.0) || self.transport.max_iters == 0 {
            return Err(Error::config(
                "transport.epsilon must be positive and transport.max_iters at least 1",
            ));
        }
        if self.curve.ks.contains(&0) {
            return Err(Error::config("curve.ks entries must be at least 1"));
        }
        if self.synth.sizes.contains(&0) || self.synth.repeats == 0 {
            return Err(Error::config(
                "synth.sizes entries and synth.repeats must be at least 1",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            normalize: self.data.normalize,
            points: self.data.points.or(self.model.points),
            seed: self.train.seed,
        }
    }

    /// Loads the dataset behind `manifest` with this configuration's
    /// normalization, resampling and reference overrides.
    pub fn load_dataset(&self, manifest: &Path) -> Result<Dataset> {
        let opts = self.load_options();
        let mut data = Dataset::load(manifest, &opts)?;
        if let Some(paths) = &self.data.references {
            let refs = paths
                .iter()
                .enumerate()
                .map(|(s, p)| prepare_cloud(load_cloud(p)?, &opts, u64::MAX - s as u64))
                .collect::<Result<Vec<_>>>()?;
            data.references = Some(refs);
        }
        Ok(data)
    }

    fn branch(&self) -> BranchConfig {
        let m = &self.model;
        BranchConfig {
            rotation: m.rotation.then(|| RotationConfig {
                gsn: GsnConfig {
                    hidden: m.rotation_gsn_hidden.clone(),
                    features: m.rotation_features,
                },
                hidden: m.rotation_hidden.clone(),
            }),
            gsn: GsnConfig {
                hidden: m.gsn_hidden.clone(),
                features: m.features,
            },
        }
    }

    fn counts(&self, data: &Dataset) -> Result<(usize, usize)> {
        let points = data.points().ok_or_else(|| {
            Error::data("clouds differ in point count; set data.points to resample")
        })?;
        let check = |name: &str, want: Option<usize>, have: usize| match want {
            Some(w) if w != have => Err(Error::config(format!(
                "model.{name} is {w} but the dataset has {have}"
            ))),
            _ => Ok(have),
        };
        Ok((
            check("structures", self.model.structures, data.structures)?,
            check("points", self.model.points, points)?,
        ))
    }

    fn classes(&self, data: &Dataset) -> Result<usize> {
        self.model
            .classes
            .or(data.classes)
            .ok_or_else(|| Error::config("class count unknown; set model.classes"))
    }

    pub fn discriminative(&self, data: &Dataset) -> Result<DiscriminativeConfig> {
        let (structures, points) = self.counts(data)?;
        let task = match self.model.task {
            TaskKind::Classification => Task::Classification {
                classes: self.classes(data)?,
            },
            TaskKind::Regression => Task::Regression,
        };
        let config = DiscriminativeConfig {
            structures,
            points,
            branch: self.branch(),
            head_hidden: self.model.head_hidden.clone(),
            task,
            transport: self.transport.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn generative(&self, data: &Dataset) -> Result<GenerativeConfig> {
        let condition_dim = if self.model.conditional {
            self.classes(data)?
        } else {
            0
        };
        self.generative_with(data, condition_dim)
    }

    fn generative_with(&self, data: &Dataset, condition_dim: usize) -> Result<GenerativeConfig> {
        let (structures, points) = self.counts(data)?;
        let config = GenerativeConfig {
            structures,
            points,
            branch: self.branch(),
            latent_dim: self.model.latent_dim,
            condition_dim,
            posterior_hidden: self.model.posterior_hidden.clone(),
            decoder: DecoderConfig {
                hidden: self.model.decoder_hidden.clone(),
            },
            weights: self.model.weights,
            kl_form: self.model.kl_form,
            transport: self.transport.clone(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn curve_setup(&self, data: &Dataset) -> Result<CurveSetup> {
        Ok(CurveSetup {
            ks: self.curve.ks.clone(),
            scenarios: self.curve.scenarios.clone(),
            generative: self.generative_with(data, 0)?,
            train: self.train.clone(),
        })
    }

    pub fn synth_setup(&self, data: &Dataset) -> Result<SynthSetup> {
        Ok(SynthSetup {
            sizes: self.synth.sizes.clone(),
            classifier: self.discriminative(data)?,
            train: self.train.clone(),
        })
    }
}
