use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classify_metrics, regression_mae, ClassificationReport};
use crate::blocks::ConditionVector;
use crate::data::{normalize, Dataset, Sample};
use crate::error::{Error, Result};
use crate::models::{
    condition_for, DiscriminativeConfig, DiscriminativeModel, GenerativeConfig, GenerativeModel,
    Model, ModelConfig, Task,
};
use crate::training::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainOutcome};

/// Builds a model, installs its alignment references and trains it.
pub fn fit(
    config: ModelConfig,
    references: &[crate::PointCloud],
    train_set: &[Sample],
    val_set: &[Sample],
    train_config: &TrainConfig,
) -> Result<(Model, TrainOutcome)> {
    let mut model = Model::new(config, train_config.seed)?;
    model.set_references(references)?;
    let outcome = train(&mut model, train_set, val_set, train_config, 0, |_| {})?;
    Ok((model, outcome))
}

/// Predicted class of every sample, in sample order.
pub fn predict_classes(model: &DiscriminativeModel, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| {
            model
                .predict(&s.clouds)?
                .class()
                .ok_or_else(|| Error::config("classification metrics need a classification model"))
        })
        .collect()
}

/// Predicted regression value of every sample, in sample order.
pub fn predict_values(model: &DiscriminativeModel, samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            model
                .predict(&s.clouds)?
                .value()
                .ok_or_else(|| Error::config("regression metrics need a regression model"))
        })
        .collect()
}

pub fn evaluate_classifier(
    model: &DiscriminativeModel,
    samples: &[Sample],
) -> Result<ClassificationReport> {
    let Task::Classification { classes } = model.config.task else {
        return Err(Error::config(
            "classification metrics need a classification model",
        ));
    };
    let labels = samples
        .iter()
        .map(|s| {
            s.class
                .ok_or_else(|| Error::Label(format!("sample {} has no class label", s.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    classify_metrics(&predict_classes(model, samples)?, &labels, classes)
}

/// Model MAE on `samples` and the MAE of predicting `baseline` everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub mae: f64,
    pub baseline_mae: f64,
}

pub fn evaluate_regressor(
    model: &DiscriminativeModel,
    samples: &[Sample],
    baseline: f64,
) -> Result<RegressionReport> {
    let targets = regression_targets(samples)?;
    let preds = predict_values(model, samples)?;
    Ok(RegressionReport {
        mae: regression_mae(&preds, &targets)?,
        baseline_mae: regression_mae(&vec![baseline; targets.len()], &targets)?,
    })
}

pub fn regression_targets(samples: &[Sample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            s.target
                .ok_or_else(|| Error::Label(format!("sample {} has no regression target", s.id)))
        })
        .collect()
}

/// Mean eps=0 reconstruction EMD per point over `samples`.
pub fn mean_reconstruction_error(model: &GenerativeModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::data("no samples to reconstruct"));
    }
    let errs = samples
        .par_iter()
        .map(|s| model.reconstruction_error(&s.clouds, &condition_for(model, s)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Model layout of a reconstruction-curve grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// One unconditional model per structure.
    #[serde(rename = "single")]
    Single,
    /// One conditional model per structure.
    #[serde(rename = "single-cond")]
    SingleCond,
    /// One unconditional model over all structures.
    #[serde(rename = "multi")]
    Multi,
    /// One conditional model over all structures.
    #[serde(rename = "multi-cond")]
    MultiCond,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Single,
        Scenario::SingleCond,
        Scenario::Multi,
        Scenario::MultiCond,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Single => "single",
            Scenario::SingleCond => "single-cond",
            Scenario::Multi => "multi",
            Scenario::MultiCond => "multi-cond",
        }
    }

    pub fn conditional(self) -> bool {
        matches!(self, Scenario::SingleCond | Scenario::MultiCond)
    }

    pub fn joint(self) -> bool {
        matches!(self, Scenario::Multi | Scenario::MultiCond)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown scenario {s:?}; expected single, single-cond, multi or multi-cond"
                ))
            })
    }
}

/// Mean reconstruction EMD of one scenario at one per-structure latent size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub scenario: Scenario,
    pub k_per_structure: usize,
    pub mean_emd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSetup {
    pub ks: Vec<usize>,
    pub scenarios: Vec<Scenario>,
    /// Template for every grid model; structure count, latent size and
    /// condition size are set per grid point.
    pub generative: GenerativeConfig,
    pub train: TrainConfig,
}

impl Default for CurveSetup {
    fn default() -> Self {
        CurveSetup {
            ks: (1..=5).collect(),
            scenarios: Scenario::ALL.to_vec(),
            generative: GenerativeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Train/validation/test partition used by the experiment drivers.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Splits> {
        let [train, val, test] = dataset.split(ratios, seed)?;
        Ok(Splits { train, val, test })
    }

    fn select_structure(&self, s: usize) -> Result<Splits> {
        Ok(Splits {
            train: self.train.select_structure(s)?,
            val: self.val.select_structure(s)?,
            test: self.test.select_structure(s)?,
        })
    }
}

/// File name of the checkpoint of one grid model.
pub fn curve_checkpoint_name(scenario: Scenario, k: usize, structure: Option<usize>) -> String {
    match structure {
        Some(s) => format!("{scenario}_k{k}_s{s}.psaf"),
        None => format!("{scenario}_k{k}.psaf"),
    }
}

fn grid_models(scenario: Scenario, structures: usize) -> Vec<Option<usize>> {
    if scenario.joint() {
        vec![None]
    } else {
        (0..structures).map(Some).collect()
    }
}

fn grid_config(
    setup: &CurveSetup,
    data: &Dataset,
    scenario: Scenario,
    k: usize,
) -> Result<GenerativeConfig> {
    let condition_dim = if scenario.conditional() {
        data.classes
            .ok_or_else(|| Error::config("conditional scenarios need a dataset with classes"))?
    } else {
        0
    };
    Ok(GenerativeConfig {
        structures: data.structures,
        points: data
            .points()
            .ok_or_else(|| Error::data("clouds must all have the same number of points"))?,
        latent_dim: k * data.structures,
        condition_dim,
        ..setup.generative.clone()
    })
}

fn unconditioned(samples: &[Sample], scenario: Scenario) -> Vec<Sample> {
    samples
        .iter()
        .cloned()
        .map(|mut s| {
            if !scenario.conditional() {
                s.condition = None;
            }
            s
        })
        .collect()
}

/// Trains every (scenario, k) model on the training split, selects on the
/// validation split and reports eps=0 reconstruction EMD on the test split.
/// Per-structure scenarios average their structures' errors. When
/// `checkpoints` is set each trained model is saved there.
pub fn reconstruction_curve(
    splits: &Splits,
    setup: &CurveSetup,
    checkpoints: Option<&Path>,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>> {
    if splits.test.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    let mut points = Vec::new();
    for &scenario in &setup.scenarios {
        for &k in &setup.ks {
            let mut total = 0.0;
            let parts = grid_models(scenario, splits.train.structures);
            for part in &parts {
                let data = match part {
                    Some(s) => splits.select_structure(*s)?,
                    None => splits.clone(),
                };
                let config = grid_config(setup, &data.train, scenario, k)?;
                let train_set = unconditioned(&data.train.samples, scenario);
                let val_set = unconditioned(&data.val.samples, scenario);
                let test_set = unconditioned(&data.test.samples, scenario);
                let (model, _) = fit(
                    ModelConfig::Generative(config),
                    &data.train.reference_clouds()?,
                    &train_set,
                    &val_set,
                    &setup.train,
                )?;
                if let Some(dir) = checkpoints {
                    save_checkpoint(
                        &model,
                        0,
                        &dir.join(curve_checkpoint_name(scenario, k, *part)),
                    )?;
                }
                total += mean_reconstruction_error(model.as_generative()?, &test_set)?;
            }
            let point = CurvePoint {
                scenario,
                k_per_structure: k,
                mean_emd: total / parts.len() as f64,
            };
            on_point(&point);
            points.push(point);
        }
    }
    Ok(points)
}

/// Recomputes the curve from checkpoints written by [`reconstruction_curve`].
pub fn curve_from_checkpoints(
    dir: &Path,
    ks: &[usize],
    scenarios: &[Scenario],
    test: &Dataset,
) -> Result<Vec<CurvePoint>> {
    if test.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    let mut points = Vec::new();
    for &scenario in scenarios {
        for &k in ks {
            let parts = grid_models(scenario, test.structures);
            let mut total = 0.0;
            for part in &parts {
                let path: PathBuf = dir.join(curve_checkpoint_name(scenario, k, *part));
                if !path.is_file() {
                    return Err(Error::config(format!(
                        "missing checkpoint {} for scenario {scenario} at k={k}",
                        path.display()
                    )));
                }
                let ckpt = load_checkpoint(&path)?;
                let data = match part {
                    Some(s) => test.select_structure(*s)?,
                    None => test.clone(),
                };
                let samples = unconditioned(&data.samples, scenario);
                total += mean_reconstruction_error(ckpt.model.as_generative()?, &samples)?;
            }
            points.push(CurvePoint {
                scenario,
                k_per_structure: k,
                mean_emd: total / parts.len() as f64,
            });
        }
    }
    Ok(points)
}

pub fn recon_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("scenario,k_per_structure,mean_emd\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.scenario, p.k_per_structure, p.mean_emd);
    }
    out
}

/// Test accuracy of a classifier trained on `size` generated samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthPoint {
    pub size: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSetup {
    pub sizes: Vec<usize>,
    /// Classifier template; structure count, points and class count follow
    /// the generator.
    pub classifier: DiscriminativeConfig,
    pub train: TrainConfig,
}

impl Default for SynthSetup {
    fn default() -> Self {
        SynthSetup {
            sizes: vec![50, 100, 200, 400, 600, 1000],
            classifier: DiscriminativeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// `count` samples decoded from standard-normal latents with conditions
/// cycling through the classes; each label equals its one-hot condition.
pub fn generate_labeled(
    generator: &GenerativeModel,
    count: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let classes = generator.config.condition_dim;
    if classes == 0 {
        return Err(Error::config(
            "synthetic labeled data needs a conditional generator",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            (0..generator.config.latent_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    latents
        .into_par_iter()
        .enumerate()
        .map(|(i, z)| {
            let class = i % classes;
            let condition = ConditionVector::one_hot(classes, class)?;
            let clouds = generator
                .generate(&z, &condition)?
                .iter()
                .map(normalize)
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample {
                id: format!("synth{i:05}"),
                subject: format!("synth{i:05}"),
                clouds,
                class: Some(class),
                target: None,
                condition: Some(condition.values().to_vec()),
            })
        })
        .collect()
}

/// For each size: generate labeled clouds, train a fresh classifier on them
/// alone and score it on the real `test` samples. The classifier selects
/// its epoch on the synthetic training loss so no real data is seen before
/// scoring.
pub fn synth_then_classify(
    generator: &GenerativeModel,
    setup: &SynthSetup,
    test: &[Sample],
    seed: u64,
    mut on_point: impl FnMut(&SynthPoint),
) -> Result<Vec<SynthPoint>> {
    if test.is_empty() {
        return Err(Error::data("test split is empty"));
    }
    let classes = generator.config.condition_dim;
    let config = DiscriminativeConfig {
        structures: generator.config.structures,
        points: generator.config.points,
        task: Task::Classification { classes },
        ..setup.classifier.clone()
    };
    let mut points = Vec::with_capacity(setup.sizes.len());
    for (i, &size) in setup.sizes.iter().enumerate() {
        let synthetic = generate_labeled(generator, size, seed.wrapping_add(i as u64))?;
        let Some(first) = synthetic.first() else {
            return Err(Error::config("synthetic set sizes must be at least 1"));
        };
        let train_config = TrainConfig {
            seed: seed.wrapping_add(i as u64),
            ..setup.train.clone()
        };
        let (model, _) = fit(
            ModelConfig::Discriminative(config.clone()),
            &first.clouds,
            &synthetic,
            &synthetic,
            &train_config,
        )?;
        let report = evaluate_classifier(model.as_discriminative()?, test)?;
        let point = SynthPoint {
            size,
            accuracy: report.accuracy,
        };
        on_point(&point);
        points.push(point);
    }
    Ok(points)
}

pub fn synth_curve_csv(points: &[SynthPoint]) -> String {
    let mut out = String::from("size,accuracy\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.size, p.accuracy);
    }
    out
}
