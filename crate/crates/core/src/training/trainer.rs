use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use crate::autodiff::{Gradients, ParamStore};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{LossReport, Model};

/// Number of samples whose gradients one worker sums before the ordered
/// reduction. Fixing it makes the floating-point summation order independent
/// of the thread count.
const CHUNK: usize = 4;

/// Header of the per-epoch loss log.
pub const LOSS_LOG_HEADER: &str = "epoch,align,rec,latent,cls,total,val_total";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs to run in this invocation; a resumed run numbers them after
    /// the epochs already completed.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub seed: u64,
    pub patience: usize,
    /// Train, validation and test fractions of the subjects.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            epochs: 100,
            batch_size: 8,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps_hat: adam.eps_hat,
            seed: 0,
            patience: 20,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_hat: self.eps_hat,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the loss log: mean training components and the validation
/// total after the epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossReport,
    pub val_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters the model holds after training, if any epoch
    /// finished with a finite validation loss.
    pub best_epoch: Option<usize>,
    pub best_val: f64,
    /// Number of the last completed epoch, counting resumed ones.
    pub last_epoch: usize,
    pub stopped_early: bool,
    /// Reason training was aborted on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Standard-normal noise for one sample in one epoch.
pub fn sample_noise(seed: u64, epoch: usize, index: usize, dim: usize) -> Vec<f64> {
    if dim == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Mean loss over a sample set with zero noise, summed in sample order.
pub fn evaluate_loss(model: &Model, samples: &[Sample]) -> Result<LossReport> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate the loss of an empty split"));
    }
    let zeros = vec![0.0; model.latent_dim()];
    let store = model.params();
    let reports: Vec<LossReport> = samples
        .par_iter()
        .map(|s| model.sample_loss(store, s, &zeros))
        .collect::<Result<_>>()?;
    Ok(LossReport::mean(&reports))
}

enum BatchError {
    Diverged(String),
    Other(Error),
}

impl From<Error> for BatchError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric(msg) => BatchError::Diverged(msg),
            other => BatchError::Other(other),
        }
    }
}

fn batch_gradients(
    model: &Model,
    store: &ParamStore,
    samples: &[Sample],
    batch: &[usize],
    seed: u64,
    epoch: usize,
) -> std::result::Result<(Vec<LossReport>, Gradients), BatchError> {
    let dim = model.latent_dim();
    let chunks: Vec<(Vec<LossReport>, Gradients)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = store.zero_gradients();
            let mut reports = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let eps = sample_noise(seed, epoch, i, dim);
                let (report, grads) = model.sample_gradients(store, &samples[i], &eps)?;
                if !report.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss on sample {}",
                        samples[i].id
                    )));
                }
                acc.add_assign(&grads);
                reports.push(report);
            }
            Ok((reports, acc))
        })
        .collect::<Result<_>>()?;
    let mut iter = chunks.into_iter();
    let (mut reports, mut total) = iter.next().expect("non-empty batch");
    for (r, g) in iter {
        reports.extend(r);
        total.add_assign(&g);
    }
    total.scale(1.0 / batch.len() as f64);
    Ok((reports, total))
}

/// Minimizes the model's composite loss with mini-batch adaptive-moment
/// steps. On return the model holds the parameters of the best validation
/// epoch (or its starting parameters when no epoch qualified).
pub fn train(
    model: &mut Model,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::data("validation split is empty"));
    }
    let mut optimizer = Adam::new(model.params(), config.adam())?;
    let mut best_store = model.params().clone();
    let mut outcome = TrainOutcome {
        records: Vec::new(),
        best_epoch: None,
        best_val: f64::INFINITY,
        last_epoch: start_epoch,
        stopped_early: false,
        diverged: None,
    };
    let mut since_best = 0usize;

    'epochs: for epoch in start_epoch + 1..=start_epoch + config.epochs {
        let order = epoch_order(config.seed, epoch, train_set.len());
        let mut reports = Vec::with_capacity(train_set.len());
        for batch in order.chunks(config.batch_size) {
            let step = batch_gradients(model, model.params(), train_set, batch, config.seed, epoch)
                .and_then(|(r, g)| {
                    optimizer.step(model.params_mut(), &g)?;
                    Ok(r)
                });
            match step {
                Ok(r) => reports.extend(r),
                Err(BatchError::Diverged(msg)) => {
                    outcome.diverged = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(BatchError::Other(e)) => return Err(e),
            }
        }
        let train_report = LossReport::mean(&reports);
        let val_total = match evaluate_loss(model, val_set) {
            Ok(r) => r.total,
            Err(Error::Numeric(msg)) => {
                outcome.diverged = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train: train_report,
            val_total,
        };
        on_epoch(&record);
        outcome.records.push(record);
        outcome.last_epoch = epoch;
        if !val_total.is_finite() {
            outcome.diverged = Some(format!("epoch {epoch}: non-finite validation loss"));
            break;
        }
        if val_total < outcome.best_val {
            outcome.best_val = val_total;
            outcome.best_epoch = Some(epoch);
            best_store.clone_from(model.params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    *model.params_mut() = best_store;
    Ok(outcome)
}

/// Renders the loss log as CSV.
pub fn loss_log_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in records {
        let t = &r.train;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, t.align, t.rec, t.latent, t.cls, t.total, r.val_total
        );
    }
    out
}

pub fn write_loss_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, loss_log_csv(records)).map_err(|e| Error::io(path, e))
}
