//! Central finite-difference checks of parameter gradients.
//!
//! Only the forward loss is used here; the reverse sweep is never consulted,
//! so this serves as an independent oracle for [`super::Tape::backward`].

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::param::{Gradients, ParamStore};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Options {
    pub step: f64,
    /// Entries probed per parameter tensor; all entries when the tensor is
    /// no larger than this.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            step: 1e-6,
            samples_per_tensor: 24,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    /// Worst per-tensor relative error, `max|g − fd| / max(|g|∞, |fd|∞)`.
    pub max_relative_error: f64,
    pub worst_tensor: String,
    pub entries_checked: usize,
}

/// Compares `analytic` against central differences of `loss`.
pub fn check_params(
    store: &ParamStore,
    analytic: &Gradients,
    loss: impl Fn(&ParamStore) -> Result<f64>,
    options: &Options,
) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut probe = store.clone();
    let mut report = Report {
        max_relative_error: 0.0,
        worst_tensor: String::new(),
        entries_checked: 0,
    };
    for id in store.ids() {
        let p = store.get(id);
        if !p.trainable {
            continue;
        }
        let len = p.value.len();
        let entries: Vec<usize> = if len <= options.samples_per_tensor {
            (0..len).collect()
        } else {
            sample(&mut rng, len, options.samples_per_tensor).into_vec()
        };
        let g = analytic.get(id);
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for &e in &entries {
            let original = p.value.data()[e];
            probe.get_mut(id).value.data_mut()[e] = original + options.step;
            let up = loss(&probe)?;
            probe.get_mut(id).value.data_mut()[e] = original - options.step;
            let down = loss(&probe)?;
            probe.get_mut(id).value.data_mut()[e] = original;
            let fd = (up - down) / (2.0 * options.step);
            let an = g.data()[e];
            max_diff = max_diff.max((fd - an).abs());
            scale = scale.max(fd.abs()).max(an.abs());
        }
        report.entries_checked += entries.len();
        let rel = if scale > 1e-8 {
            max_diff / scale
        } else {
            max_diff / 1e-8
        };
        if rel >= report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_tensor = p.name.clone();
        }
    }
    Ok(report)
}
