use rand::Rng;

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape, Tensor2};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

/// Stack of dense layers, ReLU between layers and a configurable output
/// activation.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    output: Activation,
}

impl Mlp {
    /// `widths` lists input width, hidden widths and output width.
    /// With `zero_last` the final layer starts at exactly zero.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        output: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, pair)| {
                let w_name = format!("{prefix}.l{l}.w");
                let w = if zero_last && l == last {
                    store.add(w_name, Tensor2::zeros(pair[0], pair[1]))
                } else {
                    store.add_kaiming(w_name, pair[0], pair[1], rng)
                };
                let b = store.add(format!("{prefix}.l{l}.b"), Tensor2::zeros(1, pair[1]));
                (w, b)
            })
            .collect();
        Mlp { layers, output }
    }

    pub fn input_width(&self, store: &ParamStore) -> usize {
        store.value(self.layers[0].0).rows()
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        store.value(self.layers[self.layers.len() - 1].0).cols()
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, w, b)?;
            let act = if l == last {
                self.output
            } else {
                Activation::Relu
            };
            h = match act {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
            };
        }
        Ok(h)
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        self.layers[self.layers.len() - 1]
    }
}
