use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::branch::{check_inputs, set_references, Branch, BranchConfig, BranchOutput};
use super::{mean_node, LossReport, Target};
use crate::autodiff::{Gradients, KlForm, NodeId, ParamStore, Tape};
use crate::blocks::{
    kl_loss, sample_latent, ConditionVector, Decoder, DecoderConfig, EncoderHead, LatentNodes,
    LatentPosterior,
};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::transport::{cost_matrix, emd_exact, mean_emd, GroundNorm, TransportConfig};

/// Weights of the alignment, reconstruction and latent terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub align: f64,
    pub rec: f64,
    pub latent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            align: 1.0,
            rec: 1.0,
            latent: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeConfig {
    pub structures: usize,
    pub points: usize,
    pub branch: BranchConfig,
    /// Latent dimension `k` (total over all structures).
    pub latent_dim: usize,
    /// Condition dimension `m`; 0 for an unconditional model.
    pub condition_dim: usize,
    pub posterior_hidden: Vec<usize>,
    pub decoder: DecoderConfig,
    pub weights: LossWeights,
    pub kl_form: KlForm,
    pub transport: TransportConfig,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        GenerativeConfig {
            structures: 1,
            points: 512,
            branch: BranchConfig::with_features(1024),
            latent_dim: 4,
            condition_dim: 0,
            posterior_hidden: vec![512],
            decoder: DecoderConfig::default(),
            weights: LossWeights::default(),
            kl_form: KlForm::Standard,
            transport: TransportConfig::default(),
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.structures == 0 || self.points == 0 || self.latent_dim == 0 {
            return Err(Error::config(
                "structures, points and latent_dim must be at least 1",
            ));
        }
        let w = self.weights;
        if [w.align, w.rec, w.latent]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::config(format!(
                "loss weights must be finite and non-negative, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// Tape nodes of one generative pass.
#[derive(Clone, Debug)]
pub struct GenerativeOutput {
    pub branches: Vec<BranchOutput>,
    pub posterior: LatentNodes,
    pub z: NodeId,
    pub reconstructions: Vec<NodeId>,
}

/// Conditional variational autoencoder over one or more structures with a
/// single decoder shared by all of them.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    pub config: GenerativeConfig,
    pub params: ParamStore,
    branches: Vec<Branch>,
    encoder: EncoderHead,
    decoder: Decoder,
}

impl GenerativeModel {
    pub fn new(config: GenerativeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let branches: Vec<Branch> = (0..config.structures)
            .map(|s| Branch::new(&mut params, s, &config.branch, config.points, &mut rng))
            .collect();
        let encoder = EncoderHead::new(
            &mut params,
            "posterior",
            config.structures * config.branch.gsn.features,
            &config.posterior_hidden,
            config.latent_dim,
            true,
            &mut rng,
        );
        let decoder = Decoder::new(
            &mut params,
            "decoder",
            &config.decoder,
            config.latent_dim,
            config.condition_dim,
            config.points,
            config.structures,
            &mut rng,
        );
        Ok(GenerativeModel {
            config,
            params,
            branches,
            encoder,
            decoder,
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

    /// Condition vector for a sample: one-hot of its class when the model is
    /// conditional, empty otherwise.
    pub fn condition_for(&self, target: Target) -> Result<ConditionVector> {
        let m = self.config.condition_dim;
        if m == 0 {
            return Ok(ConditionVector::zeros(0));
        }
        match target {
            Target::Class(c) => ConditionVector::one_hot(m, c),
            _ => Err(Error::Label(
                "a conditional model needs a class label for every sample".into(),
            )),
        }
    }

    fn encode_nodes(
        &self,
        tape: &mut Tape,
        clouds: &[NodeId],
    ) -> Result<(Vec<BranchOutput>, LatentNodes)> {
        let outs = self
            .branches
            .iter()
            .zip(clouds)
            .map(|(b, &c)| b.forward(tape, c, &self.config.transport))
            .collect::<Result<Vec<_>>>()?;
        let sigs: Vec<NodeId> = outs.iter().map(|o| o.signature).collect();
        let joint = tape.concat_many(&sigs)?;
        let posterior = self.encoder.forward(tape, joint)?;
        Ok((outs, posterior))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        clouds: &[NodeId],
        condition: &ConditionVector,
        eps: &[f64],
    ) -> Result<GenerativeOutput> {
        let (branches, posterior) = self.encode_nodes(tape, clouds)?;
        let z = sample_latent(tape, posterior, eps)?;
        let reconstructions = self.decoder.forward(tape, z, condition)?;
        Ok(GenerativeOutput {
            branches,
            posterior,
            z,
            reconstructions,
        })
    }

    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        clouds: &[PointCloud],
        condition: &ConditionVector,
        eps: &[f64],
    ) -> Result<(NodeId, LossReport)> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let out = self.forward(tape, &nodes, condition, eps)?;
        generative_loss(
            tape,
            &out,
            self.config.weights,
            self.config.kl_form,
            &self.config.transport,
        )
    }

    pub fn loss_and_gradients(
        &self,
        store: &ParamStore,
        clouds: &[PointCloud],
        condition: &ConditionVector,
        eps: &[f64],
    ) -> Result<(LossReport, Gradients)> {
        let mut tape = Tape::new(store);
        let (total, report) = self.loss_on_tape(&mut tape, clouds, condition, eps)?;
        Ok((report, tape.backward(total)?.params))
    }

    pub fn loss(
        &self,
        store: &ParamStore,
        clouds: &[PointCloud],
        condition: &ConditionVector,
        eps: &[f64],
    ) -> Result<LossReport> {
        let mut tape = Tape::new(store);
        Ok(self.loss_on_tape(&mut tape, clouds, condition, eps)?.1)
    }

    pub fn encode(&self, clouds: &[PointCloud]) -> Result<LatentPosterior> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let mut tape = Tape::new(&self.params);
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let (_, posterior) = self.encode_nodes(&mut tape, &nodes)?;
        Ok(posterior.read(&tape))
    }

    /// Mean decoding (`ε = 0`) together with the aligned inputs it should
    /// reproduce.
    pub fn reconstruct(
        &self,
        clouds: &[PointCloud],
        condition: &ConditionVector,
    ) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
        check_inputs(clouds, self.config.structures, self.config.points)?;
        let mut tape = Tape::new(&self.params);
        let nodes: Vec<NodeId> = clouds.iter().map(|c| tape.input(c.to_tensor())).collect();
        let eps = vec![0.0; self.config.latent_dim];
        let out = self.forward(&mut tape, &nodes, condition, &eps)?;
        let rec = out
            .reconstructions
            .iter()
            .map(|&n| PointCloud::from_tensor(tape.value(n)))
            .collect::<Result<Vec<_>>>()?;
        let aligned = out
            .branches
            .iter()
            .map(|b| PointCloud::from_tensor(tape.value(b.aligned)))
            .collect::<Result<Vec<_>>>()?;
        Ok((rec, aligned))
    }

    /// Mean-per-point EMD between the mean decoding and the aligned input,
    /// averaged over structures.
    pub fn reconstruction_error(
        &self,
        clouds: &[PointCloud],
        condition: &ConditionVector,
    ) -> Result<f64> {
        let (rec, aligned) = self.reconstruct(clouds, condition)?;
        let mut total = 0.0;
        for (r, a) in rec.iter().zip(&aligned) {
            total += mean_emd(r, a, &self.config.transport)?;
        }
        Ok(total / rec.len() as f64)
    }

    /// Decodes `z` under `condition` into one cloud per structure.
    pub fn generate(&self, z: &[f64], condition: &ConditionVector) -> Result<Vec<PointCloud>> {
        if z.len() != self.config.latent_dim || condition.len() != self.config.condition_dim {
            return Err(Error::config(format!(
                "generation expects k={} and m={}, got k={} and m={}",
                self.config.latent_dim,
                self.config.condition_dim,
                z.len(),
                condition.len()
            )));
        }
        self.decoder.decode(&self.params, z, condition)
    }

    /// Per-structure displacement of each point of the decoding of `z` under
    /// `c1` when the condition changes to `c2`. Decoder output order carries no
    /// meaning, so corresponding points are paired by the optimal Euclidean
    /// assignment between the two decodings.
    pub fn deformation_map(
        &self,
        z: &[f64],
        c1: &ConditionVector,
        c2: &ConditionVector,
    ) -> Result<Vec<Vec<f64>>> {
        let a = self.generate(z, c1)?;
        let b = self.generate(z, c2)?;
        a.iter()
            .zip(&b)
            .map(|(x, y)| {
                let cost = cost_matrix(x.points(), y.points(), GroundNorm::L2)?;
                let matching = emd_exact(&cost)?;
                Ok(matching
                    .mapping
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| cost.get(i, j))
                    .collect())
            })
            .collect()
    }
}

/// `total = w_a·align + w_r·rec + w_l·latent` where `align` and `rec` are
/// averaged over structures and every EMD is mean per point.
pub fn generative_loss(
    tape: &mut Tape,
    out: &GenerativeOutput,
    weights: LossWeights,
    kl_form: KlForm,
    transport: &TransportConfig,
) -> Result<(NodeId, LossReport)> {
    let mut recs = Vec::with_capacity(out.reconstructions.len());
    for (&r, b) in out.reconstructions.iter().zip(&out.branches) {
        let n = tape.value(r).rows();
        recs.push(tape.transport_cost(r, b.aligned, transport, 1.0 / n as f64)?);
    }
    let rec = mean_node(tape, &recs)?.expect("at least one structure");
    let aligns: Vec<NodeId> = out.branches.iter().filter_map(|b| b.align).collect();
    let align = mean_node(tape, &aligns)?;
    let latent = kl_loss(tape, out.posterior, kl_form)?;
    let mut terms = vec![(rec, weights.rec), (latent, weights.latent)];
    if let Some(a) = align {
        terms.push((a, weights.align));
    }
    let total = tape.linear_combination(&terms)?;
    let report = LossReport {
        align: align.map_or(0.0, |a| tape.value(a).item()),
        rec: tape.value(rec).item(),
        latent: tape.value(latent).item(),
        cls: 0.0,
        total: tape.value(total).item(),
    };
    Ok((total, report))
}
