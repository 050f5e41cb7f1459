use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};
use crate::transport::{self, GroundNorm, TransportConfig, TransportPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Which closed form the latent divergence uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlForm {
    /// `½ Σ (σ² + μ² − log σ² − 1)`
    #[default]
    Standard,
    /// `Σ (σ + μ − log σ − 1)`, kept for comparison only.
    Printed,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMulBias {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    MatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
    },
    Relu(NodeId),
    Tanh(NodeId),
    MaxPool {
        x: NodeId,
        argmax: Vec<usize>,
    },
    ConcatCols(NodeId, NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    EulerRotation(NodeId),
    Reparameterize {
        mu: NodeId,
        log_var: NodeId,
        eps: Vec<f64>,
    },
    Kl {
        mu: NodeId,
        log_var: NodeId,
        form: KlForm,
    },
    Transport {
        a: NodeId,
        b: NodeId,
        plan: TransportPlan,
        norm: GroundNorm,
        scale: f64,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
    SquaredError {
        pred: NodeId,
        target: f64,
    },
    LinearCombination(Vec<(NodeId, f64)>),
}

#[derive(Debug)]
struct Node<'p> {
    op: Op,
    value: Cow<'p, Tensor2>,
}

/// Records one forward evaluation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep visits each node exactly once.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Result of a reverse sweep.
pub struct TapeGradients {
    nodes: Vec<Option<Tensor2>>,
    pub params: Gradients,
}

impl TapeGradients {
    /// Gradient with respect to any node that received one (leaf inputs
    /// always do when they influence the loss).
    pub fn node(&self, id: NodeId) -> Option<&Tensor2> {
        self.nodes[id.0].as_ref()
    }
}

fn dim_err(op: &'static str, left: &Tensor2, right: &Tensor2) -> Error {
    Error::Dimension {
        op,
        left: left.shape(),
        right: right.shape(),
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: NodeId, g: Tensor2) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Rotation matrix `Rz(θz)·Ry(θy)·Rx(θx)` and its partial derivatives.
pub fn euler_matrix(theta: [f64; 3]) -> [[f64; 3]; 3] {
    euler_with_derivatives(theta).0
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn euler_with_derivatives(theta: [f64; 3]) -> ([[f64; 3]; 3], [[[f64; 3]; 3]; 3]) {
    let (sx, cx) = theta[0].sin_cos();
    let (sy, cy) = theta[1].sin_cos();
    let (sz, cz) = theta[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let drx = [[0.0, 0.0, 0.0], [0.0, -sx, -cx], [0.0, cx, -sx]];
    let dry = [[-sy, 0.0, cy], [0.0, 0.0, 0.0], [-cy, 0.0, -sy]];
    let drz = [[-sz, -cz, 0.0], [cz, -sz, 0.0], [0.0, 0.0, 0.0]];
    let rzry = mat3_mul(&rz, &ry);
    let t = mat3_mul(&rzry, &rx);
    let dx = mat3_mul(&rzry, &drx);
    let dy = mat3_mul(&mat3_mul(&rz, &dry), &rx);
    let dz = mat3_mul(&mat3_mul(&drz, &ry), &rx);
    (t, [dx, dy, dz])
}

fn to_points(t: &Tensor2) -> Vec<[f64; 3]> {
    t.data()
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect()
}

fn from_points(points: &[[f64; 3]]) -> Tensor2 {
    Tensor2::from_vec(points.len(), 3, points.iter().flatten().copied().collect()).expect("N×3")
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, op: Op, value: Tensor2) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Cow::Owned(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf holding data (inputs, targets, constants).
    pub fn input(&mut self, value: Tensor2) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Cow::Borrowed(self.params.value(id)),
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn matmul_bias(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.cols() != wv.rows() {
            return Err(dim_err("matmul_bias", xv, wv));
        }
        if bv.shape() != (1, wv.cols()) {
            return Err(dim_err("matmul_bias bias", wv, bv));
        }
        let mut out = Tensor2::zeros(xv.rows(), wv.cols());
        for r in 0..out.rows() {
            let cols = out.cols();
            out.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(bv.data());
        }
        gemm(xv, false, wv, false, &mut out, true);
        Ok(self.push(Op::MatMulBias { x, w, b }, out))
    }

    /// Dense layer from parameter ids.
    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let w = self.param(w);
        let b = self.param(b);
        self.matmul_bias(x, w, b)
    }

    /// `a·b`, or `a·bᵀ` when `trans_b` is set.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (k, n) = if trans_b {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        if av.cols() != k {
            return Err(dim_err("matmul", av, bv));
        }
        let mut out = Tensor2::zeros(av.rows(), n);
        gemm(av, false, bv, trans_b, &mut out, false);
        Ok(self.push(Op::MatMul { a, b, trans_b }, out))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), out)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    /// Column-wise maximum over rows. Ties go to the lowest row index.
    pub fn set_maxpool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rows() == 0 {
            return Err(Error::EmptySet("set_maxpool"));
        }
        let cols = xv.cols();
        let mut best = xv.row_slice(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..xv.rows() {
            for (j, &v) in xv.row_slice(r).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = r;
                }
            }
        }
        Ok(self.push(Op::MaxPool { x, argmax }, Tensor2::row(best)))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(dim_err("concat_cols", av, bv));
        }
        let cols = av.cols() + bv.cols();
        let mut data = Vec::with_capacity(av.rows() * cols);
        for r in 0..av.rows() {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        let out = Tensor2::from_vec(av.rows(), cols, data)?;
        Ok(self.push(Op::ConcatCols(a, b), out))
    }

    /// Concatenates any number of nodes column-wise.
    pub fn concat_many(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = nodes.split_first().ok_or(Error::EmptySet("concat_many"))?;
        rest.iter()
            .try_fold(first, |acc, &next| self.concat_cols(acc, next))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: xv.shape(),
                right: (start, len),
            });
        }
        let mut data = Vec::with_capacity(xv.rows() * len);
        for r in 0..xv.rows() {
            data.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let out = Tensor2::from_vec(xv.rows(), len, data)?;
        Ok(self.push(Op::SliceCols { x, start }, out))
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(rows, cols)?;
        Ok(self.push(Op::Reshape(x), out))
    }

    /// 1×3 Euler angles to the 3×3 matrix `Rz·Ry·Rx`.
    pub fn euler_rotation(&mut self, theta: NodeId) -> Result<NodeId> {
        let tv = self.value(theta);
        if tv.shape() != (1, 3) {
            return Err(Error::Dimension {
                op: "euler_rotation",
                left: tv.shape(),
                right: (1, 3),
            });
        }
        let t = euler_matrix([tv.get(0, 0), tv.get(0, 1), tv.get(0, 2)]);
        let out = Tensor2::from_vec(3, 3, t.iter().flatten().copied().collect())?;
        Ok(self.push(Op::EulerRotation(theta), out))
    }

    /// `z = μ + exp(½·log σ²)·ε` with externally drawn `ε`.
    pub fn reparameterize(&mut self, mu: NodeId, log_var: NodeId, eps: &[f64]) -> Result<NodeId> {
        let (mv, lv) = (self.value(mu), self.value(log_var));
        if mv.shape() != lv.shape() || mv.len() != eps.len() {
            return Err(dim_err("reparameterize", mv, lv));
        }
        let data = mv
            .data()
            .iter()
            .zip(lv.data())
            .zip(eps)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        let out = Tensor2::from_vec(mv.rows(), mv.cols(), data)?;
        let eps = eps.to_vec();
        Ok(self.push(Op::Reparameterize { mu, log_var, eps }, out))
    }

    /// Divergence of `N(μ, diag σ²)` from the standard normal.
    pub fn kl_divergence(&mut self, mu: NodeId, log_var: NodeId, form: KlForm) -> Result<NodeId> {
        let (mv, lv) = (self.value(mu), self.value(log_var));
        if mv.shape() != lv.shape() {
            return Err(dim_err("kl_divergence", mv, lv));
        }
        let value = kl_value(mv.data(), lv.data(), form);
        Ok(self.push(Op::Kl { mu, log_var, form }, Tensor2::scalar(value)))
    }

    /// Transport cost between two N×3 point nodes, multiplied by `scale`
    /// (use `1/N` for the mean-per-point convention).
    pub fn transport_cost(
        &mut self,
        a: NodeId,
        b: NodeId,
        config: &TransportConfig,
        scale: f64,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != 3 || bv.cols() != 3 {
            return Err(dim_err("transport_cost", av, bv));
        }
        let pa = to_points(av);
        let pb = to_points(bv);
        let plan = transport::solve(&pa, &pb, config)?;
        let value = plan.cost() * scale;
        let norm = config.norm;
        Ok(self.push(
            Op::Transport {
                a,
                b,
                plan,
                norm,
                scale,
            },
            Tensor2::scalar(value),
        ))
    }

    /// `−log softmax(logits)[label]` for a 1×C logit row.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != 1 || lv.cols() == 0 {
            return Err(Error::Contract(format!(
                "logits must be a nonempty row, got {:?}",
                lv.shape()
            )));
        }
        if label >= lv.cols() {
            return Err(Error::Label(format!(
                "class {label} out of range for {} classes",
                lv.cols()
            )));
        }
        let m = lv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = lv.data().iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let loss = -(lv.get(0, label) - m - total.ln());
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Tensor2::scalar(loss),
        ))
    }

    /// `(pred − target)²` for a 1×1 prediction.
    pub fn squared_error(&mut self, pred: NodeId, target: f64) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "regression prediction must be 1×1, got {:?}",
                pv.shape()
            )));
        }
        let d = pv.item() - target;
        Ok(self.push(Op::SquaredError { pred, target }, Tensor2::scalar(d * d)))
    }

    /// Weighted sum of scalar nodes.
    pub fn linear_combination(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(id, w) in terms {
            let v = self.value(id);
            if v.shape() != (1, 1) {
                return Err(Error::Contract(format!(
                    "linear_combination expects scalars, got {:?}",
                    v.shape()
                )));
            }
            total += w * v.item();
        }
        Ok(self.push(
            Op::LinearCombination(terms.to_vec()),
            Tensor2::scalar(total),
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<TapeGradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        let mut params = self.params.zero_gradients();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {
                    grads[idx] = Some(g);
                }
                Op::Param(pid) => {
                    params.get_mut(*pid).add_assign(&g);
                    grads[idx] = Some(g);
                }
                Op::MatMulBias { x, w, b } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    gemm(&g, false, wv, true, &mut gx, false);
                    let mut gw = Tensor2::zeros(wv.rows(), wv.cols());
                    gemm(xv, true, &g, false, &mut gw, false);
                    let mut gb = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (acc, v) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMul { a, b, trans_b } => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut ga = Tensor2::zeros(av.rows(), av.cols());
                    // out = a·op(b): ga = g·op(b)ᵀ
                    gemm(&g, false, bv, !trans_b, &mut ga, false);
                    let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                    if *trans_b {
                        gemm(&g, true, av, false, &mut gb, false);
                    } else {
                        gemm(av, true, &g, false, &mut gb, false);
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (gv, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    for (gv, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *gv *= 1.0 - y * y;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool { x, argmax } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    for (j, &r) in argmax.iter().enumerate() {
                        gx.set(r, j, g.get(0, j));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    let mut ga = Vec::with_capacity(g.rows() * ac);
                    let mut gb = Vec::with_capacity(g.rows() * bc);
                    for r in 0..g.rows() {
                        let row = g.row_slice(r);
                        ga.extend_from_slice(&row[..ac]);
                        gb.extend_from_slice(&row[ac..]);
                    }
                    accumulate(&mut grads, *a, Tensor2::from_vec(g.rows(), ac, ga)?);
                    accumulate(&mut grads, *b, Tensor2::from_vec(g.rows(), bc, gb)?);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        for (c, &v) in g.row_slice(r).iter().enumerate() {
                            gx.set(r, start + c, v);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x) => {
                    let (r, c) = self.value(*x).shape();
                    accumulate(&mut grads, *x, g.reshape(r, c)?);
                }
                Op::EulerRotation(theta) => {
                    let tv = self.value(*theta);
                    let (_, d) = euler_with_derivatives([tv.get(0, 0), tv.get(0, 1), tv.get(0, 2)]);
                    let mut gt = Tensor2::zeros(1, 3);
                    for (k, dk) in d.iter().enumerate() {
                        let mut s = 0.0;
                        for i in 0..3 {
                            for j in 0..3 {
                                s += g.get(i, j) * dk[i][j];
                            }
                        }
                        gt.set(0, k, s);
                    }
                    accumulate(&mut grads, *theta, gt);
                }
                Op::Reparameterize { mu, log_var, eps } => {
                    let lv = self.value(*log_var);
                    let mut gl = Tensor2::zeros(lv.rows(), lv.cols());
                    for (i, out) in gl.data_mut().iter_mut().enumerate() {
                        *out = g.data()[i] * 0.5 * (0.5 * lv.data()[i]).exp() * eps[i];
                    }
                    accumulate(&mut grads, *mu, g);
                    accumulate(&mut grads, *log_var, gl);
                }
                Op::Kl { mu, log_var, form } => {
                    let s = g.item();
                    let mv = self.value(*mu);
                    let lv = self.value(*log_var);
                    let (gm, gl) = match form {
                        KlForm::Standard => {
                            (mv.map(|m| s * m), lv.map(|l| s * 0.5 * (l.exp() - 1.0)))
                        }
                        KlForm::Printed => {
                            (mv.map(|_| s), lv.map(|l| s * 0.5 * ((0.5 * l).exp() - 1.0)))
                        }
                    };
                    accumulate(&mut grads, *mu, gm);
                    accumulate(&mut grads, *log_var, gl);
                }
                Op::Transport {
                    a,
                    b,
                    plan,
                    norm,
                    scale,
                } => {
                    let s = g.item() * scale;
                    let pa = to_points(self.value(*a));
                    let pb = to_points(self.value(*b));
                    let (mut ga, mut gb) = plan.gradient(&pa, &pb, *norm);
                    for p in ga.iter_mut().chain(gb.iter_mut()) {
                        for v in p.iter_mut() {
                            *v *= s;
                        }
                    }
                    accumulate(&mut grads, *a, from_points(&ga));
                    accumulate(&mut grads, *b, from_points(&gb));
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let s = g.item();
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * s).collect();
                    gl[*label] -= s;
                    accumulate(&mut grads, *logits, Tensor2::row(gl));
                }
                Op::SquaredError { pred, target } => {
                    let d = self.value(*pred).item() - target;
                    accumulate(&mut grads, *pred, Tensor2::scalar(2.0 * d * g.item()));
                }
                Op::LinearCombination(terms) => {
                    let s = g.item();
                    for &(id, w) in terms {
                        accumulate(&mut grads, id, Tensor2::scalar(w * s));
                    }
                }
            }
        }
        Ok(TapeGradients {
            nodes: grads,
            params,
        })
    }
}

pub(crate) fn kl_value(mu: &[f64], log_var: &[f64], form: KlForm) -> f64 {
    mu.iter()
        .zip(log_var)
        .map(|(&m, &l)| match form {
            KlForm::Standard => 0.5 * (l.exp() + m * m - l - 1.0),
            KlForm::Printed => (0.5 * l).exp() + m - 0.5 * l - 1.0,
        })
        .sum()
}
