//! Earth mover's distance between equal-size 3D point sets.
//!
//! The exact solver computes a minimum-cost bijection with a shortest
//! augmenting path assignment algorithm; the approximate solver runs
//! log-domain Sinkhorn iterations and rounds the result onto the transport
//! polytope before reporting its cost.

mod approx;
mod exact;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use approx::{emd_approx, Coupling};
pub use exact::{emd_exact, emd_exact_capped, DEFAULT_EXACT_CAP};

/// Ground metric between two points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundNorm {
    #[default]
    L1,
    L2,
}

impl GroundNorm {
    #[inline]
    pub fn distance(self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        match self {
            GroundNorm::L1 => (a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs(),
            GroundNorm::L2 => {
                let d0 = a[0] - b[0];
                let d1 = a[1] - b[1];
                let d2 = a[2] - b[2];
                (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
            }
        }
    }

    /// Derivative of `distance(a, b)` with respect to `a`. Zero where the
    /// metric is not differentiable (coincident coordinates / points).
    #[inline]
    pub fn gradient(self, a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
        match self {
            GroundNorm::L1 => {
                let s = |x: f64| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                [s(a[0] - b[0]), s(a[1] - b[1]), s(a[2] - b[2])]
            }
            GroundNorm::L2 => {
                let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if r == 0.0 {
                    [0.0; 3]
                } else {
                    [d[0] / r, d[1] / r, d[2] / r]
                }
            }
        }
    }
}

impl std::str::FromStr for GroundNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" => Ok(GroundNorm::L1),
            "l2" | "L2" => Ok(GroundNorm::L2),
            other => Err(Error::config(format!("unknown ground norm '{other}'"))),
        }
    }
}

/// Square matrix of pairwise ground distances, row `i` for point `i` of the
/// first set.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_vec(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Dimension {
                op: "cost_matrix",
                left: (n, n),
                right: (entries.len(), 1),
            });
        }
        if entries.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("cost matrix must be square".into()));
        }
        Self::from_vec(n, rows.concat())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn transpose(&self) -> CostMatrix {
        let n = self.n;
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j];
            }
        }
        CostMatrix { n, entries }
    }
}

pub fn cost_matrix(a: &[[f64; 3]], b: &[[f64; 3]], norm: GroundNorm) -> Result<CostMatrix> {
    if a.len() != b.len() {
        return Err(Error::UnequalCardinality(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptySet("cost_matrix"));
    }
    let n = a.len();
    let mut entries = Vec::with_capacity(n * n);
    for p in a {
        entries.extend(b.iter().map(|q| norm.distance(p, q)));
    }
    Ok(CostMatrix { n, entries })
}

/// Optimal bijection: point `i` of the first set is matched to point
/// `mapping[i]` of the second.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    pub cost: f64,
}

impl Assignment {
    /// Builds an assignment and computes its cost in a canonical summation
    /// order, so equal matchings always report bit-identical costs.
    pub fn from_mapping(c: &CostMatrix, mapping: Vec<usize>) -> Self {
        let mut terms: Vec<f64> = mapping
            .iter()
            .enumerate()
            .map(|(i, &j)| c.get(i, j))
            .collect();
        let cost = canonical_sum(&mut terms);
        Assignment { mapping, cost }
    }

    pub fn is_bijection(&self) -> bool {
        let n = self.mapping.len();
        let mut seen = vec![false; n];
        for &j in &self.mapping {
            if j >= n || seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &j) in self.mapping.iter().enumerate() {
            inv[j] = i;
        }
        inv
    }
}

pub(crate) fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// Gradient of the total transport cost with respect to the coordinates of
/// `a` and of `b`, holding the bijection fixed.
pub fn emd_gradient(
    a: &[[f64; 3]],
    b: &[[f64; 3]],
    assignment: &Assignment,
    norm: GroundNorm,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    let mut ga = vec![[0.0; 3]; a.len()];
    let mut gb = vec![[0.0; 3]; b.len()];
    for (i, &j) in assignment.mapping.iter().enumerate() {
        let g = norm.gradient(&a[i], &b[j]);
        ga[i] = g;
        gb[j] = [-g[0], -g[1], -g[2]];
    }
    (ga, gb)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Approx,
    /// Exact up to the solver cap, approximate above it.
    #[default]
    Auto,
}

/// Everything needed to evaluate an EMD loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub norm: GroundNorm,
    pub solver: SolverKind,
    pub epsilon: f64,
    pub max_iters: usize,
    pub exact_cap: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            norm: GroundNorm::L1,
            solver: SolverKind::Auto,
            epsilon: 0.01,
            max_iters: 2000,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }
}

/// Result of solving one transport problem.
#[derive(Clone, Debug)]
pub enum TransportPlan {
    Bijection(Assignment),
    Coupling(Coupling),
}

impl TransportPlan {
    /// Total transport cost.
    pub fn cost(&self) -> f64 {
        match self {
            TransportPlan::Bijection(a) => a.cost,
            TransportPlan::Coupling(c) => c.cost,
        }
    }

    pub fn solver_name(&self) -> &'static str {
        match self {
            TransportPlan::Bijection(_) => "exact",
            TransportPlan::Coupling(_) => "approx",
        }
    }

    /// Gradient of the total cost with the plan held fixed.
    pub fn gradient(
        &self,
        a: &[[f64; 3]],
        b: &[[f64; 3]],
        norm: GroundNorm,
    ) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        match self {
            TransportPlan::Bijection(asg) => emd_gradient(a, b, asg, norm),
            TransportPlan::Coupling(c) => c.gradient(a, b, norm),
        }
    }
}

pub fn solve(a: &[[f64; 3]], b: &[[f64; 3]], config: &TransportConfig) -> Result<TransportPlan> {
    let c = cost_matrix(a, b, config.norm)?;
    let use_exact = match config.solver {
        SolverKind::Exact => true,
        SolverKind::Approx => false,
        SolverKind::Auto => c.n() <= config.exact_cap,
    };
    if use_exact {
        emd_exact_capped(&c, config.exact_cap).map(TransportPlan::Bijection)
    } else {
        emd_approx(&c, config.epsilon, config.max_iters).map(TransportPlan::Coupling)
    }
}

/// Mean per-point EMD between two clouds (total cost / n).
pub fn mean_emd(a: &[[f64; 3]], b: &[[f64; 3]], config: &TransportConfig) -> Result<f64> {
    let plan = solve(a, b, config)?;
    Ok(plan.cost() / a.len() as f64)
}
