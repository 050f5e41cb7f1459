use super::{canonical_sum, CostMatrix, GroundNorm};
use crate::error::{Error, Result};

const MARGINAL_TOLERANCE: f64 = 1e-6;
/// Largest `max(C)/ε` for which the scaling-vector iteration stays well
/// inside `f64` range; beyond it the log-domain iteration is used.
const KERNEL_RANGE: f64 = 500.0;
const CHECK_EVERY: usize = 5;

/// Feasible transport plan between two uniform distributions of `n` atoms,
/// each row and column summing to `1/n`.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub n: usize,
    pub plan: Vec<f64>,
    /// Total transport cost, `n · <C, plan>`, directly comparable to
    /// [`super::Assignment::cost`].
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl Coupling {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.n + j]
    }

    /// Gradient of the total cost with the plan held fixed.
    pub fn gradient(
        &self,
        a: &[[f64; 3]],
        b: &[[f64; 3]],
        norm: GroundNorm,
    ) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let n = self.n;
        let mass = n as f64;
        let mut ga = vec![[0.0; 3]; n];
        let mut gb = vec![[0.0; 3]; n];
        for i in 0..n {
            for j in 0..n {
                let w = self.plan[i * n + j] * mass;
                if w == 0.0 {
                    continue;
                }
                let g = norm.gradient(&a[i], &b[j]);
                for d in 0..3 {
                    ga[i][d] += w * g[d];
                    gb[j][d] -= w * g[d];
                }
            }
        }
        (ga, gb)
    }

    pub fn max_marginal_violation(&self) -> f64 {
        let n = self.n;
        let target = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let r: f64 = self.plan[i * n..(i + 1) * n].iter().sum();
            worst = worst.max((r - target).abs());
        }
        for j in 0..n {
            let s: f64 = (0..n).map(|i| self.plan[i * n + j]).sum();
            worst = worst.max((s - target).abs());
        }
        worst
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic-regularized transport between uniform marginals.
///
/// Runs Sinkhorn updates until the total marginal violation
/// drops below 1e-6 or `max_iters` is reached, then rounds the iterate onto
/// the transport polytope so the reported cost belongs to a feasible
/// coupling. Non-convergence is reported through [`Coupling::converged`].
pub fn emd_approx(c: &CostMatrix, epsilon: f64, max_iters: usize) -> Result<Coupling> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!(
            "sinkhorn epsilon must be positive, got {epsilon}"
        )));
    }
    let n = c.n();
    if n == 0 {
        return Err(Error::EmptySet("emd_approx"));
    }
    let max_cost = c.entries().iter().copied().fold(0.0, f64::max);
    let (mut plan, converged, iterations) = if max_cost / epsilon <= KERNEL_RANGE {
        sinkhorn_kernel(c, epsilon, max_iters)
    } else {
        sinkhorn_log(c, epsilon, max_iters)
    };
    round_to_polytope(&mut plan, n);

    let mut terms: Vec<f64> = plan
        .iter()
        .zip(c.entries())
        .map(|(p, cost)| p * cost)
        .collect();
    let cost = canonical_sum(&mut terms) * n as f64;
    Ok(Coupling {
        n,
        plan,
        cost,
        converged,
        iterations,
    })
}

/// Scaling-vector iteration `u = a / Kv`, `v = b / Kᵀu` on `K = exp(−C/ε)`.
fn sinkhorn_kernel(c: &CostMatrix, epsilon: f64, max_iters: usize) -> (Vec<f64>, bool, usize) {
    let n = c.n();
    let target = 1.0 / n as f64;
    let kernel: Vec<f64> = c.entries().iter().map(|v| (-v / epsilon).exp()).collect();
    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; n];
    let mut kv = vec![0.0f64; n];
    let mut ktu = vec![0.0f64; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            kv[i] = row.iter().zip(&v).map(|(k, x)| k * x).sum();
            u[i] = target / kv[i];
        }
        ktu.fill(0.0);
        for i in 0..n {
            let row = &kernel[i * n..(i + 1) * n];
            for (acc, k) in ktu.iter_mut().zip(row) {
                *acc += k * u[i];
            }
        }
        for j in 0..n {
            v[j] = target / ktu[j];
        }
        if iterations % CHECK_EVERY == 0 || iterations == max_iters {
            let violation: f64 = (0..n)
                .map(|i| {
                    let row = &kernel[i * n..(i + 1) * n];
                    let s: f64 = row.iter().zip(&v).map(|(k, x)| k * x).sum();
                    (u[i] * s - target).abs()
                })
                .sum();
            if violation < MARGINAL_TOLERANCE {
                converged = true;
                break;
            }
        }
    }
    let mut plan = kernel;
    for i in 0..n {
        for j in 0..n {
            plan[i * n + j] *= u[i] * v[j];
        }
    }
    if plan.iter().any(|p| !p.is_finite()) {
        return sinkhorn_log(c, epsilon, max_iters);
    }
    (plan, converged, iterations)
}

/// Log-domain dual iteration, stable for any `C/ε`.
fn sinkhorn_log(c: &CostMatrix, epsilon: f64, max_iters: usize) -> (Vec<f64>, bool, usize) {
    let n = c.n();
    let log_marginal = -(n as f64).ln();
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut converged = false;
    let mut iterations = 0;

    let row_violation = |f: &[f64], g: &[f64]| -> f64 {
        let target = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let row = c.row(i);
                let s: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - row[j]) / epsilon).exp())
                    .sum();
                (s - target).abs()
            })
            .sum()
    };

    while iterations < max_iters {
        iterations += 1;
        for i in 0..n {
            let row = c.row(i);
            let lse = log_sum_exp((0..n).map(|j| (g[j] - row[j]) / epsilon));
            f[i] = epsilon * (log_marginal - lse);
        }
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - c.get(i, j)) / epsilon));
            g[j] = epsilon * (log_marginal - lse);
        }
        // Columns are exact after the g update; rows carry the violation.
        if (iterations % CHECK_EVERY == 0 || iterations == max_iters)
            && row_violation(&f, &g) < MARGINAL_TOLERANCE
        {
            converged = true;
            break;
        }
    }

    let mut plan = vec![0.0f64; n * n];
    for i in 0..n {
        let row = c.row(i);
        for j in 0..n {
            plan[i * n + j] = ((f[i] + g[j] - row[j]) / epsilon).exp();
        }
    }
    (plan, converged, iterations)
}

/// Projects a nonnegative matrix onto couplings with uniform `1/n`
/// marginals: scale down overfull rows, then overfull columns, then spread
/// the remaining deficit as a rank-one correction.
fn round_to_polytope(plan: &mut [f64], n: usize) {
    let target = 1.0 / n as f64;
    for i in 0..n {
        let row = &mut plan[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        if s > target {
            let k = target / s;
            row.iter_mut().for_each(|v| *v *= k);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| plan[i * n + j]).sum();
        if s > target {
            let k = target / s;
            for i in 0..n {
                plan[i * n + j] *= k;
            }
        }
    }
    let row_def: Vec<f64> = (0..n)
        .map(|i| (target - plan[i * n..(i + 1) * n].iter().sum::<f64>()).max(0.0))
        .collect();
    let col_def: Vec<f64> = (0..n)
        .map(|j| (target - (0..n).map(|i| plan[i * n + j]).sum::<f64>()).max(0.0))
        .collect();
    let total: f64 = row_def.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..n {
                plan[i * n + j] += row_def[i] * col_def[j] / total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{cost_matrix, emd_exact};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()
    }

    #[test]
    fn single_atom_cost_is_the_entry() {
        let c = CostMatrix::from_vec(1, vec![2.5]).unwrap();
        let k = emd_approx(&c, 0.01, 100).unwrap();
        assert_eq!(k.cost, 2.5);
        assert!(k.converged);
    }

    #[test]
    fn identical_clouds_cost_nearly_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 12);
        let c = cost_matrix(&a, &a, GroundNorm::L1).unwrap();
        let k = emd_approx(&c, 0.01, 5000).unwrap();
        assert!(k.cost < 1e-6, "cost {}", k.cost);
    }

    #[test]
    fn rounded_plan_is_feasible_and_bounded_by_exact() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_cloud(&mut rng, 16);
            let b = random_cloud(&mut rng, 16);
            let c = cost_matrix(&a, &b, GroundNorm::L1).unwrap();
            let exact = emd_exact(&c).unwrap().cost;
            let k = emd_approx(&c, 0.01, 5000).unwrap();
            assert!(k.max_marginal_violation() < 1e-12);
            assert!(k.cost >= exact - 1e-9);
            assert!(
                k.cost <= exact * 1.05,
                "seed {seed}: {} vs {}",
                k.cost,
                exact
            );
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cloud(&mut rng, 10);
        let b = random_cloud(&mut rng, 10);
        let c = cost_matrix(&a, &b, GroundNorm::L1).unwrap();
        let k = emd_approx(&c, 1e-3, 1).unwrap();
        assert!(!k.converged);
        assert!(k.max_marginal_violation() < 1e-12);
    }

    #[test]
    fn bad_epsilon_is_rejected() {
        let c = CostMatrix::from_vec(1, vec![1.0]).unwrap();
        assert!(emd_approx(&c, 0.0, 10).is_err());
    }
}
