use super::{Assignment, CostMatrix};
use crate::error::{Error, Result};

/// Largest problem the exact solver accepts by default.
pub const DEFAULT_EXACT_CAP: usize = 512;

pub fn emd_exact(c: &CostMatrix) -> Result<Assignment> {
    emd_exact_capped(c, DEFAULT_EXACT_CAP)
}

/// Minimum-cost perfect matching, O(n³) worst case.
///
/// Dual potentials start from a column then row reduction, tight edges are
/// matched greedily, and every remaining row is inserted by a Dijkstra-style
/// shortest augmenting path over reduced costs.
pub fn emd_exact_capped(c: &CostMatrix, cap: usize) -> Result<Assignment> {
    let n = c.n();
    if n > cap {
        return Err(Error::SolverCap { n, cap });
    }
    if n == 0 {
        return Err(Error::EmptySet("emd_exact"));
    }

    // 1-based: index 0 is the virtual column used to root each search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for j in 1..=n {
        v[j] = (0..n)
            .map(|i| c.get(i, j - 1))
            .fold(f64::INFINITY, f64::min);
    }
    let mut row_matched = vec![false; n + 1];
    for i in 1..=n {
        let row = c.row(i - 1);
        let mut best = f64::INFINITY;
        for j in 1..=n {
            best = best.min(row[j - 1] - v[j]);
        }
        u[i] = best;
        for j in 1..=n {
            if p[j] == 0 && row[j - 1] - v[j] - u[i] == 0.0 {
                p[j] = i;
                row_matched[i] = true;
                break;
            }
        }
    }

    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        if row_matched[i] {
            continue;
        }
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = c.row(i0 - 1);
            let ui0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - ui0 - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return Err(Error::Numeric(
                    "assignment search found no reachable column".into(),
                ));
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut mapping = vec![0usize; n];
    for j in 1..=n {
        mapping[p[j] - 1] = j - 1;
    }
    Ok(Assignment::from_mapping(c, mapping))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over all permutations (Heap's algorithm).
    fn brute_force(c: &CostMatrix) -> f64 {
        let n = c.n();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize; n];
        let eval = |perm: &[usize]| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| c.get(i, j))
                .sum::<f64>()
        };
        best = best.min(eval(&perm));
        let mut i = 1;
        while i < n {
            if stack[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(stack[i], i);
                }
                best = best.min(eval(&perm));
                stack[i] += 1;
                i = 1;
            } else {
                stack[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn two_by_two_identity_matching() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let a = emd_exact(&c).unwrap();
        assert_eq!(a.mapping, vec![0, 1]);
        assert_eq!(a.cost, 2.0);
        assert_eq!(brute_force(&c), 2.0);
    }

    #[test]
    fn zero_matrix_costs_nothing() {
        for n in [1, 3, 9] {
            let c = CostMatrix::from_vec(n, vec![0.0; n * n]).unwrap();
            let a = emd_exact(&c).unwrap();
            assert_eq!(a.cost, 0.0);
            assert!(a.is_bijection());
        }
    }

    #[test]
    fn five_point_random_matrices_match_brute_force() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let entries: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..10.0)).collect();
            let c = CostMatrix::from_vec(5, entries).unwrap();
            let a = emd_exact(&c).unwrap();
            assert!(a.is_bijection());
            assert!((a.cost - brute_force(&c)).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn integer_ties_are_handled() {
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..7);
            let entries: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0..3) as f64).collect();
            let c = CostMatrix::from_vec(n, entries).unwrap();
            let a = emd_exact(&c).unwrap();
            assert!(a.is_bijection());
            assert_eq!(a.cost, brute_force(&c), "seed {seed}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let c = CostMatrix::from_vec(3, vec![0.0; 9]).unwrap();
        assert!(matches!(
            emd_exact_capped(&c, 2),
            Err(Error::SolverCap { n: 3, cap: 2 })
        ));
    }
}
