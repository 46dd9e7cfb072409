//! Exact minimum-cost bipartite assignment on square matrices whose entries
//! may be forbidden, and an exhaustive oracle for small sizes.

use thiserror::Error;

/// Marker value for a pair that must never be selected.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Largest side length accepted by [`brute_force_assignment`].
pub const BRUTE_FORCE_MAX_N: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("cost matrix must be square with side n >= 1, got {len} entries for n = {n}")]
    Shape { n: usize, len: usize },
    #[error("cost entry ({row}, {col}) is {value}; only finite values or FORBIDDEN are allowed")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("no bijection avoids every forbidden entry")]
    Infeasible,
    #[error("brute-force enumeration supports n <= {max}, got n = {n}")]
    SizeExceeded { n: usize, max: usize },
}

/// Square cost matrix in row-major order. Rows are GT slots, columns are
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self, AssignmentError> {
        if n == 0 || entries.len() != n * n {
            return Err(AssignmentError::Shape {
                n,
                len: entries.len(),
            });
        }
        for (idx, &value) in entries.iter().enumerate() {
            if value.is_nan() || value == f64::NEG_INFINITY {
                return Err(AssignmentError::InvalidEntry {
                    row: idx / n,
                    col: idx % n,
                    value,
                });
            }
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AssignmentError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(AssignmentError::Shape {
                n,
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(n, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == FORBIDDEN
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.n..(row + 1) * self.n]
    }

    /// Applies `f` to every finite entry; forbidden entries stay forbidden.
    pub fn map_finite(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let n = self.n;
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                if v == FORBIDDEN {
                    v
                } else {
                    f(idx / n, idx % n, v)
                }
            })
            .collect();
        Self { n, entries }
    }

    /// Sum of the entries selected by `perm`, accumulated in row order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }

    fn finite_range(&self) -> Option<(f64, f64)> {
        self.entries
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// A bijection from rows to columns and its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[row] = column`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// Shortest-augmenting-path Hungarian algorithm, O(n^3).
///
/// Forbidden entries are replaced by a per-matrix sentinel large enough that
/// any bijection touching one costs more than every feasible bijection. If
/// the optimum still uses a sentinel, the matrix is infeasible.
pub fn hungarian(costs: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let n = costs.n;
    let (lo, hi) = costs.finite_range().ok_or(AssignmentError::Infeasible)?;
    // Feasible cost <= n*hi; a sentinel solution >= sentinel + (n-1)*lo.
    let sentinel = hi + (n as f64) * (hi - lo) + 1.0;
    let cell = |i: usize, j: usize| {
        let v = costs.get(i, j);
        if v == FORBIDDEN {
            sentinel
        } else {
            v
        }
    };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cell(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    if perm
        .iter()
        .enumerate()
        .any(|(i, &j)| costs.is_forbidden(i, j))
    {
        return Err(AssignmentError::Infeasible);
    }
    let total_cost = costs.cost_of(&perm);
    Ok(Assignment { perm, total_cost })
}

/// Enumerates every bijection (n <= 8) and keeps the first one of minimal
/// cost in lexicographic order.
pub fn brute_force_assignment(costs: &CostMatrix) -> Result<Assignment, AssignmentError> {
    let n = costs.n;
    if n > BRUTE_FORCE_MAX_N {
        return Err(AssignmentError::SizeExceeded {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }

    struct Search<'a> {
        costs: &'a CostMatrix,
        current: Vec<usize>,
        used: Vec<bool>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn descend(&mut self, row: usize) {
            let n = self.costs.n;
            if row == n {
                let total = self.costs.cost_of(&self.current);
                if self.best.as_ref().is_none_or(|(b, _)| total < *b) {
                    self.best = Some((total, self.current.clone()));
                }
                return;
            }
            for col in 0..n {
                if self.used[col] || self.costs.is_forbidden(row, col) {
                    continue;
                }
                self.used[col] = true;
                self.current.push(col);
                self.descend(row + 1);
                self.current.pop();
                self.used[col] = false;
            }
        }
    }

    let mut search = Search {
        costs,
        current: Vec::with_capacity(n),
        used: vec![false; n],
        best: None,
    };
    search.descend(0);
    let (total_cost, perm) = search.best.ok_or(AssignmentError::Infeasible)?;
    Ok(Assignment { perm, total_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F: f64 = FORBIDDEN;

    fn m(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn hungarian_examples() {
        let a = hungarian(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.total_cost, 2.0);

        let a = hungarian(&m(&[&[0.0, F], &[F, 0.0]])).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.total_cost, 0.0);

        let a = hungarian(&CostMatrix::new(3, vec![0.0; 9]).unwrap()).unwrap();
        assert_eq!(a.total_cost, 0.0);
        let mut seen = a.perm.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(
            brute_force_assignment(&m(&[&[1.0, 2.0], &[2.0, 1.0]]))
                .unwrap()
                .total_cost,
            2.0
        );
        let one = brute_force_assignment(&m(&[&[7.0]])).unwrap();
        assert_eq!((one.perm, one.total_cost), (vec![0], 7.0));
        let anti = brute_force_assignment(&m(&[&[F, 1.0], &[1.0, F]])).unwrap();
        assert_eq!((anti.perm, anti.total_cost), (vec![1, 0], 2.0));
    }

    #[test]
    fn brute_force_rejects_large_matrices() {
        let big = CostMatrix::new(9, vec![0.0; 81]).unwrap();
        assert_eq!(
            brute_force_assignment(&big),
            Err(AssignmentError::SizeExceeded { n: 9, max: 8 })
        );
    }

    #[test]
    fn infeasible_is_reported_by_both_solvers() {
        // Rows 0 and 1 both only admit column 0.
        let c = m(&[&[1.0, F, F], &[2.0, F, F], &[1.0, 1.0, 1.0]]);
        assert_eq!(hungarian(&c), Err(AssignmentError::Infeasible));
        assert_eq!(brute_force_assignment(&c), Err(AssignmentError::Infeasible));
        let all = m(&[&[F, F], &[F, F]]);
        assert_eq!(hungarian(&all), Err(AssignmentError::Infeasible));
    }

    #[test]
    fn sentinel_dominates_negative_costs() {
        // Cheapest-looking choices all go through the forbidden cell (0, 0).
        let c = m(&[&[F, -10.0, 5.0], &[-10.0, 5.0, -10.0], &[5.0, -10.0, 5.0]]);
        let a = hungarian(&c).unwrap();
        assert_eq!(a.total_cost, brute_force_assignment(&c).unwrap().total_cost);
        assert!(!c.is_forbidden(0, a.perm[0]));
    }

    #[test]
    fn rejects_malformed_matrices() {
        assert!(matches!(
            CostMatrix::new(2, vec![0.0; 3]),
            Err(AssignmentError::Shape { .. })
        ));
        assert!(matches!(
            CostMatrix::new(0, vec![]),
            Err(AssignmentError::Shape { .. })
        ));
        assert!(matches!(
            CostMatrix::new(1, vec![f64::NAN]),
            Err(AssignmentError::InvalidEntry { .. })
        ));
    }

    #[test]
    fn hungarian_is_deterministic() {
        let c = CostMatrix::new(4, vec![1.0; 16]).unwrap();
        assert_eq!(hungarian(&c).unwrap(), hungarian(&c).unwrap());
    }

    /// Grid-valued matrix (multiples of 1/4) with a guaranteed feasible permutation.
    fn arb_matrix(max_n: usize) -> impl Strategy<Value = CostMatrix> {
        (1..=max_n).prop_flat_map(|n| {
            (
                proptest::collection::vec(-40i32..40, n * n),
                proptest::collection::vec(0u8..10, n * n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            )
                .prop_map(move |(vals, forbid, perm)| {
                    let entries = (0..n * n)
                        .map(|idx| {
                            let (i, j) = (idx / n, idx % n);
                            if forbid[idx] < 3 && perm[i] != j {
                                F
                            } else {
                                vals[idx] as f64 / 4.0
                            }
                        })
                        .collect();
                    CostMatrix::new(n, entries).unwrap()
                })
        })
    }

    fn unique_optimum(c: &CostMatrix, best: f64) -> bool {
        let mut perm: Vec<usize> = (0..c.n()).collect();
        let mut count = 0;
        permute_all(&mut perm, 0, &mut |p| {
            if p.iter().enumerate().all(|(i, &j)| !c.is_forbidden(i, j)) && c.cost_of(p) == best {
                count += 1;
            }
        });
        count == 1
    }

    fn permute_all(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute_all(p, k + 1, f);
            p.swap(k, i);
        }
    }

    proptest! {
        #[test]
        fn hungarian_matches_oracle(c in arb_matrix(6)) {
            let h = hungarian(&c).unwrap();
            let b = brute_force_assignment(&c).unwrap();
            prop_assert_eq!(h.total_cost, b.total_cost);
            prop_assert!(h.perm.iter().enumerate().all(|(i, &j)| !c.is_forbidden(i, j)));
        }

        #[test]
        fn positive_scaling_keeps_unique_argmin(c in arb_matrix(5), scale in 1u32..8) {
            let h = hungarian(&c).unwrap();
            prop_assume!(unique_optimum(&c, h.total_cost));
            let scaled = c.map_finite(|_, _, v| v * scale as f64);
            let hs = hungarian(&scaled).unwrap();
            prop_assert_eq!(&hs.perm, &h.perm);
            prop_assert_eq!(hs.total_cost, h.total_cost * scale as f64);
        }

        #[test]
        fn row_shift_keeps_unique_argmin(c in arb_matrix(5), row in 0usize..5, shift in -20i32..20) {
            let row = row % c.n();
            let h = hungarian(&c).unwrap();
            prop_assume!(unique_optimum(&c, h.total_cost));
            let shifted = c.map_finite(|i, _, v| if i == row { v + shift as f64 / 4.0 } else { v });
            prop_assert_eq!(hungarian(&shifted).unwrap().perm, h.perm);
        }
    }
}
