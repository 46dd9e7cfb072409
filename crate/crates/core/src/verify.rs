//! Randomized self-checks: the Hungarian solver against exhaustive search,
//! and the grouping constraint of quality-aware multi-assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assignment::{
    brute_force_assignment, Assignment, AssignmentError, CostMatrix, BRUTE_FORCE_MAX_N, FORBIDDEN,
};
use crate::cost::{CostWeights, GtTriplet, Prediction};
use crate::geometry::BoundingBox;
use crate::grouping::{Groupings, PredicateGrouping, QueryGrouping};
use crate::speaq::{speaq_assign, QualityConfig, RelationFn};

/// Signature shared by the production solver and test doubles.
pub type Solver = fn(&CostMatrix) -> Result<Assignment, AssignmentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub trials: usize,
    /// Largest matrix order; capped at [`BRUTE_FORCE_MAX_N`].
    pub max_n: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            max_n: 7,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, failure: Option<String>) {
        self.trials += 1;
        if let Some(msg) = failure {
            self.failures += 1;
            self.first_failure.get_or_insert(msg);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<SuiteOutcome>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteOutcome::passed)
    }
}

/// Random `n x n` matrix of quarter-integer costs. Roughly one entry in five
/// is forbidden and some rows are all zero; unless `allow_infeasible`, a
/// random permutation is kept finite so that a solution exists.
pub fn random_grid_matrix<R: Rng>(rng: &mut R, n: usize, allow_infeasible: bool) -> CostMatrix {
    let mut keep: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        keep.swap(i, rng.random_range(0..=i));
    }
    let mut entries = Vec::with_capacity(n * n);
    for &kept in &keep {
        let zero_row = rng.random_bool(0.15);
        for c in 0..n {
            let protected = !allow_infeasible && kept == c;
            let v = if !protected && rng.random_bool(0.2) {
                FORBIDDEN
            } else if zero_row {
                0.0
            } else {
                rng.random_range(-8i32..=40) as f64 / 4.0
            };
            entries.push(v);
        }
    }
    CostMatrix::new(n, entries).expect("grid entries are valid")
}

fn compare(solver: Solver, m: &CostMatrix) -> Option<String> {
    let expected = brute_force_assignment(m);
    let got = solver(m);
    match (&expected, &got) {
        (Ok(e), Ok(g)) => {
            let valid = {
                let mut seen = vec![false; m.n()];
                g.perm.len() == m.n()
                    && g.perm
                        .iter()
                        .all(|&c| c < m.n() && !std::mem::replace(&mut seen[c], true))
            };
            if !valid {
                Some(format!(
                    "n={}: solver returned a non-permutation {:?}",
                    m.n(),
                    g.perm
                ))
            } else if g.total_cost != e.total_cost || m.cost_of(&g.perm) != e.total_cost {
                Some(format!(
                    "n={}: solver cost {} but optimum {}",
                    m.n(),
                    g.total_cost,
                    e.total_cost
                ))
            } else {
                None
            }
        }
        (Err(AssignmentError::Infeasible), Err(AssignmentError::Infeasible)) => None,
        _ => Some(format!(
            "n={}: solver {got:?} but oracle {expected:?}",
            m.n()
        )),
    }
}

/// Solver against exhaustive search on random grid matrices with
/// `n` uniform in `1..=max_n`.
pub fn verify_solver(cfg: &VerifyConfig, solver: Solver) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_n = cfg.max_n.clamp(1, BRUTE_FORCE_MAX_N);
    let mut out = SuiteOutcome {
        name: "hungarian_vs_brute_force".into(),
        trials: 0,
        failures: 0,
        first_failure: None,
    };
    for t in 0..cfg.trials {
        let n = rng.random_range(1..=max_n);
        let m = random_grid_matrix(&mut rng, n, t % 10 == 9);
        out.record(compare(solver, &m));
    }
    out
}

fn random_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let x: f64 = rng.random_range(0.0..0.8);
    let y: f64 = rng.random_range(0.0..0.8);
    let w: f64 = rng.random_range(0.05..0.2);
    let h: f64 = rng.random_range(0.05..0.2);
    BoundingBox::from_corners_clamped(x, y, x + w, y + h)
}

fn random_probs<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// A random grouping of `n_predicates` predicates into `n_g` nonempty groups,
/// and query ranges of `min_q..=min_q + 3` queries each.
pub fn random_groupings<R: Rng>(
    rng: &mut R,
    n_predicates: usize,
    n_g: usize,
    min_q: usize,
) -> (PredicateGrouping, QueryGrouping) {
    let mut ids: Vec<usize> = (0..n_predicates).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let mut groups: Vec<Vec<usize>> = ids[..n_g].iter().map(|&p| vec![p]).collect();
    for &p in &ids[n_g..] {
        groups[rng.random_range(0..n_g)].push(p);
    }
    let freq = vec![1.0 / n_g as f64; n_g];
    let pg = PredicateGrouping::from_parts(groups, freq).expect("groups are disjoint and nonempty");
    let counts = (0..n_g).map(|_| min_q + rng.random_range(0..=3)).collect();
    let qg = QueryGrouping::from_counts(counts).expect("n_g >= 1");
    (pg, qg)
}

const MAX_GTS: usize = 3;
const MAX_K: usize = 2;

/// A random scene with at most three GTs: `(gts, preds)`.
pub fn random_scene<R: Rng>(
    rng: &mut R,
    pg: &PredicateGrouping,
    qg: &QueryGrouping,
    n_entities: usize,
    n_predicates: usize,
) -> (Vec<GtTriplet>, Vec<Prediction>) {
    let n_q = qg.n_queries();
    let preds = (0..n_q)
        .map(|q| Prediction {
            subject_box: random_box(rng),
            object_box: random_box(rng),
            predicate_box: None,
            subject_probs: random_probs(rng, n_entities + 1),
            object_probs: random_probs(rng, n_entities + 1),
            predicate_probs: random_probs(rng, n_predicates + 1),
            query_index: q,
        })
        .collect();
    let n_gt = rng.random_range(0..=MAX_GTS);
    let gts = (0..n_gt)
        .map(|_| {
            let g = rng.random_range(0..pg.n_groups());
            let members = &pg.groups[g];
            GtTriplet {
                subject_box: random_box(rng),
                object_box: random_box(rng),
                predicate_box: None,
                subject_class: rng.random_range(0..n_entities),
                object_class: rng.random_range(0..n_entities),
                predicate_class: members[rng.random_range(0..members.len())],
            }
        })
        .collect();
    (gts, preds)
}

/// Runs quality-aware multi-assignment on random scenes and groupings and
/// checks that no pair crosses groups.
pub fn verify_group_constraint(cfg: &VerifyConfig) -> SuiteOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = SuiteOutcome {
        name: "group_constraint".into(),
        trials: 0,
        failures: 0,
        first_failure: None,
    };
    let (n_entities, n_predicates) = (5, 12);
    for _ in 0..cfg.trials {
        let n_g = rng.random_range(1..=6);
        // Every query range holds MAX_GTS * MAX_K slots, so capacity never binds.
        let min_q = MAX_GTS * MAX_K;
        let (pg, qg) = random_groupings(&mut rng, n_predicates, n_g, min_q);
        let (gts, preds) = random_scene(&mut rng, &pg, &qg, n_entities, n_predicates);
        let qc = QualityConfig {
            k: rng.random_range(1..=MAX_K),
            lambda_rel: -rng.random_range(0.0..1.0),
            relation: [RelationFn::Min, RelationFn::Mean, RelationFn::Max][rng.random_range(0..3)],
        };
        let groupings = Groupings {
            predicates: &pg,
            queries: &qg,
        };
        let failure = match speaq_assign(&gts, &preds, groupings, &CostWeights::default(), &qc) {
            Err(e) => Some(format!("assignment failed: {e}")),
            Ok(result) => result.pairs.iter().find_map(|pair| {
                let gg = pg.group_of(gts[pair.gt].predicate_class).ok()?;
                let qgrp = qg.group_of(preds[pair.prediction].query_index).ok()?;
                (gg != qgrp).then(|| {
                    format!(
                        "GT {} (group {gg}) paired with query {} (group {qgrp})",
                        pair.gt, pair.prediction
                    )
                })
            }),
        };
        out.record(failure);
    }
    out
}

pub fn run_verify(cfg: &VerifyConfig, solver: Solver) -> VerifyReport {
    VerifyReport {
        suites: vec![verify_solver(cfg, solver), verify_group_constraint(cfg)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::hungarian;

    fn corrupted(m: &CostMatrix) -> Result<Assignment, AssignmentError> {
        let mut a = hungarian(m)?;
        a.total_cost += 0.25;
        Ok(a)
    }

    fn small() -> VerifyConfig {
        VerifyConfig {
            trials: 200,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn production_solver_passes() {
        let r = run_verify(&small(), hungarian);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.suites[0].trials, 200);
    }

    #[test]
    fn corrupted_solver_fails() {
        let r = verify_solver(&small(), corrupted);
        assert!(!r.passed());
        assert!(r.first_failure.is_some());
    }

    #[test]
    fn max_n_one_passes() {
        let cfg = VerifyConfig {
            max_n: 1,
            ..small()
        };
        assert!(verify_solver(&cfg, hungarian).passed());
    }

    #[test]
    fn grid_matrices_are_feasible_unless_allowed_otherwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let m = random_grid_matrix(&mut rng, n, false);
            assert!(brute_force_assignment(&m).is_ok());
        }
    }

    #[test]
    fn random_groupings_are_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n_g in 1..=6 {
            let (pg, qg) = random_groupings(&mut rng, 12, n_g, 6);
            assert_eq!(pg.n_groups(), n_g);
            assert!(qg.counts.iter().all(|&c| (6..=9).contains(&c)));
        }
    }
}
