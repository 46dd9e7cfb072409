//! Quality-aware multi-assignment with groupwise query specialization, plus
//! the comparison strategies (single, IoU-threshold, quality-agnostic).
//!
//! A GT is duplicated `d` times before matching, where `d` is read off the
//! top-k sum of a per-prediction quality vector. Duplicates and empty slots
//! are then matched against predictions with the Hungarian solver, optionally
//! under the grouping constraint.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{hungarian, AssignmentError};
use crate::cost::{build_cost_matrix, CostError, CostWeights, GtTriplet, Prediction};
use crate::geometry::iou;
use crate::grouping::{GroupingError, Groupings, QueryGrouping};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpeaqError {
    #[error(
        "{gts} GTs need at least one query each but {} has only {capacity} queries",
        domain.map_or("the query set".to_string(), |g| format!("query group {g}"))
    )]
    CapacityExceeded {
        domain: Option<usize>,
        gts: usize,
        capacity: usize,
    },
    #[error("duplication count for GT {0} must be at least 1")]
    InvalidDuplication(usize),
    #[error("expected {expected} duplication counts, got {got}")]
    DuplicationLength { expected: usize, got: usize },
    #[error("{preds} predictions but the query grouping covers {queries} queries")]
    QueryCountMismatch { preds: usize, queries: usize },
    #[error("top-k width must be at least 1")]
    ZeroK,
    #[error("strategy `{0}` needs predicate and query groupings")]
    MissingGrouping(StrategyKind),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

/// Element-wise combination of subject and object quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationFn {
    Min,
    Mean,
    Max,
}

impl RelationFn {
    pub fn apply(self, subject: f64, object: f64) -> f64 {
        match self {
            RelationFn::Min => subject.min(object),
            RelationFn::Mean => 0.5 * (subject + object),
            RelationFn::Max => subject.max(object),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub k: usize,
    pub lambda_rel: f64,
    pub relation: RelationFn,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            k: 5,
            lambda_rel: -0.5,
            relation: RelationFn::Max,
        }
    }
}

impl QualityConfig {
    pub fn validate(&self) -> Result<(), SpeaqError> {
        if self.k == 0 {
            return Err(SpeaqError::ZeroK);
        }
        Ok(())
    }
}

/// Per-prediction quality of one GT.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVectors {
    pub subject: Vec<f64>,
    pub object: Vec<f64>,
    pub predicate: Vec<f64>,
    /// `relation(subject, object) + lambda_rel * predicate`.
    pub combined: Vec<f64>,
}

pub fn quality_vectors(
    gt: &GtTriplet,
    preds: &[Prediction],
    qc: &QualityConfig,
) -> Result<QualityVectors, SpeaqError> {
    let mut qv = QualityVectors {
        subject: Vec::with_capacity(preds.len()),
        object: Vec::with_capacity(preds.len()),
        predicate: Vec::with_capacity(preds.len()),
        combined: Vec::with_capacity(preds.len()),
    };
    for p in preds {
        let s = iou(&gt.subject_box, &p.subject_box);
        let o = iou(&gt.object_box, &p.object_box);
        let r =
            p.predicate_probs
                .get(gt.predicate_class)
                .copied()
                .ok_or(CostError::UnknownClass {
                    class: gt.predicate_class,
                    len: p.predicate_probs.len(),
                })?;
        qv.subject.push(s);
        qv.object.push(o);
        qv.predicate.push(r);
        qv.combined
            .push(qc.relation.apply(s, o) + qc.lambda_rel * r);
    }
    Ok(qv)
}

/// Sum of the `k` largest entries. Ties at the cut keep the lower index.
pub fn top_k_sum(values: &[f64], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.iter().take(k).map(|&i| values[i]).sum()
}

/// `floor(max(top-k sum, 1))`; never below 1.
pub fn compute_d(qv: &QualityVectors, qc: &QualityConfig) -> usize {
    let sum = top_k_sum(&qv.combined, qc.k);
    if sum.is_nan() {
        return 1;
    }
    sum.max(1.0).floor() as usize
}

/// The augmented GT list: `slots[i] = Some(g)` for a copy of GT `g`, `None`
/// for an empty slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedGts {
    pub slots: Vec<Option<usize>>,
    /// Duplication counts after capacity clipping.
    pub d: Vec<usize>,
}

/// Duplicates each GT `d[g]` times and pads with empty slots up to `n_q`.
///
/// Within each capacity domain (the whole query set, or each query group
/// when `gt_groups` is given) the largest count above 1 is decremented,
/// lowest GT index first, until the domain fits.
pub fn augment_gt_set(
    d: &[usize],
    gt_groups: Option<(&[usize], &QueryGrouping)>,
    n_q: usize,
) -> Result<AugmentedGts, SpeaqError> {
    if let Some(g) = d.iter().position(|&x| x == 0) {
        return Err(SpeaqError::InvalidDuplication(g));
    }
    let mut d = d.to_vec();
    let domains: Vec<(Option<usize>, Vec<usize>, usize)> = match gt_groups {
        None => vec![(None, (0..d.len()).collect(), n_q)],
        Some((groups, qg)) => {
            if groups.len() != d.len() {
                return Err(SpeaqError::DuplicationLength {
                    expected: d.len(),
                    got: groups.len(),
                });
            }
            if let Some(&bad) = groups.iter().find(|&&k| k >= qg.n_groups()) {
                return Err(GroupingError::UnknownId(bad).into());
            }
            (0..qg.n_groups())
                .map(|k| {
                    let members = (0..d.len()).filter(|&g| groups[g] == k).collect();
                    (Some(k), members, qg.counts[k])
                })
                .collect()
        }
    };
    for (domain, members, capacity) in &domains {
        if members.len() > *capacity {
            return Err(SpeaqError::CapacityExceeded {
                domain: *domain,
                gts: members.len(),
                capacity: *capacity,
            });
        }
        let mut load: usize = members.iter().map(|&g| d[g]).sum();
        while load > *capacity {
            // Largest count wins; `max_by_key` keeps the last maximum, so
            // iterate in reverse to favour the lowest index.
            let g = *members
                .iter()
                .rev()
                .filter(|&&g| d[g] > 1)
                .max_by_key(|&&g| d[g])
                .expect("members.len() <= capacity implies some d > 1");
            d[g] -= 1;
            load -= 1;
        }
    }

    let mut slots = Vec::with_capacity(n_q);
    for (g, &count) in d.iter().enumerate() {
        slots.extend(std::iter::repeat_n(Some(g), count));
    }
    if slots.len() > n_q {
        return Err(SpeaqError::CapacityExceeded {
            domain: None,
            gts: d.len(),
            capacity: n_q,
        });
    }
    slots.resize(n_q, None);
    Ok(AugmentedGts { slots, d })
}

/// Which assignment rule produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Single,
    Iou,
    Agnostic,
    Speaq,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Single => "single",
            StrategyKind::Iou => "iou",
            StrategyKind::Agnostic => "agnostic",
            StrategyKind::Speaq => "speaq",
        })
    }
}

/// A labelled (GT, prediction) pair and its matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub gt: usize,
    pub prediction: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub strategy: StrategyKind,
    /// Sorted by GT, then prediction.
    pub pairs: Vec<AssignedPair>,
    /// Number of predictions each GT was assigned to.
    pub d: Vec<usize>,
    pub total_cost: f64,
}

impl AssignmentResult {
    fn empty(strategy: StrategyKind) -> Self {
        Self {
            strategy,
            pairs: Vec::new(),
            d: Vec::new(),
            total_cost: 0.0,
        }
    }

    /// `true` for every prediction that received a GT.
    pub fn assigned_mask(&self, n_preds: usize) -> Vec<bool> {
        let mut mask = vec![false; n_preds];
        for p in &self.pairs {
            mask[p.prediction] = true;
        }
        mask
    }
}

fn gt_group_indices(gts: &[GtTriplet], groupings: Groupings<'_>) -> Result<Vec<usize>, SpeaqError> {
    gts.iter()
        .map(|t| {
            groupings
                .predicates
                .group_of(t.predicate_class)
                .map_err(Into::into)
        })
        .collect()
}

/// Matches `d[g]` copies of each GT against the predictions.
pub fn assign_with_duplication(
    gts: &[GtTriplet],
    preds: &[Prediction],
    d: &[usize],
    groupings: Option<Groupings<'_>>,
    w: &CostWeights,
    strategy: StrategyKind,
) -> Result<AssignmentResult, SpeaqError> {
    if d.len() != gts.len() {
        return Err(SpeaqError::DuplicationLength {
            expected: gts.len(),
            got: d.len(),
        });
    }
    if let Some(g) = groupings {
        if g.queries.n_queries() != preds.len() {
            return Err(SpeaqError::QueryCountMismatch {
                preds: preds.len(),
                queries: g.queries.n_queries(),
            });
        }
    }
    if gts.is_empty() {
        return Ok(AssignmentResult::empty(strategy));
    }
    let n_q = preds.len();
    let gt_groups = groupings.map(|g| gt_group_indices(gts, g)).transpose()?;
    let augmented = augment_gt_set(
        d,
        gt_groups.as_deref().zip(groupings.map(|g| g.queries)),
        n_q,
    )?;
    let matrix = build_cost_matrix(gts, &augmented.slots, preds, w, groupings)?;
    let solution = hungarian(&matrix)?;
    let mut pairs: Vec<AssignedPair> = augmented
        .slots
        .iter()
        .zip(&solution.perm)
        .enumerate()
        .filter_map(|(row, (slot, &col))| {
            slot.map(|gt| AssignedPair {
                gt,
                prediction: col,
                cost: matrix.get(row, col),
            })
        })
        .collect();
    pairs.sort_by_key(|p| (p.gt, p.prediction));
    Ok(AssignmentResult {
        strategy,
        pairs,
        d: augmented.d,
        total_cost: solution.total_cost,
    })
}

/// One-to-one Hungarian matching.
pub fn single_assign(
    gts: &[GtTriplet],
    preds: &[Prediction],
    w: &CostWeights,
) -> Result<AssignmentResult, SpeaqError> {
    assign_with_duplication(
        gts,
        preds,
        &vec![1; gts.len()],
        None,
        w,
        StrategyKind::Single,
    )
}

/// Every GT duplicated `d_const` times (clipped by capacity).
pub fn agnostic_multi_assign(
    gts: &[GtTriplet],
    preds: &[Prediction],
    w: &CostWeights,
    d_const: usize,
    groupings: Option<Groupings<'_>>,
) -> Result<AssignmentResult, SpeaqError> {
    if d_const == 0 {
        return Err(SpeaqError::InvalidDuplication(0));
    }
    assign_with_duplication(
        gts,
        preds,
        &vec![d_const; gts.len()],
        groupings,
        w,
        StrategyKind::Agnostic,
    )
}

/// Adaptive duplication counts for every GT.
pub fn adaptive_d(
    gts: &[GtTriplet],
    preds: &[Prediction],
    qc: &QualityConfig,
) -> Result<Vec<usize>, SpeaqError> {
    qc.validate()?;
    gts.iter()
        .map(|t| Ok(compute_d(&quality_vectors(t, preds, qc)?, qc)))
        .collect()
}

/// Quality-aware multi-assignment under the grouping constraint.
pub fn speaq_assign(
    gts: &[GtTriplet],
    preds: &[Prediction],
    groupings: Groupings<'_>,
    w: &CostWeights,
    qc: &QualityConfig,
) -> Result<AssignmentResult, SpeaqError> {
    let d = adaptive_d(gts, preds, qc)?;
    assign_with_duplication(gts, preds, &d, Some(groupings), w, StrategyKind::Speaq)
}

/// Threshold rule: every prediction whose subject and object IoU with a GT
/// both exceed `threshold` is labelled with that GT (the one with the highest
/// `min(iou_s, iou_o)` when several qualify). A GT left without predictions
/// takes its best unlabelled prediction by `min(iou_s, iou_o)`; only if every
/// prediction is already labelled does it share the overall best one.
pub fn iou_assign(
    gts: &[GtTriplet],
    preds: &[Prediction],
    threshold: f64,
    w: &CostWeights,
) -> Result<AssignmentResult, SpeaqError> {
    if gts.is_empty() {
        return Ok(AssignmentResult::empty(StrategyKind::Iou));
    }
    if preds.is_empty() {
        return Err(SpeaqError::CapacityExceeded {
            domain: None,
            gts: gts.len(),
            capacity: 0,
        });
    }
    let overlap: Vec<Vec<(f64, f64)>> = gts
        .iter()
        .map(|t| {
            preds
                .iter()
                .map(|p| {
                    (
                        iou(&t.subject_box, &p.subject_box),
                        iou(&t.object_box, &p.object_box),
                    )
                })
                .collect()
        })
        .collect();
    let score = |g: usize, j: usize| overlap[g][j].0.min(overlap[g][j].1);

    let mut owner: Vec<Option<usize>> = vec![None; preds.len()];
    for (j, slot) in owner.iter_mut().enumerate() {
        let mut best: Option<usize> = None;
        for (g, row) in overlap.iter().enumerate() {
            let (s, o) = row[j];
            if s > threshold && o > threshold && best.is_none_or(|b| score(g, j) > score(b, j)) {
                best = Some(g);
            }
        }
        *slot = best;
    }

    let mut pairs: Vec<(usize, usize)> = owner
        .iter()
        .enumerate()
        .filter_map(|(j, g)| g.map(|g| (g, j)))
        .collect();
    let mut d = vec![0usize; gts.len()];
    for &(g, _) in &pairs {
        d[g] += 1;
    }
    let best_of = |g: usize, candidates: &mut dyn Iterator<Item = usize>| {
        candidates.fold(None, |best: Option<usize>, j| match best {
            Some(b) if score(g, b) >= score(g, j) => Some(b),
            _ => Some(j),
        })
    };
    #[allow(clippy::needless_range_loop)]
    for g in 0..gts.len() {
        if d[g] > 0 {
            continue;
        }
        let free = best_of(g, &mut (0..preds.len()).filter(|&j| owner[j].is_none()));
        let j = free
            .or_else(|| best_of(g, &mut (0..preds.len())))
            .expect("predictions are nonempty");
        if owner[j].is_none() {
            owner[j] = Some(g);
        }
        pairs.push((g, j));
        d[g] = 1;
    }
    pairs.sort();

    let mut total_cost = 0.0;
    let pairs = pairs
        .into_iter()
        .map(|(g, j)| {
            let cost = crate::cost::match_cost(Some(&gts[g]), &preds[j], w)?;
            total_cost += cost;
            Ok(AssignedPair {
                gt: g,
                prediction: j,
                cost,
            })
        })
        .collect::<Result<Vec<_>, CostError>>()?;
    Ok(AssignmentResult {
        strategy: StrategyKind::Iou,
        pairs,
        d,
        total_cost,
    })
}

/// A strategy together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Single,
    Iou { threshold: f64 },
    Agnostic { d: usize },
    Speaq,
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Single => StrategyKind::Single,
            Strategy::Iou { .. } => StrategyKind::Iou,
            Strategy::Agnostic { .. } => StrategyKind::Agnostic,
            Strategy::Speaq => StrategyKind::Speaq,
        }
    }
}

/// Shared inputs for [`run_strategy`].
#[derive(Debug, Clone, Copy)]
pub struct AssignContext<'a> {
    pub weights: CostWeights,
    pub quality: QualityConfig,
    /// Required by [`Strategy::Speaq`]; ignored by the other strategies.
    pub groupings: Option<Groupings<'a>>,
}

pub fn run_strategy(
    strategy: Strategy,
    gts: &[GtTriplet],
    preds: &[Prediction],
    ctx: &AssignContext<'_>,
) -> Result<AssignmentResult, SpeaqError> {
    match strategy {
        Strategy::Single => single_assign(gts, preds, &ctx.weights),
        Strategy::Iou { threshold } => iou_assign(gts, preds, threshold, &ctx.weights),
        Strategy::Agnostic { d } => agnostic_multi_assign(gts, preds, &ctx.weights, d, None),
        Strategy::Speaq => {
            let groupings = ctx
                .groupings
                .ok_or(SpeaqError::MissingGrouping(StrategyKind::Speaq))?;
            speaq_assign(gts, preds, groupings, &ctx.weights, &ctx.quality)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use crate::assignment::brute_force_assignment;
    use crate::geometry::BoundingBox;
    use crate::grouping::PredicateGrouping;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn one_hot(n: usize, k: usize) -> Vec<f64> {
        (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    fn gt(predicate: usize) -> GtTriplet {
        GtTriplet {
            subject_box: bb(0.1, 0.1, 0.4, 0.5),
            object_box: bb(0.5, 0.2, 0.9, 0.8),
            predicate_box: None,
            subject_class: 0,
            object_class: 1,
            predicate_class: predicate,
        }
    }

    fn copy_of(t: &GtTriplet, q: usize, n_pred: usize) -> Prediction {
        Prediction {
            subject_box: t.subject_box,
            object_box: t.object_box,
            predicate_box: None,
            subject_probs: one_hot(3, t.subject_class),
            object_probs: one_hot(3, t.object_class),
            predicate_probs: one_hot(n_pred, t.predicate_class),
            query_index: q,
        }
    }

    fn background(q: usize, n_pred: usize) -> Prediction {
        Prediction {
            subject_box: bb(0.0, 0.9, 0.05, 1.0),
            object_box: bb(0.95, 0.0, 1.0, 0.05),
            predicate_box: None,
            subject_probs: one_hot(3, 2),
            object_probs: one_hot(3, 2),
            predicate_probs: one_hot(n_pred, n_pred - 1),
            query_index: q,
        }
    }

    fn qv(combined: Vec<f64>) -> QualityVectors {
        QualityVectors {
            subject: vec![],
            object: vec![],
            predicate: vec![],
            combined,
        }
    }

    #[test]
    fn quality_vector_examples() {
        let t = gt(1);
        let qc = QualityConfig {
            k: 5,
            lambda_rel: -0.5,
            relation: RelationFn::Max,
        };
        let v = quality_vectors(&t, &[copy_of(&t, 0, 3)], &qc).unwrap();
        assert_abs_diff_eq!(v.combined[0], 0.5, epsilon = 1e-12);

        let mut miss = background(0, 3);
        miss.predicate_probs = vec![0.0, 0.0, 1.0];
        let v = quality_vectors(&t, &[miss], &qc).unwrap();
        assert_eq!(v.combined[0], 0.0);

        let min = QualityConfig {
            relation: RelationFn::Min,
            ..qc
        };
        assert_abs_diff_eq!(
            min.relation.apply(0.8, 0.4) + min.lambda_rel * 0.6,
            0.1,
            epsilon = 1e-12
        );
        assert_eq!(RelationFn::Mean.apply(0.8, 0.4), 0.6000000000000001);
    }

    #[test]
    fn compute_d_examples() {
        let qc = QualityConfig {
            k: 4,
            ..Default::default()
        };
        assert_eq!(compute_d(&qv(vec![0.0; 10]), &qc), 1);
        let mut v = vec![0.9, 0.9, 0.9, 0.9, 0.1];
        v.extend([0.0; 5]);
        assert_eq!(compute_d(&qv(v), &qc), 3);
        let mut v = vec![0.5];
        v.extend([0.0; 9]);
        let qc5 = QualityConfig {
            k: 5,
            ..Default::default()
        };
        assert_eq!(compute_d(&qv(v), &qc5), 1);
    }

    #[test]
    fn top_k_keeps_negative_entries_inside_the_window() {
        assert_abs_diff_eq!(top_k_sum(&[0.5, -0.25, -0.5], 2), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(top_k_sum(&[0.5], 3), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn augment_examples() {
        let a = augment_gt_set(&[2, 1], None, 5).unwrap();
        assert_eq!(a.slots, vec![Some(0), Some(0), Some(1), None, None]);
        let a = augment_gt_set(&[1], None, 3).unwrap();
        assert_eq!(a.slots, vec![Some(0), None, None]);

        let qg = QueryGrouping::from_counts(vec![2, 3]).unwrap();
        let a = augment_gt_set(&[4], Some((&[0], &qg)), 5).unwrap();
        assert_eq!(a.d, vec![2]);
    }

    #[test]
    fn clipping_decrements_largest_first() {
        let a = augment_gt_set(&[3, 3, 1], None, 5).unwrap();
        assert_eq!(a.d, vec![2, 2, 1]);
        let a = augment_gt_set(&[2, 4, 1], None, 4).unwrap();
        assert_eq!(a.d, vec![1, 2, 1]);
    }

    #[test]
    fn capacity_errors() {
        assert_eq!(
            augment_gt_set(&[1, 1, 1], None, 2),
            Err(SpeaqError::CapacityExceeded {
                domain: None,
                gts: 3,
                capacity: 2
            })
        );
        let qg = QueryGrouping::from_counts(vec![1, 4]).unwrap();
        assert_eq!(
            augment_gt_set(&[1, 1], Some((&[0, 0], &qg)), 5),
            Err(SpeaqError::CapacityExceeded {
                domain: Some(0),
                gts: 2,
                capacity: 1
            })
        );
        assert_eq!(
            augment_gt_set(&[0], None, 2),
            Err(SpeaqError::InvalidDuplication(0))
        );
    }

    fn two_groups() -> (PredicateGrouping, QueryGrouping) {
        (
            PredicateGrouping::from_parts(vec![vec![0], vec![1, 2]], vec![0.5, 0.5]).unwrap(),
            QueryGrouping::from_counts(vec![2, 2]).unwrap(),
        )
    }

    #[test]
    fn speaq_single_pair() {
        let t = gt(0);
        let pg = PredicateGrouping::from_parts(vec![vec![0, 1, 2]], vec![1.0]).unwrap();
        let qg = QueryGrouping::from_counts(vec![1]).unwrap();
        let r = speaq_assign(
            std::slice::from_ref(&t),
            &[copy_of(&t, 0, 4)],
            Groupings::new(&pg, &qg).unwrap(),
            &CostWeights::default(),
            &QualityConfig::default(),
        )
        .unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!((r.pairs[0].gt, r.pairs[0].prediction), (0, 0));
        assert_eq!(r.d, vec![1]);
    }

    #[test]
    fn speaq_respects_groups_even_when_other_group_is_cheaper() {
        let t = gt(0); // group 0 -> queries 0, 1
        let (pg, qg) = two_groups();
        let preds = vec![
            background(0, 4),
            background(1, 4),
            copy_of(&t, 2, 4),
            copy_of(&t, 3, 4),
        ];
        let groupings = Groupings::new(&pg, &qg).unwrap();
        let r = speaq_assign(
            std::slice::from_ref(&t),
            &preds,
            groupings,
            &CostWeights::default(),
            &QualityConfig::default(),
        )
        .unwrap();
        assert!(r.pairs.iter().all(|p| p.prediction < 2));

        // Oracle on the same grouped matrix.
        let aug = augment_gt_set(&r.d, Some((&[0], &qg)), 4).unwrap();
        let m = build_cost_matrix(
            std::slice::from_ref(&t),
            &aug.slots,
            &preds,
            &CostWeights::default(),
            Some(groupings),
        )
        .unwrap();
        assert_eq!(brute_force_assignment(&m).unwrap().total_cost, r.total_cost);
    }

    #[test]
    fn zero_gts_yield_no_pairs() {
        let (pg, qg) = two_groups();
        let preds: Vec<_> = (0..4).map(|q| background(q, 4)).collect();
        let w = CostWeights::default();
        let r = speaq_assign(
            &[],
            &preds,
            Groupings::new(&pg, &qg).unwrap(),
            &w,
            &QualityConfig::default(),
        )
        .unwrap();
        assert!(r.pairs.is_empty());
        assert!(single_assign(&[], &preds, &w).unwrap().pairs.is_empty());
    }

    #[test]
    fn speaq_requires_matching_query_count() {
        let (pg, qg) = two_groups();
        let preds: Vec<_> = (0..3).map(|q| background(q, 4)).collect();
        assert_eq!(
            speaq_assign(
                &[gt(0)],
                &preds,
                Groupings::new(&pg, &qg).unwrap(),
                &CostWeights::default(),
                &QualityConfig::default()
            ),
            Err(SpeaqError::QueryCountMismatch {
                preds: 3,
                queries: 4
            })
        );
    }

    #[test]
    fn single_picks_strictly_cheaper_prediction() {
        let t = gt(0);
        let preds = vec![background(0, 3), copy_of(&t, 1, 3)];
        let r = single_assign(std::slice::from_ref(&t), &preds, &CostWeights::default()).unwrap();
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].prediction, 1);
        assert_eq!(r.d, vec![1]);
    }

    #[test]
    fn agnostic_duplicates_every_gt() {
        let t = gt(0);
        let preds: Vec<_> = (0..4).map(|q| copy_of(&t, q, 3)).collect();
        let w = CostWeights::default();
        let r = agnostic_multi_assign(std::slice::from_ref(&t), &preds, &w, 3, None).unwrap();
        assert_eq!(r.d, vec![3]);
        let mut used: Vec<_> = r.pairs.iter().map(|p| p.prediction).collect();
        used.dedup();
        assert_eq!(used.len(), 3);

        let one = agnostic_multi_assign(std::slice::from_ref(&t), &preds, &w, 1, None).unwrap();
        let single = single_assign(std::slice::from_ref(&t), &preds, &w).unwrap();
        assert_eq!(one.pairs, single.pairs);
        assert_eq!(one.total_cost, single.total_cost);
    }

    fn shifted(t: &GtTriplet, q: usize, dx: f64) -> Prediction {
        let mut p = copy_of(t, q, 3);
        let s = t.subject_box;
        let o = t.object_box;
        p.subject_box = bb(s.x_min() + dx, s.y_min(), s.x_max() + dx, s.y_max());
        p.object_box = bb(o.x_min() + dx, o.y_min(), o.x_max() + dx, o.y_max());
        p
    }

    #[test]
    fn iou_threshold_rule() {
        let t = gt(0);
        // Width 0.3 subject box shifted by 0.01 keeps IoU around 0.94.
        let preds: Vec<_> = (0..3).map(|q| shifted(&t, q, 0.01 * q as f64)).collect();
        let r = iou_assign(
            std::slice::from_ref(&t),
            &preds,
            0.5,
            &CostWeights::default(),
        )
        .unwrap();
        assert_eq!(r.d, vec![3]);

        let far = vec![background(0, 3), shifted(&t, 1, 0.09)];
        let r = iou_assign(std::slice::from_ref(&t), &far, 0.9, &CostWeights::default()).unwrap();
        assert_eq!(r.d, vec![1]);
        assert_eq!(r.pairs[0].prediction, 1);

        let r = iou_assign(
            std::slice::from_ref(&t),
            &preds[1..],
            1.0,
            &CostWeights::default(),
        )
        .unwrap();
        assert_eq!(r.d, vec![1]);
    }

    #[test]
    fn iou_prediction_goes_to_best_gt() {
        let a = gt(0);
        let mut b = gt(1);
        b.subject_box = bb(0.12, 0.1, 0.42, 0.5);
        let p = shifted(&a, 0, 0.015);
        let r = iou_assign(
            &[a, b],
            &[p, background(1, 3)],
            0.5,
            &CostWeights::default(),
        )
        .unwrap();
        // Both GTs qualify for prediction 0; GT 1 sits closer.
        assert!(r.pairs.contains(&AssignedPair {
            gt: 1,
            prediction: 0,
            cost: r.pairs.iter().find(|p| p.gt == 1).unwrap().cost
        }));
        assert_eq!(r.d, vec![1, 1]);
    }

    #[test]
    fn missing_grouping_is_reported() {
        let ctx = AssignContext {
            weights: CostWeights::default(),
            quality: QualityConfig::default(),
            groupings: None,
        };
        assert_eq!(
            run_strategy(Strategy::Speaq, &[], &[], &ctx),
            Err(SpeaqError::MissingGrouping(StrategyKind::Speaq))
        );
    }

    proptest! {
        #[test]
        fn d_is_bounded_by_k(
            values in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..40),
            k in 1usize..8,
            lambda in -2.0f64..=0.0,
            rel in prop_oneof![Just(RelationFn::Min), Just(RelationFn::Mean), Just(RelationFn::Max)],
        ) {
            let qc = QualityConfig { k, lambda_rel: lambda, relation: rel };
            let combined = values.iter().map(|&(s, o, r)| rel.apply(s, o) + lambda * r).collect();
            let d = compute_d(&qv(combined), &qc);
            prop_assert!(d >= 1 && d <= k);
        }

        #[test]
        fn clipping_never_raises_and_keeps_one(
            d in proptest::collection::vec(1usize..6, 0..6),
            extra in 0usize..10,
        ) {
            let n_q = d.len() + extra;
            let a = augment_gt_set(&d, None, n_q).unwrap();
            prop_assert!(a.d.iter().zip(&d).all(|(new, old)| *new >= 1 && new <= old));
            prop_assert!(a.d.iter().sum::<usize>() <= n_q);
            prop_assert_eq!(a.slots.len(), n_q);
        }
    }
}
