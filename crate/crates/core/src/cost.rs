//! Triplet data model, the triplet matching cost, cost-matrix construction
//! over an augmented GT list, and the per-pair training loss.
//!
//! Probability vectors may carry a trailing "no relation" class; an empty GT
//! slot always targets the last index of each vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{AssignmentError, CostMatrix, FORBIDDEN};
use crate::geometry::{giou, l1_box_distance, BoundingBox};
use crate::grouping::{grouping_cost, GroupingError, Groupings};

/// Tolerance on probability vector sums.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Guard inside `ln` for cross-entropy.
pub const CE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("class {class} is out of range for a probability vector of length {len}")]
    UnknownClass { class: usize, len: usize },
    #[error("probability vector is invalid: {0}")]
    InvalidProbabilities(String),
    #[error("{gts} GT slots vs {preds} predictions")]
    LengthMismatch { gts: usize, preds: usize },
    #[error("GT slot {slot} refers to GT {gt}, but only {available} GTs exist")]
    DanglingSlot {
        slot: usize,
        gt: usize,
        available: usize,
    },
    #[error("cost weights must be finite and nonnegative")]
    InvalidWeights,
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

/// A ground-truth relation triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTriplet {
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_box: Option<BoundingBox>,
    pub subject_class: usize,
    pub object_class: usize,
    pub predicate_class: usize,
}

/// One query's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_box: BoundingBox,
    pub object_box: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_box: Option<BoundingBox>,
    pub subject_probs: Vec<f64>,
    pub object_probs: Vec<f64>,
    pub predicate_probs: Vec<f64>,
    /// 0-based query slot that produced this prediction.
    pub query_index: usize,
}

impl Prediction {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, probs) in [
            ("subject", &self.subject_probs),
            ("object", &self.object_probs),
            ("predicate", &self.predicate_probs),
        ] {
            validate_probs(probs)
                .map_err(|e| CostError::InvalidProbabilities(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

fn validate_probs(probs: &[f64]) -> Result<(), String> {
    if probs.is_empty() {
        return Err("empty".into());
    }
    if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("entry {p} is negative or not finite"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Classification term of the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassCost {
    /// `-p(class)`.
    #[default]
    NegProb,
    /// `-ln(p(class) + CE_EPSILON)`.
    CrossEntropy,
}

/// Weights of the classification, L1 and GIoU terms in the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub w_cls: f64,
    pub w_l1: f64,
    pub w_giou: f64,
    pub include_predicate_box: bool,
    pub class_cost: ClassCost,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_l1: 5.0,
            w_giou: 2.0,
            include_predicate_box: false,
            class_cost: ClassCost::NegProb,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), CostError> {
        if [self.w_cls, self.w_l1, self.w_giou]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(CostError::InvalidWeights)
        }
    }

    fn class_term(&self, probs: &[f64], class: usize) -> Result<f64, CostError> {
        Ok(self.w_cls
            * match self.class_cost {
                ClassCost::NegProb => -prob_of(probs, class)?,
                ClassCost::CrossEntropy => cross_entropy(probs, class)?,
            })
    }

    fn box_cost(&self, gt: &BoundingBox, pred: &BoundingBox) -> f64 {
        self.w_l1 * l1_box_distance(gt, pred) + self.w_giou * (1.0 - giou(gt, pred))
    }
}

/// Weights of the training loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_cls: f64,
    pub w_l1: f64,
    pub w_giou: f64,
    pub include_predicate_box: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_l1: 5.0,
            w_giou: 2.0,
            include_predicate_box: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), CostError> {
        CostWeights {
            w_cls: self.w_cls,
            w_l1: self.w_l1,
            w_giou: self.w_giou,
            include_predicate_box: self.include_predicate_box,
            class_cost: ClassCost::NegProb,
        }
        .validate()
    }
}

fn prob_of(probs: &[f64], class: usize) -> Result<f64, CostError> {
    probs.get(class).copied().ok_or(CostError::UnknownClass {
        class,
        len: probs.len(),
    })
}

/// Matching cost of one entity: negative class probability plus box terms.
pub fn entity_cost(
    class: usize,
    gt_box: &BoundingBox,
    probs: &[f64],
    pred_box: &BoundingBox,
    w: &CostWeights,
) -> Result<f64, CostError> {
    Ok(w.class_term(probs, class)? + w.box_cost(gt_box, pred_box))
}

/// Triplet matching cost; an empty GT slot (`None`) costs 0 against anything.
pub fn match_cost(
    gt: Option<&GtTriplet>,
    pred: &Prediction,
    w: &CostWeights,
) -> Result<f64, CostError> {
    let Some(t) = gt else {
        return Ok(0.0);
    };
    let subject = entity_cost(
        t.subject_class,
        &t.subject_box,
        &pred.subject_probs,
        &pred.subject_box,
        w,
    )?;
    let object = entity_cost(
        t.object_class,
        &t.object_box,
        &pred.object_probs,
        &pred.object_box,
        w,
    )?;
    let mut predicate = w.class_term(&pred.predicate_probs, t.predicate_class)?;
    if w.include_predicate_box {
        if let (Some(gb), Some(pb)) = (&t.predicate_box, &pred.predicate_box) {
            predicate += w.box_cost(gb, pb);
        }
    }
    Ok(subject + predicate + object)
}

/// Builds the square matrix between GT slots and predictions.
///
/// `slots[i]` is `Some(g)` for a copy of `gts[g]` and `None` for an empty
/// slot. With groupings, a GT row may only use columns from its own group;
/// other entries are [`FORBIDDEN`].
pub fn build_cost_matrix(
    gts: &[GtTriplet],
    slots: &[Option<usize>],
    preds: &[Prediction],
    w: &CostWeights,
    groupings: Option<Groupings<'_>>,
) -> Result<CostMatrix, CostError> {
    let n = preds.len();
    if slots.len() != n || n == 0 {
        return Err(CostError::LengthMismatch {
            gts: slots.len(),
            preds: n,
        });
    }
    let query_groups = match groupings {
        Some(g) => Some(
            preds
                .iter()
                .map(|p| g.queries.group_of(p.query_index))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        None => None,
    };
    let mut entries = Vec::with_capacity(n * n);
    for (slot, gt_index) in slots.iter().enumerate() {
        let gt = match gt_index {
            Some(g) => Some(gts.get(*g).ok_or(CostError::DanglingSlot {
                slot,
                gt: *g,
                available: gts.len(),
            })?),
            None => None,
        };
        let gt_group = match (groupings, gt) {
            (Some(g), Some(t)) => Some(g.predicates.group_of(t.predicate_class)?),
            _ => None,
        };
        for (j, pred) in preds.iter().enumerate() {
            let group_term = match &query_groups {
                Some(qgs) => grouping_cost(gt_group, qgs[j]),
                None => 0.0,
            };
            let entry = if group_term == FORBIDDEN {
                FORBIDDEN
            } else {
                match_cost(gt, pred, w)? + group_term
            };
            entries.push(entry);
        }
    }
    Ok(CostMatrix::new(n, entries)?)
}

/// Subject, predicate and object loss of one assigned pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub subject: f64,
    pub predicate: f64,
    pub object: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.subject + self.predicate + self.object
    }
}

fn cross_entropy(probs: &[f64], target: usize) -> Result<f64, CostError> {
    Ok(-(prob_of(probs, target)? + CE_EPSILON).ln())
}

/// Training loss of `pred` against a GT slot. Empty slots target the last
/// class of each vector and carry no box term.
pub fn total_loss(
    gt: Option<&GtTriplet>,
    pred: &Prediction,
    lw: &LossWeights,
) -> Result<LossComponents, CostError> {
    let last = |v: &[f64]| v.len().saturating_sub(1);
    let Some(t) = gt else {
        return Ok(LossComponents {
            subject: lw.w_cls * cross_entropy(&pred.subject_probs, last(&pred.subject_probs))?,
            predicate: lw.w_cls
                * cross_entropy(&pred.predicate_probs, last(&pred.predicate_probs))?,
            object: lw.w_cls * cross_entropy(&pred.object_probs, last(&pred.object_probs))?,
        });
    };
    let box_loss = |g: &BoundingBox, p: &BoundingBox| {
        lw.w_l1 * l1_box_distance(g, p) + lw.w_giou * (1.0 - giou(g, p))
    };
    let mut predicate = lw.w_cls * cross_entropy(&pred.predicate_probs, t.predicate_class)?;
    if lw.include_predicate_box {
        if let (Some(gb), Some(pb)) = (&t.predicate_box, &pred.predicate_box) {
            predicate += box_loss(gb, pb);
        }
    }
    Ok(LossComponents {
        subject: lw.w_cls * cross_entropy(&pred.subject_probs, t.subject_class)?
            + box_loss(&t.subject_box, &pred.subject_box),
        predicate,
        object: lw.w_cls * cross_entropy(&pred.object_probs, t.object_class)?
            + box_loss(&t.object_box, &pred.object_box),
    })
}
