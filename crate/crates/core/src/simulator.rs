//! Seeded synthetic scenes and a side-by-side comparison of assignment
//! strategies on them.
//!
//! Scene `i` draws from its own ChaCha8 stream: the generator is seeded with
//! the configured 64-bit seed and then switched to stream `i`. Scenes are
//! therefore independent of evaluation order and thread count. Aggregates are
//! means over scenes, summed in sorted order so that they do not depend on
//! scene order either.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostWeights, GtTriplet, Prediction};
use crate::geometry::{iou, BoundingBox};
use crate::grouping::{
    group_predicates, group_queries, FrequencyTable, GroupingError, Groupings, PredicateGrouping,
    QueryGrouping,
};
use crate::speaq::{
    run_strategy, AssignContext, AssignmentResult, QualityConfig, SpeaqError, Strategy,
};

/// Thresholds at which the suppression ratio is always reported.
pub const REPORT_IOU_THRESHOLDS: [f64; 3] = [0.6, 0.7, 0.8];

/// Scale applied to Zipf weights to obtain integer frequency counts.
const ZIPF_COUNT_SCALE: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error("scene {scene}, strategy {strategy}: {source}")]
    Assignment {
        scene: usize,
        strategy: String,
        source: SpeaqError,
    },
}

/// Parameters of the synthetic scene distribution and of the assignment
/// strategies evaluated on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_predicates: usize,
    pub n_entity_classes: usize,
    pub n_q: usize,
    pub n_g: usize,
    /// Predicate `r` (0-based) has weight `(r + 1)^-zipf_exponent`.
    pub zipf_exponent: f64,
    pub scenes: usize,
    /// Inclusive `[min, max]` GT count per scene.
    pub gt_per_scene: [usize; 2],
    /// Inclusive `[min, max]` near-correct predictions spawned per GT.
    pub candidates_per_gt: [usize; 2],
    /// Standard deviation of the Gaussian noise added to candidate corners.
    pub box_jitter_sigma: f64,
    /// Softmax temperature of candidate class vectors; small is sharp.
    pub class_temperature: f64,
    pub promising_iou_threshold: f64,
    pub seed: u64,
    pub quality: QualityConfig,
    pub cost: CostWeights,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_predicates: 50,
            n_entity_classes: 20,
            n_q: 100,
            n_g: 4,
            zipf_exponent: 1.2,
            scenes: 200,
            gt_per_scene: [1, 6],
            candidates_per_gt: [1, 4],
            box_jitter_sigma: 0.02,
            class_temperature: 0.5,
            promising_iou_threshold: 0.6,
            seed: 20_240_617,
            quality: QualityConfig::default(),
            cost: CostWeights::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |msg: String| Err(SimulationError::InvalidConfig(msg));
        if self.n_predicates == 0 || self.n_entity_classes == 0 || self.n_q == 0 || self.n_g == 0 {
            return bad("n_predicates, n_entity_classes, n_q and n_g must be positive".into());
        }
        if self.scenes == 0 {
            return bad("scenes must be positive".into());
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad(format!("zipf_exponent {} must be >= 0", self.zipf_exponent));
        }
        for (name, [lo, hi]) in [
            ("gt_per_scene", self.gt_per_scene),
            ("candidates_per_gt", self.candidates_per_gt),
        ] {
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.gt_per_scene[1] * self.candidates_per_gt[1] > self.n_q {
            return bad(format!(
                "up to {} candidates per scene do not fit into n_q = {}",
                self.gt_per_scene[1] * self.candidates_per_gt[1],
                self.n_q
            ));
        }
        if !(self.box_jitter_sigma.is_finite() && self.box_jitter_sigma >= 0.0) {
            return bad("box_jitter_sigma must be finite and >= 0".into());
        }
        if !(self.class_temperature.is_finite() && self.class_temperature > 0.0) {
            return bad("class_temperature must be > 0".into());
        }
        if !(self.promising_iou_threshold > 0.0 && self.promising_iou_threshold <= 1.0) {
            return bad("promising_iou_threshold must lie in (0, 1]".into());
        }
        self.quality
            .validate()
            .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
        self.cost
            .validate()
            .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Integer frequency counts following the configured Zipf law.
    pub fn frequency_table(&self) -> Result<FrequencyTable, GroupingError> {
        FrequencyTable::new(
            (0..self.n_predicates)
                .map(|r| {
                    let w = ((r + 1) as f64).powf(-self.zipf_exponent);
                    (r, (ZIPF_COUNT_SCALE * w).round().max(1.0) as u64)
                })
                .collect(),
        )
    }
}

/// One image's GTs and the `n_q` predictions made for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gts: Vec<GtTriplet>,
    pub preds: Vec<Prediction>,
}

/// A validated scenario with its derived groupings.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    predicate_groups: PredicateGrouping,
    query_groups: QueryGrouping,
    predicate_sampler: WeightedIndex<u64>,
    jitter: Normal<f64>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimulationError> {
        cfg.validate()?;
        let table = cfg.frequency_table()?;
        let predicate_groups = group_predicates(&table, cfg.n_g)?;
        let query_groups = group_queries(&predicate_groups, cfg.n_q)?;
        let smallest = *query_groups.counts.iter().min().expect("n_g >= 1");
        if smallest < cfg.gt_per_scene[1] {
            return Err(SimulationError::InvalidConfig(format!(
                "smallest query group has {smallest} queries but a scene may hold {} GTs of one group",
                cfg.gt_per_scene[1]
            )));
        }
        let weights: Vec<u64> = table.entries().iter().map(|&(_, c)| c).collect();
        let predicate_sampler = WeightedIndex::new(weights)
            .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
        let jitter = Normal::new(0.0, cfg.box_jitter_sigma)
            .map_err(|e| SimulationError::InvalidConfig(e.to_string()))?;
        Ok(Self {
            cfg,
            predicate_groups,
            query_groups,
            predicate_sampler,
            jitter,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn predicate_groups(&self) -> &PredicateGrouping {
        &self.predicate_groups
    }

    pub fn query_groups(&self) -> &QueryGrouping {
        &self.query_groups
    }

    pub fn groupings(&self) -> Groupings<'_> {
        Groupings {
            predicates: &self.predicate_groups,
            queries: &self.query_groups,
        }
    }

    /// The generator for scene `index`.
    pub fn scene_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64);
        rng
    }

    pub fn scene(&self, index: usize) -> Scene {
        generate_scene(&mut self.scene_rng(index), self)
    }
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Softened one-hot over `n_classes` real classes plus a trailing no-object slot.
fn soft_one_hot(n_classes: usize, target: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..=n_classes)
        .map(|i| if i == target { 1.0 } else { 0.0 })
        .collect();
    softmax(&logits, temperature)
}

/// Near-uniform class scores with the no-object slot favoured.
fn background_probs<R: Rng>(rng: &mut R, n_classes: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..=n_classes)
        .map(|i| {
            let noise = rng.random_range(0.0..0.5);
            if i == n_classes {
                2.0 + noise
            } else {
                noise
            }
        })
        .collect();
    softmax(&logits, 1.0)
}

fn random_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let cx: f64 = rng.random_range(0.0..1.0);
    let cy: f64 = rng.random_range(0.0..1.0);
    let w: f64 = rng.random_range(0.1..0.5);
    let h: f64 = rng.random_range(0.1..0.5);
    BoundingBox::from_corners_clamped(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn jittered<R: Rng>(rng: &mut R, b: &BoundingBox, noise: &Normal<f64>) -> BoundingBox {
    let mut corner = |v: f64| v + noise.sample(rng);
    BoundingBox::from_corners_clamped(
        corner(b.x_min()),
        corner(b.y_min()),
        corner(b.x_max()),
        corner(b.y_max()),
    )
}

/// Draws one scene.
///
/// Near-correct candidates of a GT occupy free query slots of the GT's own
/// query group, spilling into any free slot once that group is full. Every
/// remaining slot holds a background prediction.
pub fn generate_scene<R: Rng>(rng: &mut R, sim: &Simulation) -> Scene {
    let cfg = &sim.cfg;
    let n_gt = rng.random_range(cfg.gt_per_scene[0]..=cfg.gt_per_scene[1]);
    let gts: Vec<GtTriplet> = (0..n_gt)
        .map(|_| GtTriplet {
            subject_box: random_box(rng),
            object_box: random_box(rng),
            predicate_box: None,
            subject_class: rng.random_range(0..cfg.n_entity_classes),
            object_class: rng.random_range(0..cfg.n_entity_classes),
            predicate_class: sim.predicate_sampler.sample(rng),
        })
        .collect();

    let mut slots: Vec<Option<Prediction>> = vec![None; cfg.n_q];
    for t in &gts {
        let group = sim
            .predicate_groups
            .group_of(t.predicate_class)
            .expect("sampled predicates are grouped");
        let n_candidates = rng.random_range(cfg.candidates_per_gt[0]..=cfg.candidates_per_gt[1]);
        for _ in 0..n_candidates {
            let mut free: Vec<usize> = sim
                .query_groups
                .range(group)
                .filter(|&q| slots[q].is_none())
                .collect();
            if free.is_empty() {
                free = (0..cfg.n_q).filter(|&q| slots[q].is_none()).collect();
            }
            let &q = free
                .choose(rng)
                .expect("validated: candidates fit into n_q");
            slots[q] = Some(Prediction {
                subject_box: jittered(rng, &t.subject_box, &sim.jitter),
                object_box: jittered(rng, &t.object_box, &sim.jitter),
                predicate_box: None,
                subject_probs: soft_one_hot(
                    cfg.n_entity_classes,
                    t.subject_class,
                    cfg.class_temperature,
                ),
                object_probs: soft_one_hot(
                    cfg.n_entity_classes,
                    t.object_class,
                    cfg.class_temperature,
                ),
                predicate_probs: soft_one_hot(
                    cfg.n_predicates,
                    t.predicate_class,
                    cfg.class_temperature,
                ),
                query_index: q,
            });
        }
    }

    let preds = slots
        .into_iter()
        .enumerate()
        .map(|(q, slot)| {
            slot.unwrap_or_else(|| Prediction {
                subject_box: random_box(rng),
                object_box: random_box(rng),
                predicate_box: None,
                subject_probs: background_probs(rng, cfg.n_entity_classes),
                object_probs: background_probs(rng, cfg.n_entity_classes),
                predicate_probs: background_probs(rng, cfg.n_predicates),
                query_index: q,
            })
        })
        .collect();
    Scene { gts, preds }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| {
            if x > bv {
                (i, x)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Predictions whose argmax subject, object and predicate classes equal some
/// GT's classes while both subject and object IoU with that GT exceed `iou_t`.
pub fn promising_mask(gts: &[GtTriplet], preds: &[Prediction], iou_t: f64) -> Vec<bool> {
    preds
        .iter()
        .map(|p| {
            let (s, o, r) = (
                argmax(&p.subject_probs),
                argmax(&p.object_probs),
                argmax(&p.predicate_probs),
            );
            gts.iter().any(|t| {
                t.subject_class == s
                    && t.object_class == o
                    && t.predicate_class == r
                    && iou(&t.subject_box, &p.subject_box) > iou_t
                    && iou(&t.object_box, &p.object_box) > iou_t
            })
        })
        .collect()
}

/// Share of promising predictions that received no GT; 0 when none are promising.
pub fn suppressed_promising_ratio(
    gts: &[GtTriplet],
    preds: &[Prediction],
    result: &AssignmentResult,
    iou_t: f64,
) -> f64 {
    let promising = promising_mask(gts, preds, iou_t);
    let assigned = result.assigned_mask(preds.len());
    let total = promising.iter().filter(|&&p| p).count();
    if total == 0 {
        return 0.0;
    }
    let suppressed = promising
        .iter()
        .zip(&assigned)
        .filter(|(&p, &a)| p && !a)
        .count();
    suppressed as f64 / total as f64
}

/// Diagnostics of one strategy on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMetrics {
    /// Indexed like [`report_thresholds`].
    pub suppressed: Vec<f64>,
    /// Mean duplication count; `None` for scenes without GTs.
    pub mean_d: Option<f64>,
    /// `[predicate group][query group]` pairs per query of the query group.
    pub cross_tab: Vec<Vec<f64>>,
    pub gts_per_query: f64,
    /// Pairs whose GT falls in each predicate group.
    pub pairs_per_group: Vec<f64>,
}

/// The reported thresholds: the fixed set plus the configured one.
pub fn report_thresholds(cfg: &ScenarioConfig) -> Vec<f64> {
    let mut t: Vec<f64> = REPORT_IOU_THRESHOLDS.to_vec();
    if !t.contains(&cfg.promising_iou_threshold) {
        t.push(cfg.promising_iou_threshold);
    }
    t.sort_by(f64::total_cmp);
    t
}

pub fn scene_metrics(
    scene: &Scene,
    result: &AssignmentResult,
    groupings: Groupings<'_>,
    thresholds: &[f64],
) -> SceneMetrics {
    let n_g = groupings.queries.n_groups();
    let suppressed = thresholds
        .iter()
        .map(|&t| suppressed_promising_ratio(&scene.gts, &scene.preds, result, t))
        .collect();
    let mean_d = (!result.d.is_empty())
        .then(|| result.d.iter().sum::<usize>() as f64 / result.d.len() as f64);
    let mut counts = vec![vec![0.0; n_g]; n_g];
    let mut pairs_per_group = vec![0.0; n_g];
    for pair in &result.pairs {
        let pg = groupings
            .predicates
            .group_of(scene.gts[pair.gt].predicate_class)
            .expect("scene predicates are grouped");
        let qg = groupings
            .queries
            .group_of(scene.preds[pair.prediction].query_index)
            .expect("query indices are in range");
        counts[pg][qg] += 1.0;
        pairs_per_group[pg] += 1.0;
    }
    let cross_tab = counts
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&groupings.queries.counts)
                .map(|(c, &size)| if size == 0 { 0.0 } else { c / size as f64 })
                .collect()
        })
        .collect();
    SceneMetrics {
        suppressed,
        mean_d,
        cross_tab,
        gts_per_query: result.pairs.len() as f64 / scene.preds.len().max(1) as f64,
        pairs_per_group,
    }
}

/// Pairwise sum of `values` taken in ascending order, so the result does not
/// depend on the input order.
pub fn order_free_sum(values: &[f64]) -> f64 {
    fn pairwise(v: &[f64]) -> f64 {
        match v.len() {
            0 => 0.0,
            1 => v[0],
            n => pairwise(&v[..n / 2]) + pairwise(&v[n / 2..]),
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    pairwise(&sorted)
}

fn order_free_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        order_free_sum(values) / values.len() as f64
    }
}

/// Aggregate diagnostics of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    /// Keyed by IoU threshold.
    pub suppressed_promising_ratio: BTreeMap<String, f64>,
    /// Mean over scenes that contain GTs.
    pub avg_d: f64,
    /// `[predicate group][query group]` mean pairs per query.
    pub per_group_cross_tab: Vec<Vec<f64>>,
    pub avg_gts_per_query: f64,
    /// Share of labelled predictions per predicate group.
    pub prediction_frequency_per_group: Vec<f64>,
}

impl StrategyReport {
    /// Suppression ratio at `threshold`, if it was reported.
    pub fn suppressed_at(&self, threshold: f64) -> Option<f64> {
        self.suppressed_promising_ratio
            .get(&threshold_key(threshold))
            .copied()
    }
}

pub fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// Aggregates per-scene metrics. Input order does not affect the output.
pub fn aggregate(metrics: &[SceneMetrics], thresholds: &[f64], n_g: usize) -> StrategyReport {
    let column = |f: &dyn Fn(&SceneMetrics) -> Option<f64>| -> Vec<f64> {
        metrics.iter().filter_map(f).collect()
    };
    let suppressed_promising_ratio = thresholds
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (
                threshold_key(t),
                order_free_mean(&column(&|m| Some(m.suppressed[i]))),
            )
        })
        .collect();
    let per_group_cross_tab = (0..n_g)
        .map(|p| {
            (0..n_g)
                .map(|q| order_free_mean(&column(&|m| Some(m.cross_tab[p][q]))))
                .collect()
        })
        .collect();
    let mean_pairs: Vec<f64> = (0..n_g)
        .map(|g| order_free_mean(&column(&|m| Some(m.pairs_per_group[g]))))
        .collect();
    let total = order_free_sum(&mean_pairs);
    let prediction_frequency_per_group = mean_pairs
        .iter()
        .map(|&c| if total > 0.0 { c / total } else { 0.0 })
        .collect();
    StrategyReport {
        suppressed_promising_ratio,
        avg_d: order_free_mean(&column(&|m| m.mean_d)),
        per_group_cross_tab,
        avg_gts_per_query: order_free_mean(&column(&|m| Some(m.gts_per_query))),
        prediction_frequency_per_group,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub predicate_groups: Vec<Vec<usize>>,
    pub query_group_counts: Vec<usize>,
    /// Share of GTs per predicate group across all scenes.
    pub gt_frequency_per_group: Vec<f64>,
    pub strategies: BTreeMap<String, StrategyReport>,
}

/// Strategy name used as the report key.
pub fn strategy_name(s: &Strategy) -> String {
    s.kind().to_string()
}

/// Runs every strategy on every scene and aggregates the diagnostics.
///
/// Scenes are evaluated in parallel on the current rayon pool.
pub fn run_comparison(
    cfg: &ScenarioConfig,
    strategies: &[Strategy],
) -> Result<SimulationReport, SimulationError> {
    if strategies.is_empty() {
        return Err(SimulationError::InvalidConfig("no strategies given".into()));
    }
    let names: Vec<String> = strategies.iter().map(strategy_name).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != names.len() {
        return Err(SimulationError::InvalidConfig(
            "duplicate strategies".into(),
        ));
    }

    let sim = Simulation::new(cfg.clone())?;
    let thresholds = report_thresholds(cfg);
    let groupings = sim.groupings();
    let ctx = AssignContext {
        weights: cfg.cost,
        quality: cfg.quality,
        groupings: Some(groupings),
    };
    let n_g = groupings.queries.n_groups();

    type SceneOutput = (Vec<f64>, Vec<SceneMetrics>);
    let per_scene: Vec<SceneOutput> = (0..cfg.scenes)
        .into_par_iter()
        .map(|index| {
            let scene = sim.scene(index);
            let mut gt_groups = vec![0.0; n_g];
            for t in &scene.gts {
                gt_groups[sim
                    .predicate_groups
                    .group_of(t.predicate_class)
                    .expect("sampled predicates are grouped")] += 1.0;
            }
            let metrics = strategies
                .iter()
                .map(|&s| {
                    let result =
                        run_strategy(s, &scene.gts, &scene.preds, &ctx).map_err(|source| {
                            SimulationError::Assignment {
                                scene: index,
                                strategy: strategy_name(&s),
                                source,
                            }
                        })?;
                    Ok(scene_metrics(&scene, &result, groupings, &thresholds))
                })
                .collect::<Result<Vec<_>, SimulationError>>()?;
            Ok((gt_groups, metrics))
        })
        .collect::<Result<Vec<_>, SimulationError>>()?;

    let gt_means: Vec<f64> = (0..n_g)
        .map(|g| order_free_mean(&per_scene.iter().map(|(c, _)| c[g]).collect::<Vec<_>>()))
        .collect();
    let gt_total = order_free_sum(&gt_means);
    let gt_frequency_per_group = gt_means
        .iter()
        .map(|&c| if gt_total > 0.0 { c / gt_total } else { 0.0 })
        .collect();

    let strategies = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let metrics: Vec<SceneMetrics> = per_scene.iter().map(|(_, m)| m[i].clone()).collect();
            (name, aggregate(&metrics, &thresholds, n_g))
        })
        .collect();

    Ok(SimulationReport {
        config: cfg.clone(),
        seed: cfg.seed,
        predicate_groups: sim.predicate_groups.groups.clone(),
        query_group_counts: sim.query_groups.counts.clone(),
        gt_frequency_per_group,
        strategies,
    })
}
