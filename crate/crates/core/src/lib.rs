//! Label assignment for set-prediction relation detectors: an exact
//! Hungarian solver, frequency-based predicate/query grouping, the triplet
//! matching cost, quality-aware multi-assignment, and a seeded simulator that
//! compares assignment strategies on synthetic scenes.

pub mod assignment;
pub mod cost;
pub mod geometry;
pub mod grouping;
pub mod io;
pub mod report;
pub mod simulator;
pub mod speaq;
pub mod verify;

pub use assignment::{
    brute_force_assignment, hungarian, Assignment, AssignmentError, CostMatrix, FORBIDDEN,
};
pub use cost::{
    build_cost_matrix, entity_cost, match_cost, total_loss, ClassCost, CostError, CostWeights,
    GtTriplet, LossComponents, LossWeights, Prediction,
};
pub use geometry::{giou, iou, l1_box_distance, BoundingBox, GeometryError};
pub use grouping::{
    group_predicates, group_queries, grouping_cost, FrequencyTable, GroupingError, Groupings,
    PredicateGrouping, PredicateId, QueryGrouping,
};
pub use simulator::{
    run_comparison, ScenarioConfig, Scene, Simulation, SimulationError, SimulationReport,
    StrategyReport,
};
pub use speaq::{
    agnostic_multi_assign, augment_gt_set, compute_d, iou_assign, quality_vectors, run_strategy,
    single_assign, speaq_assign, AssignContext, AssignedPair, AssignmentResult, QualityConfig,
    QualityVectors, RelationFn, SpeaqError, Strategy, StrategyKind,
};
pub use verify::{run_verify, VerifyConfig, VerifyReport};
