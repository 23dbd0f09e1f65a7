//! Synthetic crowd scenes and a gradient-descent box-regression loop that
//! exercises the Coulomb loss end to end without a network.

mod descent;
mod experiment;
mod generate;
mod scene;

pub use descent::{run_descent, LossPoint, ProposalTrace, SimResult, DIVERGENCE_FACTOR};
pub use experiment::{
    default_nms_thresholds, detections_from_result, nms_sensitivity_experiment, run_seed, run_suite, NmsRow,
    NmsSummary, NmsTable, SeedRun, sign_test, SignTest,
};
pub use generate::{generate_scene, spawn_proposals, ProposalSet, SimConfig};
pub use scene::{Pedestrian, Scene};
