//! Retrieval metrics, synthetic fixtures, the barbell advantage probe and
//! the experiment driver.

mod barbell;
mod experiment;
mod fixtures;
mod metrics;

pub use barbell::{
    calibrate_alpha, certify_probe, cheapest_path_brute_force, make_barbell_fixture, AdvantageProbe, BarbellConfig,
    BarbellFixture, CHAIN_MIN_SIMILARITY, DISTRACTOR_MIN_SIMILARITY, PROBE_MARGIN, PROBE_MAX_HOPS,
};
pub use experiment::{
    baseline_cosine_ranking, run_experiment, ExperimentConfig, Method, MethodRow, MetricsTable, QueryOutcome, Summary,
};
pub use fixtures::{
    euclidean_ablation, factor_distance, geometric_fixture, homogeneous_fixture, max_edge_factor_distance,
    smooth_factor_fixture, two_block_fixture, GeometricConfig, HomogeneousConfig, SmoothConfig, TwoBlockConfig,
};
pub use metrics::{bridge_at_k, mrr, ndcg_at_k, recall_at_k, reciprocal_rank, BridgeTask, RelevanceJudgments};
