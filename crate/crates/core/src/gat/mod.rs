//! MetricGAT at desk scale: a graph attention encoder with an embedding head
//! and a low-rank metric head, the four training losses, negative sampling,
//! gradient verification and a small training loop.

mod loss;
mod model;
mod train;

pub use loss::{
    hierarchical_triples, info_nce, loss_contrastive, loss_hierarchical, loss_ranking, loss_smoothness,
    ranking_triples, required_pairs, sample_negatives, total_loss, total_loss_with_grad, weighted_loss, Gradients,
    HopDistanceCache, LossBatch, LossBreakdown, LossConfig, LossTerm, NegativeCounts, NegativeKind, NegativeSample,
    RouteCache, TermWeights, Triple, HOP_RADIUS,
};
pub use model::{
    backward, forward, ForwardCache, ForwardOutput, GatConfig, GatParams, HeadSlots, Layout, Neighborhoods, Slot,
    LAYER_NORM_EPS, LEAKY_SLOPE,
};
pub use train::{
    check_gradient, check_toy_scale, grad_check, loss_and_param_grad, relative_error, train_toy, trace_csv,
    GradCheckReport, TraceRow, TrainConfig, TrainOutcome, REL_FLOOR, TOY_MAX_DIM, TOY_MAX_NODES, TOY_MAX_RANK,
};
