//! Finite-difference gradient verification and the full-batch training loop.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusGraph, EmbeddingMatrix, MetricFactorTensor, NodeFeatures};
use crate::error::{GssError, Result};

use super::loss::{total_loss_with_grad, weighted_loss, LossBatch, LossBreakdown, LossConfig, TermWeights};
use super::model::{backward, forward, GatConfig, GatParams};

pub const TOY_MAX_NODES: usize = 64;
pub const TOY_MAX_DIM: usize = 16;
pub const TOY_MAX_RANK: usize = 4;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding do not produce spurious ratios.
pub const REL_FLOOR: f64 = 1e-6;

pub fn check_toy_scale(nodes: usize, config: &GatConfig) -> Result<()> {
    if nodes > TOY_MAX_NODES || config.dim > TOY_MAX_DIM || config.rank > TOY_MAX_RANK {
        return Err(GssError::InvalidParameter(format!(
            "toy scale is N <= {TOY_MAX_NODES}, d <= {TOY_MAX_DIM}, r <= {TOY_MAX_RANK}; got N = {nodes}, d = {}, r = {}",
            config.dim, config.rank
        )));
    }
    Ok(())
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub probes: usize,
    pub step: f64,
}

/// Central differences of `f` at `x` along each probed coordinate, compared
/// with the gradient `f` itself returns.
pub fn check_gradient<F>(x: &[f64], mut f: F, probes: &[usize], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, grad) = f(x)?;
    if !value.is_finite() {
        return Err(GssError::Numeric(format!("loss is {value} at the probe point")));
    }
    let mut worst = (0.0f64, probes.first().copied().unwrap_or(0));
    let mut point = x.to_vec();
    for &idx in probes {
        point[idx] = x[idx] + step;
        let (up, _) = f(&point)?;
        point[idx] = x[idx] - step;
        let (down, _) = f(&point)?;
        point[idx] = x[idx];
        if !up.is_finite() || !down.is_finite() {
            return Err(GssError::Numeric(format!("loss is not finite near parameter {idx}")));
        }
        let err = relative_error(grad[idx], (up - down) / (2.0 * step));
        if err > worst.0 {
            worst = (err, idx);
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        probes: probes.len(),
        step,
    })
}

/// Loss and parameter gradient for fixed routes, negatives and triples.
pub fn loss_and_param_grad(
    params: &GatParams,
    features: &NodeFeatures,
    graph: &CorpusGraph,
    batch: &LossBatch,
    loss: &LossConfig,
    weights: TermWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let out = forward(params, features, graph)?;
    let (emb, fac) = out.to_tensors(&params.config)?;
    let (breakdown, g) = total_loss_with_grad(&emb, &fac, graph, batch, loss, weights)?;
    Ok((breakdown, backward(params, &out.cache, &g.embeddings, &g.factors)))
}

/// Probes one coordinate of every parameter block plus uniformly drawn extras.
pub fn grad_check(
    params: &GatParams,
    features: &NodeFeatures,
    graph: &CorpusGraph,
    batch: &LossBatch,
    loss: &LossConfig,
    weights: TermWeights,
    probe_count: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    check_toy_scale(graph.node_count(), &params.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes: Vec<usize> = params
        .layout
        .groups()
        .into_iter()
        .map(|(_, r)| rng.gen_range(r))
        .collect();
    while probes.len() < probe_count {
        probes.push(rng.gen_range(0..params.len()));
    }
    check_gradient(
        &params.values,
        |v| {
            let p = params.with_values(v.to_vec());
            let (b, g) = loss_and_param_grad(&p, features, graph, batch, loss, weights)?;
            Ok((b.total, g))
        },
        &probes,
        step,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Routes are recomputed every this many epochs.
    pub route_refresh: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            route_refresh: 5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], c: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let update = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + c.adam_eps);
            x[i] -= c.lr * (update + c.weight_decay * x[i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub total: f64,
    pub contrast: f64,
    pub rank: f64,
    pub smooth: f64,
    pub hier: f64,
}

impl TraceRow {
    fn new(epoch: usize, b: LossBreakdown) -> Self {
        TraceRow {
            epoch,
            total: b.total,
            contrast: b.contrast,
            rank: b.rank,
            smooth: b.smooth,
            hier: b.hier,
        }
    }
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("epoch,total,contrast,rank,smooth,hier\n");
    for r in trace {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.total, r.contrast, r.rank, r.smooth, r.hier);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GatParams,
    /// Row `e` holds the losses after `e` updates; row 0 is the initialisation.
    pub trace: Vec<TraceRow>,
    pub embeddings: EmbeddingMatrix<f64>,
    pub factors: MetricFactorTensor<f64>,
}

impl TrainOutcome {
    /// The corpus with the trained embeddings and factors attached (stored as
    /// `f32`).
    pub fn export(&self, corpus: &Corpus) -> Result<Corpus> {
        Corpus::new(
            corpus.graph.clone(),
            corpus.features.clone(),
            Some(self.embeddings.cast()),
            Some(self.factors.cast()),
            corpus.split.clone(),
        )
    }
}

/// Full-batch Adam on the weighted loss. Negatives and triples are drawn once
/// from the initial embeddings; routes are refreshed every
/// `route_refresh` epochs.
pub fn train_toy(corpus: &Corpus, gat: &GatConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    check_toy_scale(corpus.node_count(), gat)?;
    config.loss.validate()?;
    if !(config.lr >= 0.0 && config.lr.is_finite()) {
        return Err(GssError::InvalidParameter(format!("learning rate must be >= 0, got {}", config.lr)));
    }
    if config.route_refresh == 0 {
        return Err(GssError::InvalidParameter("route refresh interval must be at least 1".into()));
    }
    let graph = &corpus.graph;
    let features = &corpus.features;
    let mut params = GatParams::init(gat.clone(), config.seed)?;
    let init = forward(&params, features, graph)?;
    let (emb, fac) = init.to_tensors(gat)?;
    let mut batch = LossBatch::sample(graph, &emb, &fac, &config.loss, config.seed)?;
    let weights = config.loss.weights();
    let mut adam = Adam::new(params.len());
    let mut trace = Vec::with_capacity(config.epochs + 1);

    for epoch in 0..=config.epochs {
        let out = forward(&params, features, graph)?;
        let (emb, fac) = out.to_tensors(gat)?;
        if epoch > 0 && epoch % config.route_refresh == 0 {
            batch.routes = batch.routes.refresh(graph, &emb, &fac)?;
        }
        if epoch == config.epochs {
            let b = weighted_loss(&emb, &fac, graph, &batch, &config.loss, weights, None)?;
            trace.push(TraceRow::new(epoch, b));
            return Ok(TrainOutcome {
                params,
                trace,
                embeddings: emb,
                factors: fac,
            });
        }
        let (b, g) = total_loss_with_grad(&emb, &fac, graph, &batch, &config.loss, weights)?;
        trace.push(TraceRow::new(epoch, b));
        if !b.total.is_finite() {
            return Err(GssError::Diverged { epoch, loss: b.total });
        }
        let grad = backward(&params, &out.cache, &g.embeddings, &g.factors);
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(GssError::Diverged { epoch, loss: b.total });
        }
        adam.step(&mut params.values, &grad, config);
    }
    unreachable!("the final epoch returns")
}
