//! Multi-source Dijkstra under node-local metrics.
//!
//! Edge `(u, v)` costs `d_{G_u}(u, v)`: the step is measured with the tail
//! node's metric, so costs are direction dependent even on the symmetrized
//! view. Queue keys are `(distance, node id)`, which makes equal distances
//! settle in ascending id order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Csr, Element, EmbeddingMatrix, MetricFactorTensor};
use crate::error::{GssError, Result};
use crate::metric::LocalDistanceKernel;

/// Tolerance for path step sums against reported distances.
pub const PATH_TOL: f64 = 1e-9;

/// Largest corpus the quadratic oracle accepts.
pub const ORACLE_MAX_NODES: usize = 2_000;

/// Step cost of an edge in the traversal view.
pub fn edge_weight<T: Element>(
    u: usize,
    v: usize,
    view: &Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
) -> Result<f64> {
    let n = view.node_count();
    for node in [u, v] {
        if node >= n {
            return Err(GssError::NodeOutOfRange { node, count: n });
        }
    }
    if !view.contains(u, v) {
        return Err(GssError::NotAdjacent { from: u, to: v });
    }
    Ok(LocalDistanceKernel::new(embeddings, factors)?.step(u, v))
}

/// Stop once the `k` best settled nodes have not changed for `window`
/// consecutive settles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub k: usize,
    pub window: usize,
}

impl EarlyStop {
    /// `window = 8k`.
    pub fn with_default_window(k: usize) -> Self {
        EarlyStop { k, window: 8 * k }
    }
}

/// Running top-k of settled nodes and the count of settles since it last
/// changed.
#[derive(Clone, Debug)]
pub struct EarlyStopState {
    config: EarlyStop,
    /// Sorted ascending by (distance, id).
    top: Vec<(f64, usize)>,
    stable: usize,
}

impl EarlyStopState {
    pub fn new(config: EarlyStop) -> Self {
        EarlyStopState {
            config,
            top: Vec::with_capacity(config.k + 1),
            stable: 0,
        }
    }

    /// Records a settle; returns true when the search should terminate.
    pub fn observe(&mut self, dist: f64, node: usize) -> bool {
        let key = (dist, node);
        let pos = self
            .top
            .partition_point(|&(d, id)| d.total_cmp(&dist).then(id.cmp(&node)) == Ordering::Less);
        let changed = if pos < self.config.k {
            self.top.insert(pos, key);
            self.top.truncate(self.config.k);
            true
        } else {
            false
        };
        if changed {
            self.stable = 0;
        } else {
            self.stable += 1;
        }
        self.config.k > 0 && self.top.len() == self.config.k && self.stable >= self.config.window
    }

    pub fn stable_count(&self) -> usize {
        self.stable
    }

    pub fn top_ids(&self) -> Vec<usize> {
        self.top.iter().map(|&(_, id)| id).collect()
    }
}

#[derive(Clone, Copy, Debug)]
struct QueueEntry {
    dist: f64,
    node: usize,
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    // reversed: BinaryHeap is a max-heap and we pop the smallest key
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Final state of one search.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Final for settled nodes, tentative for discovered ones, `+∞` otherwise.
    pub dist: Vec<f64>,
    pub parent: Vec<Option<usize>>,
    pub settled: Vec<bool>,
    /// Nodes in settle order; distances along it are nondecreasing.
    pub order: Vec<usize>,
    /// Initial distance per seed node, `+∞` for non-seeds.
    pub seed_init: Vec<f64>,
    pub stopped_early: bool,
}

impl SearchOutcome {
    pub fn settled_count(&self) -> usize {
        self.order.len()
    }

    pub fn is_settled(&self, node: usize) -> bool {
        self.settled.get(node).copied().unwrap_or(false)
    }
}

/// Runs Dijkstra from every seed at once. `seeds` carry their initial
/// distances (duplicates keep the smaller). When `allowed` is given, nodes
/// outside it are never entered and seeds outside it are dropped.
pub fn multi_source_dijkstra<T: Element>(
    seeds: &[(usize, f64)],
    view: &Csr,
    kernel: &mut LocalDistanceKernel<'_, T>,
    stop: Option<EarlyStop>,
    allowed: Option<&[bool]>,
) -> Result<SearchOutcome> {
    let n = view.node_count();
    if kernel.node_count() != n {
        return Err(GssError::mismatch("embedding rows vs graph nodes", n, kernel.node_count()));
    }
    if let Some(mask) = allowed {
        if mask.len() != n {
            return Err(GssError::mismatch("allowed mask", n, mask.len()));
        }
    }
    let admit = |v: usize| allowed.is_none_or(|m| m[v]);

    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut settled = vec![false; n];
    let mut seed_init = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();

    for &(s, init) in seeds {
        if s >= n {
            return Err(GssError::NodeOutOfRange { node: s, count: n });
        }
        if !(init >= 0.0) || !init.is_finite() {
            return Err(GssError::InvalidParameter(format!(
                "seed {s} has invalid initial distance {init}"
            )));
        }
        if !admit(s) {
            continue;
        }
        if init < seed_init[s] {
            seed_init[s] = init;
        }
        if init < dist[s] {
            dist[s] = init;
            heap.push(QueueEntry { dist: init, node: s });
        }
    }

    let mut stopper = stop.map(EarlyStopState::new);
    let mut order = Vec::new();
    let mut stopped_early = false;

    while let Some(QueueEntry { dist: d, node: u }) = heap.pop() {
        if settled[u] || d > dist[u] {
            continue;
        }
        settled[u] = true;
        order.push(u);
        if let Some(state) = stopper.as_mut() {
            if state.observe(d, u) {
                stopped_early = true;
                break;
            }
        }
        for &v in view.neighbors(u) {
            if settled[v] || !admit(v) {
                continue;
            }
            let nd = d + kernel.step(u, v);
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = Some(u);
                heap.push(QueueEntry { dist: nd, node: v });
            }
        }
    }

    Ok(SearchOutcome {
        dist,
        parent,
        settled,
        order,
        seed_init,
        stopped_early,
    })
}

/// Settled path from its originating seed to a target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    /// `v_0` (a seed) through `v_k` (the target).
    pub nodes: Vec<usize>,
    /// `steps[t]` is the cost of `nodes[t] → nodes[t + 1]`.
    pub steps: Vec<f64>,
    pub total: f64,
}

impl GeodesicPath {
    pub fn seed(&self) -> usize {
        self.nodes[0]
    }

    pub fn target(&self) -> usize {
        *self.nodes.last().expect("paths are never empty")
    }

    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Follows parent pointers back from `target` and re-measures each step.
pub fn extract_path<T: Element>(
    target: usize,
    outcome: &SearchOutcome,
    kernel: &mut LocalDistanceKernel<'_, T>,
) -> Result<GeodesicPath> {
    if !outcome.is_settled(target) {
        return Err(GssError::Unsettled(target));
    }
    let mut nodes = vec![target];
    let mut cur = target;
    while let Some(p) = outcome.parent[cur] {
        nodes.push(p);
        cur = p;
        if nodes.len() > outcome.dist.len() {
            return Err(GssError::Numeric("parent chain contains a cycle".into()));
        }
    }
    nodes.reverse();
    let seed = nodes[0];
    if !outcome.seed_init[seed].is_finite() {
        return Err(GssError::Numeric(format!("path to {target} does not start at a seed")));
    }
    let steps: Vec<f64> = nodes.windows(2).map(|w| kernel.step(w[0], w[1])).collect();
    let total = steps.iter().sum();
    Ok(GeodesicPath { nodes, steps, total })
}

/// Plain single-source Dijkstra with linear minimum selection and no early
/// stopping. Quadratic in `N`; the reference the engine is tested against.
pub fn exact_geodesic_oracle<T: Element>(
    source: usize,
    view: &Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
) -> Result<Vec<f64>> {
    exact_geodesic_oracle_from(source, 0.0, view, embeddings, factors)
}

/// As [`exact_geodesic_oracle`], starting the source at `offset`.
pub fn exact_geodesic_oracle_from<T: Element>(
    source: usize,
    offset: f64,
    view: &Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
) -> Result<Vec<f64>> {
    let n = view.node_count();
    if n > ORACLE_MAX_NODES {
        return Err(GssError::InvalidParameter(format!(
            "oracle limited to {ORACLE_MAX_NODES} nodes, got {n}"
        )));
    }
    if source >= n {
        return Err(GssError::NodeOutOfRange { node: source, count: n });
    }
    let mut kernel = LocalDistanceKernel::new(embeddings, factors)?;
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[source] = offset;
    loop {
        let mut best: Option<usize> = None;
        for v in 0..n {
            if !done[v] && dist[v].is_finite() && best.is_none_or(|b| dist[v] < dist[b]) {
                best = Some(v);
            }
        }
        let Some(u) = best else { break };
        done[u] = true;
        for &v in view.neighbors(u) {
            let nd = dist[u] + kernel.step(u, v);
            if nd < dist[v] {
                dist[v] = nd;
            }
        }
    }
    Ok(dist)
}
