//! The four training losses over embeddings and factors, with gradients.
//!
//! Geodesic distances inside the losses follow fixed routes: adjacent pairs
//! take their single edge, other pairs the shortest path found at the last
//! route refresh. Route nodes stay fixed between refreshes so the loss is a
//! smooth function of embeddings and factors.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusGraph, EmbeddingMatrix, MetricFactorTensor};
use crate::error::{GssError, Result};
use crate::geodesic::{extract_path, multi_source_dijkstra};
use crate::metric::{local_distance_backward, LocalDistanceKernel};
use crate::pipeline::cosine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeCounts {
    pub hard: usize,
    pub random: usize,
    /// `None` takes every other batch anchor.
    pub in_batch: Option<usize>,
}

impl Default for NegativeCounts {
    fn default() -> Self {
        NegativeCounts {
            hard: 5,
            random: 5,
            in_batch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub margin: f64,
    pub hier_margin: f64,
    pub lambda_cite: f64,
    pub lambda_smooth: f64,
    pub lambda_hier: f64,
    pub negatives: NegativeCounts,
    /// Hierarchical triples sampled per anchor.
    pub hier_triples_per_anchor: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 0.1,
            margin: 1.0,
            hier_margin: 0.1,
            lambda_cite: 0.5,
            lambda_smooth: 0.1,
            lambda_hier: 0.1,
            negatives: NegativeCounts::default(),
            hier_triples_per_anchor: 2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GssError::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, v) in [
            ("margin", self.margin),
            ("hierarchical margin", self.hier_margin),
            ("lambda_cite", self.lambda_cite),
            ("lambda_smooth", self.lambda_smooth),
            ("lambda_hier", self.lambda_hier),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GssError::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> TermWeights {
        TermWeights {
            contrast: 1.0,
            rank: self.lambda_cite,
            smooth: self.lambda_smooth,
            hier: self.lambda_hier,
        }
    }
}

/// Multipliers applied to each loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub contrast: f64,
    pub rank: f64,
    pub smooth: f64,
    pub hier: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossTerm {
    Contrastive,
    Ranking,
    Smoothness,
    Hierarchical,
}

impl TermWeights {
    pub fn only(term: LossTerm) -> Self {
        let mut w = TermWeights {
            contrast: 0.0,
            rank: 0.0,
            smooth: 0.0,
            hier: 0.0,
        };
        match term {
            LossTerm::Contrastive => w.contrast = 1.0,
            LossTerm::Ranking => w.rank = 1.0,
            LossTerm::Smoothness => w.smooth = 1.0,
            LossTerm::Hierarchical => w.hier = 1.0,
        }
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeKind {
    Hard,
    Random,
    InBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeSample {
    pub anchor: usize,
    pub negatives: Vec<(usize, NegativeKind)>,
}

impl NegativeSample {
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.negatives.iter().map(|n| n.0)
    }
}

fn eligible_negative(graph: &CorpusGraph, anchor: usize, k: usize) -> bool {
    k != anchor && !graph.out_edges().contains(anchor, k)
}

/// Hard negatives are the most cosine-similar non-neighbours, random ones are
/// uniform over the remaining non-neighbours, in-batch ones are the other
/// anchors that are not neighbours. Duplicates across types are dropped.
pub fn sample_negatives(
    anchors: &[usize],
    embeddings: &EmbeddingMatrix<f64>,
    graph: &CorpusGraph,
    counts: &NegativeCounts,
    seed: u64,
) -> Result<Vec<NegativeSample>> {
    let n = graph.node_count();
    if embeddings.len() != n {
        return Err(GssError::mismatch("embedding rows vs graph nodes", n, embeddings.len()));
    }
    let in_batch = counts.in_batch.unwrap_or(anchors.len().saturating_sub(1));
    if in_batch > 0 && anchors.len() < 2 {
        return Err(GssError::Sampling(format!(
            "in-batch negatives need at least two anchors, batch has {}",
            anchors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(anchors.len());
    for &a in anchors {
        if a >= n {
            return Err(GssError::NodeOutOfRange { node: a, count: n });
        }
        let eligible: Vec<usize> = (0..n).filter(|&k| eligible_negative(graph, a, k)).collect();
        if eligible.is_empty() {
            return Err(GssError::Sampling(format!("anchor {a} has no eligible negatives")));
        }
        if eligible.len() < counts.hard + counts.random {
            return Err(GssError::Sampling(format!(
                "anchor {a} has {} eligible negatives, {} requested",
                eligible.len(),
                counts.hard + counts.random
            )));
        }
        let mut taken = vec![false; n];
        let mut negatives = Vec::new();

        let mut by_sim: Vec<(f64, usize)> = eligible
            .iter()
            .map(|&k| {
                let s = cosine(embeddings.row(a), embeddings.row(k)).unwrap_or(f64::NEG_INFINITY);
                (s, k)
            })
            .collect();
        by_sim.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        for &(_, k) in by_sim.iter().take(counts.hard) {
            taken[k] = true;
            negatives.push((k, NegativeKind::Hard));
        }

        let mut pool: Vec<usize> = eligible.iter().copied().filter(|&k| !taken[k]).collect();
        pool.shuffle(&mut rng);
        for &k in pool.iter().take(counts.random) {
            taken[k] = true;
            negatives.push((k, NegativeKind::Random));
        }

        let batch: Vec<usize> = anchors
            .iter()
            .copied()
            .filter(|&k| eligible_negative(graph, a, k) && !taken[k])
            .take(in_batch)
            .collect();
        negatives.extend(batch.into_iter().map(|k| (k, NegativeKind::InBatch)));
        out.push(NegativeSample { anchor: a, negatives });
    }
    Ok(out)
}

/// Hop counts up to a radius, from truncated BFS on the symmetric view.
#[derive(Clone, Debug, PartialEq)]
pub struct HopDistanceCache {
    radius: usize,
    hops: HashMap<(usize, usize), usize>,
}

pub const HOP_RADIUS: usize = 3;

impl HopDistanceCache {
    pub fn build(graph: &CorpusGraph, radius: usize) -> Self {
        let view = graph.symmetric_view();
        let n = view.node_count();
        let mut hops = HashMap::new();
        let mut seen = vec![usize::MAX; n];
        for s in 0..n {
            let mut queue = VecDeque::from([(s, 0usize)]);
            seen[s] = s;
            while let Some((u, h)) = queue.pop_front() {
                hops.insert((s, u), h);
                if h == radius {
                    continue;
                }
                for &v in view.neighbors(u) {
                    if seen[v] != s {
                        seen[v] = s;
                        queue.push_back((v, h + 1));
                    }
                }
            }
        }
        HopDistanceCache { radius, hops }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// `None` beyond the radius.
    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.hops.get(&(i, j)).copied()
    }

    /// `hop(i, j) < hop(i, k)`, with anything beyond the radius farther than
    /// everything within it.
    pub fn closer(&self, i: usize, j: usize, k: usize) -> bool {
        match (self.get(i, j), self.get(i, k)) {
            (Some(a), Some(b)) => a < b,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

/// One triple per positive edge, cycling through the anchor's negatives.
pub fn ranking_triples(samples: &[NegativeSample], graph: &CorpusGraph) -> Vec<Triple> {
    let mut out = Vec::new();
    for s in samples {
        if s.negatives.is_empty() {
            continue;
        }
        for (p, &j) in graph.out_edges().neighbors(s.anchor).iter().enumerate() {
            let k = s.negatives[p % s.negatives.len()].0;
            out.push(Triple { i: s.anchor, j, k });
        }
    }
    out
}

/// Samples `(i, j, k)` with `j` within two hops of `i` and `k` strictly
/// farther than `j`.
pub fn hierarchical_triples(anchors: &[usize], hops: &HopDistanceCache, node_count: usize, per_anchor: usize, seed: u64) -> Vec<Triple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &i in anchors {
        let near: Vec<usize> = (0..node_count)
            .filter(|&j| j != i && matches!(hops.get(i, j), Some(1..=2)))
            .collect();
        if near.is_empty() {
            continue;
        }
        for _ in 0..per_anchor {
            let j = near[rng.gen_range(0..near.len())];
            let far: Vec<usize> = (0..node_count).filter(|&k| k != i && hops.closer(i, j, k)).collect();
            if far.is_empty() {
                continue;
            }
            let k = far[rng.gen_range(0..far.len())];
            out.push(Triple { i, j, k });
        }
    }
    out
}

/// Frozen routes used as differentiable stand-ins for geodesic distances.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteCache {
    routes: BTreeMap<(usize, usize), Vec<usize>>,
}

impl RouteCache {
    /// Routes for `pairs` under the given embeddings and factors. A pair with
    /// no connecting path falls back to a direct step.
    pub fn build(
        pairs: impl IntoIterator<Item = (usize, usize)>,
        graph: &CorpusGraph,
        embeddings: &EmbeddingMatrix<f64>,
        factors: &MetricFactorTensor<f64>,
    ) -> Result<Self> {
        let view = graph.symmetric_view();
        let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, j) in pairs {
            by_source.entry(i).or_default().push(j);
        }
        let mut routes = BTreeMap::new();
        let mut kernel = LocalDistanceKernel::new(embeddings, factors)?;
        for (i, targets) in by_source {
            let needs_search = targets.iter().any(|&j| j != i && !view.contains(i, j));
            let outcome = if needs_search {
                Some(multi_source_dijkstra(&[(i, 0.0)], view, &mut kernel, None, None)?)
            } else {
                None
            };
            for j in targets {
                let route = if j == i {
                    vec![i]
                } else if view.contains(i, j) {
                    vec![i, j]
                } else {
                    let out = outcome.as_ref().expect("searched above");
                    if out.is_settled(j) {
                        extract_path(j, out, &mut kernel)?.nodes
                    } else {
                        vec![i, j]
                    }
                };
                routes.insert((i, j), route);
            }
        }
        Ok(RouteCache { routes })
    }

    pub fn route(&self, i: usize, j: usize) -> Option<&[usize]> {
        self.routes.get(&(i, j)).map(Vec::as_slice)
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.routes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn refresh(&self, graph: &CorpusGraph, embeddings: &EmbeddingMatrix<f64>, factors: &MetricFactorTensor<f64>) -> Result<Self> {
        Self::build(self.pairs(), graph, embeddings, factors)
    }
}

/// Gradients of a loss with respect to embeddings and factors.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embeddings: Vec<f64>,
    pub factors: Vec<f64>,
}

impl Gradients {
    fn zeros(emb: &EmbeddingMatrix<f64>, fac: &MetricFactorTensor<f64>) -> Self {
        Gradients {
            embeddings: vec![0.0; emb.as_slice().len()],
            factors: vec![0.0; fac.as_slice().len()],
        }
    }
}

fn route_distance(route: &[usize], emb: &EmbeddingMatrix<f64>, fac: &MetricFactorTensor<f64>) -> f64 {
    let mut kernel = LocalDistanceKernel::new(emb, fac).expect("shapes checked by caller");
    route.windows(2).map(|w| kernel.step(w[0], w[1])).sum()
}

fn route_backward(route: &[usize], upstream: f64, emb: &EmbeddingMatrix<f64>, fac: &MetricFactorTensor<f64>, g: &mut Gradients) {
    let d = emb.dim();
    let r = fac.rank();
    let mut gu = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut gl = vec![0.0; d * r];
    for w in route.windows(2) {
        let (u, v) = (w[0], w[1]);
        gu.fill(0.0);
        gv.fill(0.0);
        gl.fill(0.0);
        local_distance_backward(
            emb.row(u),
            emb.row(v),
            fac.slab(u),
            r,
            fac.epsilon(),
            upstream,
            &mut gu,
            &mut gv,
            &mut gl,
        );
        for q in 0..d {
            g.embeddings[u * d + q] += gu[q];
            g.embeddings[v * d + q] += gv[q];
        }
        for (dst, s) in g.factors[u * d * r..(u + 1) * d * r].iter_mut().zip(&gl) {
            *dst += s;
        }
    }
}

/// `-log(e^{-d⁺/τ} / (e^{-d⁺/τ} + Σ_k e^{-d_k/τ}))` with its derivatives with
/// respect to `d⁺` and each `d_k`.
pub fn info_nce(positive: f64, negatives: &[f64], temperature: f64) -> (f64, f64, Vec<f64>) {
    let logits: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|d| -d / temperature)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|u| (u - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[0];
    let probs: Vec<f64> = logits.iter().map(|u| (u - lse).exp()).collect();
    // dL/du_0 = p_0 − 1, dL/du_k = p_k, and du/dd = −1/τ
    let d_pos = (1.0 - probs[0]) / temperature;
    let d_neg = probs[1..].iter().map(|p| -p / temperature).collect();
    (loss, d_pos, d_neg)
}

fn check_shapes(graph: &CorpusGraph, emb: &EmbeddingMatrix<f64>, fac: &MetricFactorTensor<f64>) -> Result<()> {
    if emb.len() != graph.node_count() {
        return Err(GssError::mismatch("embedding rows vs graph nodes", graph.node_count(), emb.len()));
    }
    LocalDistanceKernel::new(emb, fac).map(|_| ())
}

fn route_of(routes: &RouteCache, i: usize, j: usize) -> Result<&[usize]> {
    routes
        .route(i, j)
        .ok_or_else(|| GssError::InvalidParameter(format!("no route cached for pair ({i}, {j})")))
}

/// Pairs whose distances the contrastive and ranking terms read.
pub fn required_pairs(samples: &[NegativeSample], rank: &[Triple], graph: &CorpusGraph) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for s in samples {
        for &j in graph.out_edges().neighbors(s.anchor) {
            pairs.push((s.anchor, j));
        }
        for k in s.ids() {
            pairs.push((s.anchor, k));
        }
    }
    for t in rank {
        pairs.push((t.i, t.j));
        pairs.push((t.i, t.k));
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

#[allow(clippy::too_many_arguments)]
fn contrastive_impl(
    emb: &EmbeddingMatrix<f64>,
    fac: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    samples: &[NegativeSample],
    routes: &RouteCache,
    config: &LossConfig,
    scale: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    check_shapes(graph, emb, fac)?;
    let mut terms = Vec::new();
    for s in samples {
        let positives = graph.out_edges().neighbors(s.anchor);
        if positives.is_empty() {
            continue;
        }
        if s.negatives.is_empty() {
            return Err(GssError::Sampling(format!("anchor {} has an empty negative set", s.anchor)));
        }
        let neg_routes: Vec<&[usize]> = s.ids().map(|k| route_of(routes, s.anchor, k)).collect::<Result<_>>()?;
        let neg_d: Vec<f64> = neg_routes.iter().map(|r| route_distance(r, emb, fac)).collect();
        for &j in positives {
            let pos_route = route_of(routes, s.anchor, j)?;
            terms.push((pos_route, neg_routes.clone(), route_distance(pos_route, emb, fac), neg_d.clone()));
        }
    }
    if terms.is_empty() {
        return Err(GssError::InvalidParameter("contrastive batch has no positive pairs".into()));
    }
    let count = terms.len() as f64;
    let mut total = 0.0;
    for (pos_route, neg_routes, pos_d, neg_d) in &terms {
        let (loss, d_pos, d_neg) = info_nce(*pos_d, neg_d, config.temperature);
        total += loss;
        if let Some(g) = grads.as_deref_mut() {
            route_backward(pos_route, scale * d_pos / count, emb, fac, g);
            for (r, dn) in neg_routes.iter().zip(&d_neg) {
                route_backward(r, scale * dn / count, emb, fac, g);
            }
        }
    }
    Ok(total / count)
}

fn validate_rank_triple(t: &Triple, graph: &CorpusGraph) -> Result<()> {
    let n = graph.node_count();
    for v in [t.i, t.j, t.k] {
        if v >= n {
            return Err(GssError::NodeOutOfRange { node: v, count: n });
        }
    }
    if !graph.out_edges().contains(t.i, t.j) {
        return Err(GssError::InvalidTriple {
            i: t.i,
            j: t.j,
            k: t.k,
            reason: "j is not cited by i",
        });
    }
    if !eligible_negative(graph, t.i, t.k) {
        return Err(GssError::InvalidTriple {
            i: t.i,
            j: t.j,
            k: t.k,
            reason: "k is a neighbour of i",
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ranking_impl(
    emb: &EmbeddingMatrix<f64>,
    fac: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    triples: &[Triple],
    routes: &RouteCache,
    config: &LossConfig,
    scale: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    check_shapes(graph, emb, fac)?;
    if triples.is_empty() {
        return Ok(0.0);
    }
    let count = triples.len() as f64;
    let mut total = 0.0;
    for t in triples {
        validate_rank_triple(t, graph)?;
        let rj = route_of(routes, t.i, t.j)?;
        let rk = route_of(routes, t.i, t.k)?;
        let hinge = route_distance(rj, emb, fac) - route_distance(rk, emb, fac) + config.margin;
        if hinge > 0.0 {
            total += hinge;
            if let Some(g) = grads.as_deref_mut() {
                route_backward(rj, scale / count, emb, fac, g);
                route_backward(rk, -scale / count, emb, fac, g);
            }
        }
    }
    Ok(total / count)
}

fn smoothness_impl(fac: &MetricFactorTensor<f64>, graph: &CorpusGraph, scale: f64, grads: Option<&mut Gradients>) -> Result<f64> {
    if fac.len() != graph.node_count() {
        return Err(GssError::mismatch("factor slabs vs graph nodes", graph.node_count(), fac.len()));
    }
    let edges = graph.out_edges();
    if edges.edge_count() == 0 {
        return Ok(0.0);
    }
    let count = edges.edge_count() as f64;
    let mut total = 0.0;
    let slab = fac.dim() * fac.rank();
    let mut grads = grads;
    for (i, j) in edges.edges() {
        let (li, lj) = (fac.slab(i), fac.slab(j));
        for q in 0..slab {
            let diff = li[q] - lj[q];
            total += diff * diff;
            if let Some(g) = grads.as_deref_mut() {
                let v = scale * 2.0 * diff / count;
                g.factors[i * slab + q] += v;
                g.factors[j * slab + q] -= v;
            }
        }
    }
    Ok(total / count)
}

/// Gradient of `cos(a, b)` with respect to `a`.
fn cosine_grad(a: &[f64], b: &[f64], out: &mut [f64], scale: f64) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    for q in 0..a.len() {
        out[q] += scale * (b[q] / (na * nb) - c * a[q] / (na * na));
    }
}

fn hierarchical_impl(
    emb: &EmbeddingMatrix<f64>,
    hops: &HopDistanceCache,
    triples: &[Triple],
    config: &LossConfig,
    scale: f64,
    mut grads: Option<&mut Gradients>,
) -> Result<f64> {
    if triples.is_empty() {
        return Ok(0.0);
    }
    let d = emb.dim();
    let count = triples.len() as f64;
    let mut total = 0.0;
    let mut buf = vec![0.0; d];
    for t in triples {
        if !hops.closer(t.i, t.j, t.k) {
            return Err(GssError::InvalidTriple {
                i: t.i,
                j: t.j,
                k: t.k,
                reason: "hop(i, j) is not below hop(i, k)",
            });
        }
        let (hi, hj, hk) = (emb.row(t.i), emb.row(t.j), emb.row(t.k));
        let sim_ik = cosine(hi, hk).ok_or(GssError::ZeroNorm(t.i))?;
        let sim_ij = cosine(hi, hj).ok_or(GssError::ZeroNorm(t.j))?;
        let hinge = sim_ik - sim_ij + config.hier_margin;
        if hinge > 0.0 {
            total += hinge;
            if let Some(g) = grads.as_deref_mut() {
                let s = scale / count;
                for (x, y, node, sign) in [(hi, hk, t.i, s), (hk, hi, t.k, s), (hi, hj, t.i, -s), (hj, hi, t.j, -s)] {
                    buf.fill(0.0);
                    cosine_grad(x, y, &mut buf, sign);
                    for q in 0..d {
                        g.embeddings[node * d + q] += buf[q];
                    }
                }
            }
        }
    }
    Ok(total / count)
}

pub fn loss_contrastive(
    embeddings: &EmbeddingMatrix<f64>,
    factors: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    negatives: &[NegativeSample],
    routes: &RouteCache,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    contrastive_impl(embeddings, factors, graph, negatives, routes, config, 1.0, None)
}

pub fn loss_ranking(
    embeddings: &EmbeddingMatrix<f64>,
    factors: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    triples: &[Triple],
    routes: &RouteCache,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    ranking_impl(embeddings, factors, graph, triples, routes, config, 1.0, None)
}

pub fn loss_smoothness(factors: &MetricFactorTensor<f64>, graph: &CorpusGraph) -> Result<f64> {
    smoothness_impl(factors, graph, 1.0, None)
}

pub fn loss_hierarchical(
    embeddings: &EmbeddingMatrix<f64>,
    hops: &HopDistanceCache,
    triples: &[Triple],
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    hierarchical_impl(embeddings, hops, triples, config, 1.0, None)
}

/// Everything the losses need besides embeddings and factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBatch {
    pub anchors: Vec<usize>,
    pub negatives: Vec<NegativeSample>,
    pub rank_triples: Vec<Triple>,
    pub hier_triples: Vec<Triple>,
    pub hops: HopDistanceCache,
    pub routes: RouteCache,
}

impl LossBatch {
    /// Full batch: every node with at least one citation is an anchor.
    pub fn sample(
        graph: &CorpusGraph,
        embeddings: &EmbeddingMatrix<f64>,
        factors: &MetricFactorTensor<f64>,
        config: &LossConfig,
        seed: u64,
    ) -> Result<Self> {
        let anchors: Vec<usize> = (0..graph.node_count())
            .filter(|&i| graph.out_edges().degree(i) > 0)
            .collect();
        let negatives = sample_negatives(&anchors, embeddings, graph, &config.negatives, seed)?;
        let rank_triples = ranking_triples(&negatives, graph);
        let hops = HopDistanceCache::build(graph, HOP_RADIUS);
        let hier_triples = hierarchical_triples(
            &anchors,
            &hops,
            graph.node_count(),
            config.hier_triples_per_anchor,
            seed ^ 0x9e37_79b9_7f4a_7c15,
        );
        let routes = RouteCache::build(required_pairs(&negatives, &rank_triples, graph), graph, embeddings, factors)?;
        Ok(LossBatch {
            anchors,
            negatives,
            rank_triples,
            hier_triples,
            hops,
            routes,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub contrast: f64,
    pub rank: f64,
    pub smooth: f64,
    pub hier: f64,
}

/// `Σ w_t · L_t` with per-term values. Gradients are accumulated when asked.
pub fn weighted_loss(
    embeddings: &EmbeddingMatrix<f64>,
    factors: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    batch: &LossBatch,
    config: &LossConfig,
    weights: TermWeights,
    mut grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    config.validate()?;
    let contrast = contrastive_impl(
        embeddings,
        factors,
        graph,
        &batch.negatives,
        &batch.routes,
        config,
        weights.contrast,
        grads.as_deref_mut(),
    )?;
    let rank = ranking_impl(
        embeddings,
        factors,
        graph,
        &batch.rank_triples,
        &batch.routes,
        config,
        weights.rank,
        grads.as_deref_mut(),
    )?;
    let smooth = smoothness_impl(factors, graph, weights.smooth, grads.as_deref_mut())?;
    let hier = hierarchical_impl(embeddings, &batch.hops, &batch.hier_triples, config, weights.hier, grads)?;
    Ok(LossBreakdown {
        total: weights.contrast * contrast + weights.rank * rank + weights.smooth * smooth + weights.hier * hier,
        contrast,
        rank,
        smooth,
        hier,
    })
}

pub fn total_loss(
    embeddings: &EmbeddingMatrix<f64>,
    factors: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    batch: &LossBatch,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    weighted_loss(embeddings, factors, graph, batch, config, config.weights(), None)
}

pub fn total_loss_with_grad(
    embeddings: &EmbeddingMatrix<f64>,
    factors: &MetricFactorTensor<f64>,
    graph: &CorpusGraph,
    batch: &LossBatch,
    config: &LossConfig,
    weights: TermWeights,
) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Gradients::zeros(embeddings, factors);
    let b = weighted_loss(embeddings, factors, graph, batch, config, weights, Some(&mut g))?;
    Ok((b, g))
}
