//! End-to-end geodesic retrieval: seed selection, multi-source Dijkstra,
//! MMR reranking and path-coherence filtering.

mod mmr;
mod seeds;

pub use mmr::{mmr_rerank, MmrPick};
pub use seeds::{default_seed_count, select_seeds};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Csr, Element, EmbeddingMatrix, MetricFactorTensor, TraversalView};
use crate::error::{GssError, Result};
use crate::geodesic::{extract_path, multi_source_dijkstra, EarlyStop, GeodesicPath};
use crate::metric::LocalDistanceKernel;

/// Cosine similarity in `f64`; `None` when either vector has zero norm.
pub fn cosine<A: Element, B: Element>(a: &[A], b: &[B]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64(), y.to_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na.sqrt() * nb.sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryTarget {
    Node(usize),
    Embedding(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub target: QueryTarget,
    pub k: usize,
}

impl Query {
    pub fn node(id: usize, k: usize) -> Self {
        Query { target: QueryTarget::Node(id), k }
    }

    pub fn embedding(vector: Vec<f64>, k: usize) -> Self {
        Query {
            target: QueryTarget::Embedding(vector),
            k,
        }
    }

    pub fn node_id(&self) -> Option<usize> {
        match self.target {
            QueryTarget::Node(id) => Some(id),
            QueryTarget::Embedding(_) => None,
        }
    }

    /// The query vector in `f64`, validated against the corpus.
    pub fn resolve<T: Element>(&self, embeddings: &EmbeddingMatrix<T>) -> Result<Vec<f64>> {
        match &self.target {
            QueryTarget::Node(id) => {
                if *id >= embeddings.len() {
                    return Err(GssError::NodeOutOfRange { node: *id, count: embeddings.len() });
                }
                Ok(embeddings.row_f64(*id))
            }
            QueryTarget::Embedding(v) => {
                if v.len() != embeddings.dim() {
                    return Err(GssError::mismatch("query embedding", embeddings.dim(), v.len()));
                }
                if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
                    return Err(GssError::InvalidParameter(format!(
                        "query embedding has non-finite entry {bad}"
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EarlyStopMode {
    Off,
    /// Window of `8k` settles.
    #[default]
    Auto,
    Window(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seed count `S`; `None` means `⌈√N⌉`.
    pub seeds: Option<usize>,
    pub mmr_lambda: f64,
    pub coherence_threshold: f64,
    /// Dijkstra candidates handed to MMR per requested hit.
    pub candidate_multiplier: usize,
    pub early_stop: EarlyStopMode,
    pub view: TraversalView,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seeds: None,
            mmr_lambda: 0.7,
            coherence_threshold: 0.3,
            candidate_multiplier: 2,
            early_stop: EarlyStopMode::Auto,
            view: TraversalView::Symmetric,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(GssError::InvalidParameter(format!(
                "mmr lambda must lie in [0, 1], got {}",
                self.mmr_lambda
            )));
        }
        if !(-1.0..=1.0).contains(&self.coherence_threshold) {
            return Err(GssError::InvalidParameter(format!(
                "coherence threshold must lie in [-1, 1], got {}",
                self.coherence_threshold
            )));
        }
        if self.seeds == Some(0) {
            return Err(GssError::InvalidParameter("seed count must be at least 1".into()));
        }
        if self.candidate_multiplier == 0 {
            return Err(GssError::InvalidParameter("candidate multiplier must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn early_stop_for(&self, budget: usize, k: usize) -> Option<EarlyStop> {
        match self.early_stop {
            EarlyStopMode::Off => None,
            EarlyStopMode::Auto => Some(EarlyStop { k: budget, window: 8 * k }),
            EarlyStopMode::Window(window) => Some(EarlyStop { k: budget, window }),
        }
    }
}

/// Minimum cosine similarity between consecutive path nodes; `1` for a
/// single-node path.
pub fn path_coherence<T: Element>(path: &[usize], embeddings: &EmbeddingMatrix<T>) -> Result<f64> {
    step_similarities(path, embeddings).map(|s| s.into_iter().fold(1.0, f64::min))
}

pub fn step_similarities<T: Element>(path: &[usize], embeddings: &EmbeddingMatrix<T>) -> Result<Vec<f64>> {
    path.windows(2)
        .map(|w| {
            cosine(embeddings.row(w[0]), embeddings.row(w[1])).ok_or_else(|| {
                let zero = if cosine(embeddings.row(w[0]), embeddings.row(w[0])).is_none() {
                    w[0]
                } else {
                    w[1]
                };
                GssError::ZeroNorm(zero)
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitPath {
    pub nodes: Vec<usize>,
    pub steps: Vec<f64>,
    pub step_similarities: Vec<f64>,
    /// Similarity of the query to the path's seed when that seed is not the
    /// query node itself; it counts as the path's first step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_similarity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub node: usize,
    pub distance: f64,
    pub mmr_score: f64,
    pub coherence: f64,
    pub path: HitPath,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub settled: usize,
    pub seeds: usize,
    pub candidates: usize,
    pub filtered: usize,
    pub stopped_early: bool,
    /// Settled nodes per hierarchy level, coarsest first (hierarchical search only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub level_settled: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub diagnostics: Diagnostics,
}

impl RetrievalResult {
    pub fn ranking(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.node).collect()
    }
}

/// Wall-clock time spent per stage, accumulated across calls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub seed_selection: Duration,
    pub dijkstra: Duration,
    pub mmr: Duration,
    pub coherence: Duration,
}

/// Runs the full pipeline for one query over a corpus with embeddings and
/// factors.
pub fn search(query: &Query, corpus: &Corpus, config: &PipelineConfig) -> Result<RetrievalResult> {
    search_timed(query, corpus, config, None)
}

pub fn search_timed(
    query: &Query,
    corpus: &Corpus,
    config: &PipelineConfig,
    timings: Option<&mut StageTimings>,
) -> Result<RetrievalResult> {
    let embeddings = corpus.embeddings()?;
    let factors = corpus.factors()?;
    let view = corpus.graph.view(config.view);
    let seed_count = config.seeds.unwrap_or_else(|| default_seed_count(corpus.node_count()));
    run_level(
        query,
        view,
        embeddings,
        factors,
        config,
        LevelScope {
            allowed: None,
            seed_count,
        },
        timings,
    )
}

/// Restriction applied when the pipeline runs on part of a level.
pub(crate) struct LevelScope<'a> {
    pub allowed: Option<&'a [bool]>,
    pub seed_count: usize,
}

pub(crate) fn run_level<T: Element>(
    query: &Query,
    view: &Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
    config: &PipelineConfig,
    scope: LevelScope<'_>,
    mut timings: Option<&mut StageTimings>,
) -> Result<RetrievalResult> {
    config.validate()?;
    if embeddings.is_empty() {
        return Err(GssError::InvalidParameter("corpus is empty".into()));
    }
    let q = query.resolve(embeddings)?;
    let query_node = query.node_id();
    let k = query.k;
    let mut clock = Instant::now();
    let mut lap = |slot: fn(&mut StageTimings) -> &mut Duration, t: &mut Option<&mut StageTimings>| {
        if let Some(t) = t.as_deref_mut() {
            *slot(t) += clock.elapsed();
        }
        clock = Instant::now();
    };

    let seeds = select_seeds(&q, query_node, embeddings, factors, scope.seed_count, scope.allowed)?;
    lap(|t| &mut t.seed_selection, &mut timings);

    let budget = config.candidate_multiplier * k;
    // the query node settles first and never becomes a candidate
    let stop_k = budget + usize::from(query_node.is_some());
    let mut kernel = LocalDistanceKernel::new(embeddings, factors)?;
    let outcome = multi_source_dijkstra(&seeds, view, &mut kernel, config.early_stop_for(stop_k, k), scope.allowed)?;
    let candidates: Vec<(usize, f64)> = outcome
        .order
        .iter()
        .filter(|&&v| Some(v) != query_node)
        .take(budget)
        .map(|&v| (v, -outcome.dist[v]))
        .collect();
    lap(|t| &mut t.dijkstra, &mut timings);

    let picks = mmr_rerank(&candidates, embeddings, config.mmr_lambda, candidates.len());
    lap(|t| &mut t.mmr, &mut timings);

    let mut hits = Vec::new();
    let mut filtered = 0;
    for pick in picks {
        let path = extract_path(pick.node, &outcome, &mut kernel)?;
        let (coherence, hit_path) = hit_coherence(&q, query_node, path, embeddings)?;
        if coherence < config.coherence_threshold {
            filtered += 1;
            continue;
        }
        if hits.len() < k {
            hits.push(Hit {
                node: pick.node,
                distance: outcome.dist[pick.node],
                mmr_score: pick.score,
                coherence,
                path: hit_path,
            });
        }
    }
    lap(|t| &mut t.coherence, &mut timings);

    Ok(RetrievalResult {
        hits,
        diagnostics: Diagnostics {
            settled: outcome.settled_count(),
            seeds: seeds.len(),
            candidates: candidates.len(),
            filtered,
            stopped_early: outcome.stopped_early,
            level_settled: Vec::new(),
        },
    })
}

/// Coherence of a hit's path as seen from the query: a path starting at a
/// seed other than the query node gains a leading query→seed step.
fn hit_coherence<T: Element>(
    q: &[f64],
    query_node: Option<usize>,
    path: GeodesicPath,
    embeddings: &EmbeddingMatrix<T>,
) -> Result<(f64, HitPath)> {
    let step_sims = step_similarities(&path.nodes, embeddings)?;
    let seed = path.seed();
    let seed_similarity = if query_node == Some(seed) {
        None
    } else {
        Some(cosine(q, embeddings.row(seed)).ok_or(GssError::ZeroNorm(seed))?)
    };
    let coherence = seed_similarity
        .iter()
        .chain(step_sims.iter())
        .copied()
        .fold(1.0, f64::min);
    Ok((
        coherence,
        HitPath {
            nodes: path.nodes,
            steps: path.steps,
            step_similarities: step_sims,
            seed_similarity,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusGraph, NodeFeatures};

    fn chain_corpus(points: &[[f32; 2]], edges: &[(usize, usize)]) -> Corpus {
        let n = points.len();
        let data: Vec<f32> = points.iter().flatten().copied().collect();
        let emb = EmbeddingMatrix::new(2, data.clone(), "embeddings").unwrap();
        Corpus::new(
            CorpusGraph::from_edges(n, edges).unwrap(),
            NodeFeatures::new(2, data, "features").unwrap(),
            Some(emb),
            Some(MetricFactorTensor::zeros(n, 2, 1, 1.0).unwrap()),
            None,
        )
        .unwrap()
    }

    #[test]
    fn coherence_cases() {
        let e = EmbeddingMatrix::new(2, vec![1.0f32, 0.0, 2.0, 0.0, 0.0, 1.0], "embeddings").unwrap();
        assert_eq!(path_coherence(&[0], &e).unwrap(), 1.0);
        assert_eq!(path_coherence(&[0, 1], &e).unwrap(), 1.0);
        assert_eq!(path_coherence(&[1, 2], &e).unwrap(), 0.0);
        let z = EmbeddingMatrix::new(2, vec![1.0f32, 0.0, 0.0, 0.0], "embeddings").unwrap();
        assert!(matches!(path_coherence(&[0, 1], &z), Err(GssError::ZeroNorm(1))));
    }

    #[test]
    fn five_hop_chain_takes_minimum_step() {
        // consecutive cosines 0.82, 0.76, 0.71, 0.68 along a planar chain
        let mut angle = 0.0f64;
        let mut rows = vec![1.0, 0.0];
        for c in [0.82f64, 0.76, 0.71, 0.68] {
            angle += c.acos();
            rows.extend([angle.cos(), angle.sin()]);
        }
        let e = EmbeddingMatrix::<f64>::new(2, rows, "embeddings").unwrap();
        let sims = step_similarities(&[0, 1, 2, 3, 4], &e).unwrap();
        for (got, want) in sims.iter().zip([0.82, 0.76, 0.71, 0.68]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((path_coherence(&[0, 1, 2, 3, 4], &e).unwrap() - 0.68).abs() < 1e-12);
    }

    #[test]
    fn nearest_geodesic_neighbor_on_chain() {
        let c = chain_corpus(&[[1.0, 0.0], [1.0, 0.2], [1.0, 0.5], [1.0, 1.0]], &[(0, 1), (1, 2), (2, 3)]);
        let cfg = PipelineConfig {
            mmr_lambda: 1.0,
            coherence_threshold: -1.0,
            seeds: Some(1),
            ..Default::default()
        };
        let r = search(&Query::node(0, 1), &c, &cfg).unwrap();
        assert_eq!(r.ranking(), vec![1]);
        assert_eq!(r.hits[0].path.nodes, vec![0, 1]);
        assert!(r.hits[0].path.seed_similarity.is_none());
    }

    #[test]
    fn maximal_threshold_keeps_only_perfectly_coherent_hits() {
        // node 1 is parallel to node 0; later nodes turn away step by step
        let c = chain_corpus(
            &[[1.0, 0.0], [2.0, 0.0], [2.0, 0.5], [2.0, 1.5], [1.0, 2.0]],
            &[(0, 1), (1, 2), (2, 3), (3, 4)],
        );
        let cfg = PipelineConfig {
            coherence_threshold: 1.0,
            seeds: Some(1),
            early_stop: EarlyStopMode::Off,
            ..Default::default()
        };
        let r = search(&Query::node(0, 4), &c, &cfg).unwrap();
        assert_eq!(r.ranking(), vec![1]);
        assert_eq!(r.diagnostics.filtered, 3);
        assert!(r.hits.iter().all(|h| h.coherence >= 1.0));
    }

    #[test]
    fn rejects_bad_queries_and_configs() {
        let c = chain_corpus(&[[1.0, 0.0], [1.0, 0.2]], &[(0, 1)]);
        let cfg = PipelineConfig::default();
        assert!(matches!(
            search(&Query::embedding(vec![1.0, 0.0, 0.0], 1), &c, &cfg),
            Err(GssError::DimensionMismatch { .. })
        ));
        assert!(search(&Query::node(9, 1), &c, &cfg).is_err());
        let bad = PipelineConfig {
            mmr_lambda: 1.5,
            ..Default::default()
        };
        assert!(search(&Query::node(0, 1), &c, &bad).is_err());
        let bad = PipelineConfig {
            seeds: Some(3),
            ..Default::default()
        };
        assert!(search(&Query::node(0, 1), &c, &bad).is_err());
        let mut bare = c.clone();
        bare.factors = None;
        assert!(matches!(
            search(&Query::node(0, 1), &bare, &cfg),
            Err(GssError::MissingComponent(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        fn random_corpus(n: usize, edges: usize, rng_seed: u64) -> Corpus {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let d = 3;
            let mut emb = Vec::with_capacity(n * d);
            for _ in 0..n {
                let mut row: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                if row.iter().map(|x| x * x).sum::<f32>() < 0.01 {
                    row[0] += 0.5;
                }
                emb.extend(row);
            }
            let mut list: Vec<(usize, usize)> = (0..edges)
                .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
                .filter(|(a, b)| a != b)
                .collect();
            list.sort_unstable();
            list.dedup();
            let fac = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            Corpus::new(
                CorpusGraph::from_edges(n, &list).unwrap(),
                NodeFeatures::new(d, emb.clone(), "features").unwrap(),
                Some(EmbeddingMatrix::new(d, emb, "embeddings").unwrap()),
                Some(MetricFactorTensor::new(d, 1, 0.01, fac).unwrap()),
                None,
            )
            .unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn hits_respect_threshold_budget_and_determinism(
                n in 2usize..50,
                edges in 0usize..150,
                k in 1usize..6,
                lambda in 0.0f64..=1.0,
                theta in -1.0f64..=1.0,
                off in any::<bool>(),
                rng_seed in any::<u64>(),
            ) {
                let c = random_corpus(n, edges, rng_seed);
                let e = c.embeddings().unwrap();
                let query = Query::node(rng_seed as usize % n, k);
                let cfg = PipelineConfig {
                    mmr_lambda: lambda,
                    coherence_threshold: theta,
                    early_stop: if off { EarlyStopMode::Off } else { EarlyStopMode::Auto },
                    ..Default::default()
                };
                let r = search(&query, &c, &cfg).unwrap();
                prop_assert_eq!(&search(&query, &c, &cfg).unwrap(), &r);

                let q = query.resolve(e).unwrap();
                let dg = &r.diagnostics;
                prop_assert!(dg.candidates <= 2 * k);
                if off {
                    prop_assert_eq!(dg.candidates, (2 * k).min(dg.settled - 1));
                }
                prop_assert!(r.hits.len() <= k);
                prop_assert!(r.hits.len() + dg.filtered <= dg.candidates);

                let mut seen = std::collections::BTreeSet::new();
                for h in &r.hits {
                    prop_assert!(h.node != query.node_id().unwrap());
                    prop_assert!(seen.insert(h.node));
                    let seed = h.path.nodes[0];
                    let mut coherence = 1.0f64;
                    if Some(seed) != query.node_id() {
                        coherence = coherence.min(cosine(&q, e.row(seed)).unwrap());
                    }
                    for w in h.path.nodes.windows(2) {
                        coherence = coherence.min(cosine(e.row(w[0]), e.row(w[1])).unwrap());
                    }
                    prop_assert!((coherence - h.coherence).abs() <= 1e-12);
                    prop_assert!(h.coherence >= theta);
                }
            }

            #[test]
            fn pure_relevance_returns_settle_order(
                n in 2usize..50,
                edges in 0usize..150,
                k in 1usize..6,
                rng_seed in any::<u64>(),
            ) {
                let c = random_corpus(n, edges, rng_seed);
                let query = Query::node(rng_seed as usize % n, k);
                let cfg = PipelineConfig {
                    mmr_lambda: 1.0,
                    coherence_threshold: -1.0,
                    early_stop: EarlyStopMode::Off,
                    ..Default::default()
                };
                let r = search(&query, &c, &cfg).unwrap();
                prop_assert_eq!(r.diagnostics.filtered, 0);
                for w in r.hits.windows(2) {
                    prop_assert!(w[0].distance <= w[1].distance);
                }
                prop_assert_eq!(r.hits.len(), k.min(r.diagnostics.settled - 1));
            }

            #[test]
            fn seeds_are_the_exact_cosine_top(
                n in 1usize..60,
                count_raw in 0usize..60,
                node_query in any::<bool>(),
                rng_seed in any::<u64>(),
            ) {
                let c = random_corpus(n, 0, rng_seed);
                let (e, f) = (c.embeddings().unwrap(), c.factors().unwrap());
                let count = 1 + count_raw % n;
                let qn = (rng_seed as usize / 7) % n;
                let (q, query_node) = if node_query {
                    (e.row_f64(qn), Some(qn))
                } else {
                    (vec![0.3, -0.4, 0.5], None)
                };
                let got = select_seeds(&q, query_node, e, f, count, None).unwrap();

                let mut all: Vec<usize> = (0..n).collect();
                all.sort_by(|&a, &b| {
                    let key = |i: usize| {
                        if Some(i) == query_node { f64::INFINITY } else { cosine(&q, e.row(i)).unwrap() }
                    };
                    key(b).total_cmp(&key(a)).then(a.cmp(&b))
                });
                let ids: Vec<usize> = got.iter().map(|s| s.0).collect();
                prop_assert_eq!(&ids[..], &all[..count]);
                for &(s, init) in &got {
                    if Some(s) == query_node {
                        prop_assert_eq!(init, 0.0);
                    } else {
                        let want = crate::metric::local_distance(s, &q, f, e).unwrap();
                        prop_assert_eq!(init, want);
                    }
                }
            }
        }
    }
}
