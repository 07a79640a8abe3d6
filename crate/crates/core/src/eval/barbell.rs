//! Barbell fixtures: two areas joined by a short chain of similar nodes, with
//! metrics that make the chain cheap and the query's own area expensive.
//!
//! Layout in `d` dimensions (`d >= 6`):
//! * node 0 is the query at `e0`;
//! * the rest of the source area sits at `e0 + t·(cos φ e2 + sin φ e3)` with
//!   cosine at least 0.95 to the query, and every source node carries the
//!   factor `s·[e2 e3]`, so moving inside that plane costs about `s·t`;
//! * chain node `m` sits at angle `m·θ` in the `e0`/`e1` plane;
//! * the target area is spread in the `e4`/`e5` plane around angle `p·θ`,
//!   its first node exactly on the chain.
//!
//! Chain and target factors are small, so the cheapest settled node from the
//! query is the first chain node even though every source node has higher
//! cosine similarity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusGraph, Element, EmbeddingMatrix, MetricFactorTensor, NodeFeatures};
use crate::error::{GssError, Result};
use crate::metric::LocalDistanceKernel;
use crate::pipeline::cosine;

use super::metrics::BridgeTask;

/// Consecutive chain nodes must be more similar than this.
pub const CHAIN_MIN_SIMILARITY: f64 = 0.65;
/// Every source-area node is at least this similar to the query.
pub const DISTRACTOR_MIN_SIMILARITY: f64 = 0.95;
/// Required ratio of `α·(1 − sim)` to the best path sum.
pub const PROBE_MARGIN: f64 = 2.0;
/// Longest path, in edges, the brute-force certificate enumerates.
pub const PROBE_MAX_HOPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarbellConfig {
    /// Source area size including the query node.
    pub source_size: usize,
    pub target_size: usize,
    /// Edges on the chain from the query to the first target node.
    pub path_len: usize,
    /// Angle between consecutive chain nodes, in degrees.
    pub step_degrees: f64,
    pub dim: usize,
    /// Factor scale inside the source area.
    pub factor_scale: f64,
    pub epsilon: f64,
    /// Probability of an extra edge inside an area.
    pub density: f64,
    pub seed: u64,
}

impl Default for BarbellConfig {
    fn default() -> Self {
        BarbellConfig {
            source_size: 24,
            target_size: 25,
            path_len: 2,
            step_degrees: 40.0,
            dim: 8,
            factor_scale: 10.0,
            epsilon: 0.01,
            density: 0.4,
            seed: 0,
        }
    }
}

impl BarbellConfig {
    pub fn node_count(&self) -> usize {
        self.source_size + self.path_len.saturating_sub(1) + self.target_size
    }

    fn check(&self) -> Result<()> {
        let infeasible = |m: String| Err(GssError::InfeasibleFixture(m));
        if self.path_len < 2 {
            return infeasible(format!(
                "path length {} leaves no node between the areas; need path length >= 2",
                self.path_len
            ));
        }
        if self.dim < 6 {
            return infeasible(format!("dimension {} < 6", self.dim));
        }
        if self.source_size < 6 || self.target_size == 0 {
            return infeasible(format!(
                "need source size >= 6 (query plus five distractors) and target size >= 1, got {} and {}",
                self.source_size, self.target_size
            ));
        }
        let step = self.step_degrees.to_radians();
        if !(step.cos() > CHAIN_MIN_SIMILARITY) {
            return infeasible(format!(
                "consecutive chain similarity cos({}°) = {:.4} must exceed {CHAIN_MIN_SIMILARITY}",
                self.step_degrees,
                step.cos()
            ));
        }
        if !(step.cos() < DISTRACTOR_MIN_SIMILARITY) {
            return infeasible(format!(
                "bridge similarity cos({}°) = {:.4} must stay below the distractor similarity {DISTRACTOR_MIN_SIMILARITY}",
                self.step_degrees,
                step.cos()
            ));
        }
        if self.path_len as f64 * self.step_degrees >= 180.0 {
            return infeasible(format!(
                "chain of {} steps of {}° wraps past the antipode",
                self.path_len, self.step_degrees
            ));
        }
        if !(self.factor_scale > 0.0 && self.epsilon > 0.0 && (0.0..=1.0).contains(&self.density)) {
            return infeasible("factor scale and epsilon must be positive and density in [0, 1]".into());
        }
        Ok(())
    }
}

/// Certificate that a path beats direct similarity for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageProbe {
    pub source: usize,
    pub target: usize,
    /// Cheapest path found, query first.
    pub path: Vec<usize>,
    pub path_sum: f64,
    pub similarity: f64,
    /// Largest edge weight over largest dissimilarity in the corpus.
    pub alpha: f64,
}

impl AdvantageProbe {
    pub fn dissimilarity(&self) -> f64 {
        1.0 - self.similarity
    }

    /// `α·(1 − sim) / Σ d`; above 1 the inequality holds.
    pub fn margin(&self) -> f64 {
        self.alpha * self.dissimilarity() / self.path_sum
    }

    pub fn holds(&self) -> bool {
        self.path_sum < self.alpha * self.dissimilarity()
    }
}

#[derive(Clone, Debug)]
pub struct BarbellFixture {
    pub corpus: Corpus,
    pub task: BridgeTask,
    pub probe: AdvantageProbe,
    pub query: usize,
    pub config: BarbellConfig,
}

/// `max w(u, v) / max (1 − cos)` over edges and node pairs.
pub fn calibrate_alpha(corpus: &Corpus) -> Result<f64> {
    let emb = corpus.embeddings()?;
    let mut kernel = LocalDistanceKernel::new(emb, corpus.factors()?)?;
    let w_max = corpus
        .graph
        .symmetric_view()
        .edges()
        .map(|(u, v)| kernel.step(u, v))
        .fold(0.0, f64::max);
    let n = corpus.node_count();
    let mut dis_max = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let c = cosine(emb.row(i), emb.row(j)).ok_or(GssError::ZeroNorm(i))?;
            dis_max = dis_max.max(1.0 - c);
        }
    }
    if dis_max <= 0.0 {
        return Err(GssError::InfeasibleFixture("all nodes are parallel; dissimilarity scale is 0".into()));
    }
    Ok(w_max / dis_max)
}

/// Cheapest path from `source` to `target` among simple paths of at most
/// `max_hops` edges, by exhaustive depth-first enumeration pruned only by
/// the best sum found so far (weights are positive, so no pruned prefix can
/// finish cheaper). Returns `None` when no such path exists.
pub fn cheapest_path_brute_force<T: Element>(
    view: &crate::corpus::Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
    source: usize,
    target: usize,
    max_hops: usize,
) -> Result<Option<(Vec<usize>, f64)>> {
    struct Search<'a, 'k, T: Element> {
        view: &'a crate::corpus::Csr,
        kernel: LocalDistanceKernel<'k, T>,
        target: usize,
        max_hops: usize,
        on_path: Vec<bool>,
        path: Vec<usize>,
        best: Option<(Vec<usize>, f64)>,
    }
    impl<T: Element> Search<'_, '_, T> {
        fn visit(&mut self, u: usize, sum: f64) {
            if self.best.as_ref().is_some_and(|b| sum >= b.1) {
                return;
            }
            if u == self.target {
                self.best = Some((self.path.clone(), sum));
                return;
            }
            if self.path.len() > self.max_hops {
                return;
            }
            // cheapest edges first, so a good bound is found early
            let mut next: Vec<(f64, usize)> = self
                .view
                .neighbors(u)
                .iter()
                .filter(|&&v| !self.on_path[v])
                .map(|&v| (self.kernel.step(u, v), v))
                .collect();
            next.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (w, v) in next {
                self.on_path[v] = true;
                self.path.push(v);
                self.visit(v, sum + w);
                self.path.pop();
                self.on_path[v] = false;
            }
        }
    }

    let n = view.node_count();
    for node in [source, target] {
        if node >= n {
            return Err(GssError::NodeOutOfRange { node, count: n });
        }
    }
    let mut s = Search {
        view,
        kernel: LocalDistanceKernel::new(embeddings, factors)?,
        target,
        max_hops,
        on_path: vec![false; n],
        path: vec![source],
        best: None,
    };
    s.on_path[source] = true;
    s.visit(source, 0.0);
    Ok(s.best)
}

/// Rebuilds the probe for `(source, target)` from scratch: brute-force path,
/// cosine and calibrated `α`.
pub fn certify_probe(corpus: &Corpus, source: usize, target: usize) -> Result<AdvantageProbe> {
    let emb = corpus.embeddings()?;
    let (path, path_sum) = cheapest_path_brute_force(
        corpus.graph.symmetric_view(),
        emb,
        corpus.factors()?,
        source,
        target,
        PROBE_MAX_HOPS,
    )?
    .ok_or_else(|| {
        GssError::InfeasibleFixture(format!("no path of at most {PROBE_MAX_HOPS} edges from {source} to {target}"))
    })?;
    Ok(AdvantageProbe {
        source,
        target,
        path,
        path_sum,
        similarity: cosine(emb.row(source), emb.row(target)).ok_or(GssError::ZeroNorm(source))?,
        alpha: calibrate_alpha(corpus)?,
    })
}

fn area_edges(ids: std::ops::Range<usize>, density: f64, rng: &mut ChaCha8Rng, edges: &mut Vec<(usize, usize)>) {
    let ids: Vec<usize> = ids.collect();
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[..a] {
            if j + 1 == i || rng.gen_bool(density) {
                edges.push((i, j));
            }
        }
    }
}

pub fn make_barbell_fixture(config: &BarbellConfig) -> Result<BarbellFixture> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let rank = 2;
    let a = config.source_size;
    let chain = config.path_len - 1;
    let n = config.node_count();
    let first_target = a + chain;
    let step = config.step_degrees.to_radians();
    let t_max = DISTRACTOR_MIN_SIMILARITY.acos().tan();

    let mut emb = vec![0.0f64; n * d];
    let mut fac = vec![0.0f64; n * d * rank];
    let small = |rng: &mut ChaCha8Rng| 0.02 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
    for i in 0..n {
        let row = &mut emb[i * d..(i + 1) * d];
        let slab = &mut fac[i * d * rank..(i + 1) * d * rank];
        if i < a {
            row[0] = 1.0;
            if i > 0 {
                let t = rng.gen_range(0.5 * t_max..0.999 * t_max);
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                row[2] = t * phi.cos();
                row[3] = t * phi.sin();
            }
            slab[2 * rank] = config.factor_scale;
            slab[3 * rank + 1] = config.factor_scale;
        } else {
            let m = (i - a + 1).min(config.path_len);
            let angle = m as f64 * step;
            row[0] = angle.cos();
            row[1] = angle.sin();
            if i > first_target {
                let s = rng.gen_range(0.05..0.3);
                let psi = rng.gen_range(0.0..std::f64::consts::TAU);
                row[4] = s * psi.cos();
                row[5] = s * psi.sin();
            }
            slab.iter_mut().for_each(|v| *v = small(&mut rng));
        }
    }

    let mut edges = Vec::new();
    area_edges(0..a, config.density, &mut rng, &mut edges);
    area_edges(first_target..n, config.density, &mut rng, &mut edges);
    let mut prev = 0;
    for c in a..=first_target {
        edges.push((c, prev));
        prev = c;
    }
    edges.sort_unstable();

    let e32: Vec<f32> = emb.iter().map(|&v| v as f32).collect();
    let corpus = Corpus::new(
        CorpusGraph::from_edges(n, &edges)?,
        NodeFeatures::new(d, e32.clone(), "features")?,
        Some(EmbeddingMatrix::new(d, e32, "embeddings")?),
        Some(MetricFactorTensor::new(
            d,
            rank,
            config.epsilon,
            fac.iter().map(|&v| v as f32).collect(),
        )?),
        None,
    )?;

    let probe = certify_probe(&corpus, 0, first_target)?;
    if probe.margin() < PROBE_MARGIN {
        return Err(GssError::InfeasibleFixture(format!(
            "path sum {:.4} is not below α·(1 − sim) = {:.4} by a factor {PROBE_MARGIN} (margin {:.3})",
            probe.path_sum,
            probe.alpha * probe.dissimilarity(),
            probe.margin()
        )));
    }
    Ok(BarbellFixture {
        task: BridgeTask {
            source: (0..a).collect(),
            target: (first_target..n).collect(),
            bridges: (a..first_target).collect(),
        },
        corpus,
        probe,
        query: 0,
        config: config.clone(),
    })
}
