//! Synthetic corpora for tests, benchmarks and the experiment driver.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    Corpus, CorpusGraph, EmbeddingMatrix, MetricFactorTensor, NodeFeatures, SplitYears, TemporalSplit,
};
use crate::error::{GssError, Result};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn to_f32(rows: &[f64]) -> Vec<f32> {
    rows.iter().map(|&v| v as f32).collect()
}

fn dedup_edges(mut edges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    edges.retain(|(a, b)| a != b);
    edges.sort_unstable();
    edges.dedup();
    edges
}

/// Citation corpus of topic clusters in embedding space. Node `i` cites its
/// nearest earlier nodes plus, occasionally, one random earlier node; ids
/// follow publication order, so the temporal split cuts by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometricConfig {
    pub nodes: usize,
    pub dim: usize,
    pub rank: usize,
    pub topics: usize,
    pub citations: usize,
    /// Probability of one extra citation to a uniformly drawn earlier node.
    pub long_range: f64,
    /// Standard deviation of node offsets around their topic centre.
    pub spread: f64,
    pub factor_scale: f64,
    pub factor_noise: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        GeometricConfig {
            nodes: 5000,
            dim: 16,
            rank: 4,
            topics: 20,
            citations: 5,
            long_range: 0.1,
            spread: 0.15,
            factor_scale: 1.0,
            factor_noise: 0.2,
            epsilon: 0.01,
            seed: 0,
        }
    }
}

pub fn geometric_fixture(config: &GeometricConfig) -> Result<Corpus> {
    let GeometricConfig {
        nodes: n,
        dim,
        rank,
        topics,
        citations,
        ..
    } = *config;
    if n < 2 || dim == 0 || rank == 0 || rank > dim || topics == 0 || citations == 0 {
        return Err(GssError::InvalidParameter(format!(
            "geometric fixture needs N >= 2, 0 < r <= d, topics >= 1 and citations >= 1; got N = {n}, d = {dim}, r = {rank}, topics = {topics}, citations = {citations}"
        )));
    }
    if !(0.0..=1.0).contains(&config.long_range) {
        return Err(GssError::InvalidParameter("long-range probability must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centres: Vec<Vec<f64>> = (0..topics).map(|_| unit(&mut rng, dim)).collect();
    let bases: Vec<Vec<f64>> = (0..topics)
        .map(|_| {
            let s = config.factor_scale / (dim as f64).sqrt();
            (0..dim * rank).map(|_| s * gaussian(&mut rng)).collect()
        })
        .collect();

    let mut emb = Vec::with_capacity(n * dim);
    let mut fac = Vec::with_capacity(n * dim * rank);
    for _ in 0..n {
        let t = rng.gen_range(0..topics);
        emb.extend(centres[t].iter().map(|c| c + config.spread * gaussian(&mut rng)));
        let s = config.factor_noise / (dim as f64).sqrt();
        fac.extend(bases[t].iter().map(|b| b + s * gaussian(&mut rng)));
    }
    let extra: Vec<Option<usize>> = (0..n)
        .map(|i| (i > 0 && rng.gen_bool(config.long_range)).then(|| rng.gen_range(0..i)))
        .collect();

    let cited: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &emb[i * dim..(i + 1) * dim];
            let mut earlier: Vec<(f64, usize)> = (0..i)
                .map(|j| {
                    let d: f64 = row.iter().zip(&emb[j * dim..(j + 1) * dim]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            let keep = citations.min(earlier.len());
            if keep < earlier.len() {
                earlier.select_nth_unstable_by(keep, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            earlier.truncate(keep);
            earlier.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut edges = Vec::new();
    for (i, c) in cited.iter().enumerate() {
        edges.extend(c.iter().map(|&j| (i, j)));
        if let Some(j) = extra[i] {
            edges.push((i, j));
        }
    }

    let years: Vec<i32> = (0..n).map(|i| 2000 + (20 * i / n) as i32).collect();
    let split = TemporalSplit::from_years(
        &years,
        SplitYears {
            valid_from: 2016,
            test_from: 2018,
        },
    )?;
    let e32 = to_f32(&emb);
    Corpus::new(
        CorpusGraph::from_edges(n, &dedup_edges(edges))?,
        NodeFeatures::new(dim, e32.clone(), "features")?,
        Some(EmbeddingMatrix::new(dim, e32, "embeddings")?),
        Some(MetricFactorTensor::new(dim, rank, config.epsilon, to_f32(&fac))?),
        Some(split),
    )
}

/// Two blocks of nodes with block-local citations and features around two
/// antipodal centres. No embeddings or factors: this is training input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoBlockConfig {
    pub block_size: usize,
    pub feature_dim: usize,
    /// Citations drawn per node inside its block.
    pub citations: usize,
    pub cross_probability: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for TwoBlockConfig {
    fn default() -> Self {
        TwoBlockConfig {
            block_size: 25,
            feature_dim: 8,
            citations: 3,
            cross_probability: 0.05,
            noise: 0.5,
            seed: 0,
        }
    }
}

pub fn two_block_fixture(config: &TwoBlockConfig) -> Result<Corpus> {
    let b = config.block_size;
    if b < 2 || config.citations == 0 || config.citations >= b || config.feature_dim == 0 {
        return Err(GssError::InvalidParameter(format!(
            "two-block fixture needs 1 <= citations < block size and a positive feature dim; got block {b}, citations {}",
            config.citations
        )));
    }
    let n = 2 * b;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centre = unit(&mut rng, config.feature_dim);
    let mut feats = Vec::with_capacity(n * config.feature_dim);
    let mut edges = Vec::new();
    for i in 0..n {
        let (block, sign) = if i < b { (0, 1.0) } else { (b, -1.0) };
        feats.extend(centre.iter().map(|c| sign * c + config.noise * gaussian(&mut rng)));
        let mut pool: Vec<usize> = (block..block + b).filter(|&j| j != i).collect();
        pool.shuffle(&mut rng);
        edges.extend(pool[..config.citations].iter().map(|&j| (i, j)));
        if rng.gen_bool(config.cross_probability) {
            let other = if i < b { b } else { 0 };
            edges.push((i, other + rng.gen_range(0..b)));
        }
    }
    Corpus::new(
        CorpusGraph::from_edges(n, &dedup_edges(edges))?,
        NodeFeatures::new(config.feature_dim, to_f32(&feats), "features")?,
        None,
        None,
        None,
    )
}

/// Groups of four points `c ± r·u`, `c ± r·v` around well separated centres
/// on a complete graph with one shared metric factor, so every group mean
/// sits exactly at its centre. Returns the corpus and the planted groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomogeneousConfig {
    pub groups: usize,
    pub dim: usize,
    pub rank: usize,
    pub radius: f64,
    pub separation: f64,
    pub epsilon: f64,
    /// When set, every node draws its own factor instead of sharing one.
    pub heterogeneous: bool,
    pub seed: u64,
}

impl Default for HomogeneousConfig {
    fn default() -> Self {
        HomogeneousConfig {
            groups: 16,
            dim: 4,
            rank: 2,
            radius: 0.5,
            separation: 20.0,
            epsilon: 0.1,
            heterogeneous: false,
            seed: 0,
        }
    }
}

pub fn homogeneous_fixture(config: &HomogeneousConfig) -> Result<(Corpus, Vec<usize>)> {
    let HomogeneousConfig { groups, dim, rank, .. } = *config;
    if groups == 0 || dim < 2 || rank == 0 || rank > dim {
        return Err(GssError::InvalidParameter(format!(
            "homogeneous fixture needs groups >= 1, d >= 2 and 0 < r <= d; got {groups}, {dim}, {rank}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = 4 * groups;
    let mut emb = Vec::with_capacity(n * dim);
    let mut planted = Vec::with_capacity(n);
    for g in 0..groups {
        let c: Vec<f64> = unit(&mut rng, dim).into_iter().map(|x| x * config.separation * (1.0 + g as f64)).collect();
        let u = unit(&mut rng, dim);
        let v = unit(&mut rng, dim);
        for (w, s) in [(&u, 1.0), (&u, -1.0), (&v, 1.0), (&v, -1.0)] {
            emb.extend(c.iter().zip(w.iter()).map(|(ci, wi)| ci + s * config.radius * wi));
            planted.push(g);
        }
    }
    let shared: Vec<f64> = (0..dim * rank).map(|_| gaussian(&mut rng) / (dim as f64).sqrt()).collect();
    let mut fac = Vec::with_capacity(n * dim * rank);
    for _ in 0..n {
        if config.heterogeneous {
            fac.extend((0..dim * rank).map(|_| 2.0 * gaussian(&mut rng) / (dim as f64).sqrt()));
        } else {
            fac.extend(&shared);
        }
    }
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let e32 = to_f32(&emb);
    let corpus = Corpus::new(
        CorpusGraph::from_edges(n, &edges)?,
        NodeFeatures::new(dim, e32.clone(), "features")?,
        Some(EmbeddingMatrix::new(dim, e32, "embeddings")?),
        Some(MetricFactorTensor::new(dim, rank, config.epsilon, to_f32(&fac))?),
        None,
    )?;
    Ok((corpus, planted))
}

/// Random geometric graph whose factors vary linearly with node position,
/// so neighbouring factors differ by a bounded amount.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    pub nodes: usize,
    pub dim: usize,
    pub rank: usize,
    /// Connection radius in the unit square.
    pub radius: f64,
    /// Frobenius norm of the factor gradient per unit of position.
    pub slope: f64,
    pub seed: u64,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig {
            nodes: 200,
            dim: 8,
            rank: 2,
            radius: 0.15,
            slope: 1.0,
            seed: 0,
        }
    }
}

pub fn smooth_factor_fixture(config: &SmoothConfig) -> Result<Corpus> {
    let SmoothConfig { nodes: n, dim, rank, .. } = *config;
    if n < 2 || rank == 0 || rank > dim {
        return Err(GssError::InvalidParameter("smooth fixture needs N >= 2 and 0 < r <= d".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pos: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let base: Vec<f64> = (0..dim * rank).map(|_| gaussian(&mut rng)).collect();
    let dirs: [Vec<f64>; 2] = [0, 1].map(|_| unit(&mut rng, dim * rank));
    let mut fac = Vec::with_capacity(n * dim * rank);
    let mut emb = Vec::with_capacity(n * dim);
    for p in &pos {
        fac.extend((0..dim * rank).map(|e| base[e] + config.slope * (p[0] * dirs[0][e] + p[1] * dirs[1][e])));
        emb.extend((0..dim).map(|a| match a {
            0 => p[0],
            1 => p[1],
            _ => 0.1 * gaussian(&mut rng),
        }));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..i {
            let d2 = (pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2);
            if d2 <= config.radius * config.radius || j + 1 == i {
                edges.push((i, j));
            }
        }
    }
    let e32 = to_f32(&emb);
    Corpus::new(
        CorpusGraph::from_edges(n, &edges)?,
        NodeFeatures::new(dim, e32.clone(), "features")?,
        Some(EmbeddingMatrix::new(dim, e32, "embeddings")?),
        Some(MetricFactorTensor::new(dim, rank, 0.01, to_f32(&fac))?),
        None,
    )
}

/// Frobenius distance between two factor slabs.
pub fn factor_distance<T: crate::corpus::Element>(factors: &MetricFactorTensor<T>, i: usize, j: usize) -> f64 {
    factors
        .slab(i)
        .iter()
        .zip(factors.slab(j))
        .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Largest factor difference across an edge of the symmetric view.
pub fn max_edge_factor_distance(corpus: &Corpus) -> Result<f64> {
    let factors = corpus.factors()?;
    Ok(corpus
        .graph
        .symmetric_view()
        .edges()
        .map(|(i, j)| factor_distance(factors, i, j))
        .fold(0.0, f64::max))
}

/// Same corpus with every factor set to zero, leaving `ε·I` as the metric.
pub fn euclidean_ablation(corpus: &Corpus) -> Result<Corpus> {
    let factors = corpus.factors()?;
    let zeros = MetricFactorTensor::zeros(corpus.node_count(), factors.dim(), factors.rank(), factors.epsilon())?;
    Corpus::new(
        corpus.graph.clone(),
        corpus.features.clone(),
        corpus.embeddings.clone(),
        Some(zeros),
        corpus.split.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_fixture_shape_and_determinism() {
        let config = GeometricConfig {
            nodes: 300,
            ..Default::default()
        };
        let a = geometric_fixture(&config).unwrap();
        assert_eq!(a.node_count(), 300);
        assert_eq!(a, geometric_fixture(&config).unwrap());
        let g = a.graph.out_edges();
        for i in 1..300 {
            assert!(g.degree(i) >= config.citations.min(i));
            assert!(g.neighbors(i).iter().all(|&j| j < i), "citations point backwards");
        }
        let split = a.split.as_ref().unwrap();
        assert!(split.train.iter().all(|&i| i < 240));
        assert_eq!(split.test.len(), 30);
    }

    #[test]
    fn two_block_citations_stay_mostly_inside_blocks() {
        let c = two_block_fixture(&TwoBlockConfig::default()).unwrap();
        assert_eq!(c.node_count(), 50);
        let cross = c.graph.out_edges().edges().filter(|&(i, j)| (i < 25) != (j < 25)).count();
        assert!(cross * 10 < c.graph.out_edges().edge_count());
        assert!(c.embeddings.is_none());
    }

    #[test]
    fn homogeneous_groups_are_centred() {
        let (c, planted) = homogeneous_fixture(&HomogeneousConfig::default()).unwrap();
        let e = c.embeddings().unwrap();
        for g in 0..16 {
            let members: Vec<usize> = (0..64).filter(|&i| planted[i] == g).collect();
            assert_eq!(members.len(), 4);
            let f = c.factors().unwrap();
            assert!(members.iter().all(|&i| f.slab(i) == f.slab(0)));
            for a in 0..4 {
                let mean: f64 = members.iter().map(|&i| e.row(i)[a] as f64).sum::<f64>() / 4.0;
                let c0 = (e.row(members[0])[a] as f64 + e.row(members[1])[a] as f64) / 2.0;
                assert!((mean - c0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn smooth_fixture_bounds_edge_differences() {
        let c = smooth_factor_fixture(&SmoothConfig::default()).unwrap();
        let delta = max_edge_factor_distance(&c).unwrap();
        // linear in position with unit-norm directions: at most slope · √2 · radius,
        // except on the chain edges that keep the graph connected
        assert!(delta > 0.0 && delta <= 2.0 * 2f64.sqrt());
    }

    #[test]
    fn ablation_zeroes_factors_only() {
        let c = smooth_factor_fixture(&SmoothConfig::default()).unwrap();
        let a = euclidean_ablation(&c).unwrap();
        assert!(a.factors().unwrap().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(a.factors().unwrap().epsilon(), c.factors().unwrap().epsilon());
        assert_eq!(a.embeddings, c.embeddings);
    }
}
