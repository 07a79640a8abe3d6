//! Multi-level coarsening by k-means on embeddings, coarse-to-fine search and
//! the cluster-diameter bound check.
//!
//! Level 0 is the corpus itself. Level `ℓ ≥ 1` clusters the nodes of level
//! `ℓ − 1`; its embeddings and factors are member means kept in `f64`.

mod bound;
mod kmeans;
mod search;

pub use bound::{check_hierarchical_bound, sample_pairs, BoundEntry, BoundReport, BOUND_TOL};
pub use kmeans::{kmeans, KMeansResult};
pub use search::{coarse_to_fine_search, coarse_to_fine_search_timed};

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::binary::{read_elements, read_indices, write_elements, write_indices};
use crate::corpus::manifest::{
    read_dense, read_factors, read_graph, read_json, write_dense, write_factors, write_graph, write_json,
    FactorFile, GraphFiles, MatrixFile,
};
use crate::corpus::{Corpus, Csr, Element, EmbeddingMatrix, MetricFactorTensor, MANIFEST_FILE};
use crate::error::{GssError, Result};
use crate::metric::LocalDistanceKernel;

/// Clusters up to this size get an exact all-pairs diameter.
pub const EXACT_DIAMETER_MAX: usize = 64;
/// Ordered member pairs sampled for larger clusters.
pub const DIAMETER_SAMPLES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    /// Pooling ratio ρ: level `ℓ` keeps `⌊ρ·N^(ℓ−1)⌋` clusters.
    pub rho: f64,
    /// Total level count including the corpus itself.
    pub levels: usize,
    pub kmeans_iter_cap: usize,
    pub seed: u64,
    /// Clusters kept per coarse level during search; `None` means `2k`.
    pub beam: Option<usize>,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            rho: 0.1,
            levels: 3,
            kmeans_iter_cap: 100,
            seed: 0,
            beam: None,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(GssError::InvalidParameter(format!(
                "pooling ratio must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if self.levels == 0 {
            return Err(GssError::InvalidParameter("level count must be at least 1".into()));
        }
        if self.beam == Some(0) {
            return Err(GssError::InvalidParameter("beam width must be at least 1".into()));
        }
        Ok(())
    }
}

/// `⌊ρ·n⌋`, tolerant of the representation error in products like `0.29·100`.
pub fn cluster_count(rho: f64, n: usize) -> usize {
    (rho * n as f64 + 1e-9).floor() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyLevel {
    /// `ℓ ≥ 1`.
    pub level: usize,
    /// Level `ℓ − 1` node → cluster id. Cluster ids are ordered by their
    /// smallest member.
    pub assignment: Vec<usize>,
    pub embeddings: EmbeddingMatrix<f64>,
    pub factors: MetricFactorTensor<f64>,
    /// Symmetric cluster graph without self-edges.
    pub graph: Csr,
    pub diameters: Vec<f64>,
    /// `false` where the diameter is a sampled lower estimate.
    pub diameter_exact: Vec<bool>,
    pub requested_clusters: usize,
    pub kmeans_iterations: usize,
    pub kmeans_repairs: usize,
}

impl HierarchyLevel {
    pub fn cluster_count(&self) -> usize {
        self.embeddings.len()
    }

    pub fn child_count(&self) -> usize {
        self.assignment.len()
    }

    /// Members of each cluster in ascending order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count()];
        for (child, &c) in self.assignment.iter().enumerate() {
            out[c].push(child);
        }
        out
    }

    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub config: HierarchyConfig,
    pub corpus_checksum: String,
    pub fine_node_count: usize,
    /// Coarse levels, finest first: `levels[0]` is level 1.
    pub levels: Vec<HierarchyLevel>,
}

impl Hierarchy {
    /// Total level count including the corpus.
    pub fn depth(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn verify(&self, corpus: &Corpus) -> Result<()> {
        let found = corpus_checksum(corpus)?;
        if found != self.corpus_checksum {
            return Err(GssError::HierarchyMismatch {
                expected: self.corpus_checksum.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Node counts per level, corpus first.
    pub fn level_sizes(&self) -> Vec<usize> {
        std::iter::once(self.fine_node_count)
            .chain(self.levels.iter().map(HierarchyLevel::cluster_count))
            .collect()
    }
}

/// SHA-256 over the graph, embeddings and factors of a corpus.
pub fn corpus_checksum(corpus: &Corpus) -> Result<String> {
    let emb = corpus.embeddings()?;
    let factors = corpus.factors()?;
    let mut h = Sha256::new();
    let g = corpus.graph.out_edges();
    h.update((g.node_count() as u64).to_le_bytes());
    for &o in g.offsets() {
        h.update((o as u64).to_le_bytes());
    }
    for &i in g.indices() {
        h.update((i as u64).to_le_bytes());
    }
    let mut buf = Vec::new();
    h.update((emb.dim() as u64).to_le_bytes());
    for &v in emb.as_slice() {
        buf.clear();
        v.put_le(&mut buf);
        h.update(&buf);
    }
    h.update((factors.rank() as u64).to_le_bytes());
    h.update(factors.epsilon().to_le_bytes());
    for &v in factors.as_slice() {
        buf.clear();
        v.put_le(&mut buf);
        h.update(&buf);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Clusters one level. `view` is the level's symmetric traversal graph.
pub fn coarsen<T: Element>(
    view: &Csr,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
    rho: f64,
    iter_cap: usize,
    seed: u64,
    level: usize,
) -> Result<HierarchyLevel> {
    let n = embeddings.len();
    let k = cluster_count(rho, n);
    if k < 1 {
        return Err(GssError::InvalidParameter(format!(
            "pooling ratio {rho} leaves no clusters for {n} nodes at level {level}"
        )));
    }
    let km = kmeans(embeddings, k, iter_cap, seed)?;

    // relabel by smallest member so identity coarsening keeps node ids
    let mut relabel = vec![usize::MAX; k];
    let mut next = 0;
    for &a in &km.assignment {
        if relabel[a] == usize::MAX {
            relabel[a] = next;
            next += 1;
        }
    }
    let clusters = next;
    let assignment: Vec<usize> = km.assignment.iter().map(|&a| relabel[a]).collect();

    let d = embeddings.dim();
    let r = factors.rank();
    let mut sizes = vec![0usize; clusters];
    let mut emb_sum = vec![0.0f64; clusters * d];
    let mut fac_sum = vec![0.0f64; clusters * d * r];
    for (i, &c) in assignment.iter().enumerate() {
        sizes[c] += 1;
        for (s, v) in emb_sum[c * d..(c + 1) * d].iter_mut().zip(embeddings.row(i)) {
            *s += v.to_f64();
        }
        for (s, v) in fac_sum[c * d * r..(c + 1) * d * r].iter_mut().zip(factors.slab(i)) {
            *s += v.to_f64();
        }
    }
    for c in 0..clusters {
        let inv = sizes[c] as f64;
        emb_sum[c * d..(c + 1) * d].iter_mut().for_each(|v| *v /= inv);
        fac_sum[c * d * r..(c + 1) * d * r].iter_mut().for_each(|v| *v /= inv);
    }
    let cluster_emb = EmbeddingMatrix::<f64>::new(d, emb_sum, "cluster embeddings")?;
    let cluster_factors = MetricFactorTensor::<f64>::new(d, r, factors.epsilon(), fac_sum)?;

    let mut edges: Vec<(usize, usize)> = view
        .edges()
        .map(|(u, v)| (assignment[u], assignment[v]))
        .filter(|(a, b)| a != b)
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let graph = Csr::from_edges(clusters, &edges)?;

    let members = {
        let mut m = vec![Vec::new(); clusters];
        for (i, &c) in assignment.iter().enumerate() {
            m[c].push(i);
        }
        m
    };
    let kernel = LocalDistanceKernel::new(embeddings, factors)?;
    let (diameters, diameter_exact): (Vec<f64>, Vec<bool>) = members
        .par_iter()
        .enumerate()
        .map(|(c, m)| {
            let mut kernel = kernel.clone();
            cluster_diameter(m, &mut kernel, seed ^ ((level as u64) << 32) ^ c as u64)
        })
        .unzip();

    Ok(HierarchyLevel {
        level,
        assignment,
        embeddings: cluster_emb,
        factors: cluster_factors,
        graph,
        diameters,
        diameter_exact,
        requested_clusters: k,
        kmeans_iterations: km.iterations,
        kmeans_repairs: km.repaired,
    })
}

fn cluster_diameter<T: Element>(members: &[usize], kernel: &mut LocalDistanceKernel<'_, T>, seed: u64) -> (f64, bool) {
    let mut best = 0.0f64;
    if members.len() <= EXACT_DIAMETER_MAX {
        for &u in members {
            for &v in members {
                if u != v {
                    best = best.max(kernel.step(u, v));
                }
            }
        }
        (best, true)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..DIAMETER_SAMPLES {
            let a = rng.gen_range(0..members.len());
            let mut b = rng.gen_range(0..members.len() - 1);
            if b >= a {
                b += 1;
            }
            best = best.max(kernel.step(members[a], members[b]));
        }
        (best, false)
    }
}

/// Builds `config.levels − 1` coarse levels over the corpus's symmetric view.
pub fn build_hierarchy(corpus: &Corpus, config: &HierarchyConfig) -> Result<Hierarchy> {
    config.validate()?;
    let emb = corpus.embeddings()?;
    let factors = corpus.factors()?;
    let mut levels: Vec<HierarchyLevel> = Vec::with_capacity(config.levels.saturating_sub(1));
    for level in 1..config.levels {
        let seed = config.seed.wrapping_add(level as u64);
        let built = match levels.last() {
            None => coarsen(
                corpus.graph.symmetric_view(),
                emb,
                factors,
                config.rho,
                config.kmeans_iter_cap,
                seed,
                level,
            )?,
            Some(prev) => coarsen(
                &prev.graph,
                &prev.embeddings,
                &prev.factors,
                config.rho,
                config.kmeans_iter_cap,
                seed,
                level,
            )?,
        };
        levels.push(built);
    }
    Ok(Hierarchy {
        config: config.clone(),
        corpus_checksum: corpus_checksum(corpus)?,
        fine_node_count: corpus.node_count(),
        levels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyManifest {
    pub format: String,
    pub version: u32,
    pub corpus_checksum: String,
    pub fine_node_count: usize,
    pub config: HierarchyConfig,
    pub levels: Vec<LevelFiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelFiles {
    pub level: usize,
    pub child_count: usize,
    pub cluster_count: usize,
    pub edge_count: usize,
    pub requested_clusters: usize,
    pub kmeans_iterations: usize,
    pub kmeans_repairs: usize,
    pub assignment: String,
    pub graph: GraphFiles,
    pub embeddings: MatrixFile,
    pub factors: FactorFile,
    pub diameters: String,
    pub diameter_exact: Vec<bool>,
}

pub const HIERARCHY_FORMAT: &str = "gss-hierarchy";

pub fn save_hierarchy(h: &Hierarchy, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GssError::io(dir, e))?;
    let mut levels = Vec::with_capacity(h.levels.len());
    for lvl in &h.levels {
        let prefix = format!("level{}_", lvl.level);
        let assignment = format!("{prefix}assignment.u64");
        write_indices(&dir.join(&assignment), &lvl.assignment)?;
        let diameters = format!("{prefix}diameters.f64");
        write_elements(&dir.join(&diameters), &lvl.diameters)?;
        levels.push(LevelFiles {
            level: lvl.level,
            child_count: lvl.child_count(),
            cluster_count: lvl.cluster_count(),
            edge_count: lvl.graph.edge_count(),
            requested_clusters: lvl.requested_clusters,
            kmeans_iterations: lvl.kmeans_iterations,
            kmeans_repairs: lvl.kmeans_repairs,
            assignment,
            graph: write_graph(dir, &format!("{prefix}graph_"), &lvl.graph)?,
            embeddings: write_dense(dir, &format!("{prefix}embeddings.f64"), &lvl.embeddings)?,
            factors: write_factors(dir, &format!("{prefix}factors.f64"), &lvl.factors)?,
            diameters,
            diameter_exact: lvl.diameter_exact.clone(),
        });
    }
    let manifest = HierarchyManifest {
        format: HIERARCHY_FORMAT.into(),
        version: 1,
        corpus_checksum: h.corpus_checksum.clone(),
        fine_node_count: h.fine_node_count,
        config: h.config.clone(),
        levels,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn load_hierarchy(dir: &Path) -> Result<Hierarchy> {
    let manifest_path = if dir.is_dir() { dir.join(MANIFEST_FILE) } else { dir.to_path_buf() };
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest: HierarchyManifest = read_json(&manifest_path)?;
    if manifest.format != HIERARCHY_FORMAT {
        return Err(GssError::Manifest {
            path: manifest_path.clone(),
            message: format!("expected format {HIERARCHY_FORMAT:?}, found {:?}", manifest.format),
        });
    }
    let mut levels = Vec::with_capacity(manifest.levels.len());
    let mut expected_children = manifest.fine_node_count;
    for files in &manifest.levels {
        if files.child_count != expected_children {
            return Err(GssError::mismatch(
                format!("level {} child count", files.level),
                expected_children,
                files.child_count,
            ));
        }
        let n = files.cluster_count;
        let assignment = read_indices(&base.join(&files.assignment), files.child_count, "assignment")?;
        if let Some(&bad) = assignment.iter().find(|&&a| a >= n) {
            return Err(GssError::NodeOutOfRange { node: bad, count: n });
        }
        let diameters = read_elements::<f64>(&base.join(&files.diameters), n, "diameters")?;
        if files.diameter_exact.len() != n {
            return Err(GssError::mismatch("diameter flags", n, files.diameter_exact.len()));
        }
        levels.push(HierarchyLevel {
            level: files.level,
            assignment,
            embeddings: read_dense(base, &manifest_path, &files.embeddings, n, "cluster embeddings")?,
            factors: read_factors(base, &manifest_path, &files.factors, n)?,
            graph: read_graph(base, &files.graph, n, files.edge_count)?,
            diameters,
            diameter_exact: files.diameter_exact.clone(),
            requested_clusters: files.requested_clusters,
            kmeans_iterations: files.kmeans_iterations,
            kmeans_repairs: files.kmeans_repairs,
        });
        expected_children = n;
    }
    Ok(Hierarchy {
        config: manifest.config,
        corpus_checksum: manifest.corpus_checksum,
        fine_node_count: manifest.fine_node_count,
        levels,
    })
}
