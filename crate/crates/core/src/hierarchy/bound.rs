use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Csr, Element, EmbeddingMatrix, MetricFactorTensor};
use crate::error::{GssError, Result};
use crate::geodesic::multi_source_dijkstra;
use crate::metric::LocalDistanceKernel;

use super::Hierarchy;

/// Excess above this counts as a violation.
pub const BOUND_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub i: usize,
    pub j: usize,
    /// `d^(ℓ−1)(i, j)`.
    pub fine: f64,
    /// `d^(ℓ)(c_i, c_j)`.
    pub coarse: f64,
    /// `|coarse − fine| − (Δ^(ℓ−1) + Δ^(ℓ))`.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub level: usize,
    pub fine_diameter: f64,
    pub coarse_diameter: f64,
    pub entries: Vec<BoundEntry>,
    pub violations: usize,
    /// Pairs dropped because either distance is infinite.
    pub unreachable: usize,
}

impl BoundReport {
    pub fn violation_rate(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.violations as f64 / self.entries.len() as f64
        }
    }

    pub fn max_excess(&self) -> f64 {
        self.entries.iter().map(|e| e.excess).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Distinct ordered pairs `i ≠ j` drawn uniformly from `0..n`.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect()
}

fn distances_from<T: Element>(
    view: &Csr,
    emb: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
    sources: &[usize],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    LocalDistanceKernel::new(emb, factors)?;
    sources
        .par_iter()
        .map(|&s| {
            let mut kernel = LocalDistanceKernel::new(emb, factors)?;
            let out = multi_source_dijkstra(&[(s, 0.0)], view, &mut kernel, None, None)?;
            Ok((s, out.dist))
        })
        .collect()
}

/// Compares geodesic distances between level `level − 1` node pairs with the
/// distances between their clusters at `level`.
pub fn check_hierarchical_bound(
    hierarchy: &Hierarchy,
    corpus: &Corpus,
    level: usize,
    pairs: &[(usize, usize)],
) -> Result<BoundReport> {
    hierarchy.verify(corpus)?;
    if level == 0 || level > hierarchy.levels.len() {
        return Err(GssError::InvalidParameter(format!(
            "bound level must lie in 1..={}, got {level}",
            hierarchy.levels.len()
        )));
    }
    let coarse = &hierarchy.levels[level - 1];
    let child_count = coarse.child_count();
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= child_count || j >= child_count) {
        return Err(GssError::NodeOutOfRange {
            node: i.max(j),
            count: child_count,
        });
    }

    let mut sources: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    sources.sort_unstable();
    sources.dedup();
    let (fine_rows, fine_diameter) = if level == 1 {
        (
            distances_from(
                corpus.graph.symmetric_view(),
                corpus.embeddings()?,
                corpus.factors()?,
                &sources,
            )?,
            0.0,
        )
    } else {
        let below = &hierarchy.levels[level - 2];
        (
            distances_from(&below.graph, &below.embeddings, &below.factors, &sources)?,
            below.max_diameter(),
        )
    };
    let mut coarse_sources: Vec<usize> = sources.iter().map(|&s| coarse.assignment[s]).collect();
    coarse_sources.sort_unstable();
    coarse_sources.dedup();
    let coarse_rows = distances_from(&coarse.graph, &coarse.embeddings, &coarse.factors, &coarse_sources)?;

    let coarse_diameter = coarse.max_diameter();
    let bound = fine_diameter + coarse_diameter;
    let mut entries = Vec::with_capacity(pairs.len());
    let mut unreachable = 0;
    for &(i, j) in pairs {
        let fine = fine_rows[&i][j];
        let coarse_d = coarse_rows[&coarse.assignment[i]][coarse.assignment[j]];
        if !fine.is_finite() || !coarse_d.is_finite() {
            unreachable += 1;
            continue;
        }
        entries.push(BoundEntry {
            i,
            j,
            fine,
            coarse: coarse_d,
            excess: (coarse_d - fine).abs() - bound,
        });
    }
    let violations = entries.iter().filter(|e| e.excess > BOUND_TOL).count();
    Ok(BoundReport {
        level,
        fine_diameter,
        coarse_diameter,
        entries,
        violations,
        unreachable,
    })
}
