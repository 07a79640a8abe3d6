use crate::corpus::{Element, EmbeddingMatrix, MetricFactorTensor};
use crate::error::{GssError, Result};
use crate::metric::LocalDistanceKernel;

use super::cosine;

/// `⌈√N⌉`.
pub fn default_seed_count(node_count: usize) -> usize {
    let mut s = (node_count as f64).sqrt().ceil() as usize;
    // guard against sqrt rounding at perfect squares
    while s > 0 && (s - 1) * (s - 1) >= node_count {
        s -= 1;
    }
    while s * s < node_count {
        s += 1;
    }
    s
}

/// Exact top-`count` nodes by cosine similarity to `query`, ties broken by
/// ascending id. A node query always seeds itself first at distance 0; every
/// other seed `s` starts at `d_{G_s}(s, query)`.
///
/// With an `allowed` mask the global top-`count` is computed first and then
/// filtered, so a restricted search never gains seeds an unrestricted one
/// would not have. If nothing survives the filter, the top-`count` within
/// the mask is used instead.
pub fn select_seeds<T: Element>(
    query: &[f64],
    query_node: Option<usize>,
    embeddings: &EmbeddingMatrix<T>,
    factors: &MetricFactorTensor<T>,
    count: usize,
    allowed: Option<&[bool]>,
) -> Result<Vec<(usize, f64)>> {
    let n = embeddings.len();
    if count > n {
        return Err(GssError::InvalidParameter(format!(
            "seed count {count} exceeds node count {n}"
        )));
    }
    let mut ranked = rank_by_similarity(query, query_node, embeddings, 0..n);
    ranked.truncate(count);
    if let Some(mask) = allowed {
        ranked.retain(|&s| mask[s]);
        if ranked.is_empty() {
            ranked = rank_by_similarity(query, query_node, embeddings, (0..n).filter(|&i| mask[i]));
            ranked.truncate(count);
        }
    }
    let mut kernel = LocalDistanceKernel::new(embeddings, factors)?;
    Ok(ranked
        .into_iter()
        .map(|s| {
            let init = if Some(s) == query_node { 0.0 } else { kernel.distance_to(s, query) };
            (s, init)
        })
        .collect())
}

fn rank_by_similarity<T: Element>(
    query: &[f64],
    query_node: Option<usize>,
    embeddings: &EmbeddingMatrix<T>,
    nodes: impl Iterator<Item = usize>,
) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = nodes
        .map(|i| {
            let sim = if Some(i) == query_node {
                f64::INFINITY
            } else {
                cosine(query, embeddings.row(i)).unwrap_or(f64::NEG_INFINITY)
            };
            (sim, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, i)| i).collect()
}
