use serde::{Deserialize, Serialize};

use crate::corpus::{Element, EmbeddingMatrix};

use super::cosine;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmrPick {
    pub node: usize,
    pub score: f64,
}

/// Greedy maximal marginal relevance over `(node, relevance)` candidates:
/// each round picks `argmax λ·rel − (1−λ)·max_{s∈S} sim(i, s)`, with the
/// max over an empty selection taken as 0. Ties go to the earlier candidate.
pub fn mmr_rerank<T: Element>(
    candidates: &[(usize, f64)],
    embeddings: &EmbeddingMatrix<T>,
    lambda: f64,
    k: usize,
) -> Vec<MmrPick> {
    let m = candidates.len();
    let mut taken = vec![false; m];
    let mut max_sim = vec![0.0f64; m];
    let mut picks = Vec::with_capacity(k.min(m));

    for round in 0..k.min(m) {
        let mut best: Option<(usize, f64)> = None;
        for (c, &(_, rel)) in candidates.iter().enumerate() {
            if taken[c] {
                continue;
            }
            let score = lambda * rel - (1.0 - lambda) * max_sim[c];
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let (c, score) = best.expect("an untaken candidate remains");
        taken[c] = true;
        let node = candidates[c].0;
        picks.push(MmrPick { node, score });
        if round + 1 == k.min(m) {
            break;
        }
        for (o, &(other, _)) in candidates.iter().enumerate() {
            if taken[o] {
                continue;
            }
            let sim = cosine(embeddings.row(node), embeddings.row(other)).unwrap_or(0.0);
            let slot = &mut max_sim[o];
            // the first selection replaces the empty-set value outright
            *slot = if round == 0 { sim } else { slot.max(sim) };
        }
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_one_is_relevance_order() {
        let e = EmbeddingMatrix::new(1, vec![1.0f32; 4], "embeddings").unwrap();
        let picks = mmr_rerank(&[(0, -0.5), (1, -0.1), (2, -0.9), (3, -0.3)], &e, 1.0, 4);
        let order: Vec<_> = picks.iter().map(|p| p.node).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn duplicate_goes_last_among_equals() {
        let e = EmbeddingMatrix::new(
            2,
            vec![1.0f32, 0.0, 1.0, 0.0, 0.0, 1.0, 0.6, -0.8],
            "embeddings",
        )
        .unwrap();
        let cands = [(0, -1.0), (1, -1.0), (2, -1.0), (3, -1.0)];
        let order: Vec<_> = mmr_rerank(&cands, &e, 0.5, 4).iter().map(|p| p.node).collect();
        assert_eq!(order[0], 0);
        assert_eq!(order[3], 1);
    }

    #[test]
    fn handles_empty_and_short_lists() {
        let e = EmbeddingMatrix::new(1, vec![1.0f32], "embeddings").unwrap();
        assert!(mmr_rerank(&[], &e, 0.5, 3).is_empty());
        assert_eq!(mmr_rerank(&[(0, 0.0)], &e, 0.5, 3).len(), 1);
    }
}
