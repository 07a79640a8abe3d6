use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{GssError, Result};

/// Graded relevance per query: query node id to (node id to gain). Binary
/// citation judgments use gain 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelevanceJudgments {
    pub queries: BTreeMap<usize, BTreeMap<usize, f64>>,
}

impl RelevanceJudgments {
    pub fn new(queries: BTreeMap<usize, BTreeMap<usize, f64>>) -> Result<Self> {
        let j = RelevanceJudgments { queries };
        j.validate()?;
        Ok(j)
    }

    /// Binary judgments from each query's cited nodes.
    pub fn from_citations(queries: &[usize], cited: impl Fn(usize) -> Vec<usize>) -> Self {
        let queries = queries
            .iter()
            .map(|&q| (q, cited(q).into_iter().map(|j| (j, 1.0)).collect()))
            .collect();
        RelevanceJudgments { queries }
    }

    pub fn validate(&self) -> Result<()> {
        for (q, gains) in &self.queries {
            if let Some((node, g)) = gains.iter().find(|(_, g)| !(g.is_finite() && **g >= 0.0)) {
                return Err(GssError::InvalidParameter(format!(
                    "query {q}: gain {g} for node {node} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }

    /// Gains for one query; an unjudged query has none.
    pub fn gains(&self, query: usize) -> &BTreeMap<usize, f64> {
        static EMPTY: BTreeMap<usize, f64> = BTreeMap::new();
        self.queries.get(&query).unwrap_or(&EMPTY)
    }
}

fn check_ranking(ranking: &[usize]) -> Result<()> {
    let mut seen = BTreeSet::new();
    match ranking.iter().find(|&&v| !seen.insert(v)) {
        Some(dup) => Err(GssError::InvalidParameter(format!("ranking repeats node {dup}"))),
        None => Ok(()),
    }
}

fn relevant(gains: &BTreeMap<usize, f64>) -> impl Iterator<Item = usize> + '_ {
    gains.iter().filter(|(_, &g)| g > 0.0).map(|(&n, _)| n)
}

/// Fraction of relevant nodes found in the top `k`; 0 with nothing relevant.
pub fn recall_at_k(ranking: &[usize], gains: &BTreeMap<usize, f64>, k: usize) -> Result<f64> {
    check_ranking(ranking)?;
    let total = relevant(gains).count();
    if total == 0 {
        return Ok(0.0);
    }
    let hits = ranking.iter().take(k).filter(|v| gains.get(v).is_some_and(|&g| g > 0.0)).count();
    Ok(hits as f64 / total as f64)
}

/// Normalised DCG with `gain / log2(rank + 1)` discounts. Queries without
/// positive gains score 0; aggregation should exclude them and count them.
pub fn ndcg_at_k(ranking: &[usize], gains: &BTreeMap<usize, f64>, k: usize) -> Result<f64> {
    check_ranking(ranking)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, v)| gains.get(v).copied().unwrap_or(0.0) * discount(i + 1))
        .sum();
    let mut ideal: Vec<f64> = gains.values().copied().filter(|&g| g > 0.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(i, g)| g * discount(i + 1)).sum();
    Ok(if idcg > 0.0 { dcg / idcg } else { 0.0 })
}

/// Reciprocal rank of the first relevant node, 0 if none is ranked.
pub fn reciprocal_rank(ranking: &[usize], gains: &BTreeMap<usize, f64>) -> Result<f64> {
    check_ranking(ranking)?;
    Ok(ranking
        .iter()
        .position(|v| gains.get(v).is_some_and(|&g| g > 0.0))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64))
}

/// Mean reciprocal rank over paired rankings and judgments.
pub fn mrr(rankings: &[Vec<usize>], gains: &[&BTreeMap<usize, f64>]) -> Result<f64> {
    if rankings.len() != gains.len() {
        return Err(GssError::mismatch("judgment sets vs rankings", rankings.len(), gains.len()));
    }
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (r, g) in rankings.iter().zip(gains) {
        sum += reciprocal_rank(r, g)?;
    }
    Ok(sum / rankings.len() as f64)
}

/// Two areas of a corpus and the nodes that bridge them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeTask {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub bridges: Vec<usize>,
}

/// Fraction of bridges in the top `k`.
pub fn bridge_at_k(ranking: &[usize], task: &BridgeTask, k: usize) -> Result<f64> {
    check_ranking(ranking)?;
    if task.bridges.is_empty() {
        return Err(GssError::InvalidParameter("bridge task has no bridges".into()));
    }
    let bridges: BTreeSet<usize> = task.bridges.iter().copied().collect();
    let hits = ranking.iter().take(k).filter(|v| bridges.contains(v)).count();
    Ok(hits as f64 / bridges.len() as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::{prop_assert, proptest, Just, Strategy};

    use super::*;

    fn binary(ids: &[usize]) -> BTreeMap<usize, f64> {
        ids.iter().map(|&i| (i, 1.0)).collect()
    }

    #[test]
    fn recall_cases() {
        let g = binary(&[1, 2, 3]);
        assert_eq!(recall_at_k(&[3, 1, 2, 9], &g, 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[7, 8, 9], &g, 3).unwrap(), 0.0);
        let ranking: Vec<usize> = [1, 20, 21, 22, 3, 23, 24, 25, 26, 27, 2].to_vec();
        assert!((recall_at_k(&ranking, &g, 10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(recall_at_k(&[1, 1], &g, 2).is_err());
    }

    #[test]
    fn ndcg_cases() {
        let g = binary(&[4]);
        assert_eq!(ndcg_at_k(&[4, 5], &g, 2).unwrap(), 1.0);
        // 1/log2(3) ÷ 1/log2(2)
        assert!((ndcg_at_k(&[5, 4], &g, 2).unwrap() - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&[5, 4], &BTreeMap::new(), 2).unwrap(), 0.0);

        let graded: BTreeMap<usize, f64> = [(1, 3.0), (2, 2.0), (3, 1.0)].into();
        assert!((ndcg_at_k(&[1, 2, 3], &graded, 3).unwrap() - 1.0).abs() < 1e-15);
        let swapped = ndcg_at_k(&[3, 2, 1], &graded, 3).unwrap();
        let want = (1.0 + 2.0 / 3f64.log2() + 3.0 / 2.0) / (3.0 + 2.0 / 3f64.log2() + 1.0 / 2.0);
        assert!((swapped - want).abs() < 1e-12);
    }

    #[test]
    fn mrr_cases() {
        let g = binary(&[1]);
        let rankings = vec![vec![1, 2], vec![1, 3]];
        assert_eq!(mrr(&rankings, &[&g, &g]).unwrap(), 1.0);
        let rankings = vec![vec![1, 5, 6, 7], vec![5, 1, 6, 7], vec![5, 6, 7, 1]];
        assert!((mrr(&rankings, &[&g, &g, &g]).unwrap() - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&[vec![4, 5]], &[&g]).unwrap(), 0.0);
        assert!(mrr(&[vec![1]], &[]).is_err());
    }

    #[test]
    fn bridge_cases() {
        let task = BridgeTask {
            source: vec![0],
            target: vec![9],
            bridges: vec![4, 5],
        };
        assert_eq!(bridge_at_k(&[4, 5, 1], &task, 2).unwrap(), 1.0);
        assert_eq!(bridge_at_k(&[4, 1, 5], &task, 2).unwrap(), 0.5);
        assert_eq!(bridge_at_k(&[4, 5], &task, 0).unwrap(), 0.0);
    }

    #[test]
    fn judgments_reject_bad_gains() {
        let bad: BTreeMap<usize, BTreeMap<usize, f64>> = [(0, [(1, -1.0)].into())].into();
        assert!(RelevanceJudgments::new(bad).is_err());
        let nan: BTreeMap<usize, BTreeMap<usize, f64>> = [(0, [(1, f64::NAN)].into())].into();
        assert!(RelevanceJudgments::new(nan).is_err());
        let j = RelevanceJudgments::from_citations(&[3], |q| vec![q + 1]);
        assert_eq!(j.gains(3), &binary(&[4]));
        assert!(j.gains(7).is_empty());
        let text = serde_json::to_string(&j).unwrap();
        assert_eq!(text, r#"{"3":{"4":1.0}}"#);
        assert_eq!(serde_json::from_str::<RelevanceJudgments>(&text).unwrap(), j);
    }

    fn ranking_and_gains() -> impl Strategy<Value = (Vec<usize>, BTreeMap<usize, f64>, usize)> {
        (1usize..30).prop_flat_map(|n| {
            (
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::btree_map(0..n + 5, 0.0f64..3.0, 0..8),
                0..n + 2,
            )
        })
    }

    proptest! {
        #[test]
        fn metrics_stay_in_unit_interval((ranking, gains, k) in ranking_and_gains()) {
            for v in [
                recall_at_k(&ranking, &gains, k).unwrap(),
                ndcg_at_k(&ranking, &gains, k).unwrap(),
                reciprocal_rank(&ranking, &gains).unwrap(),
            ] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn full_recall_when_everything_is_retrievable((ranking, gains, _k) in ranking_and_gains()) {
            let retrievable: BTreeMap<usize, f64> =
                gains.into_iter().filter(|(n, _)| *n < ranking.len()).collect();
            if retrievable.values().any(|&g| g > 0.0) {
                prop_assert!(recall_at_k(&ranking, &retrievable, ranking.len()).unwrap() == 1.0);
            }
        }
    }
}
