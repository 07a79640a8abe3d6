use crate::corpus::Corpus;
use crate::error::Result;
use crate::geodesic::multi_source_dijkstra;
use crate::metric::LocalDistanceKernel;
use crate::pipeline::{
    default_seed_count, run_level, search_timed, select_seeds, LevelScope, PipelineConfig, Query, RetrievalResult,
    StageTimings,
};

use super::Hierarchy;

pub fn coarse_to_fine_search(
    query: &Query,
    hierarchy: &Hierarchy,
    corpus: &Corpus,
    config: &PipelineConfig,
) -> Result<RetrievalResult> {
    coarse_to_fine_search_timed(query, hierarchy, corpus, config, None)
}

/// Top-down search. The coarsest level runs a full Dijkstra from seeds chosen
/// over cluster embeddings; every finer level only enters children of the
/// `B` nearest clusters of the level above. Clusters are seeded like any
/// other node, at their local distance to the query. For node queries the
/// cluster containing the query is always kept on top of the beam.
pub fn coarse_to_fine_search_timed(
    query: &Query,
    hierarchy: &Hierarchy,
    corpus: &Corpus,
    config: &PipelineConfig,
    timings: Option<&mut StageTimings>,
) -> Result<RetrievalResult> {
    config.validate()?;
    hierarchy.verify(corpus)?;
    if hierarchy.levels.is_empty() {
        let mut result = search_timed(query, corpus, config, timings)?;
        result.diagnostics.level_settled = vec![result.diagnostics.settled];
        return Ok(result);
    }
    let fine_emb = corpus.embeddings()?;
    let fine_factors = corpus.factors()?;
    let q = query.resolve(fine_emb)?;
    let beam = hierarchy.config.beam.unwrap_or(config.candidate_multiplier * query.k).max(1);

    // ancestors[ℓ] is the level-ℓ node containing the query node
    let ancestors: Option<Vec<usize>> = query.node_id().map(|node| {
        let mut chain = vec![node];
        for lvl in &hierarchy.levels {
            chain.push(lvl.assignment[*chain.last().expect("nonempty")]);
        }
        chain
    });

    let mut allowed: Option<Vec<bool>> = None;
    let mut level_settled = Vec::with_capacity(hierarchy.depth());
    for lvl in hierarchy.levels.iter().rev() {
        let n = lvl.cluster_count();
        let own = ancestors.as_ref().map(|a| a[lvl.level]);
        let seeds = select_seeds(
            &q,
            None,
            &lvl.embeddings,
            &lvl.factors,
            default_seed_count(n).min(n),
            allowed.as_deref(),
        )?;
        let mut kernel = LocalDistanceKernel::new(&lvl.embeddings, &lvl.factors)?;
        let outcome = multi_source_dijkstra(&seeds, &lvl.graph, &mut kernel, None, allowed.as_deref())?;
        level_settled.push(outcome.settled_count());

        let mut keep = vec![false; n];
        for &c in outcome.order.iter().filter(|&&c| Some(c) != own).take(beam) {
            keep[c] = true;
        }
        if let Some(c) = own {
            keep[c] = true;
        }
        allowed = Some(lvl.assignment.iter().map(|&parent| keep[parent]).collect());
    }

    let seed_count = config.seeds.unwrap_or_else(|| default_seed_count(corpus.node_count()));
    let mut result = run_level(
        query,
        corpus.graph.view(config.view),
        fine_emb,
        fine_factors,
        config,
        LevelScope {
            allowed: allowed.as_deref(),
            seed_count,
        },
        timings,
    )?;
    level_settled.push(result.diagnostics.settled);
    result.diagnostics.settled = level_settled.iter().sum();
    result.diagnostics.level_settled = level_settled;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusGraph, DenseRows, MetricFactorTensor};
    use crate::hierarchy::{build_hierarchy, HierarchyConfig};
    use crate::pipeline::{search, EarlyStopMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(n: usize, seed: u64) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let r = 2;
        let mut edges = Vec::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            edges.push((i, j));
            let extra = rng.gen_range(0..n);
            if extra != i {
                edges.push((i, extra));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let emb: Vec<f32> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fac: Vec<f32> = (0..n * d * r).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Corpus::new(
            CorpusGraph::from_edges(n, &edges).unwrap(),
            DenseRows::new(d, emb.clone(), "features").unwrap(),
            Some(DenseRows::new(d, emb, "embeddings").unwrap()),
            Some(MetricFactorTensor::new(d, r, 0.01, fac).unwrap()),
            None,
        )
        .unwrap()
    }

    #[test]
    fn one_level_hierarchy_is_flat_search() {
        let c = corpus(60, 1);
        let h = build_hierarchy(&c, &HierarchyConfig { levels: 1, ..Default::default() }).unwrap();
        let cfg = PipelineConfig::default();
        for node in [0, 17, 59] {
            let q = Query::node(node, 5);
            let flat = search(&q, &c, &cfg).unwrap();
            let hier = coarse_to_fine_search(&q, &h, &c, &cfg).unwrap();
            assert_eq!(flat.hits, hier.hits);
        }
    }

    #[test]
    fn singleton_and_full_beam_reproduce_flat_hits() {
        let c = corpus(120, 2);
        let singleton = build_hierarchy(
            &c,
            &HierarchyConfig {
                rho: 1.0,
                levels: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let mut full = build_hierarchy(
            &c,
            &HierarchyConfig {
                rho: 0.3,
                levels: 3,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        full.config.beam = Some(usize::MAX);
        for early_stop in [EarlyStopMode::Auto, EarlyStopMode::Off] {
            let cfg = PipelineConfig { early_stop, ..Default::default() };
            for node in (0..120).step_by(13) {
                let q = Query::node(node, 4);
                let flat = search(&q, &c, &cfg).unwrap();
                assert_eq!(coarse_to_fine_search(&q, &singleton, &c, &cfg).unwrap().hits, flat.hits);
                assert_eq!(coarse_to_fine_search(&q, &full, &c, &cfg).unwrap().hits, flat.hits);
            }
            let emb = c.embeddings().unwrap().row_f64(7);
            let q = Query::embedding(emb.iter().map(|x| x * 0.5 + 0.1).collect(), 4);
            assert_eq!(
                coarse_to_fine_search(&q, &full, &c, &cfg).unwrap().hits,
                search(&q, &c, &cfg).unwrap().hits
            );
        }
    }

    #[test]
    fn diagnostics_report_every_level_and_mismatch_errors() {
        let c = corpus(200, 3);
        let h = build_hierarchy(
            &c,
            &HierarchyConfig {
                rho: 0.2,
                levels: 3,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let cfg = PipelineConfig {
            early_stop: EarlyStopMode::Off,
            ..Default::default()
        };
        let res = coarse_to_fine_search(&Query::node(5, 3), &h, &c, &cfg).unwrap();
        assert_eq!(res.diagnostics.level_settled.len(), 3);
        assert_eq!(res.diagnostics.settled, res.diagnostics.level_settled.iter().sum::<usize>());
        assert!(res.diagnostics.level_settled[0] <= 8);

        let other = corpus(200, 4);
        assert!(coarse_to_fine_search(&Query::node(5, 3), &h, &other, &cfg).is_err());
    }
}
