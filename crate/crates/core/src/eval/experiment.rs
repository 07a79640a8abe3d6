//! Experiment driver: runs retrieval methods over a query set and reports
//! per-method metric summaries across seeds.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Element, EmbeddingMatrix};
use crate::error::{GssError, Result};
use crate::hierarchy::{build_hierarchy, coarse_to_fine_search, Hierarchy, HierarchyConfig};
use crate::pipeline::{cosine, search, PipelineConfig, Query, RetrievalResult};

use super::fixtures::euclidean_ablation;
use super::metrics::{ndcg_at_k, recall_at_k, reciprocal_rank, RelevanceJudgments};

/// Exact descending-cosine ranking of every node against `query`, ties by
/// ascending id, truncated to `k`. Zero-norm rows rank last.
pub fn baseline_cosine_ranking<T: Element>(query: &[f64], embeddings: &EmbeddingMatrix<T>, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..embeddings.len())
        .map(|i| (cosine(query, embeddings.row(i)).unwrap_or(f64::NEG_INFINITY), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cosine,
    GeodesicFlat,
    GeodesicHier,
    /// Flat geodesic search with every factor zeroed.
    Euclidean,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cosine, Method::GeodesicFlat, Method::GeodesicHier, Method::Euclidean];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cosine => "cosine",
            Method::GeodesicFlat => "geodesic-flat",
            Method::GeodesicHier => "geodesic-hier",
            Method::Euclidean => "euclidean",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = GssError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| GssError::InvalidParameter(format!("unknown method {s:?}; expected cosine, geodesic-flat, geodesic-hier or euclidean")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub k: usize,
    /// One run per seed; the seed drives hierarchy construction.
    pub seeds: Vec<u64>,
    pub pipeline: PipelineConfig,
    pub hierarchy: HierarchyConfig,
    /// Record wall-clock latency. Off by default so tables are reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![Method::Cosine, Method::GeodesicFlat],
            k: 10,
            seeds: vec![0],
            pipeline: PipelineConfig::default(),
            hierarchy: HierarchyConfig::default(),
            timing: false,
        }
    }
}

/// Mean, sample standard deviation, min and max of a series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One method's results over all seeds. Per-seed values are query means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub runs: usize,
    pub queries: usize,
    /// Queries left out of the nDCG mean for having no relevant nodes.
    pub ndcg_excluded: usize,
    pub recall: Summary,
    pub ndcg: Summary,
    pub mrr: Summary,
    /// Mean path coherence over returned hits, then over queries. Absent
    /// for the cosine baseline, which returns no paths.
    pub coherence: Option<Summary>,
    pub settled: Option<Summary>,
    pub latency_ms: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub k: usize,
    pub rows: Vec<MethodRow>,
}

#[derive(Serialize)]
struct CsvRow {
    method: String,
    runs: usize,
    queries: usize,
    ndcg_excluded: usize,
    recall_mean: f64,
    recall_std: f64,
    recall_min: f64,
    recall_max: f64,
    ndcg_mean: f64,
    ndcg_std: f64,
    ndcg_min: f64,
    ndcg_max: f64,
    mrr_mean: f64,
    mrr_std: f64,
    mrr_min: f64,
    mrr_max: f64,
    coherence_mean: Option<f64>,
    coherence_std: Option<f64>,
    settled_mean: Option<f64>,
    settled_std: Option<f64>,
    latency_ms_mean: Option<f64>,
    latency_ms_std: Option<f64>,
}

impl MetricsTable {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                method: r.method.to_string(),
                runs: r.runs,
                queries: r.queries,
                ndcg_excluded: r.ndcg_excluded,
                recall_mean: r.recall.mean,
                recall_std: r.recall.std,
                recall_min: r.recall.min,
                recall_max: r.recall.max,
                ndcg_mean: r.ndcg.mean,
                ndcg_std: r.ndcg.std,
                ndcg_min: r.ndcg.min,
                ndcg_max: r.ndcg.max,
                mrr_mean: r.mrr.mean,
                mrr_std: r.mrr.std,
                mrr_min: r.mrr.min,
                mrr_max: r.mrr.max,
                coherence_mean: r.coherence.map(|s| s.mean),
                coherence_std: r.coherence.map(|s| s.std),
                settled_mean: r.settled.map(|s| s.mean),
                settled_std: r.settled.map(|s| s.std),
                latency_ms_mean: r.latency_ms.map(|s| s.mean),
                latency_ms_std: r.latency_ms.map(|s| s.std),
            })
            .map_err(|e| GssError::Csv(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| GssError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| GssError::Csv(e.to_string()))
    }
}

/// Per-query outcome of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryOutcome {
    pub ranking: Vec<usize>,
    pub coherence: Option<f64>,
    pub settled: Option<usize>,
    pub latency_ms: Option<f64>,
}

fn from_result(r: RetrievalResult) -> QueryOutcome {
    let coherence = (!r.hits.is_empty()).then(|| r.hits.iter().map(|h| h.coherence).sum::<f64>() / r.hits.len() as f64);
    QueryOutcome {
        ranking: r.ranking(),
        coherence,
        settled: Some(r.diagnostics.settled),
        latency_ms: None,
    }
}

/// Everything a method needs besides the query.
enum Runner<'a> {
    Cosine(&'a Corpus),
    Flat(&'a Corpus),
    Hier(&'a Corpus, Hierarchy),
}

impl Runner<'_> {
    fn run(&self, node: usize, k: usize, pipeline: &PipelineConfig) -> Result<QueryOutcome> {
        let query = Query::node(node, k);
        match self {
            Runner::Cosine(c) => {
                let emb = c.embeddings()?;
                let q = query.resolve(emb)?;
                let mut ranking = baseline_cosine_ranking(&q, emb, k + 1);
                ranking.retain(|&v| v != node);
                ranking.truncate(k);
                Ok(QueryOutcome {
                    ranking,
                    coherence: None,
                    settled: None,
                    latency_ms: None,
                })
            }
            Runner::Flat(c) => search(&query, c, pipeline).map(from_result),
            Runner::Hier(c, h) => coarse_to_fine_search(&query, h, c, pipeline).map(from_result),
        }
    }
}

/// Runs every configured method for every seed over the query nodes.
/// Queries run in parallel; results are reduced in query order.
pub fn run_experiment(
    corpus: &Corpus,
    queries: &[usize],
    judgments: &RelevanceJudgments,
    config: &ExperimentConfig,
) -> Result<MetricsTable> {
    judgments.validate()?;
    if config.k == 0 {
        return Err(GssError::InvalidParameter("k must be at least 1".into()));
    }
    if config.seeds.is_empty() || config.methods.is_empty() {
        return Err(GssError::InvalidParameter("need at least one seed and one method".into()));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= corpus.node_count()) {
        return Err(GssError::NodeOutOfRange {
            node: q,
            count: corpus.node_count(),
        });
    }
    let ablated = if config.methods.contains(&Method::Euclidean) {
        Some(euclidean_ablation(corpus)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for &method in &config.methods {
        let mut per_seed: Vec<SeedMetrics> = Vec::new();
        for &seed in &config.seeds {
            let runner = match method {
                Method::Cosine => Runner::Cosine(corpus),
                Method::GeodesicFlat => Runner::Flat(corpus),
                Method::Euclidean => Runner::Flat(ablated.as_ref().expect("ablation built above")),
                Method::GeodesicHier => {
                    let hc = HierarchyConfig {
                        seed,
                        ..config.hierarchy.clone()
                    };
                    Runner::Hier(corpus, build_hierarchy(corpus, &hc)?)
                }
            };
            let outcomes: Vec<QueryOutcome> = queries
                .par_iter()
                .map(|&q| {
                    let start = Instant::now();
                    let mut o = runner.run(q, config.k, &config.pipeline)?;
                    if config.timing {
                        o.latency_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                    }
                    Ok(o)
                })
                .collect::<Result<_>>()?;
            per_seed.push(SeedMetrics::score(queries, &outcomes, judgments, config.k)?);
        }
        rows.push(MethodRow::collect(method, queries.len(), &per_seed));
    }
    Ok(MetricsTable { k: config.k, rows })
}

struct SeedMetrics {
    recall: f64,
    ndcg: f64,
    ndcg_excluded: usize,
    mrr: f64,
    coherence: Option<f64>,
    settled: Option<f64>,
    latency_ms: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl SeedMetrics {
    fn score(queries: &[usize], outcomes: &[QueryOutcome], j: &RelevanceJudgments, k: usize) -> Result<Self> {
        let mut recall = Vec::new();
        let mut ndcg = Vec::new();
        let mut rr = Vec::new();
        let mut excluded = 0;
        for (&q, o) in queries.iter().zip(outcomes) {
            let gains = j.gains(q);
            recall.push(recall_at_k(&o.ranking, gains, k)?);
            rr.push(reciprocal_rank(&o.ranking, gains)?);
            if gains.values().any(|&g| g > 0.0) {
                ndcg.push(ndcg_at_k(&o.ranking, gains, k)?);
            } else {
                excluded += 1;
            }
        }
        Ok(SeedMetrics {
            recall: mean_of(recall.into_iter()).unwrap_or(0.0),
            ndcg: mean_of(ndcg.into_iter()).unwrap_or(0.0),
            ndcg_excluded: excluded,
            mrr: mean_of(rr.into_iter()).unwrap_or(0.0),
            coherence: mean_of(outcomes.iter().filter_map(|o| o.coherence)),
            settled: mean_of(outcomes.iter().filter_map(|o| o.settled.map(|s| s as f64))),
            latency_ms: mean_of(outcomes.iter().filter_map(|o| o.latency_ms)),
        })
    }
}

impl MethodRow {
    fn collect(method: Method, queries: usize, runs: &[SeedMetrics]) -> Self {
        let series = |f: fn(&SeedMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>());
        let optional = |f: fn(&SeedMetrics) -> Option<f64>| {
            let v: Option<Vec<f64>> = runs.iter().map(f).collect();
            v.map(|v| Summary::of(&v))
        };
        MethodRow {
            method,
            runs: runs.len(),
            queries,
            ndcg_excluded: runs.first().map_or(0, |r| r.ndcg_excluded),
            recall: series(|r| r.recall),
            ndcg: series(|r| r.ndcg),
            mrr: series(|r| r.mrr),
            coherence: optional(|r| r.coherence),
            settled: optional(|r| r.settled),
            latency_ms: optional(|r| r.latency_ms),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::{prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::pipeline::EarlyStopMode;
    use crate::eval::fixtures::{geometric_fixture, GeometricConfig};

    #[test]
    fn cosine_ranking_cases() {
        let e = EmbeddingMatrix::new(2, vec![1.0f32, 0.0, 0.0, 1.0, 0.9, 0.1, -1.0, 0.0], "e").unwrap();
        assert_eq!(baseline_cosine_ranking(&[1.0, 0.0], &e, 4), vec![0, 2, 1, 3]);
        assert_eq!(baseline_cosine_ranking(&[0.0, 1.0], &e, 1), vec![1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn cosine_ranking_matches_full_sort(seed in 0u64..1000, k in 0usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..100 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = EmbeddingMatrix::new(5, data, "e").unwrap();
            let q: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut all: Vec<usize> = (0..100).collect();
            let sims: Vec<f64> = all.iter().map(|&i| cosine(&q, e.row(i)).unwrap()).collect();
            all.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
            all.truncate(k);
            prop_assert_eq!(baseline_cosine_ranking(&q, &e, k), all);
        }
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(s.min <= s.mean && s.mean <= s.max);
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
    }

    fn small_corpus() -> Corpus {
        geometric_fixture(&GeometricConfig {
            nodes: 400,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn single_query_single_method_gives_one_row() {
        let c = small_corpus();
        let j = RelevanceJudgments::from_citations(&[399], |q| c.graph.out_edges().neighbors(q).to_vec());
        let table = run_experiment(&c, &[399], &j, &ExperimentConfig {
            methods: vec![Method::GeodesicFlat],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        assert_eq!((row.runs, row.queries), (1, 1));
        assert!(row.settled.is_some() && row.latency_ms.is_none());
        let csv = table.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("method,runs,queries,ndcg_excluded,recall_mean"));
    }

    #[test]
    fn seeds_and_hierarchy() {
        let c = small_corpus();
        let queries: Vec<usize> = (380..400).collect();
        let j = RelevanceJudgments::from_citations(&queries, |q| c.graph.out_edges().neighbors(q).to_vec());
        let config = ExperimentConfig {
            methods: vec![Method::Cosine, Method::GeodesicFlat, Method::GeodesicHier, Method::Euclidean],
            seeds: vec![0, 1, 2, 3, 4],
            pipeline: PipelineConfig {
                early_stop: EarlyStopMode::Off,
                ..Default::default()
            },
            ..Default::default()
        };
        let table = run_experiment(&c, &queries, &j, &config).unwrap();
        for row in &table.rows {
            assert_eq!(row.runs, 5);
            for s in [row.recall, row.ndcg, row.mrr] {
                assert!(s.min <= s.mean + 1e-12 && s.mean <= s.max + 1e-12);
                assert!((0.0..=1.0).contains(&s.mean));
            }
        }
        let flat = table.row(Method::GeodesicFlat).unwrap();
        assert_eq!(flat.recall.std, 0.0);
        assert!(table.row(Method::Cosine).unwrap().coherence.is_none());
        assert!(table.row(Method::GeodesicHier).unwrap().settled.unwrap().mean < flat.settled.unwrap().mean);
        assert_eq!(table, run_experiment(&c, &queries, &j, &config).unwrap());
        assert!(run_experiment(&c, &[400], &j, &config).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("faiss".parse::<Method>().is_err());
    }
}
