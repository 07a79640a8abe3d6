use std::fs;
use std::hint::black_box;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gss_core::corpus::{
    load_corpus, save_corpus, Corpus, CorpusGraph, DenseRows, MetricFactorTensor, SplitYears, TemporalSplit,
    TraversalView, MANIFEST_FILE,
};
use gss_core::eval::{
    geometric_fixture, make_barbell_fixture, run_experiment, two_block_fixture, ExperimentConfig, Method,
    RelevanceJudgments,
};
use gss_core::gat::{trace_csv, train_toy};
use gss_core::hierarchy::{build_hierarchy, coarse_to_fine_search, load_hierarchy, save_hierarchy};
use gss_core::metric::{dense_metric_from_slab, local_distance_sq};
use gss_core::pipeline::{search, EarlyStopMode, Query, RetrievalResult};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{read_json, usage, write_json, RunConfig};
use crate::{
    BarbellArgs, BenchCommand, BenchDijkstraArgs, BenchMetricArgs, Cli, Command, CorpusArg, EvaluateArgs,
    FixtureCommand, GeometricArgs, HierarchyArgs, IngestArgs, PipelineArgs, SearchArgs, TrainArgs,
    TwoBlockArgs,
};

const RUN_FILE: &str = "run.json";

pub fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    set(&mut config.threads, cli.threads.map(Some));
    if let Some(n) = config.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Fixture(FixtureCommand::Barbell(a)) => fixture_barbell(config, a),
        Command::Fixture(FixtureCommand::Geometric(a)) => fixture_geometric(config, a),
        Command::Fixture(FixtureCommand::TwoBlock(a)) => fixture_two_block(config, a),
        Command::Ingest(a) => ingest(config, a),
        Command::TrainToy(a) => train(config, a),
        Command::BuildHierarchy(a) => hierarchy(config, a),
        Command::Search(a) => search_cmd(config, a),
        Command::Evaluate(a) => evaluate(config, a),
        Command::Bench(BenchCommand::Metric(a)) => bench_metric(config, a),
        Command::Bench(BenchCommand::Dijkstra(a)) => bench_dijkstra(config, a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn emit(command: &str, config: &RunConfig, result: Value) -> Result<()> {
    let doc = json!({ "command": command, "config": config.to_json(), "result": result });
    let mut stdout = io::stdout().lock();
    match writeln!(stdout, "{}", serde_json::to_string_pretty(&doc)?) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r.context("writing to stdout"),
    }
}

fn resolve_seed(config: &mut RunConfig, seed: Option<u64>) -> Result<u64> {
    set(&mut config.seed, seed.map(Some));
    config.require_seed()
}

fn open_corpus(config: &mut RunConfig, arg: &CorpusArg) -> Result<Corpus> {
    set(&mut config.corpus, arg.corpus.clone().map(Some));
    let path = config.corpus_path()?;
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// Writes the corpus and the run echo into `out`.
fn write_corpus(out: &Path, corpus: &Corpus, config: &RunConfig) -> Result<()> {
    save_corpus(corpus, &out.join(MANIFEST_FILE))?;
    write_json(&out.join(RUN_FILE), config)
}

fn fixture_barbell(mut config: RunConfig, a: BarbellArgs) -> Result<()> {
    let seed = resolve_seed(&mut config, a.common.seed)?;
    let b = &mut config.fixture.barbell;
    b.seed = seed;
    set(&mut b.source_size, a.source_size);
    set(&mut b.target_size, a.target_size);
    set(&mut b.path_len, a.path_len);
    let fx = make_barbell_fixture(b)?;
    let out = &a.common.out;
    write_corpus(out, &fx.corpus, &config)?;
    let task = json!({ "query": fx.query, "task": fx.task, "probe": fx.probe });
    write_json(&out.join("task.json"), &task)?;
    emit(
        "fixture barbell",
        &config,
        json!({
            "out": out,
            "node_count": fx.corpus.node_count(),
            "query": fx.query,
            "bridges": fx.task.bridges,
            "probe_margin": fx.probe.margin(),
        }),
    )
}

fn fixture_geometric(mut config: RunConfig, a: GeometricArgs) -> Result<()> {
    let seed = resolve_seed(&mut config, a.common.seed)?;
    let g = &mut config.fixture.geometric;
    g.seed = seed;
    set(&mut g.nodes, a.nodes);
    set(&mut g.dim, a.dim);
    set(&mut g.rank, a.rank);
    set(&mut g.topics, a.topics);
    set(&mut config.fixture.geometric_queries, a.queries);
    let corpus = geometric_fixture(&config.fixture.geometric)?;
    let test = &corpus.split.as_ref().expect("geometric fixture has a split").test;
    let wanted = config.fixture.geometric_queries.max(1);
    let step = (test.len() / wanted).max(1);
    let queries: Vec<usize> = test.iter().step_by(step).take(wanted).copied().collect();
    let judgments =
        RelevanceJudgments::from_citations(&queries, |q| corpus.graph.out_edges().neighbors(q).to_vec());
    let out = &a.common.out;
    write_corpus(out, &corpus, &config)?;
    write_json(&out.join("queries.json"), &queries)?;
    write_json(&out.join("judgments.json"), &judgments)?;
    emit(
        "fixture geometric",
        &config,
        json!({
            "out": out,
            "node_count": corpus.node_count(),
            "edge_count": corpus.graph.out_edges().edge_count(),
            "queries": queries.len(),
        }),
    )
}

fn fixture_two_block(mut config: RunConfig, a: TwoBlockArgs) -> Result<()> {
    let seed = resolve_seed(&mut config, a.common.seed)?;
    let t = &mut config.fixture.two_block;
    t.seed = seed;
    set(&mut t.block_size, a.block_size);
    set(&mut t.feature_dim, a.feature_dim);
    let corpus = two_block_fixture(t)?;
    write_corpus(&a.common.out, &corpus, &config)?;
    emit(
        "fixture two-block",
        &config,
        json!({ "out": a.common.out, "node_count": corpus.node_count() }),
    )
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    reader
        .records()
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("reading {}", path.display()))
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| anyhow::anyhow!("{}: record {line}: cannot parse {field:?}: {e}", path.display()))
}

/// Row-major values and row width.
fn read_matrix(path: &Path) -> Result<(Vec<f32>, usize)> {
    let records = read_records(path)?;
    let width = records.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(records.len() * width);
    for (line, r) in records.iter().enumerate() {
        for field in r {
            data.push(parse_field(path, line + 1, field)?);
        }
    }
    Ok((data, width))
}

fn ingest(config: RunConfig, a: IngestArgs) -> Result<()> {
    let (features, dim_in) = read_matrix(&a.features)?;
    if dim_in == 0 {
        bail!("{} holds no feature rows", a.features.display());
    }
    let n = features.len() / dim_in;
    let mut edges = Vec::new();
    for (line, r) in read_records(&a.edges)?.iter().enumerate() {
        if r.len() != 2 {
            bail!("{}: record {}: expected `citing,cited`", a.edges.display(), line + 1);
        }
        edges.push((parse_field(&a.edges, line + 1, &r[0])?, parse_field(&a.edges, line + 1, &r[1])?));
    }
    let embeddings = match &a.embeddings {
        Some(p) => {
            let (data, dim) = read_matrix(p)?;
            Some(DenseRows::new(dim, data, "embeddings")?)
        }
        None => None,
    };
    let epsilon = a.epsilon.unwrap_or(config.model.epsilon);
    let factors = match (&a.factors, a.rank) {
        (Some(p), Some(rank)) => {
            let (data, width) = read_matrix(p)?;
            if rank == 0 || width % rank != 0 {
                return Err(usage(format!("factor rows have {width} values, not a multiple of rank {rank}")));
            }
            Some(MetricFactorTensor::new(width / rank, rank, epsilon, data)?)
        }
        _ => None,
    };
    let split = match (&a.years, a.valid_from, a.test_from) {
        (Some(p), Some(valid_from), Some(test_from)) => {
            let mut years = Vec::new();
            for (line, r) in read_records(p)?.iter().enumerate() {
                years.push(parse_field::<i32>(p, line + 1, &r[0])?);
            }
            Some(TemporalSplit::from_years(&years, SplitYears { valid_from, test_from })?)
        }
        _ => None,
    };
    let corpus = Corpus::new(
        CorpusGraph::from_edges(n, &edges)?,
        DenseRows::new(dim_in, features, "features")?,
        embeddings,
        factors,
        split,
    )?;
    write_corpus(&a.out, &corpus, &config)?;
    emit(
        "ingest",
        &config,
        json!({
            "out": a.out,
            "node_count": n,
            "edge_count": corpus.graph.out_edges().edge_count(),
            "embeddings": corpus.embeddings.is_some(),
            "factors": corpus.factors.is_some(),
            "split": corpus.split.is_some(),
        }),
    )
}

fn train(mut config: RunConfig, a: TrainArgs) -> Result<()> {
    let corpus = open_corpus(&mut config, &a.corpus)?;
    config.train.seed = resolve_seed(&mut config, a.common.seed)?;
    set(&mut config.train.epochs, a.epochs);
    set(&mut config.train.lr, a.lr);
    set(&mut config.model.dim, a.dim);
    set(&mut config.model.rank, a.rank);
    set(&mut config.model.layers, a.layers);
    set(&mut config.model.heads, a.heads);
    let loss = &mut config.train.loss;
    set(&mut loss.temperature, a.temperature);
    set(&mut loss.lambda_cite, a.lambda_cite);
    set(&mut loss.lambda_smooth, a.lambda_smooth);
    set(&mut loss.lambda_hier, a.lambda_hier);
    let gat = config.model.gat(corpus.features.dim());
    let outcome = train_toy(&corpus, &gat, &config.train)?;
    let out = &a.common.out;
    write_corpus(out, &outcome.export(&corpus)?, &config)?;
    let trace = out.join("trace.csv");
    fs::write(&trace, trace_csv(&outcome.trace)).with_context(|| format!("writing {}", trace.display()))?;
    emit(
        "train-toy",
        &config,
        json!({
            "out": out,
            "initial": outcome.trace.first(),
            "final": outcome.trace.last(),
        }),
    )
}

fn hierarchy(mut config: RunConfig, a: HierarchyArgs) -> Result<()> {
    let corpus = open_corpus(&mut config, &a.corpus)?;
    config.hierarchy.seed = resolve_seed(&mut config, a.common.seed)?;
    set(&mut config.hierarchy.rho, a.rho);
    set(&mut config.hierarchy.levels, a.levels);
    set(&mut config.hierarchy.beam, a.beam.map(Some));
    let h = build_hierarchy(&corpus, &config.hierarchy)?;
    save_hierarchy(&h, &a.common.out)?;
    write_json(&a.common.out.join(RUN_FILE), &config)?;
    let levels: Vec<Value> = h
        .levels
        .iter()
        .map(|l| {
            json!({
                "level": l.level,
                "clusters": l.cluster_count(),
                "edges": l.graph.edge_count(),
                "kmeans_iterations": l.kmeans_iterations,
                "kmeans_repairs": l.kmeans_repairs,
                "max_diameter": l.max_diameter(),
            })
        })
        .collect();
    emit(
        "build-hierarchy",
        &config,
        json!({ "out": a.common.out, "level_sizes": h.level_sizes(), "levels": levels }),
    )
}

fn apply_pipeline(config: &mut RunConfig, a: &PipelineArgs) -> Result<()> {
    set(&mut config.k, a.k);
    let p = &mut config.pipeline;
    set(&mut p.mmr_lambda, a.lambda);
    set(&mut p.coherence_threshold, a.theta);
    set(&mut p.seeds, a.seed_count.map(Some));
    if let Some(mode) = &a.early_stop {
        p.early_stop = match mode.as_str() {
            "off" => EarlyStopMode::Off,
            "auto" => EarlyStopMode::Auto,
            w => EarlyStopMode::Window(
                w.parse()
                    .map_err(|_| usage(format!("--early-stop takes off, auto or a window length, got {w:?}")))?,
            ),
        };
    }
    if let Some(view) = &a.view {
        p.view = match view.as_str() {
            "symmetric" => TraversalView::Symmetric,
            "citation" => TraversalView::Citation,
            v => return Err(usage(format!("--view takes symmetric or citation, got {v:?}"))),
        };
    }
    if config.k == 0 {
        return Err(usage("-k must be at least 1"));
    }
    config.pipeline.validate()?;
    Ok(())
}

fn search_cmd(mut config: RunConfig, a: SearchArgs) -> Result<()> {
    let corpus = open_corpus(&mut config, &a.corpus)?;
    apply_pipeline(&mut config, &a.pipeline)?;
    set(&mut config.hierarchy.beam, a.beam.map(Some));
    let query = match (a.node, &a.embedding) {
        (Some(node), _) => Query::node(node, config.k),
        (None, Some(path)) => Query::embedding(read_json(path)?, config.k),
        (None, None) => return Err(usage("give --node or --embedding")),
    };
    let (mode, result) = match &a.hier {
        Some(dir) => {
            let mut h = load_hierarchy(dir).with_context(|| format!("loading hierarchy {}", dir.display()))?;
            if config.hierarchy.beam.is_some() {
                h.config.beam = config.hierarchy.beam;
            }
            ("hierarchical", coarse_to_fine_search(&query, &h, &corpus, &config.pipeline)?)
        }
        None => ("flat", search(&query, &corpus, &config.pipeline)?),
    };
    let RetrievalResult { hits, diagnostics } = result;
    emit(
        "search",
        &config,
        json!({ "mode": mode, "query": query, "hits": hits, "diagnostics": diagnostics }),
    )
}

fn evaluate(mut config: RunConfig, a: EvaluateArgs) -> Result<()> {
    let corpus = open_corpus(&mut config, &a.corpus)?;
    set(&mut config.k, a.k);
    if let Some(methods) = &a.methods {
        config.evaluate.methods = methods
            .iter()
            .map(|m| Method::from_str(m.trim()))
            .collect::<std::result::Result<_, _>>()?;
    }
    if let Some(runs) = a.runs {
        if runs == 0 {
            return Err(usage("--seeds must be at least 1"));
        }
        config.evaluate.seeds = Some((0..runs).collect());
    }
    config.evaluate.timing |= a.timing;
    let seeds = config
        .evaluate
        .seeds
        .clone()
        .ok_or_else(|| usage("missing --seeds: evaluate needs an explicit run count"))?;
    let queries: Vec<usize> = read_json(&a.queries)?;
    let judgments: RelevanceJudgments = read_json(&a.judgments)?;
    let experiment = ExperimentConfig {
        methods: config.evaluate.methods.clone(),
        k: config.k,
        seeds,
        pipeline: config.pipeline.clone(),
        hierarchy: config.hierarchy.clone(),
        timing: config.evaluate.timing,
    };
    let table = run_experiment(&corpus, &queries, &judgments, &experiment)?;
    fs::write(&a.out, table.to_csv()?).with_context(|| format!("writing {}", a.out.display()))?;
    emit("evaluate", &config, json!({ "out": a.out, "table": table }))
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn bench_metric(mut config: RunConfig, a: BenchMetricArgs) -> Result<()> {
    let seed = resolve_seed(&mut config, a.seed)?;
    let (d, r) = (a.dim, a.rank);
    if d == 0 || r == 0 || r > d || a.evals == 0 {
        return Err(usage("bench metric needs 0 < rank <= dim and at least one evaluation"));
    }
    const POOL: usize = 64;
    let epsilon = config.model.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |len: usize, scale: f64| -> Vec<f64> { (0..len).map(|_| scale * rng.gen_range(-1.0..1.0)).collect() };
    let points: Vec<Vec<f64>> = (0..POOL).map(|_| gauss(d, 1.0)).collect();
    let slabs: Vec<Vec<f64>> = (0..POOL).map(|_| gauss(d * r, 1.0 / (d as f64).sqrt())).collect();
    let dense: Vec<Vec<f64>> = slabs
        .iter()
        .map(|l| dense_metric_from_slab(l, d, r, epsilon).as_slice().to_vec())
        .collect();
    let pair = |i: usize| (i % POOL, (i * 7 + 3) % POOL);
    let mut scratch = vec![0.0; r];

    let start = Instant::now();
    let mut acc = 0.0;
    for i in 0..a.evals {
        let (u, v) = pair(i);
        acc += local_distance_sq(&points[u], &points[v], &slabs[u], r, epsilon, &mut scratch);
    }
    black_box(acc);
    let low_rank = start.elapsed();

    let mut delta = vec![0.0; d];
    let dense_sq = |u: usize, v: usize, delta: &mut [f64]| -> f64 {
        for (x, (a, b)) in delta.iter_mut().zip(points[u].iter().zip(&points[v])) {
            *x = a - b;
        }
        let g = &dense[u];
        (0..d).map(|row| delta[row] * (0..d).map(|c| g[row * d + c] * delta[c]).sum::<f64>()).sum()
    };
    let start = Instant::now();
    let mut acc = 0.0;
    for i in 0..a.evals {
        let (u, v) = pair(i);
        acc += dense_sq(u, v, &mut delta);
    }
    black_box(acc);
    let full = start.elapsed();

    let mut worst = 0.0f64;
    for i in 0..POOL {
        let (u, v) = pair(i);
        let lr = local_distance_sq(&points[u], &points[v], &slabs[u], r, epsilon, &mut scratch);
        let de = dense_sq(u, v, &mut delta);
        worst = worst.max((lr - de).abs() / de.abs().max(f64::MIN_POSITIVE));
    }
    let per = |t: std::time::Duration| t.as_secs_f64() * 1e9 / a.evals as f64;
    emit(
        "bench metric",
        &config,
        json!({
            "dim": d,
            "rank": r,
            "evals": a.evals,
            "low_rank_ns_per_eval": per(low_rank),
            "dense_ns_per_eval": per(full),
            "speedup": per(full) / per(low_rank),
            "max_relative_difference": worst,
        }),
    )
}

fn bench_dijkstra(mut config: RunConfig, a: BenchDijkstraArgs) -> Result<()> {
    let corpus = open_corpus(&mut config, &a.corpus)?;
    let seed = resolve_seed(&mut config, a.seed)?;
    apply_pipeline(&mut config, &a.pipeline)?;
    let n = corpus.node_count();
    if a.queries == 0 || a.queries > n {
        return Err(usage(format!("--queries must lie in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = sample(&mut rng, n, a.queries).into_vec();
    nodes.sort_unstable();
    let hierarchy = a
        .hier
        .as_ref()
        .map(|dir: &PathBuf| load_hierarchy(dir).with_context(|| format!("loading hierarchy {}", dir.display())))
        .transpose()?;

    let measure = |f: &dyn Fn(&Query) -> gss_core::Result<RetrievalResult>| -> Result<Value> {
        let mut latencies = Vec::with_capacity(nodes.len());
        let mut settled = 0usize;
        for &q in &nodes {
            let query = Query::node(q, config.k);
            let start = Instant::now();
            let r = f(&query)?;
            latencies.push(start.elapsed().as_secs_f64() * 1e3);
            settled += r.diagnostics.settled;
        }
        latencies.sort_by(f64::total_cmp);
        Ok(json!({
            "mean_settled": settled as f64 / nodes.len() as f64,
            "latency_ms": {
                "p50": percentile(&latencies, 50.0),
                "p90": percentile(&latencies, 90.0),
                "p99": percentile(&latencies, 99.0),
                "max": latencies.last(),
            },
        }))
    };
    let flat = measure(&|q| search(q, &corpus, &config.pipeline))?;
    let hier = match &hierarchy {
        Some(h) => Some(measure(&|q| coarse_to_fine_search(q, h, &corpus, &config.pipeline))?),
        None => None,
    };
    emit(
        "bench dijkstra",
        &config,
        json!({ "queries": nodes.len(), "node_count": n, "flat": flat, "hierarchical": hier }),
    )
}
