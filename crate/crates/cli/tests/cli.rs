use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gss(args: &[&str]) -> Output {
    gss_env(args, &[])
}

fn gss_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gss"));
    cmd.args(args).env_remove("GSS_CORPUS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("gss runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_lists_reference_and_engineering_defaults() {
    let out = gss(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["Reference values", "theta_c = 0.3", "lambda_cite = 0.5", "d = 256, r = 32", "Engineering values", "rho = 0.1"] {
        assert!(text.contains(needle), "help lacks {needle:?}");
    }
    let search = String::from_utf8(gss(&["search", "--help"]).stdout).unwrap();
    assert!(search.contains("--theta") && search.contains("reference"));
}

#[test]
fn missing_corpus_is_a_usage_error_naming_the_flag() {
    let err = error_json(&gss(&["search", "--node", "0"]), 2);
    assert_eq!(err["error"]["class"], "usage");
    assert!(err["error"]["message"].as_str().unwrap().contains("--corpus"));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let err = error_json(&gss(&["fixture", "barbell", "--out", p(&dir.path().join("b"))]), 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("--seed"));
}

#[test]
fn barbell_smoke_returns_the_bridge() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("fixture");
    let made = ok_json(&gss(&["fixture", "barbell", "--seed", "7", "--out", p(&corpus)]));
    let bridge = made["result"]["bridges"][0].as_u64().unwrap();
    assert_eq!(bridge, 24);
    let found = ok_json(&gss(&["search", "--corpus", p(&corpus), "--node", "0", "-k", "1"]));
    let hits = found["result"]["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0]["node"].as_u64(), Some(bridge));
    assert_eq!(hits[0]["path"]["nodes"], serde_json::json!([0, 24]));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok_json(&gss(&["fixture", "geometric", "--seed", "3", "--nodes", "300", "--out", p(out)]));
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        let left = fs::read(a.join(&name)).unwrap();
        let right = fs::read(b.join(&name)).unwrap();
        if name == "run.json" {
            continue;
        }
        assert_eq!(left, right, "{name:?} differs");
    }
    let run = |c: &Path| gss(&["search", "--corpus", p(c), "--node", "290", "-k", "5"]).stdout;
    let (left, right) = (run(&a), run(&b));
    let strip = |bytes: Vec<u8>| {
        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        v["config"]["corpus"] = Value::Null;
        v
    };
    assert_eq!(strip(left), strip(right));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("geo");
    ok_json(&gss(&["fixture", "geometric", "--seed", "1", "--nodes", "300", "--out", p(&corpus)]));
    let first = ok_json(&gss(&[
        "search", "--corpus", p(&corpus), "--node", "280", "-k", "4", "--lambda", "0.4", "--theta", "0.1",
        "--early-stop", "off",
    ]));
    let echo = dir.path().join("echo.json");
    fs::write(&echo, serde_json::to_string(&first["config"]).unwrap()).unwrap();
    let second = ok_json(&gss(&["search", "--config", p(&echo), "--node", "280"]));
    assert_eq!(first, second);
    assert_eq!(second["config"]["pipeline"]["mmr_lambda"], 0.4);
}

#[test]
fn precedence_is_flag_then_env_then_file() {
    let dir = TempDir::new().unwrap();
    let (small, large) = (dir.path().join("small"), dir.path().join("large"));
    ok_json(&gss(&["fixture", "geometric", "--seed", "1", "--nodes", "200", "--out", p(&small)]));
    ok_json(&gss(&["fixture", "geometric", "--seed", "1", "--nodes", "400", "--out", p(&large)]));
    let file = dir.path().join("run.toml");
    fs::write(&file, format!("corpus = {:?}\nk = 3\n", p(&small))).unwrap();
    let used = |out: &Output| ok_json(out)["config"]["corpus"].as_str().unwrap().to_owned();

    let from_file = gss(&["search", "--config", p(&file), "--node", "150"]);
    assert_eq!(used(&from_file), p(&small));
    assert_eq!(ok_json(&from_file)["result"]["hits"].as_array().unwrap().len(), 3);
    let from_env = gss_env(&["search", "--config", p(&file), "--node", "150"], &[("GSS_CORPUS", p(&large))]);
    assert_eq!(used(&from_env), p(&large));
    let from_flag = gss_env(
        &["search", "--config", p(&file), "--corpus", p(&small), "--node", "150", "-k", "2"],
        &[("GSS_CORPUS", p(&large))],
    );
    assert_eq!(used(&from_flag), p(&small));
    assert_eq!(ok_json(&from_flag)["config"]["k"], 2);
}

#[test]
fn bad_config_and_bad_values_exit_with_usage() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("bad.toml");
    fs::write(&file, "no_such_setting = 1\n").unwrap();
    error_json(&gss(&["search", "--config", p(&file), "--node", "0"]), 2);
    let corpus = dir.path().join("bb");
    ok_json(&gss(&["fixture", "barbell", "--seed", "2", "--out", p(&corpus)]));
    error_json(&gss(&["search", "--corpus", p(&corpus), "--node", "0", "--lambda", "1.5"]), 2);
    error_json(&gss(&["search", "--corpus", p(&corpus), "--node", "500"]), 2);
    let missing = error_json(&gss(&["search", "--corpus", p(&dir.path().join("absent")), "--node", "0"]), 3);
    assert_eq!(missing["error"]["class"], "data");
}

#[test]
fn train_toy_exports_a_searchable_corpus() {
    let dir = TempDir::new().unwrap();
    let blocks = dir.path().join("blocks");
    let trained = dir.path().join("trained");
    ok_json(&gss(&["fixture", "two-block", "--seed", "4", "--out", p(&blocks)]));
    let run = ok_json(&gss(&[
        "train-toy", "--corpus", p(&blocks), "--epochs", "5", "--seed", "4", "--out", p(&trained),
    ]));
    assert_eq!(run["result"]["final"]["epoch"], 5);
    let trace = fs::read_to_string(trained.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("epoch,total,contrast,rank,smooth,hier"));
    assert_eq!(trace.lines().count(), 7);
    let again = dir.path().join("again");
    ok_json(&gss(&["train-toy", "--corpus", p(&blocks), "--epochs", "5", "--seed", "4", "--out", p(&again)]));
    assert_eq!(fs::read(trained.join("trace.csv")).unwrap(), fs::read(again.join("trace.csv")).unwrap());
    let found = ok_json(&gss(&["search", "--corpus", p(&trained), "--node", "3", "-k", "3"]));
    assert_eq!(found["result"]["hits"].as_array().unwrap().len(), 3);
}

#[test]
fn hierarchy_build_and_search() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("geo");
    let hier = dir.path().join("hier");
    ok_json(&gss(&["fixture", "geometric", "--seed", "5", "--nodes", "600", "--out", p(&corpus)]));
    let built = ok_json(&gss(&[
        "build-hierarchy", "--corpus", p(&corpus), "--rho", "0.2", "--levels", "3", "--seed", "5", "--out", p(&hier),
    ]));
    assert_eq!(built["result"]["level_sizes"], serde_json::json!([600, 120, 24]));
    let found = ok_json(&gss(&["search", "--corpus", p(&corpus), "--hier", p(&hier), "--node", "590", "-k", "5"]));
    assert_eq!(found["result"]["mode"], "hierarchical");
    assert_eq!(found["result"]["diagnostics"]["level_settled"].as_array().unwrap().len(), 3);

    let other = dir.path().join("other");
    ok_json(&gss(&["fixture", "geometric", "--seed", "6", "--nodes", "600", "--out", p(&other)]));
    error_json(&gss(&["search", "--corpus", p(&other), "--hier", p(&hier), "--node", "0"]), 3);
}

#[test]
fn evaluate_writes_a_metrics_table() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("geo");
    ok_json(&gss(&["fixture", "geometric", "--seed", "2", "--nodes", "500", "--queries", "20", "--out", p(&corpus)]));
    let csv = dir.path().join("results.csv");
    let (queries, judgments) = (corpus.join("queries.json"), corpus.join("judgments.json"));
    let args = [
        "evaluate", "--corpus", p(&corpus),
        "--queries", p(&queries),
        "--judgments", p(&judgments),
        "--methods", "cosine,geodesic-flat,geodesic-hier",
        "--seeds", "2", "--out", p(&csv),
    ];
    let run = ok_json(&gss(&args));
    assert_eq!(run["result"]["table"]["rows"].as_array().unwrap().len(), 3);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("method,runs,queries,ndcg_excluded,recall_mean"));
    assert_eq!(text.lines().count(), 4);
    let first = fs::read(&csv).unwrap();
    ok_json(&gss(&args));
    assert_eq!(first, fs::read(&csv).unwrap());

    let no_seeds: Vec<&str> = args.iter().copied().filter(|a| *a != "--seeds" && *a != "2").collect();
    error_json(&gss(&no_seeds), 2);
    let mut bad = args.to_vec();
    bad[8] = "cosine,nearest";
    error_json(&gss(&bad), 2);
}

#[test]
fn ingest_reads_csv_and_rejects_duplicates() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("edges.csv");
    let features = dir.path().join("features.csv");
    let embeddings = dir.path().join("emb.csv");
    let factors = dir.path().join("fac.csv");
    let years = dir.path().join("years.csv");
    fs::write(&edges, "# citing,cited\n1,0\n2,0\n2,1\n3,2\n").unwrap();
    fs::write(&features, "1,0\n0.9,0.1\n0.5,0.5\n0,1\n").unwrap();
    fs::write(&embeddings, "1,0\n0.9,0.1\n0.5,0.5\n0,1\n").unwrap();
    fs::write(&factors, "0.1,0\n0,0.1\n0.2,0\n0,0.2\n").unwrap();
    fs::write(&years, "2000\n2001\n2002\n2003\n").unwrap();
    let out = dir.path().join("corpus");
    let made = ok_json(&gss(&[
        "ingest", "--edges", p(&edges), "--features", p(&features), "--embeddings", p(&embeddings),
        "--factors", p(&factors), "--rank", "1", "--years", p(&years), "--valid-from", "2002",
        "--test-from", "2003", "--out", p(&out),
    ]));
    assert_eq!(made["result"]["node_count"], 4);
    assert_eq!(made["result"]["edge_count"], 4);
    assert_eq!(made["result"]["split"], true);
    let found = ok_json(&gss(&["search", "--corpus", p(&out), "--node", "3", "-k", "2", "--theta", "-1"]));
    assert_eq!(found["result"]["hits"].as_array().unwrap().len(), 2);

    fs::write(&edges, "1,0\n1,0\n").unwrap();
    let dup = error_json(
        &gss(&["ingest", "--edges", p(&edges), "--features", p(&features), "--out", p(&dir.path().join("x"))]),
        3,
    );
    assert!(dup["error"]["message"].as_str().unwrap().contains("duplicate"));
    fs::write(&edges, "1,zero\n").unwrap();
    error_json(
        &gss(&["ingest", "--edges", p(&edges), "--features", p(&features), "--out", p(&dir.path().join("y"))]),
        3,
    );
}

#[test]
fn bench_subcommands_report_measurements() {
    let metric = ok_json(&gss(&["bench", "metric", "--seed", "1", "--dim", "32", "--rank", "4", "--evals", "2000"]));
    assert!(metric["result"]["max_relative_difference"].as_f64().unwrap() < 1e-10);
    assert!(metric["result"]["low_rank_ns_per_eval"].as_f64().unwrap() > 0.0);

    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("geo");
    let hier = dir.path().join("hier");
    ok_json(&gss(&["fixture", "geometric", "--seed", "1", "--nodes", "400", "--out", p(&corpus)]));
    ok_json(&gss(&["build-hierarchy", "--corpus", p(&corpus), "--levels", "2", "--seed", "1", "--out", p(&hier)]));
    let run = ok_json(&gss(&[
        "bench", "dijkstra", "--corpus", p(&corpus), "--seed", "1", "--queries", "10", "--hier", p(&hier),
        "--early-stop", "off",
    ]));
    assert_eq!(run["result"]["flat"]["mean_settled"], 400.0);
    assert!(run["result"]["hierarchical"]["mean_settled"].as_f64().unwrap() < 400.0);
}

#[test]
fn threads_flag_is_accepted() {
    let dir = TempDir::new().unwrap();
    let out = ok_json(&gss(&["--threads", "2", "fixture", "barbell", "--seed", "1", "--out", p(&dir.path().join("b"))]));
    assert_eq!(out["config"]["threads"], 2);
    error_json(&gss(&["--threads", "0", "fixture", "barbell", "--seed", "1", "--out", p(&dir.path().join("c"))]), 2);
}
