use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frontier-sim"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) {
    let out = bin(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn corpus(dir: &Path) {
    ok(
        &["gen-synth", "--out-dir", "c", "--num-pages", "3000", "--queries-per-set", "10", "--num-seeds", "10"],
        dir,
    );
}

const RUN: &[&str] = &[
    "run", "--graph", "c/graph.tsv", "--seeds", "c/seeds.txt", "--quality", "c/quality.tsv",
    "--T", "400", "--budget", "2000",
];

fn run(dir: &Path, policies: &str, out_dir: &str) {
    let mut args = RUN.to_vec();
    args.extend(["--policy", policies, "--out-dir", out_dir]);
    ok(&args, dir);
}

#[test]
fn gen_synth_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    for f in [
        "graph.tsv", "seeds.txt", "quality.tsv", "qrels.nl.txt", "qrels.kw.txt",
        "queries.nl.tsv", "queries.kw.tsv", "docs.tsv", "synth.toml", "manifest.txt",
    ] {
        assert!(dir.path().join("c").join(f).exists(), "{f} missing");
    }
    // the written config reproduces the corpus
    ok(&["--config", "c/synth.toml", "gen-synth", "--out-dir", "d"], dir.path());
    let a = fs::read(dir.path().join("c/graph.tsv")).unwrap();
    let b = fs::read(dir.path().join("d/graph.tsv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_policies_two_traces_and_reruns_identical() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    run(dir.path(), "bfs,qmin", "t1");
    run(dir.path(), "bfs,qmin", "t2");
    let bfs = fs::read(dir.path().join("t1/trace.bfs.tsv")).unwrap();
    let qmin = fs::read(dir.path().join("t1/trace.qmin.tsv")).unwrap();
    assert_ne!(bfs, qmin);
    for name in ["trace.bfs.tsv", "trace.qmin.tsv"] {
        let a = fs::read(dir.path().join("t1").join(name)).unwrap();
        let b = fs::read(dir.path().join("t2").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn invalid_policy_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let mut args = RUN.to_vec();
    args.extend(["--policy", "bfs,dfs", "--out-dir", "t"]);
    let out = bin(&args, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dfs"));
    assert!(!dir.path().join("t").exists(), "work started before validation");
}

#[test]
fn missing_input_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(
        &["run", "--graph", "nope.tsv", "--seeds", "s", "--policy", "bfs", "--T", "1", "--budget", "1", "--out", "x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin(&["run", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(bin(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    fs::write(
        dir.path().join("exp.toml"),
        "graph = \"c/graph.tsv\"\nseeds = \"c/seeds.txt\"\nquality = \"c/quality.tsv\"\n\
         policies = [\"qfirst\"]\ncheckpoint_interval = 100\nbudget = 500\nout_dir = \"t\"\n",
    )
    .unwrap();
    ok(&["--config", "exp.toml", "run", "--budget", "300"], dir.path());
    let trace = fs::read_to_string(dir.path().join("t/trace.qfirst.tsv")).unwrap();
    assert!(trace.contains("budget=300"));
    assert!(trace.contains("#end pages=300"));

    fs::write(dir.path().join("bad.toml"), "budget = 3\nfoo = 1\n").unwrap();
    let out = bin(&["--config", "bad.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_counts_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    run(dir.path(), "bfs,qoracle,qfirst", "t");
    ok(
        &[
            "compare", "--graph", "c/graph.tsv", "--trace", "t/trace.bfs.tsv", "--trace", "t/trace.qoracle.tsv",
            "--trace", "t/trace.qfirst.tsv", "--qrels", "c/qrels.nl.txt", "--out-dir", "cmp",
        ],
        dir.path(),
    );
    let csv = fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "policy,query_set,metric,t,value,significant_vs_baseline");
    // 3 policies x 5 checkpoints x 2 metrics
    assert_eq!(lines.len() - 1, 3 * 5 * 2);

    ok(
        &[
            "compare", "--graph", "c/graph.tsv", "--trace", "t/trace.bfs.tsv", "--qrels", "c/qrels.nl.txt",
            "--qrels", "c/qrels.kw.txt", "--out-dir", "self",
        ],
        dir.path(),
    );
    let csv = fs::read_to_string(dir.path().join("self/comparison.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",false")));
    let sp = fs::read_to_string(dir.path().join("self/speedups.csv")).unwrap();
    let rows: Vec<&str> = sp.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("1.0")), "{sp}");
}

#[test]
fn compare_rejects_traces_from_other_corpora() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    run(dir.path(), "bfs", "t");
    ok(&["gen-synth", "--out-dir", "other", "--num-pages", "3000", "--queries-per-set", "10", "--rng-seed", "9"], dir.path());
    let out = bin(
        &["compare", "--graph", "other/graph.tsv", "--trace", "t/trace.bfs.tsv", "--qrels", "other/qrels.nl.txt", "--out-dir", "x"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_with_documents_and_report() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    run(dir.path(), "bfs,qmin", "t");
    ok(
        &[
            "eval", "--graph", "c/graph.tsv", "--trace", "t/trace.qmin.tsv", "--qrels", "c/qrels.nl.txt",
            "--queries", "c/queries.nl.tsv", "--docs", "c/docs.tsv", "--out", "eval.csv",
        ],
        dir.path(),
    );
    let csv = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("policy,query_set,metric,t,value"));
    assert_eq!(csv.lines().filter(|l| l.contains(",ndcg@10,")).count(), 5);

    ok(
        &[
            "compare", "--graph", "c/graph.tsv", "--trace", "t/trace.bfs.tsv", "--trace", "t/trace.qmin.tsv",
            "--qrels", "c/qrels.nl.txt", "--queries", "c/queries.nl.tsv", "--docs", "c/docs.tsv", "--out-dir", "cmp",
        ],
        dir.path(),
    );
    ok(
        &["report", "--comparison", "cmp/comparison.csv", "--speedups", "cmp/speedups.csv", "--out", "report.csv"],
        dir.path(),
    );
    let cmp = fs::read_to_string(dir.path().join("cmp/comparison.csv")).unwrap();
    let rep = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(rep.lines().next(), Some("series,policy,query_set,metric,t,value,significant"));
    // 2 policies x 5 checkpoints x 3 metrics, plus 2 speedups
    assert_eq!(rep.lines().count() - 1, 30 + 2);
    for (c, r) in cmp.lines().skip(1).zip(rep.lines().skip(1)) {
        assert_eq!(format!("checkpoint,{c}"), r);
    }
}

#[test]
fn empty_comparison_reports_header_only() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "policy,query_set,metric,t,value,significant_vs_baseline\n").unwrap();
    ok(&["report", "--comparison", "empty.csv", "--out", "r.csv"], dir.path());
    let r = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(r, "series,policy,query_set,metric,t,value,significant\n");

    fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    let out = bin(&["report", "--comparison", "bad.csv", "--out", "r2.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
