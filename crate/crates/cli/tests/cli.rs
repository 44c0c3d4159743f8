//! End-to-end runs of the `ctbn` binary: command contracts, output formats
//! and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ctbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctbn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ctbn(args);
    assert!(
        out.status.success(),
        "`ctbn {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ctbn(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Samples chain data into `dir` and returns (data, model) paths.
fn chain_data(dir: &TempDir, n: usize, end: &str) -> (PathBuf, PathBuf) {
    let data = dir.path().join("d.jsonl");
    let model = dir.path().join("truth.json");
    ok(&[
        "sample",
        "--network",
        "chain",
        "--n",
        &n.to_string(),
        "--end-time",
        end,
        "--seed",
        "3",
        "--out",
        p(&data),
        "--write-model",
        p(&model),
    ]);
    (data, model)
}

#[test]
fn sample_is_deterministic_given_seed() {
    let dir = TempDir::new().unwrap();
    let (a, _) = chain_data(&dir, 3, "5");
    let first = fs::read(&a).unwrap();
    let b = dir.path().join("again.jsonl");
    ok(&[
        "sample",
        "--network",
        "chain",
        "--n",
        "3",
        "--end-time",
        "5",
        "--seed",
        "3",
        "--out",
        p(&b),
    ]);
    assert_eq!(first, fs::read(&b).unwrap());
}

#[test]
fn sample_without_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = ctbn(&[
        "sample",
        "--network",
        "chain",
        "--end-time",
        "5",
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_command_and_bad_flags_exit_one() {
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["learn", "--no-such-flag"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn learn_writes_a_model() {
    let dir = TempDir::new().unwrap();
    let (data, _) = chain_data(&dir, 2, "150");
    let m = dir.path().join("m.json");
    ok(&[
        "learn",
        "--data",
        p(&data),
        "--max-parents",
        "2",
        "--method",
        "greedy",
        "--seed",
        "7",
        "--out",
        p(&m),
    ]);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(&m).unwrap()).unwrap();
    assert!(model.get("variables").is_some());
}

#[test]
fn learn_rejects_unknown_method_and_restarts_without_seed() {
    let dir = TempDir::new().unwrap();
    let (data, _) = chain_data(&dir, 1, "10");
    let m = dir.path().join("m.json");
    assert_eq!(
        code(&["learn", "--data", p(&data), "--method", "annealing", "--out", p(&m)]),
        1
    );
    assert_eq!(
        code(&["learn", "--data", p(&data), "--restarts", "2", "--out", p(&m)]),
        1
    );
}

#[test]
fn missing_or_corrupt_data_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.json");
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(code(&["learn", "--data", p(&missing), "--out", p(&m)]), 2);
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(code(&["learn", "--data", p(&bad), "--out", p(&m)]), 2);
}

#[test]
fn stats_prints_family_table() {
    let dir = TempDir::new().unwrap();
    let (data, _) = chain_data(&dir, 2, "20");
    let csv = ok(&["stats", "--data", p(&data), "--var", "X2", "--parents", "X1"]);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("variable,instantiation,state,T,"));
    // two parent values times two states
    assert_eq!(lines.count(), 4);
}

#[test]
fn score_and_bic() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = chain_data(&dir, 1, "100");
    let csv = ok(&["score", "--data", p(&data), "--graph", p(&truth)]);
    assert!(csv.starts_with("variable,parents,log_marg_q,log_marg_theta,log_prior,total"));
    assert_eq!(csv.lines().count(), 5);
    let bic = ok(&["score", "--data", p(&data), "--graph", p(&truth), "--bic"]);
    assert!(bic.contains("bic"));
    assert_eq!(
        code(&[
            "score",
            "--data",
            p(&data),
            "--graph",
            p(&truth),
            "--data-size",
            "fortnights"
        ]),
        1
    );
}

#[test]
fn fit_params_then_loglik() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = chain_data(&dir, 2, "50");
    let fitted = dir.path().join("fit.json");
    let mle = dir.path().join("mle.json");
    ok(&[
        "fit-params",
        "--data",
        p(&data),
        "--graph",
        p(&truth),
        "--out",
        p(&fitted),
    ]);
    ok(&[
        "fit-params",
        "--data",
        p(&data),
        "--graph",
        p(&truth),
        "--mle",
        "--out",
        p(&mle),
    ]);
    let ll = |m: &Path| -> f64 {
        ok(&["loglik", "--model", p(m), "--data", p(&data)])
            .trim()
            .parse()
            .unwrap()
    };
    // the MLE maximizes the training log-likelihood
    assert!(ll(&mle) >= ll(&fitted));
    assert!(ll(&mle) >= ll(&truth));
    let with_init: f64 = ok(&["loglik", "--model", p(&mle), "--data", p(&data), "--include-initial"])
        .trim()
        .parse()
        .unwrap();
    assert!(with_init <= ll(&mle));
}

#[test]
fn amalgamate_and_minimal_smap_recover_chain() {
    let dir = TempDir::new().unwrap();
    let (_, truth) = chain_data(&dir, 1, "1");
    let csv = ok(&["amalgamate", "--model", p(&truth)]);
    // header plus 16 joint states
    assert_eq!(csv.lines().count(), 17);
    let g: serde_json::Value = serde_json::from_str(&ok(&["minimal-smap", "--model", p(&truth)])).unwrap();
    let text = g.to_string();
    assert!(
        text.contains("\"X2\":[\"X1\"]") && text.contains("\"X4\":[\"X3\"]"),
        "{text}"
    );
    assert_eq!(code(&["amalgamate", "--model", p(&truth), "--cap", "8"]), 2);
}

#[test]
fn dbn_learn_and_loglik() {
    let dir = TempDir::new().unwrap();
    let (data, _) = chain_data(&dir, 1, "100");
    let dbn = dir.path().join("dbn.json");
    ok(&["dbn-learn", "--data", p(&data), "--delta-t", "1", "--out", p(&dbn)]);
    let ll: f64 = ok(&["dbn-loglik", "--model", p(&dbn), "--data", p(&data)])
        .trim()
        .parse()
        .unwrap();
    assert!(ll.is_finite());
    assert_eq!(
        code(&["dbn-learn", "--data", p(&data), "--delta-t", "-1", "--out", p(&dbn)]),
        1
    );
}

#[test]
fn experiment_chain_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("results");
    ok(&[
        "experiment",
        "chain",
        "--seeds",
        "1..2",
        "--sizes",
        "30,100",
        "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("chain_params.csv")).unwrap();
    assert!(csv.starts_with("seed,size,dim_learned,hamming_to_truth"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn experiment_needs_seeds_and_known_kind() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("r");
    assert_eq!(code(&["experiment", "chain", "--sizes", "30", "--out", p(&out)]), 1);
    assert_eq!(code(&["experiment", "weather", "--seeds", "1", "--out", p(&out)]), 1);
}
