//! End-to-end runs of the command-line binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilemma-forge")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    dir.join("out")
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn error_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn factorial_label_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["label", "--suite", "builtin:ke", "--set", "data=synthetic:ke-factorial"]);
    let matrix = read(out.join("matrix.csv"));
    assert!(matrix.starts_with("scenario_id,choose_younger,choose_drinks_less,choose_no_health_issues\n"));
    let rows = csv_rows(&matrix);
    assert_eq!(rows.len(), 28);
    for col in 1..=3 {
        assert_eq!(rows.iter().filter(|r| r[col] != "-").count(), 16);
    }
    let report = read(out.join("report.csv"));
    assert!(report.contains("choose_younger,coverage,0.571428571\n"));
    let manifest: Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "label");
}

#[test]
fn empty_suite_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.rules"), "").unwrap();
    let out = run(tmp.path(), &["label", "--suite", "empty.rules", "--set", "data=synthetic:ke-factorial"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "config");
}

#[test]
fn exit_codes_by_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // clap usage error
    assert_eq!(run(dir, &["label", "--model", "plurality"]).status.code(), Some(2));
    // unknown config key
    assert_eq!(run(dir, &["label", "--set", "colour=blue"]).status.code(), Some(2));
    // rule syntax error reports its position
    std::fs::write(dir.join("bad.rules"), "heuristic \"x\" {\n  when first.age_old >\n}\n").unwrap();
    let out = run(dir, &["label", "--suite", "bad.rules", "--set", "data=synthetic:ke-factorial"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_of(&out)["error"]["message"].as_str().unwrap().starts_with("3:"));
    // unreadable data
    std::fs::write(dir.join("broken.csv"), "scenario_id,nonsense\n1,2\n").unwrap();
    let out = run(dir, &["label", "--suite", "builtin:ke", "--set", "data=broken.csv"]);
    assert_eq!(out.status.code(), Some(2), "undetectable domain");
    let out = run(dir, &["label", "--suite", "builtin:ke", "--set", "data=broken.csv", "--set", "domain=ke"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["error"]["kind"], "data");
    // a split with no test rows cannot be evaluated
    let out = run(dir, &["train", "--suite", "builtin:ke", "--set", "data=synthetic:ke-population", "--set", "split=train=1,test=0"]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn untrained_generative_model_is_undecided() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "aggregate",
            "--suite",
            "builtin:ke",
            "--model",
            "generative",
            "--tie",
            "abstain",
            "--set",
            "data=synthetic:ke-factorial",
            "--set",
            "generative.epochs=0",
        ],
    );
    let rows = csv_rows(&read(out.join("labels.csv")));
    assert_eq!(rows.len(), 28);
    assert!(rows.iter().all(|r| r[1] == "-" && r[2] == "0.500000000"), "{rows:?}");
    assert!(out.join("model.json").exists());
}

#[test]
fn inline_weights_follow_published_scaling() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "aggregate",
            "--suite",
            "builtin:ke",
            "--model",
            "weighted",
            "--set",
            "data=synthetic:ke-factorial",
            "--set",
            "weights=choose_younger=0.684,choose_drinks_less=0.542,choose_no_health_issues=0.420",
        ],
    );
    assert_eq!(
        read(out.join("weights.csv")),
        "heuristic,weight\nchoose_younger,0.684000000\nchoose_drinks_less,0.542000000\nchoose_no_health_issues,0.420000000\n"
    );
    // Younger-and-drinks versus older-and-sober: age outweighs drinking.
    let labels = read(out.join("labels.csv"));
    assert!(!labels.lines().skip(1).any(|l| l.split(',').nth(1) == Some("-")));
}

#[test]
fn curve_over_the_whole_split_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.cfg"),
        "data = synthetic:ke-population\nsuite = builtin:ke\nsynthetic.rows = 1000\nseed = 4\nmode = supervised\n\
         forest.n_trees = 25\ncurve.evaluation = split\ncurve.sizes = 800\ncurve.models = supervised\n",
    )
    .unwrap();
    let out = ok(dir, &["train", "--config", "run.cfg"]);
    let metrics = csv_rows(&read(out.join("metrics.csv")));
    assert_eq!(metrics[0][0], "all");
    assert_eq!(metrics[0][2], "200");
    let out = ok(dir, &["curve", "--config", "run.cfg"]);
    let curve = csv_rows(&read(out.join("curve.csv")));
    assert_eq!(curve.len(), 1);
    assert_eq!((curve[0][0].as_str(), curve[0][1].as_str()), ("800", "supervised"));
    assert_eq!(curve[0][2], metrics[0][1]);
}

#[test]
fn silent_heuristic_has_zero_gain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("suite.rules"),
        "heuristic \"younger\" {\n  when argmin(first.age_old, second.age_old)\n}\n\
         heuristic \"sober\" {\n  when argmin(first.drinks_frequently, second.drinks_frequently)\n}\n\
         heuristic \"silent\" {\n  otherwise abstain\n}\n",
    )
    .unwrap();
    let out = ok(
        dir,
        &["perturb", "--suite", "suite.rules", "--tie", "abstain", "--set", "data=synthetic:ke-population", "--set", "synthetic.rows=300"],
    );
    let rows = csv_rows(&read(out.join("perturb.csv")));
    let silent = rows.iter().find(|r| r[0] == "silent").unwrap();
    assert_eq!(silent[1], "0.000000000");
}

#[test]
fn report_includes_borda_for_population() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &["report", "--suite", "builtin:ke_with_opposites", "--set", "data=synthetic:ke-population", "--set", "synthetic.rows=560"],
    );
    for file in ["report.csv", "pairs.csv", "density.csv", "report.json", "borda.csv", "manifest.json"] {
        assert!(out.join(file).exists(), "{file}");
    }
}
