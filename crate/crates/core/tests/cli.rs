use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kdcode::codec::{extract_codes, CodeBook, CodeLogits, KdSpec};
use kdcode::composer::{CodeEmbeddingTables, ComposerParams, ComposerVariant, KdModel, LinearComposerParams};
use kdcode::data::{self, Checkpoint, Report};
use kdcode::numerics::Matrix;
use tempfile::TempDir;

fn kdcode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdcode")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = kdcode(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = kdcode(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "stderr is not one line: {err:?}");
    assert!(err.starts_with("error: "), "{err:?}");
    err
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        Work {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn synthetic(&self, points: usize, clusters: usize) {
        ok(&[
            "gen-synthetic",
            "--num-points",
            &points.to_string(),
            "--num-clusters",
            &clusters.to_string(),
            "--seed",
            "5",
            "--out",
            &self.s("emb.txt"),
            "--labels-out",
            &self.s("labels.tsv"),
        ]);
    }
}

fn report_value(path: &Path, key: &str) -> f64 {
    Report::load(path).unwrap().get(key).unwrap().parse().unwrap()
}

#[test]
fn gen_synthetic_defaults() {
    let w = Work::new();
    let out = ok(&["gen-synthetic", "--out", &w.s("e.txt"), "--labels-out", &w.s("l.tsv")]);
    assert!(out.starts_with("config\tcommand\tgen-synthetic\n"));
    assert!(out.contains("N\t10000\nd\t10\nclusters\t100\n"), "{out}");
    let emb = data::load_embeddings_text(w.path("e.txt")).unwrap();
    assert_eq!((emb.n(), emb.d()), (10_000, 10));
    let labels = data::load_cluster_labels(w.path("l.tsv")).unwrap();
    let distinct: std::collections::HashSet<_> = labels.iter().map(|(_, c)| c.clone()).collect();
    assert_eq!(distinct.len(), 100);
}

#[test]
fn gen_synthetic_size_and_determinism() {
    let w = Work::new();
    for name in ["a", "b"] {
        ok(&[
            "gen-synthetic",
            "--num-points",
            "10",
            "--num-clusters",
            "10",
            "--seed",
            "42",
            "--out",
            &w.s(&format!("{name}.txt")),
            "--labels-out",
            &w.s(&format!("{name}.tsv")),
        ]);
    }
    let a = std::fs::read_to_string(w.path("a.txt")).unwrap();
    assert_eq!(a.lines().count(), 10);
    assert_eq!(a, std::fs::read_to_string(w.path("b.txt")).unwrap());
    assert_eq!(std::fs::read(w.path("a.tsv")).unwrap(), std::fs::read(w.path("b.tsv")).unwrap());
}

#[test]
fn gen_synthetic_unwritable_path() {
    let w = Work::new();
    let err = fails(&["gen-synthetic", "--num-points", "10", "--num-clusters", "2", "--out", "/nonexistent/dir/e.txt", "--labels-out", &w.s("l.tsv")]);
    assert!(err.contains("/nonexistent/dir/e.txt"), "{err}");
}

#[test]
fn unknown_flag_is_rejected() {
    let out = kdcode(&["gen-synthetic", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
}

#[test]
fn learn_codes_refuses_small_code_space() {
    let w = Work::new();
    w.synthetic(10_000, 100);
    let err = fails(&["learn-codes", "--embeddings", &w.s("emb.txt"), "--out-dir", &w.s("out"), "--K", "2", "--D", "3"]);
    assert!(err.contains("K^D >= N"), "{err}");
    assert!(!w.path("out").exists());
}

#[test]
fn learn_codes_allows_collisions_on_request() {
    let w = Work::new();
    w.synthetic(300, 6);
    let out = ok(&[
        "learn-codes",
        "--embeddings",
        &w.s("emb.txt"),
        "--labels",
        &w.s("labels.tsv"),
        "--out-dir",
        &w.s("out"),
        "--K",
        "6",
        "--D",
        "1",
        "--allow-collisions",
        "--epochs",
        "3",
        "--lr",
        "0.001",
    ]);
    assert!(out.contains("config\tallow_collisions\ttrue\n"));
    let nmi = report_value(&w.path("out/report.tsv"), "nmi");
    assert!((0.0..=1.0).contains(&nmi));
    let book = data::load_codebook(w.path("out/codebook.tsv")).unwrap();
    assert_eq!(book.len(), 300);
}

#[test]
fn learn_codes_zero_epochs_is_argmax_of_initial_logits() {
    let w = Work::new();
    w.synthetic(50, 5);
    ok(&["learn-codes", "--embeddings", &w.s("emb.txt"), "--out-dir", &w.s("out"), "--K", "4", "--D", "3", "--epochs", "0"]);
    let book = data::load_codebook(w.path("out/codebook.tsv")).unwrap();
    let ckpt = data::load_checkpoint(w.path("out/checkpoint.kdc")).unwrap();
    let logits: CodeLogits = ckpt.logits.unwrap();
    assert_eq!(extract_codes(&logits).codes().collect::<Vec<_>>(), book.codes().collect::<Vec<_>>());
    let report = Report::load(w.path("out/report.tsv")).unwrap();
    assert_eq!(report.get("initial_loss"), report.get("final_loss"));
}

#[test]
fn learn_codes_echoes_config_and_epochs() {
    let w = Work::new();
    w.synthetic(60, 3);
    let out = ok(&[
        "learn-codes",
        "--embeddings",
        &w.s("emb.txt"),
        "--out-dir",
        &w.s("out"),
        "--K",
        "4",
        "--D",
        "3",
        "--epochs",
        "2",
        "--t0",
        "2",
        "--decay-rate",
        "0.5",
        "--schedule",
        "constant",
        "--code-mode",
        "soft",
    ]);
    for expected in ["config\tK\t4\n", "config\tt0\t2.0\n", "config\tschedule\tconstant\n", "config\tcode_mode\tsoft\n", "config\tlr\t0.01\n"] {
        assert!(out.contains(expected), "missing {expected:?} in {out}");
    }
    let first_non_config = out.lines().position(|l| !l.starts_with("config\t")).unwrap();
    assert!(out.lines().skip(first_non_config).all(|l| !l.starts_with("config\t")));
    assert_eq!(out.lines().filter(|l| l.starts_with("epoch\t")).count(), 2);
    assert!(out.contains("temperature\t2.0\t"));
}

fn learn_small(w: &Work) -> f64 {
    w.synthetic(400, 8);
    ok(&[
        "learn-codes",
        "--embeddings",
        &w.s("emb.txt"),
        "--out-dir",
        &w.s("learn"),
        "--K",
        "8",
        "--D",
        "3",
        "--epochs",
        "15",
        "--lr",
        "0.003",
        "--seed",
        "2",
    ]);
    report_value(&w.path("learn/report.tsv"), "final_loss")
}

#[test]
fn retrain_matches_extraction_and_beats_shuffled_codes() {
    let w = Work::new();
    let extraction = learn_small(&w);
    let retrain = |codebook: &str, out: &str| {
        ok(&[
            "retrain",
            "--embeddings",
            &w.s("emb.txt"),
            "--codebook",
            &w.s(codebook),
            "--out-dir",
            &w.s(out),
            "--epochs",
            "15",
            "--lr",
            "0.003",
            "--seed",
            "2",
        ]);
        report_value(&w.path(&format!("{out}/retrain_report.tsv")), "final_loss")
    };
    let learned = retrain("learn/codebook.tsv", "r1");
    assert!(learned <= 2.0 * extraction, "retrain {learned} vs extraction {extraction}");

    // Same codes, dealt to the wrong symbols.
    let book = data::load_codebook(w.path("learn/codebook.tsv")).unwrap();
    let n = book.len();
    let mut shuffled: Vec<usize> = Vec::new();
    for i in 0..n {
        shuffled.extend_from_slice(book.code((i * 37 + 11) % n));
    }
    let labels = book.labels().unwrap().to_vec();
    let shuffled = CodeBook::new(book.spec(), shuffled).unwrap().with_labels(labels).unwrap();
    data::save_codebook(w.path("shuffled.tsv"), &shuffled).unwrap();
    let random = retrain("shuffled.tsv", "r2");
    assert!(learned < random, "learned {learned} vs shuffled {random}");
}

#[test]
fn retrain_zero_epochs_reports_initial_loss() {
    let w = Work::new();
    learn_small(&w);
    ok(&["retrain", "--embeddings", &w.s("emb.txt"), "--codebook", &w.s("learn/codebook.tsv"), "--out-dir", &w.s("r"), "--epochs", "0"]);
    let report = Report::load(w.path("r/retrain_report.tsv")).unwrap();
    assert_eq!(report.get("initial_loss"), report.get("final_loss"));
    assert!(data::load_checkpoint(w.path("r/retrain_checkpoint.kdc")).unwrap().logits.is_none());
}

#[test]
fn retrain_rejects_symbol_count_mismatch() {
    let w = Work::new();
    learn_small(&w);
    ok(&["gen-synthetic", "--num-points", "100", "--num-clusters", "4", "--out", &w.s("other.txt"), "--labels-out", &w.s("other.tsv")]);
    let err = fails(&["retrain", "--embeddings", &w.s("other.txt"), "--codebook", &w.s("learn/codebook.tsv"), "--out-dir", &w.s("r")]);
    assert!(err.contains("400") && err.contains("100"), "{err}");
}

#[test]
fn evaluate_identity_reconstruction() {
    let w = Work::new();
    let rows = vec![vec![1.0, 0.0, 0.5], vec![0.0, 2.0, -1.0], vec![-3.0, 1.0, 0.0], vec![0.5, 0.5, 4.0]];
    let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let emb = kdcode::EmbeddingMatrix::new(Matrix::from_rows(&rows).unwrap(), Some(labels.clone())).unwrap();
    data::save_embeddings_text(w.path("emb.txt"), &emb).unwrap();
    let spec = KdSpec::new(4, 1, 4).unwrap();
    let book = CodeBook::new(spec, vec![0, 1, 2, 3]).unwrap().with_labels(labels).unwrap();
    data::save_codebook(w.path("book.tsv"), &book).unwrap();
    let model = KdModel::new(
        CodeEmbeddingTables::new(vec![Matrix::from_rows(&rows).unwrap()]).unwrap(),
        ComposerParams::Linear(LinearComposerParams { h: Matrix::identity(3) }),
    )
    .unwrap();
    data::save_checkpoint(w.path("model.kdc"), &Checkpoint { model, logits: None }).unwrap();

    let out = ok(&[
        "evaluate",
        "--embeddings",
        &w.s("emb.txt"),
        "--codebook",
        &w.s("book.tsv"),
        "--checkpoint",
        &w.s("model.kdc"),
        "--nn-k",
        "2",
        "--report-out",
        &w.s("eval.tsv"),
    ]);
    let report = Report::parse(&out);
    assert_eq!(report.get("reconstruction_loss"), Some("0.0"));
    assert_eq!(report.get("neighbor_preservation@2"), Some("1.0"));
    assert_eq!(report.get("conventional_baseline"), Some("12"));
    assert_eq!(report.get("code_embedding_params"), Some("12"));
    assert_eq!(report.get("composer_params"), Some("9"));
    assert!(report.get("nmi").is_none());
    assert_eq!(Report::load(w.path("eval.tsv")).unwrap().get("reconstruction_loss"), Some("0.0"));
}

#[test]
fn evaluate_with_labels_reports_nmi() {
    let w = Work::new();
    learn_small(&w);
    let args = [
        "evaluate",
        "--embeddings",
        &w.s("emb.txt"),
        "--codebook",
        &w.s("learn/codebook.tsv"),
        "--checkpoint",
        &w.s("learn/checkpoint.kdc"),
    ];
    let err = fails(&[&args[..], &["--nmi"]].concat());
    assert!(err.contains("--labels"), "{err}");
    let labels = w.s("labels.tsv");
    let out = ok(&[&args[..], &["--nmi", "--labels", &labels, "--nmi-norm", "max"]].concat());
    let v: f64 = Report::parse(&out).get("nmi").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));
    let loss: f64 = Report::parse(&out).get("mean_reconstruction_loss").unwrap().parse().unwrap();
    let learned = report_value(&w.path("learn/report.tsv"), "final_loss");
    assert!((loss - learned).abs() <= 1e-9 * learned.max(1.0), "{loss} vs {learned}");
}

#[test]
fn inspect_groups_and_filter() {
    let w = Work::new();
    let spec = KdSpec::new(6, 4, 3).unwrap();
    let book = CodeBook::new(spec, vec![3, 1, 0, 4, 3, 1, 0, 4, 0, 0, 0, 1])
        .unwrap()
        .with_labels(vec!["monday".into(), "tuesday".into(), "up".into()])
        .unwrap();
    data::save_codebook(w.path("book.tsv"), &book).unwrap();
    let all = ok(&["inspect", "--codebook", &w.s("book.tsv")]);
    assert!(all.contains("3-1-0-4\t2\tmonday tuesday\n"), "{all}");
    assert!(all.contains("0-0-0-1\t1\tup\n"));
    let filtered = ok(&["inspect", "--codebook", &w.s("book.tsv"), "--min-group-size", "2"]);
    assert!(filtered.contains("3-1-0-4") && !filtered.contains("0-0-0-1"));
    assert_eq!(all, ok(&["inspect", "--codebook", &w.s("book.tsv")]));
}

#[test]
fn inspect_requires_labels() {
    let w = Work::new();
    let book = CodeBook::new(KdSpec::new(2, 2, 2).unwrap(), vec![0, 1, 1, 0]).unwrap();
    data::save_codebook(w.path("book.tsv"), &book).unwrap();
    let err = fails(&["inspect", "--codebook", &w.s("book.tsv")]);
    assert!(err.contains("labels"), "{err}");
}

#[test]
fn param_count_table_row() {
    let out = ok(&["param-count", "--N", "10000", "--d", "200", "--K", "50", "--D", "10", "--dprime", "200", "--composer", "linear"]);
    let r = Report::parse(&out);
    assert_eq!(r.get("conventional_baseline"), Some("2000000"));
    assert_eq!(r.get("code_embedding_params"), Some("100000"));
    assert_eq!(r.get("rate_code_only"), Some("0.05"));
    assert_eq!(r.get("composer_params"), Some("40000"));
}

#[test]
fn param_count_lstm_matches_enumeration() {
    let (dp, d) = (7usize, 5usize);
    let lin = Report::parse(&ok(&["param-count", "--N", "100", "--d", "5", "--K", "10", "--D", "2", "--dprime", "7", "--composer", "linear"]));
    let lstm = Report::parse(&ok(&["param-count", "--N", "100", "--d", "5", "--K", "10", "--D", "2", "--dprime", "7", "--composer", "lstm"]));
    let composer = |r: &Report| r.get("composer_params").unwrap().parse::<usize>().unwrap();
    let enumerated = ComposerParams::zeros(ComposerVariant::Lstm, dp, d).param_count();
    assert_eq!(composer(&lstm), enumerated);
    assert_eq!(composer(&lstm) - composer(&lin), 4 * (dp * dp + dp));
}

#[test]
fn param_count_missing_flag_is_usage_error() {
    let out = kdcode(&["param-count", "--N", "100", "--d", "5", "--K", "10"]);
    assert_eq!(out.status.code(), Some(2));
}
