//! End-to-end tests of the `tllfm` binary: documented file outputs, exit
//! code categories, determinism, and interrupt checkpointing.

use std::path::Path;
use std::process::{Command, Stdio};

use tllfm_core::{load_model, ModelArtifact};

fn tllfm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tllfm"))
}

fn line_count(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn simulate_writes_documented_row_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    for out in [&first, &second] {
        let status = tllfm()
            .args(["simulate", "--ratio", "700:2800", "--seed", "7", "--out-dir"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    // Header line plus data rows.
    assert_eq!(line_count(&first.join("train.csv")), 3501);
    assert_eq!(line_count(&first.join("test-target.csv")), 301);
    assert_eq!(line_count(&first.join("test-source.csv")), 1201);
    for name in ["train.csv", "train.meta.json", "test-target.csv", "test-source.csv", "truth.json"]
    {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    let other = dir.path().join("c");
    let status = tllfm()
        .args(["simulate", "--ratio", "500:2500", "--seed", "7", "--out-dir"])
        .arg(&other)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(line_count(&other.join("train.csv")), 3001);
    assert_eq!(line_count(&other.join("test-target.csv")), 501);
    assert_eq!(line_count(&other.join("test-source.csv")), 1501);
}

#[test]
fn usage_errors_exit_with_code_one() {
    let out = tllfm().args(["simulate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = tllfm().output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing subcommand is a usage error");

    let dir = tempfile::tempdir().unwrap();
    let out = tllfm()
        .args(["simulate", "--ratio", "banana", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "unparseable ratio is a usage error");

    let out = tllfm().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "--help is not an error");
}

/// The full documented pipeline: simulate, fit both model families, predict,
/// evaluate. Uses a small cohort so the Gibbs fits stay quick.
#[test]
fn fit_predict_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = tllfm()
        .args([
            "simulate",
            "--ratio",
            "60:140",
            "--seed",
            "3",
            "--n-total",
            "300",
            "--n-target",
            "80",
            "--p",
            "10",
            "--k-true",
            "3",
            "--out-dir",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let tl_model = dir.path().join("tl.model");
    let status = tllfm()
        .args(["fit", "--model", "tl-lfm", "--k", "3", "--iters", "240", "--burnin", "80"])
        .args(["--seed", "5", "--data"])
        .arg(data.join("train.csv"))
        .arg("--out")
        .arg(&tl_model)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(matches!(load_model(&tl_model).unwrap(), ModelArtifact::Posterior(_)));

    let scores = dir.path().join("scores.csv");
    let status = tllfm()
        .args(["predict", "--pop", "target", "--model"])
        .arg(&tl_model)
        .arg("--data")
        .arg(data.join("test-target.csv"))
        .arg("--out")
        .arg(&scores)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("row,prob\n"));
    assert_eq!(text.lines().count(), 21, "20 scored rows plus the header");

    let out = tllfm()
        .args(["evaluate", "--scores"])
        .arg(&scores)
        .arg("--labels")
        .arg(data.join("test-target.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("auroc"), "report missing AUROC: {stdout}");
    assert!(stdout.contains("n          20"), "report missing count: {stdout}");

    // Same pipeline through the lasso baseline.
    let lasso_model = dir.path().join("lasso.model");
    let status = tllfm()
        .args(["fit", "--model", "lasso", "--seed", "5", "--data"])
        .arg(data.join("train.csv"))
        .arg("--out")
        .arg(&lasso_model)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(matches!(load_model(&lasso_model).unwrap(), ModelArtifact::Lasso(_)));
    let status = tllfm()
        .args(["predict", "--model"])
        .arg(&lasso_model)
        .arg("--data")
        .arg(data.join("test-target.csv"))
        .arg("--out")
        .arg(&scores)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn data_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let narrow = dir.path().join("narrow");
    for (out, p) in [(&data, "10"), (&narrow, "12")] {
        let status = tllfm()
            .args(["simulate", "--ratio", "60:140", "--seed", "3", "--n-total", "300"])
            .args(["--n-target", "80", "--p", p, "--k-true", "3", "--out-dir"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let model = dir.path().join("tl.model");
    let status = tllfm()
        .args(["fit", "--model", "tl-lfm", "--k", "3", "--iters", "60", "--burnin", "20"])
        .arg("--data")
        .arg(data.join("train.csv"))
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert!(status.success());

    // Scoring data with a different covariate schema.
    let out = tllfm()
        .args(["predict", "--model"])
        .arg(&model)
        .arg("--data")
        .arg(narrow.join("test-target.csv"))
        .arg("--out")
        .arg(dir.path().join("scores.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("schema"), "unexpected message: {stderr}");

    // Missing input file.
    let out = tllfm()
        .args(["fit", "--model", "lasso", "--data", "/nonexistent/train.csv", "--out"])
        .arg(dir.path().join("x.model"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_reports_exact_auroc_on_known_scores() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let labels = dir.path().join("labels.csv");
    std::fs::write(&scores, "row,prob\n0,0.1\n1,0.9\n2,0.2\n3,0.8\n").unwrap();
    std::fs::write(&labels, "__y\n0\n1\n0\n1\n").unwrap();
    let out = tllfm()
        .args(["evaluate", "--scores"])
        .arg(&scores)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("auroc      1.000000"), "expected perfect AUROC: {stdout}");
}

/// SIGINT must produce exit 130 and a loadable partial checkpoint.
#[test]
fn interrupt_writes_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let status = tllfm()
        .args(["simulate", "--ratio", "60:140", "--seed", "3", "--n-total", "300"])
        .args(["--n-target", "80", "--p", "10", "--k-true", "3", "--out-dir"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let model = dir.path().join("tl.model");
    let mut child = tllfm()
        .args(["fit", "--model", "tl-lfm", "--k", "3", "--iters", "2000000"])
        .args(["--burnin", "50", "--thin", "1", "--data"])
        .arg(data.join("train.csv"))
        .arg("--out")
        .arg(&model)
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    // Give the chain time to pass burn-in and retain a few states.
    std::thread::sleep(std::time::Duration::from_secs(3));
    unsafe {
        libc::kill(child.id() as libc::c_int, libc::SIGINT);
    }
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(130), "interrupt exit code");
    match load_model(&model).unwrap() {
        ModelArtifact::Posterior(samples) => {
            assert!(samples.interrupted);
            assert!(samples.n_states() > 0, "no retained states before interrupt");
            assert!(samples.chains[0].sweeps_completed < 2_000_000);
        }
        ModelArtifact::Lasso(_) => panic!("expected a posterior model"),
    }
}

/// A small end-to-end experiment writes the report pair and one scatter per
/// ratio, and reruns byte-identically.
#[test]
fn experiment_writes_reports_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let status = tllfm()
            .args(["experiment", "--ratios", "60:140", "--repeats", "1", "--seed", "9"])
            .args(["--k", "4", "--iters", "150", "--burnin", "50", "--out"])
            .arg(out)
            .stderr(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    }
    let report = std::fs::read_to_string(out_a.join("report.txt")).unwrap();
    assert!(report.contains("TL-LFM"), "report missing methods: {report}");
    assert!(out_a.join("scatter-60-140.svg").exists());
    for name in ["report.json", "report.txt", "scatter-60-140.svg"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}
