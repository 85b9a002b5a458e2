use std::path::Path;
use std::process::{Command, Output};

use strokerisk::learn::{Family, ModelSpec};
use strokerisk::pipeline::{DataSource, PipelineConfig};

fn strokerisk(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strokerisk")).args(args).env("STROKERISK_OUTPUT_ROOT", root).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = strokerisk(dir.path(), &["--help"]);
    assert!(out.status.success());
    let help = text(&out.stdout);
    for c in ["synth", "table1", "preprocess", "select", "tune", "train", "evaluate", "explain", "ablate", "run-all", "score"] {
        assert!(help.contains(c), "{c}");
    }
}

#[test]
fn synth_csv_run_and_score() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = strokerisk(root, &["synth", "--seed", "5"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = root.join("cohort-seed-5.csv");
    let source: DataSource = serde_json::from_str(&std::fs::read_to_string(root.join("cohort-seed-5.schema.json")).unwrap()).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.data = source;
    cfg.models.families = vec![ModelSpec::default_for(Family::Logreg)];
    cfg.eval.n_boot = 100;
    cfg.explain.n_explain = 50;
    cfg.explain.background = 20;
    cfg.explain.coalitions = 256;
    let cfg_path = root.join("config.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();

    let run = root.join("run");
    let out = strokerisk(root, &["run-all", "--config", cfg_path.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("logreg\tAUC"), "{stdout}");
    assert!(stdout.contains("without cci"), "{stdout}");
    for f in ["manifest.json", "models/logreg.json", "explain/ablations.tsv", "plots/path.svg"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let scores = root.join("scores.tsv");
    let model = run.join("models/logreg.json");
    let out = strokerisk(root, &["score", "--model", model.to_str().unwrap(), "--input", csv.to_str().unwrap(), "--output", scores.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let body = std::fs::read_to_string(&scores).unwrap();
    let n_csv = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(body.lines().count(), n_csv);
    for line in body.lines().skip(1) {
        let p: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&p), "{line}");
    }

    // The same model scored to stdout matches the file.
    let out = strokerisk(root, &["score", "--model", model.to_str().unwrap(), "--input", csv.to_str().unwrap()]);
    assert_eq!(text(&out.stdout), body);
}

#[test]
fn failures_exit_nonzero_with_the_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let bad = root.join("bad.json");
    std::fs::write(&bad, "{\"version\": 7}").unwrap();
    let out = strokerisk(root, &["table1", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("error[PlanVersionMismatch]"), "{}", text(&out.stderr));

    let out = strokerisk(root, &["score", "--model", root.join("absent.json").to_str().unwrap(), "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).starts_with("error[Io]"), "{}", text(&out.stderr));
}
