use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cl2gen_core::metrics::EvalReport;
use cl2gen_core::motion::dataset_from_json;
use cl2gen_core::trainer::RunLog;
use tempfile::TempDir;

fn cl2gen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cl2gen")).args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let out = cl2gen(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf8 path")
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

const SMALL: &str = "epochs_per_task = 2\nsamples_per_class = 6\nrepetitions = 2\nclassifier_epochs = 4\n";

fn trained(mode: &str) -> Run {
    let run = Run {
        dir: tempfile::tempdir().expect("tempdir"),
    };
    std::fs::write(run.path("c.toml"), SMALL).expect("config");
    ok(&["prepare-data", "--synth", "classes=4,per_class=8,seed=2,min_len=20,max_len=30", "--out", s(&run.path("d.json"))]);
    ok(&[
        "train",
        "--mode",
        mode,
        "--config",
        s(&run.path("c.toml")),
        "--data",
        s(&run.path("d.json")),
        "--out",
        s(&run.path("run")),
    ]);
    run
}

#[test]
fn prepare_data_reports_counts_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.json");
    let text = ok(&["prepare-data", "--synth", "classes=3,per_class=5,seed=1", "--out", s(&out)]);
    assert!(text.contains("15 sequences, 3 classes"));
    let ds = dataset_from_json::<f64>(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(ds.count_per_class(), vec![5, 5, 5]);

    let again = dir.path().join("e.json");
    ok(&["prepare-data", "--input", s(&out), "--out", s(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn missing_input_and_bad_config_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cl2gen(&["prepare-data", "--input", "/nonexistent/d.json", "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/d.json"));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let data = dir.path().join("d.json");
    ok(&["prepare-data", "--synth", "classes=2,per_class=3,seed=1", "--out", s(&data)]);
    let bad = cl2gen(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_writes_verifiable_artifacts() {
    let run = trained("cl2gen");
    let manifest = run.path("run/manifest.json");
    assert!(ok(&["verify", "--manifest", s(&manifest)]).contains("verified"));

    let log: RunLog = serde_json::from_str(&std::fs::read_to_string(run.path("run/runlog.json")).unwrap()).unwrap();
    assert_eq!(log.tasks.len(), 2);
    assert_eq!(log.accuracy_matrix.len(), 2);

    std::fs::write(run.path("run/loss_task_1.csv"), "tampered").unwrap();
    let out = cl2gen(&["verify", "--manifest", s(&manifest)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss_task_1.csv"));
}

#[test]
fn generate_is_deterministic_and_checks_the_class() {
    let run = trained("cl2gen");
    let ck = run.path("run/checkpoints/task_2.json");
    let a = run.path("a.json");
    let b = run.path("b.json");
    ok(&["generate", "--checkpoint", s(&ck), "--class", "motion_02", "--count", "3", "--seed", "4", "--out", s(&a)]);
    ok(&["generate", "--checkpoint", s(&ck), "--class", "2", "--count", "3", "--seed", "4", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let ds = dataset_from_json::<f32>(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(ds.sequences.len(), 3);
    assert!(ds.sequences.iter().all(|q| q.len() == 60 && q.label == 2));

    let out = cl2gen(&["generate", "--checkpoint", s(&ck), "--class", "jump", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("motion_00, motion_01, motion_02, motion_03"));
}

#[test]
fn offline_report_has_one_row() {
    let run = trained("offline");
    let table = ok(&["report", "--runlog", s(&run.path("run/runlog.json")), "--out", s(&run.path("rep"))]);
    let rows: Vec<&str> = table.lines().skip(2).filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 1, "{table}");
    for f in ["summary.txt", "accuracy_curves.csv", "accuracy_curves.svg"] {
        assert!(run.path("rep").join(f).exists(), "{f}");
    }
    let svg = std::fs::read_to_string(run.path("rep/accuracy_curves.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn evaluate_reports_intervals() {
    let run = trained("cl2gen");
    let proto = run.path("p.toml");
    std::fs::write(&proto, "samples_per_class = 6\n").unwrap();
    let out = run.path("e.json");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&run.path("run/checkpoints/task_2.json")),
        "--classifier",
        s(&run.path("run/classifier.json")),
        "--data",
        s(&run.path("d.json")),
        "--protocol",
        s(&proto),
        "--repetitions",
        "2",
        "--out",
        s(&out),
    ]);
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.repetitions, 2);
    assert!(!report.ci_degenerate);
    assert!(report.fid.ci95.is_finite() && report.fid.ci95 > 0.0);
    assert_eq!(report.classes, vec![0, 1, 2, 3]);

    let gt = run.path("gt.json");
    ok(&[
        "evaluate",
        "--classifier",
        s(&run.path("run/classifier.json")),
        "--data",
        s(&run.path("d.json")),
        "--protocol",
        s(&proto),
        "--repetitions",
        "1",
        "--out",
        s(&gt),
    ]);
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(&gt).unwrap()).unwrap();
    assert!(report.ci_degenerate);
    assert_eq!(report.accuracy.ci95, 0.0);
}
