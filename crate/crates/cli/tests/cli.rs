use std::path::Path;
use std::process::{Command, Output};

fn savehr(run_dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_savehr"));
    cmd.args(args).arg("--run-dir").arg(run_dir);
    for kv in ["n_patients=600", "epochs=2", "patience=0"] {
        cmd.args(["--set", kv]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let gen = ok(&savehr(&run, &["gen"]));
    assert!(gen.contains("cond3: planted pairs"));
    assert!(run.join("p1.pop").exists() && run.join("p2.pop").exists());
    assert!(read(run.join("gen.manifest")).contains("# output: p1.pop sha256="));

    let table = ok(&savehr(&run, &["cohort"]));
    assert!(table.contains("case : control"));
    for name in ["Training (P1)", "Validation (P1)", "Internal Test (P1)", "External Test (P2)"] {
        assert!(table.contains(name), "{table}");
    }
    let vocab_line = |f: &str| read(run.join("cond0").join(f)).lines().nth(1).unwrap().to_string();
    assert_eq!(vocab_line("p2.cohort"), vocab_line("p1_train.cohort"));

    ok(&savehr(&run, &["train"]));
    assert!(read(run.join("cond0/SAVEHR/train.log")).starts_with("epoch\ttrain_loss\tval_loss\tval_auc_pr"));
    let report = ok(&savehr(&run, &["eval"]));
    assert!(report.contains("population = P2"));
    let csv = read(run.join("cond0/SAVEHR/eval.csv"));
    assert_eq!(csv.lines().count(), 3);

    let id = read(run.join("cond0/p1_test.cohort")).lines().nth(2).unwrap().split('\t').next().unwrap().to_string();
    let text = ok(&savehr(&run, &["explain", "--patient", &id]));
    assert!(text.contains("T4"));
    let explain = run.join("cond0/SAVEHR/explain");
    for f in ["population.csv", "quarters.txt", "explain.manifest"] {
        assert!(explain.join(f).exists(), "{f}");
    }
    for q in 1..=4 {
        assert!(explain.join(format!("patient_{id}_t{q}.csv")).exists());
    }

    let unknown = savehr(&run, &["explain", "--force", "--patient", "4000000"]);
    assert_eq!(unknown.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("lookup"));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    ok(&savehr(dir.path(), &["gen"]));
    let before = read(dir.path().join("p1.pop"));
    let again = savehr(dir.path(), &["gen"]);
    assert_eq!(again.status.code(), Some(2));
    ok(&savehr(dir.path(), &["gen", "--force"]));
    assert_eq!(read(dir.path().join("p1.pop")), before);
}

#[test]
fn config_errors_exit_2_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    for args in [
        vec!["gen", "--set", "learning_rate=1"],
        vec!["gen", "--shift", "sideways"],
        vec!["gen", "--set", "seed=lots"],
        vec!["train", "--set", "model=GPT"],
    ] {
        let out = savehr(&run, &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(!run.exists());

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nnot a setting\n").unwrap();
    let out = savehr(&run, &["gen", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.cfg:2"));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(savehr(dir.path(), &["cohort"]).status.code(), Some(3));
}

#[test]
fn shift_none_matches_p1_distribution_and_manifest_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&savehr(&a, &["gen", "--shift", "none"]));
    let manifest = a.join("gen.manifest");
    assert!(read(&manifest).contains("shift = none"));
    let p1 = read(a.join("p1.pop"));
    let p2 = read(a.join("p2.pop"));
    assert_ne!(p1, p2);
    // No aliasing without a shift: P2 uses only codes P1 can produce.
    assert!(!p2.contains("C1000000"));

    let b = dir.path().join("b");
    ok(&savehr(&b, &["gen", "--config", manifest.to_str().unwrap()]));
    for f in ["p1.pop", "p2.pop", "gen.manifest"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
}

#[test]
fn eval_rejects_checkpoint_from_other_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path();
    ok(&savehr(run, &["gen"]));
    ok(&savehr(run, &["cohort"]));
    ok(&savehr(run, &["train", "--set", "model=LR"]));
    ok(&savehr(run, &["cohort", "--force", "--set", "min_code_occurrences=150"]));
    let out = savehr(run, &["eval", "--set", "model=LR", "--set", "min_code_occurrences=150"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));
}

#[test]
fn eval_with_cross_validation_reports_fold_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path();
    ok(&savehr(run, &["gen"]));
    ok(&savehr(run, &["cohort"]));
    ok(&savehr(run, &["train", "--set", "model=LR"]));
    let text = ok(&savehr(run, &["eval", "--cv", "3", "--set", "model=LR"]));
    assert!(text.contains("cv_folds = 3"));
    let csv = read(run.join("cond0/LR/eval.csv"));
    let p1 = csv.lines().find(|l| l.contains(",P1,")).unwrap();
    assert!(p1.split(',').nth(8).is_some_and(|v| !v.is_empty()));
}
