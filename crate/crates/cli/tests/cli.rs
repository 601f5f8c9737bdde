use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json")
}

fn itlm(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_itlm"))
        .arg("--config")
        .arg(smoke_config())
        .arg("--out")
        .arg(out)
        .args(args)
        .env("ITLM_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_2_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"tiles": {"size": 64, "strid": 48}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_itlm"))
        .arg("--config")
        .arg(&cfg)
        .arg("synth")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strid"), "{}", stderr(&o));
}

#[test]
fn zero_threads_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = itlm(dir.path(), &["--threads", "0", "synth"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = itlm(dir.path(), &["train", "--stage", "pretrain"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("index.json"), "{}", stderr(&o));
}

#[test]
fn defaults_round_trip_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_itlm")).arg("defaults").output().unwrap();
    assert!(o.status.success());
    let cfg = dir.path().join("defaults.json");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let parsed = itlm_cli::RunConfig::load(&cfg).unwrap();
    assert_eq!(parsed, itlm_cli::RunConfig::default());
}

#[test]
fn staged_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    assert!(itlm(out, &["synth"]).status.success());

    // Same configuration again is fine; a different one conflicts.
    assert!(itlm(out, &["synth"]).status.success());
    let o = itlm(out, &["--seed", "8", "synth"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(itlm(out, &["--seed", "8", "--force", "synth"]).status.success());
    assert!(itlm(out, &["--force", "synth"]).status.success());

    let o = itlm(out, &["train", "--stage", "finetune"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("clp.itlm"), "{}", stderr(&o));

    let o = itlm(out, &["train", "--stage", "bogus"]);
    assert_eq!(o.status.code(), Some(2));

    assert!(itlm(out, &["train", "--stage", "pretrain"]).status.success());
    assert!(itlm(out, &["train", "--stage", "finetune"]).status.success());
    for stage in ["pretrain", "finetune"] {
        for task in ["clp", "cth", "cer", "cot"] {
            assert!(out.join("weights").join(stage).join(format!("{task}.itlm")).is_file(), "{stage}/{task}");
            let csv = std::fs::read_to_string(out.join("train").join(format!("loss_{stage}_{task}.csv"))).unwrap();
            // One row per epoch; the smoke config trains one epoch per stage.
            assert_eq!(csv.lines().count(), 2, "{stage}/{task}:\n{csv}");
        }
    }

    let o = itlm(out, &["infer", "--with-rf"]);
    assert_eq!(o.status.code(), Some(3), "forests are not trained yet");
    assert!(itlm(out, &["train", "--stage", "rf"]).status.success());
    let o = itlm(out, &["infer", "--with-rf"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("itlm_s") && stdout.contains("rf_s"), "{stdout}");
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("pred/timing_itlm.json")).unwrap()).unwrap();
    for key in ["itlm_s", "rf_s", "rf_over_itlm"] {
        assert!(timing[key].as_f64().is_some_and(|v| v > 0.0), "{key}: {timing}");
    }

    for reference in ["truth", "source", "target", "track"] {
        let o = itlm(out, &["eval", "--reference", reference]);
        assert!(o.status.success(), "{reference}: {}", stderr(&o));
        assert!(out.join("reports").join(format!("eval_{reference}.csv")).is_file());
    }
    let csv = std::fs::read_to_string(out.join("reports/eval_truth.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "product,reference,variable,n,oa_pct,r,mae,mbe,rmse");
    assert!(csv.lines().any(|l| l.starts_with("rf,truth,cth,")));
    let strata = std::fs::read_to_string(out.join("reports/strata_track.csv")).unwrap();
    assert!(strata.lines().count() > 1, "{strata}");

    let o = itlm(out, &["climo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_dir(out.join("climo")).unwrap().count() > 0);
}
