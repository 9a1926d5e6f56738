use std::path::Path;
use std::process::{Command, Output};

use kar_core::pipeline::synthetic::{write_movielens_like, MovieLensLikeConfig};

fn kar(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kar"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    write_movielens_like(
        &data,
        &MovieLensLikeConfig {
            users: 25,
            movies: 100,
            mean_extra_ratings: 5.0,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = dir.join("kar.conf");
    let text = format!(
        "# small run\ndata_dir = {}\nwork_dir = {}\nencoder_dim = 16\nembed_dim = 8\naug_dim = 8\n\
         mlp = 16, 8\nattention = 8\nadaptor_hidden = 16\nepochs = 1\nbatch_size = 64\n\
         bench_batches = 2\nbench_warmup = 1\nbench_batch_size = 16\n",
        data.display(),
        dir.join("run").display()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn every_subcommand_runs_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    for (args, expect) in [
        (vec!["prepare-data"], "prepare-data:"),
        (vec!["elicit-factors"], "critical acclaim"),
        (vec!["gen-prompts"], "gen-prompts:"),
        (vec!["gen-knowledge"], "gen-knowledge:"),
        (vec!["encode"], "encode:"),
        (vec!["train"], "train: din both"),
        (vec!["train", "--mode", "none"], "train: din none"),
        (vec!["export-augmented"], "export-augmented:"),
        (vec!["bench"], "kar_with_adaptor"),
        (vec!["ablate", "--set", "backbone=deepfm"], "reasoning"),
    ] {
        let out = kar(&args, Some(&cfg));
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(stdout(&out).contains(expect), "{args:?}: {}", stdout(&out));
    }
    assert!(dir.path().join("run/model-din-both.karc").exists());
    assert!(dir.path().join("run/report.jsonl").exists());
}

#[test]
fn run_executes_configured_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = kar(&["run", "--set", "stages=prepare-data,gen-prompts", "--seed", "5"], Some(&cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 2);
    assert!(dir.path().join("run/prompts.jsonl").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "colour = red\n").unwrap();
    assert_eq!(kar(&["train"], Some(&bad)).status.code(), Some(2));
    assert_eq!(kar(&["train", "--set", "epochs"], None).status.code(), Some(2));
    assert_eq!(kar(&["train", "--mode", "maybe"], None).status.code(), Some(2));
    assert_eq!(kar(&["train"], Some(&dir.path().join("missing.conf"))).status.code(), Some(2));
}

#[test]
fn missing_data_exits_3_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nowhere");
    let out = kar(
        &["prepare-data", "--data-dir", data.to_str().unwrap(), "--work-dir", dir.path().to_str().unwrap()],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ratings.dat"));
}
