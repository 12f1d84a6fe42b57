use std::fs;

use imbnas::adapt::ProcedureKind;
use imbnas::harness::config::ExperimentConfig;
use imbnas::harness::experiment::{
    build_target, load_source, prepare, read_jsonl, run_experiment, source_dir, SummaryRecord, SUMMARY_FILE,
};
use imbnas::supernet::Checkpoint;

const SMOKE: &str = include_str!("../../../configs/smoke.toml");

fn smoke() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMOKE).unwrap()
}

#[test]
fn smoke_experiment_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let manifest = run_experiment(&cfg, dir.path()).unwrap();
    assert!(!manifest.failed(), "{:?}", manifest.phases);

    for name in ["config.toml", "manifest.json", "summary.csv", "comparison.csv", SUMMARY_FILE] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let records: Vec<SummaryRecord> = read_jsonl(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(records.len(), cfg.seeds.len() * cfg.profiles.len() * ProcedureKind::ALL.len());
    for r in &records {
        assert!((0.0..=1.0).contains(&r.run.accuracy));
        assert!(r.run.updates > 0);
    }

    let table = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "procedure,balance,exponential(0.1)");
    assert_eq!(lines[1..].iter().map(|l| &l[..2]).collect::<Vec<_>>(), ["P0", "P1", "P2", "P3"]);

    let run = dir.path().join("runs/1-exponential-0.1/p2/seed1");
    for name in ["config.toml", "seed", "metrics.jsonl", "history.jsonl", "checkpoint.ckpt", "summary.json"] {
        assert!(run.join(name).is_file(), "{name}");
    }
    Checkpoint::read(&run.join("checkpoint.ckpt")).unwrap();
    assert!(dir.path().join("rank/seed0.json").is_file());
    assert!(dir.path().join("splits/histograms.json").is_file());
}

#[test]
fn rerun_reproduces_summary_and_checkpoints() {
    let cfg = smoke();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for name in ["summary.csv", "comparison.csv", "rank/seed1.json", "source/seed0/supernet.ckpt"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
    let ckpt = "runs/0-balance/p3/seed0/checkpoint.ckpt";
    assert_eq!(fs::read(a.path().join(ckpt)).unwrap(), fs::read(b.path().join(ckpt)).unwrap());
}

#[test]
fn saved_source_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.seeds = vec![3];
    cfg.adapt.procedures = vec![ProcedureKind::P1];
    cfg.rank = None;
    run_experiment(&cfg, dir.path()).unwrap();
    let source = load_source(&source_dir(dir.path(), 3)).unwrap();
    assert_eq!(source.outcome.top.len(), cfg.evo.top_k);
    let prepared = prepare(&cfg).unwrap();
    let target = build_target(&cfg, &prepared, 1, 3).unwrap();
    let counts = target.hist.counts().to_vec();
    assert_eq!(counts, vec![40, 18, 8, 4]);
}

#[test]
fn unknown_key_is_reported() {
    let bad = SMOKE.replace("[evo]\n", "[evo]\npopulation_size = 9\n");
    let err = ExperimentConfig::from_toml(&bad).unwrap_err().to_string();
    assert!(err.contains("population_size"), "{err}");
}

#[test]
fn invalid_config_fails_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.seeds.clear();
    assert!(run_experiment(&cfg, dir.path()).is_err());
    assert!(!dir.path().join(SUMMARY_FILE).exists());
}
