//! End-to-end orchestration: data splits, source super-network, adaptation
//! runs, rank analysis and the run directory layout.
//!
//! ```text
//! <out>/config.toml
//! <out>/manifest.json
//! <out>/splits/histograms.json
//! <out>/splits/<profile>/seed<S>.idx
//! <out>/source/seed<S>/{supernet.ckpt, metrics.jsonl, history.jsonl, results.json}
//! <out>/runs/<profile>/<procedure>/seed<S>/{config.toml, seed, metrics.jsonl,
//!                                          history.jsonl, checkpoint.ckpt, summary.json}
//! <out>/rank/seed<S>.json
//! <out>/summary.jsonl
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, LoadedData};
use super::correlation::RankReport;
use super::data::{stratified_holdout, Normalization};
use crate::adapt::{run_procedure, AdaptationRun, ProcedureKind, RunSummary, SearchArtifacts, TargetData};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::{
    longtail_counts, subsample_indices, write_split_index, ClassHistogram, LongTailProfile, SplitHeader,
};
use crate::rng::{derive_seed, fork, purpose, stream, RandomStream};
use crate::search::{evolve, write_history, write_results, read_results, GenerationRecord, ScoredGenotype, SearchOutcome};
use crate::space::{Genotype, SearchSpace};
use crate::supernet::{init_supernet, train_supernet, Checkpoint, EpochRecord, Subnet, SuperNetwork, TrainLog};

pub const SUMMARY_FILE: &str = "summary.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTOGRAM_FILE: &str = "histograms.json";
const SOURCE_TAG: u64 = u64::MAX;

/// Datasets and space of an experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub space: SearchSpace,
    pub source: LoadedData,
    pub target: LoadedData,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let source = cfg.source.load()?;
    let target = match &cfg.target {
        Some(t) => t.load()?,
        None => source.clone(),
    };
    Ok(Prepared {
        space: cfg.space()?,
        source,
        target,
    })
}

/// Directory name of a profile: its position and a filesystem-safe label.
pub fn profile_slug(index: usize, label: &str) -> String {
    let label: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect();
    format!("{index}-{}", label.trim_end_matches('-'))
}

/// Target split for one profile: the long-tailed subsample of the target
/// pool with a stratified validation holdout.
#[derive(Debug, Clone)]
pub struct TargetSplit {
    pub data: TargetData,
    pub hist: ClassHistogram,
    /// Indices into the target pool.
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
}

pub fn build_target(cfg: &ExperimentConfig, prepared: &Prepared, profile_index: usize, seed: u64) -> Result<TargetSplit> {
    let profile = cfg
        .profiles
        .get(profile_index)
        .ok_or_else(|| Error::Config(format!("no profile {profile_index}")))?;
    let pool = &prepared.target.train;
    let hist = longtail_counts(profile, pool.num_classes())?;
    let job = derive_seed(seed, &[profile_index as u64]);
    let picked = subsample_indices(pool, &hist, &mut stream(job, purpose::SUBSAMPLE))?;
    let sub = pool.select(&picked);
    let (tr, va) = stratified_holdout(&sub, cfg.holdout, &mut stream(job, purpose::SPLIT))?;
    let train_idx: Vec<usize> = tr.iter().map(|&i| picked[i]).collect();
    let val_idx: Vec<usize> = va.iter().map(|&i| picked[i]).collect();
    if val_idx.is_empty() {
        return Err(Error::Config(format!("profile {} leaves no validation examples", profile.label())));
    }
    Ok(TargetSplit {
        data: TargetData {
            label: profile.label(),
            profile: Some(*profile),
            train: pool.select(&train_idx),
            val: pool.select(&val_idx),
            test: prepared.target.test.clone(),
        },
        hist,
        train_idx,
        val_idx,
    })
}

/// Source pool split into super-network training data and search validation.
pub fn source_split(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    let pool = &prepared.source.train;
    let (tr, va) = stratified_holdout(pool, cfg.holdout, &mut stream(derive_seed(seed, &[SOURCE_TAG]), purpose::SPLIT))?;
    Ok((pool.select(&tr), pool.select(&va)))
}

fn source_rng(seed: u64) -> RandomStream {
    stream(derive_seed(seed, &[SOURCE_TAG]), purpose::INIT)
}

/// Trains the source super-network for `seed`.
pub fn train_source_supernet(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<(SuperNetwork, TrainLog)> {
    let (train, _) = source_split(cfg, prepared, seed)?;
    let settings = cfg.settings();
    let mut rng = source_rng(seed);
    let mut net = init_supernet(&prepared.space, &mut fork(&mut rng, purpose::INIT));
    let log = train_supernet(
        &mut net,
        &train,
        &settings.supernet,
        &settings.policy(settings.supernet_drw_epoch),
        &mut rng,
    )?;
    Ok((net, log))
}

/// Searches a trained source super-network on the source validation split.
pub fn search_source(cfg: &ExperimentConfig, prepared: &Prepared, net: &SuperNetwork, seed: u64) -> Result<SearchOutcome> {
    let (train, val) = source_split(cfg, prepared, seed)?;
    let evo = cfg.evo.clone().with_seed(derive_seed(seed, &[SOURCE_TAG, 1]));
    evolve(net, &val, &train, &evo)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                position: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn source_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("source").join(format!("seed{seed}"))
}

pub fn save_source_supernet(dir: &Path, net: &SuperNetwork, log: &TrainLog, cfg: &ExperimentConfig) -> Result<()> {
    create_dir(dir)?;
    Checkpoint::from_supernet(net, None, Some(&cfg.schedules.supernet)).write(&dir.join("supernet.ckpt"))?;
    write_jsonl(&dir.join("metrics.jsonl"), &log.epochs)
}

pub fn save_source_search(dir: &Path, outcome: &SearchOutcome) -> Result<()> {
    create_dir(dir)?;
    write_history(&dir.join("history.jsonl"), &outcome.history)?;
    write_results(&dir.join("results.json"), &outcome.top)
}

pub fn load_source_supernet(dir: &Path) -> Result<(SuperNetwork, TrainLog)> {
    let net = Checkpoint::read(&dir.join("supernet.ckpt"))?.into_supernet()?;
    let epochs: Vec<EpochRecord> = read_jsonl(&dir.join("metrics.jsonl"))?;
    Ok((net, TrainLog { epochs }))
}

/// Loads the super-network and search results written for one seed.
pub fn load_source(dir: &Path) -> Result<SearchArtifacts> {
    let (net, log) = load_source_supernet(dir)?;
    let top = read_results(&dir.join("results.json"))?
        .into_iter()
        .map(|r| {
            Ok(ScoredGenotype {
                genotype: Genotype::decode(&r.genotype_token, &net.space)?,
                fitness: r.fitness,
                eval_epoch: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if top.is_empty() {
        return Err(Error::Config(format!("{}: no search results", dir.display())));
    }
    let history: Vec<GenerationRecord> = read_jsonl(&dir.join("history.jsonl"))?;
    let evaluations = 0;
    Ok(SearchArtifacts {
        net,
        outcome: SearchOutcome {
            top,
            history,
            evaluations,
        },
        log,
    })
}

/// Trains and searches the source super-network for `seed`, writing its
/// directory.
pub fn run_source(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64, out: &Path) -> Result<SearchArtifacts> {
    let (net, log) = train_source_supernet(cfg, prepared, seed)?;
    let dir = source_dir(out, seed);
    save_source_supernet(&dir, &net, &log, cfg)?;
    let outcome = search_source(cfg, prepared, &net, seed)?;
    save_source_search(&dir, &outcome)?;
    Ok(SearchArtifacts { net, outcome, log })
}

fn procedure_index(kind: ProcedureKind) -> u64 {
    ProcedureKind::ALL.iter().position(|&k| k == kind).expect("listed") as u64
}

/// One procedure on one profile for one seed.
pub fn run_adaptation(
    cfg: &ExperimentConfig,
    source: &SearchArtifacts,
    target: &TargetData,
    kind: ProcedureKind,
    profile_index: usize,
    seed: u64,
) -> Result<AdaptationRun> {
    let job = derive_seed(seed, &[profile_index as u64, procedure_index(kind)]);
    let mut settings = cfg.settings();
    settings.evo.seed = derive_seed(job, &[1]);
    run_procedure(kind, source, target, &settings, &mut stream(job, purpose::RETRAIN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub seed: u64,
    pub profile_index: usize,
    #[serde(flatten)]
    pub run: RunSummary,
}

pub fn run_dir(out: &Path, profile_index: usize, label: &str, kind: ProcedureKind, seed: u64) -> PathBuf {
    out.join("runs")
        .join(profile_slug(profile_index, label))
        .join(kind.to_string().to_lowercase())
        .join(format!("seed{seed}"))
}

/// Writes the self-contained directory of one run.
pub fn write_run_dir(dir: &Path, cfg: &ExperimentConfig, record: &SummaryRecord, run: &AdaptationRun) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    write_text(&dir.join("seed"), &format!("{}\n", record.seed))?;
    write_jsonl(&dir.join("metrics.jsonl"), &run.epochs)?;
    write_jsonl(&dir.join("history.jsonl"), &run.history)?;
    run.checkpoint.write(&dir.join("checkpoint.ckpt"))?;
    write_text(&dir.join("summary.json"), &format!("{}\n", serde_json::to_string(record)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRecord {
    pub profile: String,
    pub counts: Vec<usize>,
}

/// Writes split index files and class histograms for every profile and seed.
pub fn build_splits(cfg: &ExperimentConfig, prepared: &Prepared, out: &Path) -> Result<Vec<HistogramRecord>> {
    let dir = out.join("splits");
    create_dir(&dir)?;
    let mut hists = Vec::new();
    for (p, profile) in cfg.profiles.iter().enumerate() {
        let pdir = dir.join(profile_slug(p, &profile.label()));
        create_dir(&pdir)?;
        for &seed in &cfg.seeds {
            let split = build_target(cfg, prepared, p, seed)?;
            let mut all = [split.train_idx.clone(), split.val_idx.clone()].concat();
            all.sort_unstable();
            let header = SplitHeader {
                source: cfg.name.clone(),
                profile: *profile,
                seed,
            };
            write_split_index(&pdir.join(format!("seed{seed}.idx")), &header, &all)?;
            if seed == cfg.seeds[0] {
                hists.push(HistogramRecord {
                    profile: profile.label(),
                    counts: split.hist.counts().to_vec(),
                });
            }
        }
    }
    write_text(&dir.join(HISTOGRAM_FILE), &serde_json::to_string_pretty(&hists)?)?;
    Ok(hists)
}

/// Trains every genotype of the rank space from scratch on a balanced and a
/// long-tailed split and correlates their test accuracies.
pub fn rank_compare(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<RankReport> {
    let rank = cfg
        .rank
        .as_ref()
        .ok_or_else(|| Error::Config("the config has no [rank] section".into()))?;
    let pool = &prepared.target.train;
    let classes = pool.num_classes();
    let space = rank
        .space
        .as_ref()
        .unwrap_or(&cfg.space)
        .build(classes, cfg.input_channels())?;
    let count = space.num_genotypes().unwrap_or(u128::MAX);
    if count > rank.max_genotypes as u128 {
        return Err(Error::Config(format!(
            "rank space has {count} genotypes, more than max_genotypes = {}",
            rank.max_genotypes
        )));
    }
    let job = derive_seed(seed, &[SOURCE_TAG, 2]);
    let split = |profile: &LongTailProfile| -> Result<LabeledDataset> {
        let hist = longtail_counts(profile, classes)?;
        Ok(pool.select(&subsample_indices(pool, &hist, &mut stream(job, purpose::SUBSAMPLE))?))
    };
    let balanced = split(&LongTailProfile::balance(rank.profile.base_count))?;
    let imbalanced = split(&rank.profile)?;
    let policy = crate::imbalance::ReweightPolicy {
        gamma: cfg.reweight.gamma,
        lambda: 0.0,
        drw_epoch: rank.drw_epoch,
        normalize: cfg.reweight.normalize,
    };
    let genotypes = space.enumerate_genotypes();
    let scores: Vec<(f64, f64)> = genotypes
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let init = derive_seed(job, &[i as u64]);
            let score = |data: &LabeledDataset| -> Result<f64> {
                let mut rng = stream(init, purpose::RETRAIN);
                let mut net = Subnet::init(&space, g, &mut fork(&mut rng, purpose::INIT))?;
                net.train(data, &rank.schedule, &policy, &mut rng)?;
                net.calibrate(data)?;
                net.accuracy(&prepared.target.test)
            };
            Ok((score(&balanced)?, score(&imbalanced)?))
        })
        .collect::<Result<_>>()?;
    RankReport::new(
        genotypes.iter().map(Genotype::encode).collect(),
        scores.iter().map(|s| s.0).collect(),
        scores.iter().map(|s| s.1).collect(),
    )
}

pub fn rank_report_path(out: &Path, seed: u64) -> PathBuf {
    out.join("rank").join(format!("seed{seed}.json"))
}

pub fn write_rank_report(out: &Path, seed: u64, report: &RankReport) -> Result<()> {
    let path = rank_report_path(out, seed);
    create_dir(path.parent().expect("has parent"))?;
    write_text(&path, &serde_json::to_string_pretty(report)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStatus {
    pub phase: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Reproducibility record of an experiment directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub tool_version: String,
    pub config_file: String,
    pub seeds: Vec<u64>,
    pub test_protocol: String,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    pub phases: Vec<PhaseStatus>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Manifest {
            name: cfg.name.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_file: "config.toml".into(),
            seeds: cfg.seeds.clone(),
            test_protocol: "balanced test split of the target dataset".into(),
            normalization: cfg.target_source().normalization().cloned(),
            phases: Vec::new(),
        }
    }

    pub fn record<T>(&mut self, phase: impl Into<String>, result: &Result<T>) {
        self.phases.push(PhaseStatus {
            phase: phase.into(),
            ok: result.is_ok(),
            error: result.as_ref().err().map(|e| e.to_string()),
        });
    }

    pub fn failed(&self) -> bool {
        self.phases.iter().any(|p| !p.ok)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        write_text(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(self)?)
    }
}

/// Runs the whole pipeline into `out`. Configuration errors are returned
/// before any work; failures of later phases are recorded in the manifest and
/// the remaining phases still run.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let mut manifest = Manifest::new(cfg);
    let prepared = match prepare(cfg) {
        Ok(p) => p,
        Err(e) => {
            manifest.record::<()>("data", &Err(e));
            manifest.write(out)?;
            return Ok(manifest);
        }
    };
    let splits = build_splits(cfg, &prepared, out);
    manifest.record("splits", &splits);

    let sources: Vec<(u64, Result<SearchArtifacts>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_source(cfg, &prepared, seed, out)))
        .collect();
    for (seed, r) in &sources {
        manifest.record(format!("source seed{seed}"), r);
    }

    let mut jobs = Vec::new();
    for (p, _) in cfg.profiles.iter().enumerate() {
        for &kind in &cfg.adapt.procedures {
            for (seed, source) in &sources {
                if let Ok(source) = source {
                    jobs.push((p, kind, *seed, source));
                }
            }
        }
    }
    let results: Vec<(String, Result<SummaryRecord>)> = jobs
        .par_iter()
        .map(|&(p, kind, seed, source)| {
            let profile = &cfg.profiles[p];
            let name = format!("{} {kind} seed{seed}", profile_slug(p, &profile.label()));
            let result = (|| {
                let target = build_target(cfg, &prepared, p, seed)?;
                let run = run_adaptation(cfg, source, &target.data, kind, p, seed)?;
                let record = SummaryRecord {
                    seed,
                    profile_index: p,
                    run: run.summary(),
                };
                write_run_dir(&run_dir(out, p, &profile.label(), kind, seed), cfg, &record, &run)?;
                Ok(record)
            })();
            (name, result)
        })
        .collect();
    let mut records = Vec::new();
    for (name, r) in results {
        manifest.record(name, &r);
        if let Ok(rec) = r {
            records.push(rec);
        }
    }
    write_jsonl(&out.join(SUMMARY_FILE), &records)?;

    if cfg.rank.is_some() {
        for &seed in &cfg.seeds {
            let r = rank_compare(cfg, &prepared, seed).and_then(|rep| write_rank_report(out, seed, &rep));
            manifest.record(format!("rank seed{seed}"), &r);
        }
    }
    if !records.is_empty() {
        let r = super::report::emit_report(&[out.to_path_buf()], out);
        manifest.record("report", &r);
    }
    manifest.write(out)?;
    Ok(manifest)
}
