use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use imbnas::adapt::ProcedureKind;
use imbnas::harness::config::ExperimentConfig;
use imbnas::harness::experiment::{
    build_splits, load_source, load_source_supernet, prepare, rank_compare, run_adaptation, run_dir,
    run_experiment, save_source_search, save_source_supernet, search_source, source_dir,
    train_source_supernet, write_jsonl, write_rank_report, write_run_dir, build_target, read_jsonl,
    SummaryRecord, SUMMARY_FILE,
};
use imbnas::harness::report::emit_report;

/// Architecture search and rank adaptation on class-imbalanced data.
#[derive(Parser)]
#[command(name = "imbnas", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write long-tailed split index files and class histograms.
    BuildData,
    /// Train the source super-network for every seed.
    TrainSupernet,
    /// Evolutionary search over the trained source super-networks.
    EvoSearch,
    /// Run one adaptation procedure on every profile and seed.
    Adapt {
        #[arg(long, value_parser = parse_procedure)]
        procedure: ProcedureKind,
    },
    /// Balanced-vs-imbalanced rank correlation over a small space.
    RankCompare,
    /// Summary tables and plots from one or more experiment directories.
    Report {
        /// Experiment directories; defaults to the output directory.
        dirs: Vec<PathBuf>,
    },
    /// The whole pipeline, then the report.
    Run,
    /// Print an example configuration.
    ExampleConfig,
}

fn parse_procedure(s: &str) -> std::result::Result<ProcedureKind, String> {
    s.parse().map_err(|e: imbnas::Error| e.to_string())
}

const EXAMPLE: &str = include_str!("../../../configs/smoke.toml");

struct Context_ {
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn load(cli: &Cli) -> Result<Context_> {
    let path = cli.config.as_ref().context("--config <file> is required for this command")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(Context_ { cfg, out })
}

fn append_summary(out: &Path, records: &[SummaryRecord]) -> Result<()> {
    let path = out.join(SUMMARY_FILE);
    let mut all: Vec<SummaryRecord> = if path.exists() { read_jsonl(&path)? } else { Vec::new() };
    all.retain(|r| {
        !records
            .iter()
            .any(|n| n.seed == r.seed && n.profile_index == r.profile_index && n.run.procedure == r.run.procedure)
    });
    all.extend_from_slice(records);
    all.sort_by_key(|r| (r.profile_index, r.run.procedure, r.seed));
    write_jsonl(&path, &all)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::ExampleConfig => {
            print!("{EXAMPLE}");
        }
        Command::BuildData => {
            let c = load(cli)?;
            let prepared = prepare(&c.cfg)?;
            for h in build_splits(&c.cfg, &prepared, &c.out)? {
                println!("{}: {} examples {:?}", h.profile, h.counts.iter().sum::<usize>(), h.counts);
            }
        }
        Command::TrainSupernet => {
            let c = load(cli)?;
            let prepared = prepare(&c.cfg)?;
            for &seed in &c.cfg.seeds {
                let (net, log) = train_source_supernet(&c.cfg, &prepared, seed)?;
                let dir = source_dir(&c.out, seed);
                save_source_supernet(&dir, &net, &log, &c.cfg)?;
                println!(
                    "seed {seed}: {} epochs, final loss {:.4}, checkpoint {}",
                    log.epochs.len(),
                    log.final_loss().unwrap_or(f64::NAN),
                    dir.join("supernet.ckpt").display()
                );
            }
        }
        Command::EvoSearch => {
            let c = load(cli)?;
            let prepared = prepare(&c.cfg)?;
            for &seed in &c.cfg.seeds {
                let dir = source_dir(&c.out, seed);
                let (net, _) = load_source_supernet(&dir)
                    .with_context(|| format!("no source super-network for seed {seed}; run train-supernet first"))?;
                let outcome = search_source(&c.cfg, &prepared, &net, seed)?;
                save_source_search(&dir, &outcome)?;
                let best = outcome.best();
                println!("seed {seed}: best {} fitness {:.4}", best.genotype, best.fitness);
            }
        }
        Command::Adapt { procedure } => {
            let c = load(cli)?;
            let prepared = prepare(&c.cfg)?;
            let mut records = Vec::new();
            for &seed in &c.cfg.seeds {
                let source = load_source(&source_dir(&c.out, seed))
                    .with_context(|| format!("no source search for seed {seed}; run train-supernet and evo-search first"))?;
                for (p, profile) in c.cfg.profiles.iter().enumerate() {
                    let target = build_target(&c.cfg, &prepared, p, seed)?;
                    let run = run_adaptation(&c.cfg, &source, &target.data, *procedure, p, seed)?;
                    let record = SummaryRecord {
                        seed,
                        profile_index: p,
                        run: run.summary(),
                    };
                    write_run_dir(&run_dir(&c.out, p, &profile.label(), *procedure, seed), &c.cfg, &record, &run)?;
                    println!(
                        "{procedure} {} seed {seed}: accuracy {:.4}, updates {}",
                        profile.label(),
                        run.test_accuracy,
                        run.updates
                    );
                    records.push(record);
                }
            }
            append_summary(&c.out, &records)?;
        }
        Command::RankCompare => {
            let c = load(cli)?;
            let prepared = prepare(&c.cfg)?;
            for &seed in &c.cfg.seeds {
                let report = rank_compare(&c.cfg, &prepared, seed)?;
                write_rank_report(&c.out, seed, &report)?;
                println!(
                    "seed {seed}: {} genotypes, spearman {:.4}, kendall {:.4}",
                    report.tokens.len(),
                    report.spearman_rho,
                    report.kendall_tau
                );
            }
        }
        Command::Report { dirs } => {
            let out = match (&cli.out, &cli.config) {
                (Some(o), _) => o.clone(),
                (None, Some(_)) => load(cli)?.out,
                (None, None) => dirs.first().cloned().context("give a directory or --out")?,
            };
            let dirs = if dirs.is_empty() { vec![out.clone()] } else { dirs.clone() };
            let files = emit_report(&dirs, &out)?;
            print!("{}", std::fs::read_to_string(&files.table)?);
            for p in files.plots {
                println!("wrote {}", p.display());
            }
        }
        Command::Run => {
            let c = load(cli)?;
            let manifest = run_experiment(&c.cfg, &c.out)?;
            let table = c.out.join("summary.csv");
            if table.exists() {
                print!("{}", std::fs::read_to_string(&table)?);
            }
            let failed: Vec<_> = manifest.phases.iter().filter(|p| !p.ok).collect();
            for p in &failed {
                eprintln!("failed: {}: {}", p.phase, p.error.as_deref().unwrap_or(""));
            }
            if !failed.is_empty() {
                bail!("{} phase(s) failed; see {}", failed.len(), c.out.join("manifest.json").display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
