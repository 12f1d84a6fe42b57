//! Source-to-target adaptation procedures.
//!
//! | tag | backbone on target          | ranking from        | reported model            |
//! |-----|-----------------------------|---------------------|---------------------------|
//! | P0  | none, subnets retrained     | source search       | retrained subnet          |
//! | P1  | frozen, classifier retrained| search on target    | adapted one-shot subnet   |
//! | P2  | fine-tuned                  | search on target    | adapted one-shot subnet   |
//! | P3  | trained from scratch        | search on target    | retrained subnet          |

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::{LongTailProfile, ReweightPolicy};
use crate::rng::{fork, purpose, RandomStream};
use crate::search::{evaluate_fitness, evolve, EvoConfig, GenerationRecord, ScoredGenotype, SearchOutcome};
use crate::space::{Genotype, SearchSpace};
use crate::supernet::{
    extract_subnet, init_supernet, train_network, train_supernet, Checkpoint, EpochRecord, PathSampler, Subnet,
    SuperNetwork, TrainLog, TrainSchedule, TrainScope,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcedureKind {
    P0,
    P1,
    P2,
    P3,
}

impl ProcedureKind {
    pub const ALL: [ProcedureKind; 4] = [ProcedureKind::P0, ProcedureKind::P1, ProcedureKind::P2, ProcedureKind::P3];

    pub fn description(self) -> &'static str {
        match self {
            ProcedureKind::P0 => "retrain source-ranked subnets on the target",
            ProcedureKind::P1 => "freeze backbone, retrain classifier on the target",
            ProcedureKind::P2 => "fine-tune backbone and classifier on the target",
            ProcedureKind::P3 => "search and train from scratch on the target",
        }
    }
}

impl fmt::Display for ProcedureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            ProcedureKind::P0 => "P0",
            ProcedureKind::P1 => "P1",
            ProcedureKind::P2 => "P2",
            ProcedureKind::P3 => "P3",
        };
        f.write_str(tag)
    }
}

impl FromStr for ProcedureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p0" => Ok(ProcedureKind::P0),
            "p1" => Ok(ProcedureKind::P1),
            "p2" => Ok(ProcedureKind::P2),
            "p3" => Ok(ProcedureKind::P3),
            _ => Err(Error::Config(format!("unknown procedure `{s}`, expected p0, p1, p2 or p3"))),
        }
    }
}

/// Schedules and switches shared by every procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcedureSettings {
    /// Super-network training on the target (P3).
    pub supernet: TrainSchedule,
    pub supernet_drw_epoch: usize,
    /// Fine-tuning on the target (P1 and P2).
    pub adapt: TrainSchedule,
    pub p2_drw_epoch: usize,
    /// Stand-alone subnet training from scratch (P0 and P3).
    pub subnet: TrainSchedule,
    pub subnet_drw_epoch: usize,
    pub gamma: f64,
    pub normalize: bool,
    pub evo: EvoConfig,
    /// Source-ranked genotypes P0 retrains.
    pub p0_candidates: usize,
    /// P1 and P2 search the adapted network; otherwise they keep the source
    /// ranking.
    pub rerank: bool,
    /// P1 and P2 also retrain their final genotype from scratch.
    pub retrain_adapted: bool,
}

impl Default for ProcedureSettings {
    fn default() -> Self {
        ProcedureSettings {
            supernet: TrainSchedule::supernet_default(),
            supernet_drw_epoch: 350,
            adapt: TrainSchedule::adapt_default(),
            p2_drw_epoch: 100,
            subnet: TrainSchedule::subnet_default(),
            subnet_drw_epoch: 160,
            gamma: 0.9999,
            normalize: true,
            evo: EvoConfig::default(),
            p0_candidates: 1,
            rerank: true,
            retrain_adapted: false,
        }
    }
}

impl ProcedureSettings {
    pub fn policy(&self, drw_epoch: usize) -> ReweightPolicy {
        ReweightPolicy {
            gamma: self.gamma,
            lambda: 0.0,
            drw_epoch,
            normalize: self.normalize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in [&self.supernet, &self.adapt, &self.subnet] {
            s.validate()?;
        }
        self.policy(0).validate()?;
        self.evo.validate()?;
        if self.p0_candidates == 0 {
            return Err(Error::Config("p0_candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Imbalanced target training split, its held-out validation part and a
/// balanced test set.
#[derive(Debug, Clone)]
pub struct TargetData {
    pub label: String,
    pub profile: Option<LongTailProfile>,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

impl TargetData {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    fn check(&self) -> Result<()> {
        let c = self.train.num_classes();
        if self.val.num_classes() != c || self.test.num_classes() != c {
            return Err(Error::Config("target splits disagree on the class count".into()));
        }
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::Config(format!("target `{}` has an empty split", self.label)));
        }
        Ok(())
    }
}

/// Trained super-network and its search results on one dataset.
#[derive(Debug, Clone)]
pub struct SearchArtifacts {
    pub net: SuperNetwork,
    pub outcome: SearchOutcome,
    pub log: TrainLog,
}

impl SearchArtifacts {
    pub fn ranking(&self) -> Vec<Genotype> {
        self.outcome.top.iter().map(|s| s.genotype.clone()).collect()
    }
}

/// Trains a fresh super-network on `train` and searches it on `val`.
#[allow(clippy::too_many_arguments)]
pub fn search_pipeline(
    space: &SearchSpace,
    train: &LabeledDataset,
    val: &LabeledDataset,
    schedule: &TrainSchedule,
    policy: &ReweightPolicy,
    evo: &EvoConfig,
    rng: &mut RandomStream,
) -> Result<SearchArtifacts> {
    let mut net = init_supernet(space, &mut fork(rng, purpose::INIT));
    let log = train_supernet(&mut net, train, schedule, policy, rng)?;
    let outcome = evolve(&net, val, train, evo)?;
    Ok(SearchArtifacts { net, outcome, log })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEpoch {
    pub phase: String,
    #[serde(flatten)]
    pub record: EpochRecord,
}

/// Outcome of one procedure on one target.
#[derive(Debug, Clone)]
pub struct AdaptationRun {
    pub kind: ProcedureKind,
    pub target: String,
    pub profile: Option<LongTailProfile>,
    pub genotype: Genotype,
    /// One-shot validation accuracy of the chosen genotype, when searched on
    /// the target.
    pub search_fitness: Option<f64>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Scalar parameter updates spent on the target.
    pub updates: u64,
    pub evaluations: usize,
    pub seconds: f64,
    pub epochs: Vec<PhaseEpoch>,
    pub history: Vec<GenerationRecord>,
    pub checkpoint: Checkpoint,
}

/// One-line record of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub procedure: ProcedureKind,
    pub profile: String,
    pub factor: Option<f64>,
    pub genotype: String,
    pub accuracy: f64,
    pub updates: u64,
    pub seconds: f64,
}

impl AdaptationRun {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            procedure: self.kind,
            profile: self.target.clone(),
            factor: self.profile.as_ref().map(|p| p.factor),
            genotype: self.genotype.encode(),
            accuracy: self.test_accuracy,
            updates: self.updates,
            seconds: self.seconds,
        }
    }
}

fn phase<'a>(name: &str, log: &'a TrainLog) -> impl Iterator<Item = PhaseEpoch> + 'a {
    let name = name.to_string();
    log.epochs.iter().map(move |r| PhaseEpoch {
        phase: name.clone(),
        record: r.clone(),
    })
}

struct Retrained {
    subnet: Subnet,
    log: TrainLog,
    val: f64,
    test: f64,
}

fn retrain(
    space: &SearchSpace,
    g: &Genotype,
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<Retrained> {
    let mut subnet = Subnet::init(space, g, &mut fork(rng, purpose::RETRAIN))?;
    let log = subnet.train(&target.train, &settings.subnet, &settings.policy(settings.subnet_drw_epoch), rng)?;
    subnet.calibrate(&target.train)?;
    Ok(Retrained {
        val: subnet.accuracy(&target.val)?,
        test: subnet.accuracy(&target.test)?,
        subnet,
        log,
    })
}

/// Retrains each source-ranked genotype from scratch on the target and keeps
/// the one with the best validation accuracy.
pub fn run_p0(
    source_space: &SearchSpace,
    source_topk: &[Genotype],
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    if source_topk.is_empty() {
        return Err(Error::Config("P0 needs at least one source-ranked genotype".into()));
    }
    target.check()?;
    let start = Instant::now();
    let space = source_space.clone().with_num_classes(target.num_classes());
    let mut best: Option<Retrained> = None;
    let mut epochs = Vec::new();
    let mut updates = 0;
    for (i, g) in source_topk.iter().enumerate() {
        let r = retrain(&space, g, target, settings, rng)?;
        epochs.extend(phase(&format!("retrain{i}"), &r.log));
        updates += r.log.total_updates();
        if best.as_ref().is_none_or(|b| r.val > b.val) {
            best = Some(r);
        }
    }
    let best = best.expect("non-empty");
    Ok(AdaptationRun {
        kind: ProcedureKind::P0,
        target: target.label.clone(),
        profile: target.profile,
        genotype: best.subnet.genotype.clone(),
        search_fitness: None,
        val_accuracy: best.val,
        test_accuracy: best.test,
        updates,
        evaluations: 0,
        seconds: start.elapsed().as_secs_f64(),
        epochs,
        history: Vec::new(),
        checkpoint: Checkpoint::from_subnet(&best.subnet, Some(rng), Some(&settings.subnet)),
    })
}

/// Ranks the adapted network on the target and reports the chosen genotype.
#[allow(clippy::too_many_arguments)]
fn finish_adapted(
    kind: ProcedureKind,
    net: SuperNetwork,
    source_ranking: &[Genotype],
    target: &TargetData,
    settings: &ProcedureSettings,
    mut epochs: Vec<PhaseEpoch>,
    mut updates: u64,
    start: Instant,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    let (genotype, search_fitness, history, evaluations) = if settings.rerank {
        let out = evolve(&net, &target.val, &target.train, &settings.evo)?;
        let best = out.best().clone();
        (best.genotype, Some(best.fitness), out.history, out.evaluations)
    } else {
        let g = source_ranking
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("source ranking is empty".into()))?;
        (g, None, Vec::new(), 0)
    };
    let (val_accuracy, test_accuracy, checkpoint) = if settings.retrain_adapted {
        let r = retrain(&net.space, &genotype, target, settings, rng)?;
        epochs.extend(phase("retrain", &r.log));
        updates += r.log.total_updates();
        (r.val, r.test, Checkpoint::from_subnet(&r.subnet, Some(rng), Some(&settings.subnet)))
    } else {
        let mut sub = extract_subnet(&net, &genotype)?;
        sub.calibrate(&target.train)?;
        (
            sub.accuracy(&target.val)?,
            sub.accuracy(&target.test)?,
            Checkpoint::from_supernet(&net, Some(rng), Some(&settings.adapt)),
        )
    };
    Ok(AdaptationRun {
        kind,
        target: target.label.clone(),
        profile: target.profile,
        genotype,
        search_fitness,
        val_accuracy,
        test_accuracy,
        updates,
        evaluations,
        seconds: start.elapsed().as_secs_f64(),
        epochs,
        history,
        checkpoint,
    })
}

fn adapted_copy(source: &SuperNetwork, target: &TargetData, rng: &mut RandomStream) -> SuperNetwork {
    let mut net = source.clone();
    net.reshape_head(target.num_classes(), &mut fork(rng, purpose::HEAD));
    net
}

/// Freezes the backbone and retrains the classifier with re-weighting from
/// the first epoch under uniformly sampled paths.
pub fn run_p1(
    source: &SuperNetwork,
    source_ranking: &[Genotype],
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    target.check()?;
    let start = Instant::now();
    let mut net = adapted_copy(source, target, rng);
    let before = net.backbone_digest();
    let log = train_network(
        &mut net.net,
        &target.train,
        &settings.adapt,
        &settings.policy(0),
        &PathSampler::Uniform,
        TrainScope::HeadOnly,
        rng,
    )?;
    if net.backbone_digest() != before {
        return Err(Error::Invariant("P1 changed backbone parameters".into()));
    }
    net.epoch_counter += settings.adapt.epochs;
    let epochs = phase("adapt", &log).collect();
    finish_adapted(
        ProcedureKind::P1,
        net,
        source_ranking,
        target,
        settings,
        epochs,
        log.total_updates(),
        start,
        rng,
    )
}

/// Fine-tunes backbone and classifier with delayed re-weighting.
pub fn run_p2(
    source: &SuperNetwork,
    source_ranking: &[Genotype],
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    target.check()?;
    let start = Instant::now();
    let mut net = adapted_copy(source, target, rng);
    let log = train_supernet(
        &mut net,
        &target.train,
        &settings.adapt,
        &settings.policy(settings.p2_drw_epoch),
        rng,
    )?;
    let epochs = phase("adapt", &log).collect();
    finish_adapted(
        ProcedureKind::P2,
        net,
        source_ranking,
        target,
        settings,
        epochs,
        log.total_updates(),
        start,
        rng,
    )
}

/// Trains and searches a fresh super-network on the target, then retrains
/// the best genotype from scratch.
pub fn run_p3(
    space: &SearchSpace,
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    target.check()?;
    let start = Instant::now();
    let space = space.clone().with_num_classes(target.num_classes());
    let found = search_pipeline(
        &space,
        &target.train,
        &target.val,
        &settings.supernet,
        &settings.policy(settings.supernet_drw_epoch),
        &settings.evo,
        rng,
    )?;
    let best: ScoredGenotype = found.outcome.best().clone();
    let r = retrain(&space, &best.genotype, target, settings, rng)?;
    let mut epochs: Vec<PhaseEpoch> = phase("supernet", &found.log).collect();
    epochs.extend(phase("retrain", &r.log));
    Ok(AdaptationRun {
        kind: ProcedureKind::P3,
        target: target.label.clone(),
        profile: target.profile,
        genotype: best.genotype,
        search_fitness: Some(best.fitness),
        val_accuracy: r.val,
        test_accuracy: r.test,
        updates: found.log.total_updates() + r.log.total_updates(),
        evaluations: found.outcome.evaluations,
        seconds: start.elapsed().as_secs_f64(),
        epochs,
        history: found.outcome.history,
        checkpoint: Checkpoint::from_subnet(&r.subnet, Some(rng), Some(&settings.subnet)),
    })
}

/// Runs `kind` against the source artifacts.
pub fn run_procedure(
    kind: ProcedureKind,
    source: &SearchArtifacts,
    target: &TargetData,
    settings: &ProcedureSettings,
    rng: &mut RandomStream,
) -> Result<AdaptationRun> {
    settings.validate()?;
    let ranking = source.ranking();
    match kind {
        ProcedureKind::P0 => {
            let k = settings.p0_candidates.min(ranking.len());
            run_p0(&source.net.space, &ranking[..k], target, settings, rng)
        }
        ProcedureKind::P1 => run_p1(&source.net, &ranking, target, settings, rng),
        ProcedureKind::P2 => run_p2(&source.net, &ranking, target, settings, rng),
        ProcedureKind::P3 => run_p3(&source.net.space, target, settings, rng),
    }
}

/// One-shot accuracy of the unadapted source network on the target, for
/// targets sharing the source classes.
pub fn source_accuracy(source: &SuperNetwork, g: &Genotype, target: &TargetData) -> Result<f64> {
    Ok(evaluate_fitness(source, g, &target.test, &target.train)?.fitness)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub procedure: ProcedureKind,
    pub profile: String,
    pub runs: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; zero for a single run.
    pub std_accuracy: f64,
    pub mean_updates: f64,
    /// Mean updates relative to the most expensive procedure in the table.
    pub relative_cost: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates runs on one target into rows ordered P0, P1, P2, P3.
pub fn compare_procedures(runs: &[AdaptationRun]) -> Result<Vec<ComparisonRow>> {
    compare_summaries(&runs.iter().map(AdaptationRun::summary).collect::<Vec<_>>())
}

pub fn compare_summaries(runs: &[RunSummary]) -> Result<Vec<ComparisonRow>> {
    let first = runs.first().ok_or_else(|| Error::Config("no runs to compare".into()))?;
    if let Some(other) = runs.iter().find(|r| r.profile != first.profile) {
        return Err(Error::Config(format!(
            "runs mix targets `{}` and `{}`",
            first.profile, other.profile
        )));
    }
    let mut rows = Vec::new();
    for kind in ProcedureKind::ALL {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| r.procedure == kind).collect();
        if group.is_empty() {
            continue;
        }
        let acc: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        rows.push(ComparisonRow {
            procedure: kind,
            profile: first.profile.clone(),
            runs: group.len(),
            mean_accuracy: mean,
            std_accuracy: std,
            mean_updates: group.iter().map(|r| r.updates as f64).sum::<f64>() / group.len() as f64,
            relative_cost: 0.0,
        });
    }
    let max = rows.iter().map(|r| r.mean_updates).fold(0.0, f64::max);
    for r in &mut rows {
        r.relative_cost = if max > 0.0 { r.mean_updates / max } else { 0.0 };
    }
    Ok(rows)
}

/// Whether the mean accuracies follow P1 > P2 > P0, when all three are present.
pub fn ordering_holds(rows: &[ComparisonRow]) -> Option<bool> {
    let get = |k| rows.iter().find(|r| r.procedure == k).map(|r| r.mean_accuracy);
    let (p0, p1, p2) = (get(ProcedureKind::P0)?, get(ProcedureKind::P1)?, get(ProcedureKind::P2)?);
    Some(p1 > p2 && p2 > p0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{synth_dataset, SynthSpec};
    use crate::imbalance::{longtail_counts, subsample};
    use crate::rng::stream;
    use crate::space::build_search_space;

    fn tiny_settings() -> ProcedureSettings {
        let sched = |epochs, lr, m: Vec<usize>| TrainSchedule::new(epochs, lr, m).with_batch_size(32);
        ProcedureSettings {
            supernet: sched(3, 0.1, vec![]),
            supernet_drw_epoch: 2,
            adapt: sched(3, 0.01, vec![2]),
            p2_drw_epoch: 1,
            subnet: sched(3, 0.1, vec![]),
            subnet_drw_epoch: 2,
            evo: EvoConfig {
                generations: 2,
                population: 6,
                crossover_count: 2,
                mutation_count: 2,
                top_k: 2,
                ..EvoConfig::default()
            },
            ..ProcedureSettings::default()
        }
    }

    fn fixture() -> (SearchSpace, LabeledDataset, TargetData) {
        let space = build_search_space(1, 3, &["skip", "separable-conv-3x3", "max-pool-3x3"], 4, 3)
            .unwrap()
            .with_input_channels(3);
        let spec = SynthSpec {
            classes: 3,
            per_class: 40,
            shape: [3, 4, 4],
            separation: 1.5,
            seed: 1,
            sample_seed: None,
        };
        let source = synth_dataset(&spec).unwrap();
        let pool = synth_dataset(&SynthSpec { seed: 1, per_class: 60, ..spec.clone() }).unwrap();
        let hist = longtail_counts(&LongTailProfile::exponential(0.1, 40), 3).unwrap();
        let train = subsample(&pool, &hist, &mut stream(0, 0)).unwrap();
        let target = TargetData {
            label: "exponential(0.1)".into(),
            profile: Some(LongTailProfile::exponential(0.1, 40)),
            val: train.clone(),
            test: source.clone(),
            train,
        };
        (space, source, target)
    }

    fn source_artifacts(space: &SearchSpace, data: &LabeledDataset, s: &ProcedureSettings) -> SearchArtifacts {
        search_pipeline(space, data, data, &s.supernet, &s.policy(s.supernet_drw_epoch), &s.evo, &mut stream(9, 0))
            .unwrap()
    }

    #[test]
    fn procedure_tags_parse() {
        assert_eq!("p2".parse::<ProcedureKind>().unwrap(), ProcedureKind::P2);
        assert_eq!(ProcedureKind::P3.to_string(), "P3");
        assert!("p4".parse::<ProcedureKind>().is_err());
    }

    #[test]
    fn p1_freezes_backbone_and_costs_order() {
        let (space, source, target) = fixture();
        let s = tiny_settings();
        let src = source_artifacts(&space, &source, &s);
        let runs: Vec<AdaptationRun> = ProcedureKind::ALL
            .iter()
            .map(|&k| run_procedure(k, &src, &target, &s, &mut stream(3, 0)).unwrap())
            .collect();
        let Checkpoint { network, .. } = &runs[1].checkpoint;
        assert_eq!(network.backbone_digest(), src.net.backbone_digest());
        let u: Vec<u64> = runs.iter().map(|r| r.updates).collect();
        assert!(u[1] < u[2] && u[2] < u[3], "{u:?}");
        for r in &runs {
            assert!((0.0..=1.0).contains(&r.test_accuracy));
        }
    }

    #[test]
    fn p0_single_candidate_and_source_fixed_ranking() {
        let (space, source, target) = fixture();
        let s = tiny_settings();
        let src = source_artifacts(&space, &source, &s);
        let a = run_procedure(ProcedureKind::P0, &src, &target, &s, &mut stream(1, 0)).unwrap();
        let b = run_procedure(ProcedureKind::P0, &src, &target, &s, &mut stream(2, 0)).unwrap();
        assert_eq!(a.genotype, src.outcome.best().genotype);
        assert_eq!(a.genotype, b.genotype);
        assert_eq!(a.epochs.len(), s.subnet.epochs);
    }

    #[test]
    fn p1_zero_lr_matches_source() {
        let (space, source, target) = fixture();
        let mut s = tiny_settings();
        let src = source_artifacts(&space, &source, &s);
        s.adapt.initial_lr = 0.0;
        s.rerank = false;
        let run = run_p1(&src.net, &src.ranking(), &target, &s, &mut stream(0, 0)).unwrap();
        let direct = source_accuracy(&src.net, &src.ranking()[0], &target).unwrap();
        assert_eq!(run.test_accuracy, direct);
    }

    #[test]
    fn p3_on_source_is_the_source_pipeline() {
        let (space, source, _) = fixture();
        let s = tiny_settings();
        let target = TargetData {
            label: "balance".into(),
            profile: None,
            train: source.clone(),
            val: source.clone(),
            test: source.clone(),
        };
        let src = source_artifacts(&space, &source, &s);
        let run = run_p3(&space, &target, &s, &mut stream(9, 0)).unwrap();
        assert_eq!(run.genotype, src.outcome.best().genotype);
        assert_eq!(run.history, src.outcome.history);
        let again = run_p3(&space, &target, &s, &mut stream(9, 0)).unwrap();
        assert_eq!(again.checkpoint.to_bytes(), run.checkpoint.to_bytes());
    }

    #[test]
    fn comparison_rows() {
        let row = |k, acc, profile: &str| RunSummary {
            procedure: k,
            profile: profile.into(),
            factor: Some(0.01),
            genotype: "0".into(),
            accuracy: acc,
            updates: 10,
            seconds: 0.0,
        };
        let single = compare_summaries(&[row(ProcedureKind::P2, 0.5, "a")]).unwrap();
        assert_eq!(single.len(), 1);
        let rows = compare_summaries(&[
            row(ProcedureKind::P3, 0.6, "a"),
            row(ProcedureKind::P1, 0.7, "a"),
            row(ProcedureKind::P1, 0.5, "a"),
            row(ProcedureKind::P0, 0.4, "a"),
            row(ProcedureKind::P2, 0.55, "a"),
        ])
        .unwrap();
        let order: Vec<ProcedureKind> = rows.iter().map(|r| r.procedure).collect();
        assert_eq!(order, ProcedureKind::ALL);
        assert!((rows[1].mean_accuracy - 0.6).abs() < 1e-12);
        assert!((rows[1].std_accuracy - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(ordering_holds(&rows), Some(true));
        assert!(compare_summaries(&[row(ProcedureKind::P0, 0.1, "a"), row(ProcedureKind::P1, 0.1, "b")]).is_err());
    }
}
