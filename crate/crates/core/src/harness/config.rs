//! Experiment configuration, read from TOML with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{ingest_image_dataset, synth_dataset, Normalization, SynthSpec};
use crate::adapt::{ProcedureKind, ProcedureSettings};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::LongTailProfile;
use crate::search::EvoConfig;
use crate::space::{build_search_space, OpKind, SearchSpace};
use crate::supernet::TrainSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub num_cells: usize,
    pub nodes_per_cell: usize,
    #[serde(default = "default_ops")]
    pub candidate_ops: Vec<String>,
    pub channel_width: usize,
}

fn default_ops() -> Vec<String> {
    OpKind::ALL.iter().map(|o| o.name().to_string()).collect()
}

impl SpaceConfig {
    pub fn build(&self, num_classes: usize, input_channels: usize) -> Result<SearchSpace> {
        Ok(build_search_space(
            self.num_cells,
            self.nodes_per_cell,
            &self.candidate_ops,
            self.channel_width,
            num_classes,
        )?
        .with_input_channels(input_channels))
    }
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        /// Channels, height, width.
        shape: [usize; 3],
        separation: f64,
        seed: u64,
        /// Fresh examples around the prototypes of `seed`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_seed: Option<u64>,
    },
    /// CIFAR-layout binary files.
    Cifar {
        train_path: PathBuf,
        test_path: PathBuf,
        classes: usize,
        #[serde(default)]
        normalization: Normalization,
    },
}

/// A dataset's balanced training pool and test split.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

impl DataSource {
    pub fn num_classes(&self) -> usize {
        match self {
            DataSource::Synthetic { classes, .. } | DataSource::Cifar { classes, .. } => *classes,
        }
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        match self {
            DataSource::Cifar { normalization, .. } => Some(normalization),
            DataSource::Synthetic { .. } => None,
        }
    }

    pub fn load(&self) -> Result<LoadedData> {
        match self {
            DataSource::Synthetic {
                classes,
                train_per_class,
                test_per_class,
                shape,
                separation,
                seed,
                sample_seed,
            } => {
                let per = train_per_class + test_per_class;
                let all = synth_dataset(&SynthSpec {
                    classes: *classes,
                    per_class: per,
                    shape: *shape,
                    separation: *separation,
                    seed: *seed,
                    sample_seed: *sample_seed,
                })?;
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for c in 0..*classes {
                    train.extend(c * per..c * per + train_per_class);
                    test.extend(c * per + train_per_class..(c + 1) * per);
                }
                Ok(LoadedData {
                    train: all.select(&train),
                    test: all.select(&test),
                })
            }
            DataSource::Cifar {
                train_path,
                test_path,
                classes,
                normalization,
            } => Ok(LoadedData {
                train: ingest_image_dataset(train_path, *classes, normalization)?,
                test: ingest_image_dataset(test_path, *classes, normalization)?,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub supernet: TrainSchedule,
    pub adapt: TrainSchedule,
    pub subnet: TrainSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReweightConfig {
    pub gamma: f64,
    #[serde(default = "yes")]
    pub normalize: bool,
    pub supernet_drw_epoch: usize,
    pub p2_drw_epoch: usize,
    pub subnet_drw_epoch: usize,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    #[serde(default = "all_procedures")]
    pub procedures: Vec<ProcedureKind>,
    #[serde(default = "one")]
    pub p0_candidates: usize,
    #[serde(default = "yes")]
    pub rerank: bool,
    #[serde(default)]
    pub retrain_adapted: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            procedures: all_procedures(),
            p0_candidates: 1,
            rerank: true,
            retrain_adapted: false,
        }
    }
}

fn all_procedures() -> Vec<ProcedureKind> {
    ProcedureKind::ALL.to_vec()
}

fn one() -> usize {
    1
}

/// Balanced-vs-imbalanced ranking of every genotype of a small space, each
/// trained stand-alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankConfig {
    /// Overrides the experiment space.
    #[serde(default)]
    pub space: Option<SpaceConfig>,
    pub profile: LongTailProfile,
    pub schedule: TrainSchedule,
    pub drw_epoch: usize,
    #[serde(default = "max_genotypes")]
    pub max_genotypes: usize,
}

fn max_genotypes() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Fraction of each target training split held out for search.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    pub profiles: Vec<LongTailProfile>,
    pub space: SpaceConfig,
    /// Balanced dataset the source super-network is trained and searched on.
    pub source: DataSource,
    /// Dataset whose training pool is made long-tailed; the source when
    /// absent.
    #[serde(default)]
    pub target: Option<DataSource>,
    pub schedules: Schedules,
    pub reweight: ReweightConfig,
    #[serde(default)]
    pub evo: EvoConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub rank: Option<RankConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_holdout() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn target_source(&self) -> &DataSource {
        self.target.as_ref().unwrap_or(&self.source)
    }

    pub fn input_channels(&self) -> usize {
        match &self.source {
            DataSource::Synthetic { shape, .. } => shape[0],
            DataSource::Cifar { .. } => super::data::IMAGE_CHANNELS,
        }
    }

    /// Source space, sized for the source classes.
    pub fn space(&self) -> Result<SearchSpace> {
        self.space.build(self.source.num_classes(), self.input_channels())
    }

    /// Procedure settings; the evolutionary seed is replaced per run.
    pub fn settings(&self) -> ProcedureSettings {
        ProcedureSettings {
            supernet: self.schedules.supernet.clone(),
            supernet_drw_epoch: self.reweight.supernet_drw_epoch,
            adapt: self.schedules.adapt.clone(),
            p2_drw_epoch: self.reweight.p2_drw_epoch,
            subnet: self.schedules.subnet.clone(),
            subnet_drw_epoch: self.reweight.subnet_drw_epoch,
            gamma: self.reweight.gamma,
            normalize: self.reweight.normalize,
            evo: self.evo.clone(),
            p0_candidates: self.adapt.p0_candidates,
            rerank: self.adapt.rerank,
            retrain_adapted: self.adapt.retrain_adapted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.profiles.is_empty() {
            return Err(Error::Config("profiles must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.holdout) || self.holdout == 0.0 {
            return Err(Error::Config(format!("holdout {} must lie in (0, 1)", self.holdout)));
        }
        if self.adapt.procedures.is_empty() {
            return Err(Error::Config("adapt.procedures must not be empty".into()));
        }
        self.space()?;
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate().map_err(|e| Error::Config(format!("profiles[{i}]: {e}")))?;
        }
        for source in [&self.source, self.target_source()] {
            if let DataSource::Synthetic { shape, .. } = source {
                if shape[0] != self.input_channels() {
                    return Err(Error::Config("source and target must have the same channel count".into()));
                }
            }
        }
        self.settings().validate()?;
        if let Some(rank) = &self.rank {
            rank.schedule.validate()?;
            rank.profile.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMOKE: &str = r#"
name = "smoke"
seeds = [0, 1]
out_dir = "runs/smoke"
profiles = [
  { kind = "balance", factor = 1.0, base_count = 40 },
  { kind = "exponential", factor = 0.1, base_count = 40 },
]

[space]
num_cells = 1
nodes_per_cell = 3
channel_width = 8

[source]
kind = "synthetic"
classes = 4
train_per_class = 40
test_per_class = 10
shape = [3, 8, 8]
separation = 1.0
seed = 7

[schedules.supernet]
epochs = 3
initial_lr = 0.1
milestones = [2]

[schedules.adapt]
epochs = 2
initial_lr = 0.01
milestones = [1]

[schedules.subnet]
epochs = 3
initial_lr = 0.1

[reweight]
gamma = 0.9999
supernet_drw_epoch = 2
p2_drw_epoch = 1
subnet_drw_epoch = 2

[evo]
generations = 2
population = 8
crossover_count = 3
mutation_count = 3
top_k = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SMOKE).unwrap();
        assert_eq!(cfg.space.candidate_ops.len(), 6);
        assert_eq!(cfg.adapt.procedures, ProcedureKind::ALL);
        assert_eq!(cfg.evo.mutation_prob, 0.1);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SMOKE.replace("[space]\n", "[space]\nwidth_multiplier = 2\n");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("width_multiplier"), "{err}");
        let bad = SMOKE.replace("separation = 1.0", "separation = 1.0\nnoise = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let bad = format!("colour = 1\n{SMOKE}");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn bad_op_named() {
        let bad = SMOKE.replace("channel_width = 8", "channel_width = 8\ncandidate_ops = [\"skip\", \"conv-7x7\"]");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("candidate_ops[1]"), "{err}");
    }

    #[test]
    fn synthetic_source_splits() {
        let cfg = ExperimentConfig::from_toml(SMOKE).unwrap();
        let data = cfg.source.load().unwrap();
        assert_eq!(data.train.class_counts(), vec![40; 4]);
        assert_eq!(data.test.class_counts(), vec![10; 4]);
    }
}
