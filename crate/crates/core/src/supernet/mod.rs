//! Weight-sharing super-network: every choice edge owns one parameter block
//! per candidate operation, and any genotype selects a sub-network.

mod checkpoint;
mod schedule;
mod train;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::ReweightPolicy;
use crate::nn::{Network, NormMode, Selection};
use crate::rng::RandomStream;
use crate::space::{Genotype, MixtureParams, SearchSpace};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, ModelKind, FORMAT_VERSION};
pub use schedule::{lr_at_epoch, TrainSchedule};
pub use train::{train_network, EpochRecord, PathSampler, TrainLog, TrainScope, STATS_MOMENTUM};

#[derive(Debug, Clone, PartialEq)]
pub struct SuperNetwork {
    pub space: SearchSpace,
    pub net: Network,
    pub epoch_counter: usize,
}

impl SuperNetwork {
    /// Replaces the classifier when the class count changes; the backbone is
    /// kept as is.
    pub fn reshape_head(&mut self, num_classes: usize, rng: &mut RandomStream) {
        if num_classes != self.space.num_classes {
            self.net.reset_head(num_classes, rng);
            self.space = self.space.clone().with_num_classes(num_classes);
        }
    }

    pub fn backbone_digest(&self) -> String {
        self.net.backbone_digest()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

/// Fresh super-network with uniform fan-in initialization.
pub fn init_supernet(space: &SearchSpace, rng: &mut RandomStream) -> SuperNetwork {
    SuperNetwork {
        space: space.clone(),
        net: Network::init(space, rng),
        epoch_counter: 0,
    }
}

/// Logits of the sub-network `g`, using running normalization statistics.
pub fn forward_with_path(net: &SuperNetwork, g: &Genotype, batch: &Tensor) -> Result<Vec<f64>> {
    net.space.validate(g)?;
    net.net.logits(batch, Selection::Path(g.ops()), NormMode::Running)
}

/// Logits of the softmax-weighted mixture of all candidate operations.
pub fn forward_with_mixture(net: &SuperNetwork, mix: &MixtureParams, batch: &Tensor) -> Result<Vec<f64>> {
    mix.check_finite()?;
    if !mix.matches(&net.space) {
        return Err(Error::Shape("mixture parameters do not match the space".into()));
    }
    let probs = mix.probabilities()?;
    net.net.logits(batch, Selection::Mixture(&probs), NormMode::Running)
}

/// Trains with one uniformly sampled path per step.
pub fn train_supernet(
    net: &mut SuperNetwork,
    data: &LabeledDataset,
    schedule: &TrainSchedule,
    policy: &ReweightPolicy,
    rng: &mut RandomStream,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let log = train_network(
        &mut net.net,
        data,
        schedule,
        policy,
        &PathSampler::Uniform,
        TrainScope::All,
        rng,
    )?;
    net.epoch_counter += schedule.epochs;
    Ok(log)
}

/// Recomputes the normalization statistics along `g` from `calib`.
pub fn recalibrate_norm_stats(net: &mut SuperNetwork, g: &Genotype, calib: &LabeledDataset) -> Result<()> {
    net.space.validate(g)?;
    net.net.calibrate(g.ops(), calib)
}

/// A stand-alone network holding copies of one genotype's blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Subnet {
    pub space: SearchSpace,
    pub genotype: Genotype,
    pub net: Network,
    pub epoch_counter: usize,
}

impl Subnet {
    /// Freshly initialized network for `g` (training from scratch).
    pub fn init(space: &SearchSpace, g: &Genotype, rng: &mut RandomStream) -> Result<Subnet> {
        space.validate(g)?;
        let edge_ops: Vec<_> = g.ops().iter().map(|&o| vec![space.candidate_ops[o]]).collect();
        Ok(Subnet {
            space: space.clone(),
            genotype: g.clone(),
            net: Network::with_edge_ops(space, &edge_ops, rng),
            epoch_counter: 0,
        })
    }

    fn path(&self) -> Vec<usize> {
        vec![0; self.genotype.len()]
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Vec<f64>> {
        self.net.logits(batch, Selection::Path(&self.path()), NormMode::Running)
    }

    pub fn calibrate(&mut self, data: &LabeledDataset) -> Result<()> {
        let path = self.path();
        self.net.calibrate(&path, data)
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        self.net.accuracy(&self.path(), data)
    }

    pub fn train(
        &mut self,
        data: &LabeledDataset,
        schedule: &TrainSchedule,
        policy: &ReweightPolicy,
        rng: &mut RandomStream,
    ) -> Result<TrainLog> {
        let sampler = PathSampler::Fixed(self.path());
        let log = train_network(&mut self.net, data, schedule, policy, &sampler, TrainScope::All, rng)?;
        self.epoch_counter += schedule.epochs;
        Ok(log)
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

/// Copies the blocks chosen by `g` into a stand-alone network.
pub fn extract_subnet(net: &SuperNetwork, g: &Genotype) -> Result<Subnet> {
    net.space.validate(g)?;
    Ok(Subnet {
        space: net.space.clone(),
        genotype: g.clone(),
        net: net.net.restrict(g.ops()),
        epoch_counter: net.epoch_counter,
    })
}
