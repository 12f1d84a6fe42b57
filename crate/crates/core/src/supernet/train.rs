use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{lr_at_epoch, TrainSchedule};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::imbalance::{drw_weights, weighted_cross_entropy_grad, ClassHistogram, ReweightPolicy};
use crate::nn::{Network, NormMode, Selection, Sgd};
use crate::rng::{fork, purpose, RandomStream};

/// Momentum of the running normalization statistics during training.
pub const STATS_MOMENTUM: f64 = 0.1;

/// Which tensors an optimization step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    All,
    /// Classifier only; the backbone and its statistics stay untouched.
    HeadOnly,
}

/// How each step picks its path through the network.
#[derive(Debug, Clone)]
pub enum PathSampler {
    /// Independent uniform slot per edge, one path per step.
    Uniform,
    Fixed(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub reweighted: bool,
    pub updates: u64,
}

/// Per-epoch metrics of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Scalar parameter updates applied over the run.
    pub fn total_updates(&self) -> u64 {
        self.epochs.iter().map(|e| e.updates).sum()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Class histogram of the training labels, each count clamped to one.
pub(crate) fn training_histogram(data: &LabeledDataset) -> ClassHistogram {
    ClassHistogram::new(data.class_counts().into_iter().map(|n| n.max(1)).collect())
        .expect("at least one class")
}

/// Mini-batch SGD over `data` following `schedule`, with class weights from
/// the delayed re-weighting `policy`.
pub fn train_network(
    net: &mut Network,
    data: &LabeledDataset,
    schedule: &TrainSchedule,
    policy: &ReweightPolicy,
    sampler: &PathSampler,
    scope: TrainScope,
    rng: &mut RandomStream,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.num_classes() != net.num_classes {
        return Err(Error::Config(format!(
            "training set has {} classes, classifier has {}",
            data.num_classes(),
            net.num_classes
        )));
    }
    schedule.validate()?;
    policy.validate()?;
    let hist = training_histogram(data);
    let mut shuffle_rng = fork(rng, purpose::SHUFFLE);
    let mut path_rng = fork(rng, purpose::PATH);
    let mut opt = Sgd::new(schedule.momentum, schedule.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let backbone = scope == TrainScope::All;

    for epoch in 0..schedule.epochs {
        let lr = lr_at_epoch(schedule, epoch)?;
        let weights = drw_weights(epoch, policy, &hist)?;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut updates) = (0.0, 0u64);
        for batch in order.chunks(schedule.batch_size) {
            let path: Vec<usize> = match sampler {
                PathSampler::Uniform => (0..net.edges.len())
                    .map(|e| path_rng.random_range(0..net.slot_count(e)))
                    .collect(),
                PathSampler::Fixed(p) => p.clone(),
            };
            let (x, labels) = data.batch(batch);
            let trace = net.forward(&x, Selection::Path(&path), NormMode::Batch)?;
            let (loss, grad) = weighted_cross_entropy_grad(&trace.logits, &labels, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} at epoch {epoch}")));
            }
            let back = net.backward(&trace, &grad, backbone);
            updates += opt.step(net, &back.grads, lr);
            if backbone {
                net.absorb_stats(&trace, Some(STATS_MOMENTUM));
            }
            loss_sum += loss * batch.len() as f64;
        }
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            reweighted: epoch >= policy.drw_epoch,
            updates,
        });
    }
    Ok(log)
}
