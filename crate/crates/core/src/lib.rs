//! Architecture search with weight-sharing super-networks on class-imbalanced
//! data.
//!
//! The crate is organised bottom-up:
//!
//! * [`space`]: cell search space, genotypes and the softmax relaxation.
//! * [`imbalance`]: long-tailed splits and class re-weighted losses.
//! * [`supernet`]: the weight-sharing network, its training loop and
//!   checkpoints.
//! * [`search`]: evolutionary and bilevel (gradient) search.
//! * [`adapt`]: the four source-to-target adaptation procedures.
//! * [`harness`]: configuration, data ingestion, experiments and reports.

pub mod adapt;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod imbalance;
pub mod nn;
pub mod rng;
pub mod search;
pub mod space;
pub mod supernet;
pub mod tensor;

pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use space::{Genotype, MixtureParams, OpKind, SearchSpace};
