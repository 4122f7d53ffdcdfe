//! Unsupervised outlier detection with contrastive twin encoders and a
//! prototype memory bank.
//!
//! A query tower and a momentum-averaged key tower encode two augmented views
//! of each image into features `f`, unit embeddings `z` and relevancy rows
//! `c`. Key-tower outputs fill a FIFO [`queue`]; the [`memory`] bank rebuilds
//! its prototypes from that queue every step and perturbs weakly supported
//! ones. After training, a sample's outlier score is the squared distance
//! between its feature and the prototype read back for it.
//!
//! Module map:
//!
//! - [`numeric`]: tensors, gradient tape, Adam
//! - [`encoder`]: tower parameters, forward pass, momentum update
//! - [`queue`]: fixed-capacity FIFO of key-tower outputs
//! - [`memory`]: prototype read / write / forget
//! - [`losses`]: instance and cluster InfoNCE, balance regularizer, consistency loss
//! - [`image`]: images and image sets
//! - [`augment`]: seeded image transforms producing view pairs
//! - [`trainer`]: warm-up and memory-phase training loop
//! - [`metrics`]: scoring, AUROC, average precision, similarity histograms
//! - [`io`]: IDX loading, dataset mixing, configs, checkpoints, CSV files

// `!(x > y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod encoder;
pub mod image;
mod error;
pub mod io;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod numeric;
pub mod queue;
pub mod trainer;

pub use error::{Error, Result};
