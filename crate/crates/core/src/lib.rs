//! Dataset reinforcement at desk scale.
//!
//! A dataset is reinforced once: every training image gets a fixed number of
//! stored augmentation descriptors, each paired with the teacher's sparse
//! top-K probabilities on the augmented image. Students are later trained by
//! replaying those descriptors and matching the stored targets, so the teacher
//! never runs inside the training loop.
//!
//! Module map:
//!
//! * [`dataset`] / [`rng`] / [`desk`]: images, the packed `DIMG` format,
//!   counter-based random streams and the synthetic desk dataset.
//! * [`augment`]: descriptor sampling and bit-exact replay.
//! * [`teacher`]: teacher abstraction, ensembles, top-K sparsification.
//! * [`store`]: the `DRST` reinforcement file format and storage accounting.
//! * [`reinforcer`]: the one-time generation pass.
//! * [`loader`]: epoch planning, curricula and the training-time loader.
//! * [`nn`]: the micro-learner used for teachers and students.
//! * [`config`] / [`lab`]: run configuration and the desk experiment drivers.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod desk;
pub mod error;
pub mod lab;
pub mod loader;
pub mod nn;
pub mod reinforcer;
pub mod rng;
pub mod store;
pub mod teacher;

pub use error::{Error, Result};
