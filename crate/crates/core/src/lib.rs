//! Core of an indoor RGB-D place-recognition pipeline.
//!
//! Colorized point clouds go in, unit-norm 256-d global descriptors come
//! out. Everything here is `no_std` + `alloc`: the crate owns the math
//! (a small reverse-mode autodiff engine, farthest point sampling, KNN,
//! the rigid-motion-invariant pair encoding, reducer and context-cluster
//! blocks, circle/triplet losses, Adam with cosine annealing) and the
//! in-memory halves of data preparation and retrieval. File formats,
//! the training driver and the CLI live in the `poco` crate.
//!
//! Module map:
//!
//! - [`diffcore`]: tensors, the gradient tape, finite-difference checks, Adam, LR schedule
//! - [`cloud`]: point frames, voxel downsampling, normal estimation, synthetic rooms
//! - [`sampling`]: farthest point sampling and exact KNN
//! - [`geom`]: the 8-component pair encoding
//! - [`net`]: stem, reducer, cluster and encoder blocks and the full model
//! - [`loss`]: circle loss, triplet loss, weighted combination
//! - [`train`]: triplet mining and the per-batch gradient step
//! - [`retrieve`]: descriptor index, ranked queries, database selection, Recall@K

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod cloud;
pub mod diag;
pub mod diffcore;
pub mod error;
pub mod geom;
pub mod loss;
pub mod math;
pub mod net;
pub mod retrieve;
pub mod rng;
pub mod sampling;
pub mod selfcheck;
pub mod train;

pub use diag::Diagnostics;
pub use error::{Error, Result};
