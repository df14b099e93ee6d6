//! Simulation core for Gossip Mutual Learning (GML).
//!
//! Sites hold private synthetic voxel-segmentation data and a small per-voxel
//! linear model. They collaborate through pairwise model exchanges followed by
//! regionalized mutual learning on the receiver, and are compared against
//! pooled, individual and FedAvg training under exact communication accounting.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration,
//! thread pools and the command-line driver live in `gml-sim`.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod dispatch;
pub mod error;
pub mod eval;
pub mod gossip;
pub mod losses;
pub mod rng;
pub mod segcore;
pub mod synthdata;
mod train;

pub use train::mean_jaccard;

pub use dispatch::{Dispatch, Sequential};
pub use error::{GmlError, Result};
pub use segcore::{FeatureVolume, GridDims, Mask, MaskPair, ModelParams, ProbField};
