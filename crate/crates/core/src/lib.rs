//! Hierarchical variational recurrent network operated purely by variational
//! free-energy minimization.
//!
//! The crate implements a four-module generative network (executive,
//! multimodal associative, exteroceptive, proprioceptive) of leaky-integrator
//! units with per-module Gaussian latents. Priors are predicted from the
//! previous recurrent state; posteriors are parameterized by per-sequence
//! adaptive variables. Learning updates weights and adaptive variables
//! against cumulative free energy; online inference freezes the weights and
//! re-minimizes free energy for the adaptive variables inside a sliding
//! window. A synthetic multimodal task generator and the analysis protocols
//! used to evaluate the trained networks live here too.
//!
//! The crate is `no_std` (with `alloc`); all transcendental math is routed
//! through `libm` so results are bit-reproducible across platforms. File
//! formats and the command-line driver live in the companion `hvrnn-cli`
//! crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod analysis;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod free_energy;
pub mod grad;
pub mod infer;
pub mod math;
pub mod net;
pub mod rng;
pub mod runner;
pub mod train;

pub use checkpoint::{Checkpoint, Provenance, CHECKPOINT_VERSION};
pub use error::CoreError;
pub use net::topology::{Module, NetworkTopology};
pub use runner::{ParallelMap, SerialMap};
