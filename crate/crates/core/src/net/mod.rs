//! The four-module hierarchical network: structure, weights and the top-down
//! generative pass.

pub mod forward;
pub mod params;
pub mod topology;

pub use forward::{
    compute_posterior, compute_prior, decode, forward_sequence, forward_span, leaky_step,
    replay_with_z, sample_latent, EpsSource, LatentMode, LatentMoments, LatentSample, OutputRows,
    Prediction, RecurrentState, StepRecord, Trajectory, SIGMA_CLAMP,
};
pub use params::{
    init_parameters, init_parameters_with, Dense, InitOptions, Parameters, DEFAULT_BIAS_STD,
};
pub use topology::{tau_split, Module, NetworkTopology};
