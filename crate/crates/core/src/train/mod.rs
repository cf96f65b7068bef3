//! Full-batch learning: minimize cumulative free energy over synaptic
//! weights and all per-sequence adaptive posteriors jointly.

pub mod radam;

use alloc::format;
use alloc::vec::Vec;

use crate::checkpoint::{Checkpoint, Provenance, CHECKPOINT_VERSION};
use crate::datagen::SequenceBatch;
use crate::error::{CoreError, Result};
use crate::free_energy::{FreeEnergyTerms, ObservationMask, DEFAULT_META_PRIOR};
use crate::grad::{backward, AdaptivePosterior, BackwardOpts, GradientSet, ParamGrads};
use crate::net::forward::{forward_sequence, EpsSource, LatentMode};
use crate::net::params::init_parameters_with;
use crate::net::params::InitOptions;
use crate::net::topology::NetworkTopology;
use crate::rng;
use crate::runner::ParallelMap;

pub use radam::{radam_update, OptimizerState};

/// Learning-phase settings. The defaults are the published ones except for
/// the desk-scale iteration budget.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub meta_prior: f64,
    pub seed: u64,
    pub bias_std: f64,
    /// Emit an intermediate checkpoint every this many iterations (0 = only
    /// the final one).
    pub checkpoint_cadence: u64,
    /// Record a loss-history row every this many iterations.
    pub loss_log_cadence: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 3_000,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            meta_prior: DEFAULT_META_PRIOR,
            seed: 0,
            bias_std: crate::net::params::DEFAULT_BIAS_STD,
            checkpoint_cadence: 0,
            loss_log_cadence: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(CoreError::Config("iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CoreError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.meta_prior >= 0.0 && self.meta_prior.is_finite()) {
            return Err(CoreError::Config("meta_prior must be finite and >= 0".into()));
        }
        if self.loss_log_cadence == 0 {
            return Err(CoreError::Config("loss_log_cadence must be >= 1".into()));
        }
        Ok(())
    }
}

/// One recorded row of the training loss history: cumulative free energy and
/// its components summed over all training sequences and steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub iteration: u64,
    pub total: f64,
    pub accuracy_extero: f64,
    pub accuracy_proprio: f64,
    /// Per-module complexity, indexed by `Module::index`.
    pub complexity: [f64; 4],
}

pub struct FitResult {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossRow>,
}

/// Zero-initialized adaptive variables for steps 1..=T; the posterior equals
/// the prior exactly at t = 1 and the unit-Gaussian reference afterwards.
pub fn init_adaptive(topo: &NetworkTopology, seq_id: usize, t_len: usize) -> Result<AdaptivePosterior> {
    if t_len == 0 {
        return Err(CoreError::Config("sequence length must be >= 1".into()));
    }
    Ok(AdaptivePosterior::zeros(topo, seq_id, 1, t_len))
}

fn validate_batch(batch: &SequenceBatch, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(CoreError::Data("training set is empty".into()));
    }
    for &s in indices {
        let seq = batch
            .sequences
            .get(s)
            .ok_or_else(|| CoreError::Data(format!("sequence index {s} out of range")))?;
        for v in seq.extero.iter().chain(seq.proprio.iter()) {
            if !v.is_finite() || v.abs() > 0.9 + 1e-9 {
                return Err(CoreError::Data(format!(
                    "sequence {s} contains a value outside [-0.9, 0.9]: {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Full-batch training. Every iteration does a fresh stochastic forward pass
/// per sequence, accumulates cumulative free energy, backpropagates, and
/// applies one joint rectified-Adam update over the weights and every
/// sequence's adaptive variables.
///
/// Per-sequence noise streams are keyed by sequence id and iteration, and
/// gradients are reduced in ascending sequence order, so the result is
/// bitwise identical for any executor and any ordering of `train_indices`.
pub fn fit<R: ParallelMap>(
    batch: &SequenceBatch,
    train_indices: &[usize],
    topo: &NetworkTopology,
    config: &TrainConfig,
    runner: &R,
    mut checkpoint_sink: Option<&mut dyn FnMut(u64, &Checkpoint)>,
) -> Result<FitResult> {
    config.validate()?;
    topo.validate()?;
    validate_batch(batch, train_indices)?;
    if batch.extero_dim() != topo.extero_dim() || batch.proprio_dim != topo.proprio_dim {
        return Err(CoreError::Shape(format!(
            "dataset dims ({}, {}) do not match topology ({}, {})",
            batch.extero_dim(),
            batch.proprio_dim,
            topo.extero_dim(),
            topo.proprio_dim
        )));
    }
    let mut indices: Vec<usize> = train_indices.to_vec();
    indices.sort_unstable();
    indices.dedup();
    if indices.len() != train_indices.len() {
        return Err(CoreError::Data("duplicate training indices".into()));
    }

    let mut params = init_parameters_with(
        topo,
        config.seed,
        InitOptions {
            bias_std: config.bias_std,
        },
    )?;
    let fixed_bias = params.bias.clone();
    let mut adaptives: Vec<AdaptivePosterior> = indices
        .iter()
        .map(|&s| init_adaptive(topo, s, batch.sequences[s].t_len))
        .collect::<Result<_>>()?;

    // Optimizer slots: trainable parameter tensors first, then each
    // sequence's adaptive variables in ascending sequence order.
    let mut shapes: Vec<usize> = Vec::new();
    params.visit_trainable(|_, t| shapes.push(t.len()));
    for a in &mut adaptives {
        for s in a.flat_mut() {
            shapes.push(s.len());
        }
    }
    let mut opt = OptimizerState::new(config.beta1, config.beta2, &shapes);

    let mut history = Vec::new();
    let n_seq = indices.len();

    for it in 0..config.iterations {
        let results: Vec<Result<(GradientSet, FreeEnergyTerms)>> = {
            let params_ref = &params;
            let adaptives_ref = &adaptives;
            let indices_ref = &indices;
            runner.map(n_seq, &move |si: usize| {
                let seq_id = indices_ref[si];
                let seq = &batch.sequences[seq_id];
                let adaptive = &adaptives_ref[si];
                let mut rng =
                    rng::stream(config.seed, &[rng::salt::TRAIN_EPS, seq_id as u64, it]);
                let traj = forward_sequence(
                    params_ref,
                    topo,
                    Some(adaptive),
                    seq.t_len,
                    LatentMode::PosteriorSample,
                    EpsSource::Rng(&mut rng),
                )?;
                let obs = seq.all_obs();
                let masks = ObservationMask::all_on(topo, seq.t_len);
                let terms = crate::free_energy::sequence_free_energy(
                    &traj,
                    &obs,
                    &masks,
                    config.meta_prior,
                )?;
                let grads = backward(
                    params_ref,
                    topo,
                    &traj,
                    &obs,
                    &masks,
                    config.meta_prior,
                    BackwardOpts::default(),
                )?;
                Ok((grads, terms))
            })
        };

        // Fixed-order reduction over ascending sequence ids.
        let mut param_grads = ParamGrads::zeros(topo);
        let mut terms_sum = FreeEnergyTerms::zero(config.meta_prior);
        let mut seq_grads: Vec<GradientSet> = Vec::with_capacity(n_seq);
        for r in results {
            let (g, t) = r?;
            param_grads.add_assign(&g.params);
            terms_sum.add_assign(&t);
            seq_grads.push(g);
        }

        if !terms_sum.is_finite() || !param_grads.is_finite() {
            return Err(CoreError::Numeric {
                what: "training objective or gradients became non-finite".into(),
                step: it as usize,
            });
        }
        if it % config.loss_log_cadence == 0 || it + 1 == config.iterations {
            history.push(LossRow {
                iteration: it,
                total: terms_sum.total,
                accuracy_extero: terms_sum.accuracy_extero,
                accuracy_proprio: terms_sum.accuracy_proprio,
                complexity: terms_sum.complexity,
            });
        }

        // Joint update: weights then per-sequence adaptive variables.
        let mut targets: Vec<&mut [f64]> = params.trainable_mut();
        for a in &mut adaptives {
            targets.extend(a.flat_mut());
        }
        let mut grads_flat: Vec<&[f64]> = param_grads.flat();
        for g in &seq_grads {
            grads_flat.extend(g.adaptive.flat());
        }
        radam_update(&mut opt, config.learning_rate, &mut targets, &grads_flat)?;

        if config.checkpoint_cadence > 0
            && (it + 1) % config.checkpoint_cadence == 0
            && it + 1 != config.iterations
        {
            if let Some(sink) = checkpoint_sink.as_deref_mut() {
                let ck = make_checkpoint(topo, &params, &adaptives, batch, &indices, config, it + 1);
                sink(it + 1, &ck);
            }
        }
    }

    debug_assert_eq!(params.bias, fixed_bias, "fixed biases must never move");
    let checkpoint = make_checkpoint(
        topo,
        &params,
        &adaptives,
        batch,
        &indices,
        config,
        config.iterations,
    );
    Ok(FitResult {
        checkpoint,
        history,
    })
}

fn make_checkpoint(
    topo: &NetworkTopology,
    params: &crate::net::params::Parameters,
    adaptives: &[AdaptivePosterior],
    batch: &SequenceBatch,
    indices: &[usize],
    config: &TrainConfig,
    iterations: u64,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        topology: topo.clone(),
        params: params.clone(),
        provenance: Provenance {
            seed: config.seed,
            iterations,
            dataset_hash: batch.content_hash(),
            train_indices: indices.to_vec(),
            config: config.clone(),
        },
        adaptive: adaptives.to_vec(),
    }
}
