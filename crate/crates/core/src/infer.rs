//! Online inference: per incoming observation, re-minimize free energy over
//! the adaptive variables inside a sliding window, with the weights frozen.
//!
//! Steps that leave the window keep their final adaptive values and define
//! the cached boundary state the next windows restart from (frozen history).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::datagen::SequenceBatch;
use crate::error::{CoreError, Result};
use crate::free_energy::{FreeEnergyTerms, ObservationMask, StepMask, StepObs};
use crate::grad::{backward, AdaptivePosterior, BackwardOpts};
use crate::math;
use crate::net::forward::{
    forward_span, EpsSource, LatentMode, LatentMoments, ModuleVecs, OutputRows, Prediction,
    RecurrentState,
};
use crate::net::topology::NetworkTopology;
use crate::rng;
use crate::runner::ParallelMap;

/// Which exteroceptive resolution groups and modalities drive the error
/// signal during inference.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPolicy {
    /// Included resolution group indices.
    pub groups: Vec<usize>,
    pub proprio: bool,
}

impl MaskPolicy {
    pub fn all(topo: &NetworkTopology) -> Self {
        MaskPolicy {
            groups: (0..topo.extero_groups.len()).collect(),
            proprio: true,
        }
    }

    pub fn step_mask(&self, topo: &NetworkTopology) -> StepMask {
        StepMask::with_groups(topo, &self.groups, self.proprio)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InferOptimizer {
    /// Plain gradient descent at the inference learning rate.
    Sgd,
    /// Rectified-Adam variant (optional alternative).
    RAdam,
}

/// Online-inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    /// Sliding window length H (the window is `[t-H+1, t]`, or `[1, t]`
    /// while t < H).
    pub window: usize,
    /// Update rounds per incoming observation.
    pub rounds: usize,
    pub learning_rate: f64,
    pub trials_per_sequence: usize,
    /// Pure-prior rollout horizon appended after the last observation in
    /// trial runs (0 = none).
    pub horizon: usize,
    pub mask: MaskPolicy,
    pub optimizer: InferOptimizer,
    /// Diagnostic mode: reuse one noise draw across the rounds of a step so
    /// the within-step objective is fixed.
    pub fixed_eps: bool,
    /// Collapse latents to their means in the final recorded pass and in
    /// rollouts.
    pub deterministic_z: bool,
}

impl InferConfig {
    pub fn new(topo: &NetworkTopology) -> Self {
        InferConfig {
            window: 30,
            rounds: 50,
            learning_rate: 1.0,
            trials_per_sequence: 5,
            horizon: 0,
            mask: MaskPolicy::all(topo),
            optimizer: InferOptimizer::Sgd,
            fixed_eps: false,
            deterministic_z: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(CoreError::Config("window length must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(CoreError::Config("inference rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoreError::Config("inference learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Everything recorded about one observation step (final forward pass of the
/// window after its update rounds).
#[derive(Clone, Debug)]
pub struct StepResult {
    pub t: usize,
    /// Full decode at t, all resolution groups (never masked).
    pub prediction: Prediction,
    pub prior: LatentMoments,
    pub posterior: LatentMoments,
    pub z: ModuleVecs,
    /// Masked free energy of step t.
    pub fe: FreeEnergyTerms,
    /// Window free energy after the rounds.
    pub window_total: f64,
    /// Window free energy evaluated at each round (before that round's
    /// update).
    pub round_fe: Vec<f64>,
}

struct RAdamSlots {
    m_mu: Vec<ModuleVecs>,
    v_mu: Vec<ModuleVecs>,
    m_sig: Vec<ModuleVecs>,
    v_sig: Vec<ModuleVecs>,
    step: u64,
    beta1_pow: f64,
    beta2_pow: f64,
}

/// A stateful inference run over one observation stream.
pub struct InferenceSession<'a> {
    ck: &'a Checkpoint,
    cfg: InferConfig,
    seed: u64,
    t: usize,
    window: AdaptivePosterior,
    window_obs_e: Vec<Vec<f64>>,
    window_obs_p: Vec<Vec<f64>>,
    window_masks: Vec<StepMask>,
    boundary: RecurrentState,
    last_state: RecurrentState,
    /// Latent samples of steps that have left the window (final values),
    /// indexed by absolute step - 1.
    frozen_z: Vec<ModuleVecs>,
    frozen_adaptive: Vec<(ModuleVecs, ModuleVecs)>,
    results: Vec<StepResult>,
    radam: Option<RAdamSlots>,
}

/// Opens a session on a frozen checkpoint: t = 0, empty window, zero
/// boundary state.
pub fn open_session<'a>(
    ck: &'a Checkpoint,
    cfg: InferConfig,
    seed: u64,
) -> Result<InferenceSession<'a>> {
    cfg.validate()?;
    ck.topology.validate()?;
    if ck.version != crate::checkpoint::CHECKPOINT_VERSION {
        return Err(CoreError::Config(format!(
            "checkpoint version {} unsupported",
            ck.version
        )));
    }
    for &g in &cfg.mask.groups {
        if g >= ck.topology.extero_groups.len() {
            return Err(CoreError::Config(format!(
                "mask policy names resolution group {g}, topology has {}",
                ck.topology.extero_groups.len()
            )));
        }
    }
    let boundary = RecurrentState::zero(&ck.topology);
    Ok(InferenceSession {
        radam: if cfg.optimizer == InferOptimizer::RAdam {
            Some(RAdamSlots {
                m_mu: Vec::new(),
                v_mu: Vec::new(),
                m_sig: Vec::new(),
                v_sig: Vec::new(),
                step: 0,
                beta1_pow: 1.0,
                beta2_pow: 1.0,
            })
        } else {
            None
        },
        ck,
        cfg,
        seed,
        t: 0,
        window: AdaptivePosterior::zeros(&ck.topology, 0, 1, 0),
        window_obs_e: Vec::new(),
        window_obs_p: Vec::new(),
        window_masks: Vec::new(),
        boundary,
        last_state: RecurrentState::zero(&ck.topology),
        frozen_z: Vec::new(),
        frozen_adaptive: Vec::new(),
        results: Vec::new(),
    })
}

impl<'a> InferenceSession<'a> {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn config(&self) -> &InferConfig {
        &self.cfg
    }

    pub fn results(&self) -> &[StepResult] {
        &self.results
    }

    pub fn take_results(self) -> Vec<StepResult> {
        self.results
    }

    /// Window coverage as (first step, last step), if nonempty.
    pub fn window_span(&self) -> Option<(usize, usize)> {
        if self.window.is_empty() {
            None
        } else {
            Some((self.window.start_t(), self.window.end_t()))
        }
    }

    pub fn frozen_adaptive(&self) -> &[(ModuleVecs, ModuleVecs)] {
        &self.frozen_adaptive
    }

    pub fn boundary_state(&self) -> &RecurrentState {
        &self.boundary
    }

    fn active_rows(&self, mask_union: &[StepMask]) -> OutputRows {
        let topo = &self.ck.topology;
        let mut rows = OutputRows {
            extero: vec![false; topo.extero_dim()],
            proprio: vec![false; topo.proprio_dim],
        };
        for m in mask_union {
            for (r, v) in rows.extero.iter_mut().zip(&m.extero) {
                *r |= *v;
            }
            for (r, v) in rows.proprio.iter_mut().zip(&m.proprio) {
                *r |= *v;
            }
        }
        rows
    }

    /// Consumes one observation: appends step t to the window, runs the
    /// update rounds, records the final pass, then slides the window if it
    /// now exceeds H.
    pub fn step(
        &mut self,
        extero: &[f64],
        proprio: &[f64],
        mask: StepMask,
    ) -> Result<&StepResult> {
        let topo = &self.ck.topology;
        if extero.len() != topo.extero_dim() || proprio.len() != topo.proprio_dim {
            return Err(CoreError::Shape(format!(
                "observation dims ({}, {}) do not match the checkpoint topology ({}, {})",
                extero.len(),
                proprio.len(),
                topo.extero_dim(),
                topo.proprio_dim
            )));
        }
        if !math::all_finite(extero) || !math::all_finite(proprio) {
            return Err(CoreError::Data(format!(
                "non-finite observation at step {}",
                self.t + 1
            )));
        }
        mask.validate(topo)?;

        self.t += 1;
        let t = self.t;
        if self.window.is_empty() {
            self.window = AdaptivePosterior::zeros(topo, 0, t, 0);
        }
        self.window.push_zero_step(topo);
        self.window_obs_e.push(extero.to_vec());
        self.window_obs_p.push(proprio.to_vec());
        self.window_masks.push(mask);
        if let Some(r) = self.radam.as_mut() {
            let mk = || {
                [
                    vec![0.0; topo.n_z[0]],
                    vec![0.0; topo.n_z[1]],
                    vec![0.0; topo.n_z[2]],
                    vec![0.0; topo.n_z[3]],
                ]
            };
            r.m_mu.push(mk());
            r.v_mu.push(mk());
            r.m_sig.push(mk());
            r.v_sig.push(mk());
        }

        let wlen = self.window.len();
        let masks = ObservationMask {
            steps: self.window_masks.clone(),
        };
        let rows = self.active_rows(&self.window_masks);
        let mut round_fe = Vec::with_capacity(self.cfg.rounds);

        for round in 0..self.cfg.rounds {
            let eps_key = if self.cfg.fixed_eps { 0 } else { round as u64 };
            let mut eps_rng = rng::stream(self.seed, &[rng::salt::INFER, t as u64, eps_key]);
            let traj = forward_span(
                &self.ck.params,
                topo,
                &self.boundary,
                Some(&self.window),
                wlen,
                LatentMode::PosteriorSample,
                EpsSource::Rng(&mut eps_rng),
                Some(&rows),
            )?;
            let obs: Vec<StepObs<'_>> = (0..wlen)
                .map(|k| StepObs {
                    extero: &self.window_obs_e[k],
                    proprio: &self.window_obs_p[k],
                })
                .collect();
            let fe = crate::free_energy::sequence_free_energy(
                &traj,
                &obs,
                &masks,
                self.ck.provenance.config.meta_prior,
            )?;
            round_fe.push(fe.total);
            let grads = backward(
                &self.ck.params,
                topo,
                &traj,
                &obs,
                &masks,
                self.ck.provenance.config.meta_prior,
                BackwardOpts {
                    with_param_grads: false,
                },
            )?;
            drop(obs);
            self.apply_adaptive_update(&grads.adaptive.a_mu, &grads.adaptive.a_sig)?;
        }

        // Final recorded pass: full decode, fresh keyed noise (or means).
        let mut eps_rng =
            rng::stream(self.seed, &[rng::salt::INFER, t as u64, self.cfg.rounds as u64]);
        let mode = if self.cfg.deterministic_z {
            LatentMode::PosteriorMean
        } else {
            LatentMode::PosteriorSample
        };
        let traj = forward_span(
            &self.ck.params,
            topo,
            &self.boundary,
            Some(&self.window),
            wlen,
            mode,
            EpsSource::Rng(&mut eps_rng),
            None,
        )?;
        let obs: Vec<StepObs<'_>> = (0..wlen)
            .map(|k| StepObs {
                extero: &self.window_obs_e[k],
                proprio: &self.window_obs_p[k],
            })
            .collect();
        let window_terms = crate::free_energy::sequence_free_energy(
            &traj,
            &obs,
            &masks,
            self.ck.provenance.config.meta_prior,
        )?;
        let last = traj.steps.last().expect("window nonempty");
        let fe_t = crate::free_energy::trajectory_step_terms(
            &traj,
            wlen - 1,
            obs[wlen - 1],
            masks.step(wlen - 1),
            self.ck.provenance.config.meta_prior,
        )?;
        drop(obs);
        let result = StepResult {
            t,
            prediction: last.prediction.clone(),
            prior: last.prior.clone(),
            posterior: last.posterior.clone().expect("posterior-driven window"),
            z: last.sample.z.clone(),
            fe: fe_t,
            window_total: window_terms.total,
            round_fe,
        };
        self.last_state = last.state.clone();

        // Slide: freeze the leftmost step once the window exceeds H.
        if self.window.len() > self.cfg.window {
            let frozen = self.window.pop_front();
            self.frozen_adaptive.push(frozen);
            self.frozen_z.push(traj.steps[0].sample.z.clone());
            self.boundary = traj.steps[0].state.clone();
            self.window_obs_e.remove(0);
            self.window_obs_p.remove(0);
            self.window_masks.remove(0);
            if let Some(r) = self.radam.as_mut() {
                r.m_mu.remove(0);
                r.v_mu.remove(0);
                r.m_sig.remove(0);
                r.v_sig.remove(0);
            }
        }

        self.results.push(result);
        Ok(self.results.last().unwrap())
    }

    fn apply_adaptive_update(
        &mut self,
        g_mu: &[ModuleVecs],
        g_sig: &[ModuleVecs],
    ) -> Result<()> {
        let lr = self.cfg.learning_rate;
        let wlen = self.window.len();
        match self.radam.as_mut() {
            None => {
                for k in 0..wlen {
                    let t = self.window.start_t() + k;
                    let (a_mu, a_sig) = self.window.step_mut(t);
                    for m in 0..4 {
                        math::axpy(-lr, &g_mu[k][m], &mut a_mu[m]);
                        math::axpy(-lr, &g_sig[k][m], &mut a_sig[m]);
                    }
                }
            }
            Some(r) => {
                let (b1, b2) = (0.9, 0.999);
                r.step += 1;
                r.beta1_pow *= b1;
                r.beta2_pow *= b2;
                let bc1 = 1.0 - r.beta1_pow;
                let bc2 = 1.0 - r.beta2_pow;
                let rho_inf = 2.0 / (1.0 - b2) - 1.0;
                let rho =
                    rho_inf - 2.0 * (r.step as f64) * r.beta2_pow / (1.0 - r.beta2_pow);
                let rect = rho > 4.0;
                let r_t = if rect {
                    math::sqrt(
                        ((rho - 4.0) * (rho - 2.0) * rho_inf)
                            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho),
                    )
                } else {
                    0.0
                };
                for k in 0..wlen {
                    let t = self.window.start_t() + k;
                    for m in 0..4 {
                        for (which, g_step) in [(0usize, &g_mu[k][m]), (1, &g_sig[k][m])] {
                            for i in 0..g_step.len() {
                                let g = g_step[i];
                                let (mm, vv) = if which == 0 {
                                    (&mut r.m_mu[k][m][i], &mut r.v_mu[k][m][i])
                                } else {
                                    (&mut r.m_sig[k][m][i], &mut r.v_sig[k][m][i])
                                };
                                *mm = b1 * *mm + (1.0 - b1) * g;
                                *vv = b2 * *vv + (1.0 - b2) * g * g;
                                let m_hat = *mm / bc1;
                                let upd = if rect {
                                    let v_hat = math::sqrt(*vv / bc2);
                                    r_t * m_hat / (v_hat + crate::train::radam::RADAM_EPS)
                                } else {
                                    m_hat
                                };
                                let (a_mu, a_sig) = self.window.step_mut(t);
                                let slot = if which == 0 {
                                    &mut a_mu[m][i]
                                } else {
                                    &mut a_sig[m][i]
                                };
                                *slot -= lr * upd;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Continues the network for `horizon` steps in prior mode from the
    /// current state, without consuming observations or mutating the
    /// session. Pure function of the session state, so repeated calls give
    /// identical rollouts.
    pub fn rollout(&self, horizon: usize) -> Result<Vec<Prediction>> {
        if self.t == 0 {
            return Err(CoreError::Contract(
                "rollout requires at least one observed step".into(),
            ));
        }
        if horizon == 0 {
            return Ok(Vec::new());
        }
        let mode = if self.cfg.deterministic_z {
            LatentMode::PriorMean
        } else {
            LatentMode::PriorSample
        };
        let mut eps_rng = rng::stream(self.seed, &[rng::salt::ROLLOUT, self.t as u64]);
        let traj = forward_span(
            &self.ck.params,
            &self.ck.topology,
            &self.last_state,
            None,
            horizon,
            mode,
            EpsSource::Rng(&mut eps_rng),
            None,
        )?;
        Ok(traj.steps.into_iter().map(|s| s.prediction).collect())
    }

    /// Replays the frozen out-of-window history (steps `1..=n`) from the
    /// zero state with the recorded latent samples; used to verify the
    /// cached boundary state.
    pub fn replay_frozen_boundary(&self) -> Result<RecurrentState> {
        let topo = &self.ck.topology;
        let mut state = RecurrentState::zero(topo);
        for z in &self.frozen_z {
            let sample = crate::net::forward::LatentSample {
                z: z.clone(),
                eps: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
            };
            state = crate::net::forward::leaky_step(&state, &sample, &self.ck.params, topo)?;
        }
        Ok(state)
    }
}

/// One completed inference trial.
#[derive(Clone, Debug)]
pub struct Trial {
    pub seq_index: usize,
    pub trial: usize,
    pub seed: u64,
    pub steps: Vec<StepResult>,
    pub rollout: Vec<Prediction>,
}

/// Per-trial logs for a set of test sequences.
#[derive(Clone, Debug)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Runs `trials_per_sequence` independent sessions per test sequence with
/// distinct noise streams. Trials fan out over the runner; each is keyed by
/// (sequence, trial), so the set is reproducible for any executor.
pub fn run_trials<R: ParallelMap>(
    ck: &Checkpoint,
    batch: &SequenceBatch,
    seq_indices: &[usize],
    cfg: &InferConfig,
    master_seed: u64,
    runner: &R,
) -> Result<TrialSet> {
    cfg.validate()?;
    let topo = &ck.topology;
    if batch.extero_dim() != topo.extero_dim() || batch.proprio_dim != topo.proprio_dim {
        return Err(CoreError::Shape(
            "dataset dims do not match the checkpoint topology".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = seq_indices
        .iter()
        .flat_map(|&s| (0..cfg.trials_per_sequence).map(move |k| (s, k)))
        .collect();
    let results: Vec<Result<Trial>> = runner.map(jobs.len(), &|j: usize| {
        let (seq_index, trial) = jobs[j];
        let seq = &batch.sequences[seq_index];
        let seed = rng::mix(master_seed, &[rng::salt::TRIAL, seq_index as u64, trial as u64]);
        let mut session = open_session(ck, cfg.clone(), seed)?;
        let mask = cfg.mask.step_mask(topo);
        for k in 0..seq.t_len {
            let obs = seq.obs(k);
            session.step(obs.extero, obs.proprio, mask.clone())?;
        }
        let rollout = if cfg.horizon > 0 {
            session.rollout(cfg.horizon)?
        } else {
            Vec::new()
        };
        Ok(Trial {
            seq_index,
            trial,
            seed,
            steps: session.take_results(),
            rollout,
        })
    });
    let mut trials = Vec::with_capacity(results.len());
    for r in results {
        trials.push(r?);
    }
    Ok(TrialSet { trials })
}

/// Total number of per-step log rows a trial set will export.
pub fn expected_log_rows(set: &TrialSet) -> usize {
    set.trials.iter().map(|t| t.steps.len()).sum()
}
