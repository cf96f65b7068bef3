//! Top-down generative pass: priors, posteriors, reparameterized sampling,
//! the leaky-integrator step and the feedforward decoding heads.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::grad::AdaptivePosterior;
use crate::math;
use crate::rng;

use super::params::Parameters;
use super::topology::{Module, NetworkTopology};

/// Sigma pre-activations are clamped to this symmetric bound before `exp`,
/// in both the prior and the posterior path.
pub const SIGMA_CLAMP: f64 = 8.0;

/// Per-module vector bundle, indexed by `Module::index`.
pub type ModuleVecs = [Vec<f64>; 4];

fn module_vecs(topo: &NetworkTopology, latent: bool) -> ModuleVecs {
    let n = if latent { &topo.n_z } else { &topo.n_d };
    [
        vec![0.0; n[0]],
        vec![0.0; n[1]],
        vec![0.0; n[2]],
        vec![0.0; n[3]],
    ]
}

/// Recurrent internal states and outputs of all modules at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub t: usize,
    pub h: ModuleVecs,
    pub d: ModuleVecs,
}

impl RecurrentState {
    /// The zero state at t = 0 (h = 0, hence d = tanh(0) = 0).
    pub fn zero(topo: &NetworkTopology) -> Self {
        RecurrentState {
            t: 0,
            h: module_vecs(topo, false),
            d: module_vecs(topo, false),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| math::all_finite(v)) && self.d.iter().all(|v| math::all_finite(v))
    }
}

/// Per-module Gaussian moments (prior or posterior).
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMoments {
    pub mu: ModuleVecs,
    pub sigma: ModuleVecs,
}

impl LatentMoments {
    pub fn unit(topo: &NetworkTopology) -> Self {
        let mut sigma = module_vecs(topo, true);
        for s in &mut sigma {
            s.iter_mut().for_each(|v| *v = 1.0);
        }
        LatentMoments {
            mu: module_vecs(topo, true),
            sigma,
        }
    }
}

/// A reparameterized latent draw together with the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub z: ModuleVecs,
    pub eps: ModuleVecs,
}

/// Decoded sensory predictions and the head activations they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub extero: Vec<f64>,
    pub proprio: Vec<f64>,
    pub f_ext1: Vec<f64>,
    pub f_ext2: Vec<f64>,
    pub f_pro: Vec<f64>,
}

/// Which distribution supplies z, and whether it is sampled or collapsed to
/// its mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    PosteriorSample,
    PosteriorMean,
    PriorSample,
    PriorMean,
}

impl LatentMode {
    fn posterior(self) -> bool {
        matches!(self, LatentMode::PosteriorSample | LatentMode::PosteriorMean)
    }

    fn sampled(self) -> bool {
        matches!(self, LatentMode::PosteriorSample | LatentMode::PriorSample)
    }
}

/// Source of the reparameterization noise for a forward span.
pub enum EpsSource<'a> {
    /// Draw from the stream, one value per latent unit per step, in module
    /// order.
    Rng(&'a mut ChaCha8Rng),
    /// Replay recorded noise, indexed `[step_offset][module][unit]`.
    Fixed(&'a [ModuleVecs]),
    /// Deterministic: eps = 0 everywhere.
    Zero,
}

impl EpsSource<'_> {
    fn draw(&mut self, step_offset: usize, module: usize, n: usize) -> Vec<f64> {
        match self {
            EpsSource::Rng(rng) => (0..n).map(|_| rng::standard_normal(rng)).collect(),
            EpsSource::Fixed(eps) => eps[step_offset][module].clone(),
            EpsSource::Zero => vec![0.0; n],
        }
    }
}

/// Restriction of the decoding heads to the output rows that are actually
/// needed. Skipped rows stay exactly zero in the prediction.
#[derive(Clone, Debug)]
pub struct OutputRows {
    pub extero: Vec<bool>,
    pub proprio: Vec<bool>,
}

impl OutputRows {
    pub fn all(topo: &NetworkTopology) -> Self {
        OutputRows {
            extero: vec![true; topo.extero_dim()],
            proprio: vec![true; topo.proprio_dim],
        }
    }
}

/// Everything recorded about one generated step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub t: usize,
    pub state: RecurrentState,
    pub prior: LatentMoments,
    /// Raw sigma pre-activations of the prior (before clamping), needed to
    /// gate gradients through the clamp.
    pub prior_pre_sigma: ModuleVecs,
    /// Posterior moments, present when this step was driven by adaptive
    /// variables.
    pub posterior: Option<LatentMoments>,
    /// Raw posterior sigma pre-activations (the a_sigma values used).
    pub posterior_pre_sigma: Option<ModuleVecs>,
    pub sample: LatentSample,
    pub prediction: Prediction,
}

/// A generated span of steps plus the state it started from.
#[derive(Clone, Debug)]
pub struct Trajectory {
    /// First generated step (1-based).
    pub start_t: usize,
    /// State at `start_t - 1`.
    pub boundary: RecurrentState,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_state(&self) -> &RecurrentState {
        self.steps
            .last()
            .map(|s| &s.state)
            .unwrap_or(&self.boundary)
    }
}

/// One leaky-integrator update for all modules, top-down, given this step's
/// latent samples. The executive module has no higher-level input.
pub fn leaky_step(
    prev: &RecurrentState,
    z: &LatentSample,
    params: &Parameters,
    topo: &NetworkTopology,
) -> Result<RecurrentState> {
    if !prev.is_finite() {
        return Err(CoreError::Numeric {
            what: "non-finite recurrent state entering leaky step".into(),
            step: prev.t + 1,
        });
    }
    for (m, zm) in z.z.iter().enumerate() {
        if !math::all_finite(zm) {
            return Err(CoreError::Numeric {
                what: format!("non-finite latent sample in module {}", Module::from_index(m).label()),
                step: prev.t + 1,
            });
        }
    }
    let mut next = RecurrentState {
        t: prev.t + 1,
        h: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
        d: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
    };
    for module in Module::ALL {
        let m = module.index();
        let n = topo.n_d[m];
        // Pre-activation: recurrent + latent + top-down + bias, in that order.
        let mut pre = vec![0.0; n];
        params.w_dd[m].matvec_acc(&prev.d[m], &mut pre);
        params.w_dz[m].matvec_acc(&z.z[m], &mut pre);
        if let Some(hi) = module.higher() {
            params.w_dh[m].matvec_acc(&next.d[hi.index()], &mut pre);
        }
        for (p, b) in pre.iter_mut().zip(&params.bias[m]) {
            *p += b;
        }
        let mut h = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let inv_tau = 1.0 / topo.tau[m][i];
            h[i] = inv_tau * pre[i] + (1.0 - inv_tau) * prev.h[m][i];
            d[i] = math::tanh(h[i]);
        }
        next.h[m] = h;
        next.d[m] = d;
    }
    Ok(next)
}

/// Prior moments for step t from the previous step's recurrent outputs.
/// Each module's prior depends only on its own `d`.
pub fn compute_prior(prev: &RecurrentState, params: &Parameters, topo: &NetworkTopology) -> (LatentMoments, ModuleVecs) {
    let mut mu = module_vecs(topo, true);
    let mut sigma = module_vecs(topo, true);
    let mut pre_sigma = module_vecs(topo, true);
    for module in Module::ALL {
        let m = module.index();
        let mut u_mu = vec![0.0; topo.n_z[m]];
        params.w_pmu[m].matvec_acc(&prev.d[m], &mut u_mu);
        let mut u_sig = vec![0.0; topo.n_z[m]];
        params.w_psig[m].matvec_acc(&prev.d[m], &mut u_sig);
        for i in 0..topo.n_z[m] {
            mu[m][i] = math::tanh(u_mu[i]);
            sigma[m][i] = math::exp(math::clamp(u_sig[i], -SIGMA_CLAMP, SIGMA_CLAMP));
        }
        pre_sigma[m] = u_sig;
    }
    (LatentMoments { mu, sigma }, pre_sigma)
}

/// Posterior moments for one step from the adaptive variables covering it.
pub fn compute_posterior(a_mu: &ModuleVecs, a_sigma: &ModuleVecs) -> LatentMoments {
    let mut mu = a_mu.clone();
    let mut sigma = a_sigma.clone();
    for m in 0..Module::COUNT {
        for i in 0..mu[m].len() {
            mu[m][i] = math::tanh(a_mu[m][i]);
            sigma[m][i] = math::exp(math::clamp(a_sigma[m][i], -SIGMA_CLAMP, SIGMA_CLAMP));
        }
    }
    LatentMoments { mu, sigma }
}

/// Reparameterized draw z = mu + sigma * eps with the noise recorded.
pub fn sample_latent(moments: &LatentMoments, rng: &mut ChaCha8Rng) -> LatentSample {
    let mut z = moments.mu.clone();
    let mut eps = moments.mu.clone();
    for m in 0..Module::COUNT {
        for i in 0..z[m].len() {
            let e = rng::standard_normal(rng);
            eps[m][i] = e;
            z[m][i] = moments.mu[m][i] + moments.sigma[m][i] * e;
        }
    }
    LatentSample { z, eps }
}

fn dense_forward(d: &super::params::Dense, x: &[f64]) -> Vec<f64> {
    let mut y = d.b.clone();
    d.w.matvec_acc(x, &mut y);
    for v in &mut y {
        *v = math::tanh(*v);
    }
    y
}

fn dense_forward_rows(d: &super::params::Dense, x: &[f64], rows: &[bool]) -> Vec<f64> {
    let mut y = vec![0.0; d.b.len()];
    for ((yi, bi), act) in y.iter_mut().zip(&d.b).zip(rows) {
        if *act {
            *yi = *bi;
        }
    }
    d.w.matvec_rows_acc(x, &mut y, rows);
    for (v, act) in y.iter_mut().zip(rows) {
        if *act {
            *v = math::tanh(*v);
        }
    }
    y
}

/// Feedforward decoding: two tanh layers then a tanh output for the
/// exteroceptive path, one tanh layer then a tanh output for proprioception.
pub fn decode(
    d_extero: &[f64],
    d_proprio: &[f64],
    params: &Parameters,
    rows: Option<&OutputRows>,
) -> Prediction {
    let f_ext1 = dense_forward(&params.ext1, d_extero);
    let f_ext2 = dense_forward(&params.ext2, &f_ext1);
    let f_pro = dense_forward(&params.pro1, d_proprio);
    let (extero, proprio) = match rows {
        None => (
            dense_forward(&params.ext_out, &f_ext2),
            dense_forward(&params.pro_out, &f_pro),
        ),
        Some(r) => (
            dense_forward_rows(&params.ext_out, &f_ext2, &r.extero),
            dense_forward_rows(&params.pro_out, &f_pro, &r.proprio),
        ),
    };
    Prediction {
        extero,
        proprio,
        f_ext1,
        f_ext2,
        f_pro,
    }
}

/// Generates steps `boundary.t + 1 ..= boundary.t + len` from `boundary`.
///
/// Posterior modes use the adaptive variables wherever they cover a step and
/// fall back to the prior for any uncovered suffix; prior modes ignore the
/// adaptive variables entirely.
pub fn forward_span(
    params: &Parameters,
    topo: &NetworkTopology,
    boundary: &RecurrentState,
    adaptive: Option<&AdaptivePosterior>,
    len: usize,
    mode: LatentMode,
    mut eps: EpsSource<'_>,
    rows: Option<&OutputRows>,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(CoreError::Config("forward span must cover at least one step".into()));
    }
    let mut steps = Vec::with_capacity(len);
    let mut prev = boundary.clone();
    for k in 0..len {
        let t = boundary.t + 1 + k;
        let (prior, prior_pre_sigma) = compute_prior(&prev, params, topo);
        let covered = adaptive.map(|a| a.covers(t)).unwrap_or(false);
        let use_posterior = mode.posterior() && covered;
        let (posterior, posterior_pre_sigma) = if use_posterior {
            let a = adaptive.unwrap();
            let (a_mu, a_sig) = a.step(t);
            (Some(compute_posterior(a_mu, a_sig)), Some(a_sig.clone()))
        } else {
            if mode.posterior() && !covered && adaptive.is_some() && t <= adaptive.unwrap().end_t()
            {
                return Err(CoreError::Contract(format!(
                    "adaptive posterior does not cover step {t}"
                )));
            }
            (None, None)
        };
        let moments = posterior.as_ref().unwrap_or(&prior);
        let sample = {
            let mut z = module_vecs(topo, true);
            let mut e = module_vecs(topo, true);
            for module in Module::ALL {
                let m = module.index();
                let n = topo.n_z[m];
                let draw = if mode.sampled() {
                    eps.draw(k, m, n)
                } else {
                    vec![0.0; n]
                };
                for i in 0..n {
                    z[m][i] = moments.mu[m][i] + moments.sigma[m][i] * draw[i];
                }
                e[m] = draw;
            }
            LatentSample { z, eps: e }
        };
        let state = leaky_step(&prev, &sample, params, topo)?;
        let e = Module::Extero.index();
        let p = Module::Proprio.index();
        let prediction = decode(&state.d[e], &state.d[p], params, rows);
        prev = state.clone();
        steps.push(StepRecord {
            t,
            state,
            prior,
            prior_pre_sigma,
            posterior,
            posterior_pre_sigma,
            sample,
            prediction,
        });
    }
    Ok(Trajectory {
        start_t: boundary.t + 1,
        boundary: boundary.clone(),
        steps,
    })
}

/// Full-sequence forward from the zero initial state.
pub fn forward_sequence(
    params: &Parameters,
    topo: &NetworkTopology,
    adaptive: Option<&AdaptivePosterior>,
    t_len: usize,
    mode: LatentMode,
    eps: EpsSource<'_>,
) -> Result<Trajectory> {
    if t_len == 0 {
        return Err(CoreError::Config("sequence length must be positive".into()));
    }
    if mode.posterior() {
        match adaptive {
            Some(a) if a.start_t() == 1 && a.len() >= t_len => {}
            _ => {
                return Err(CoreError::Contract(
                    "posterior mode requires adaptive variables covering steps 1..=T".into(),
                ))
            }
        }
    }
    forward_span(
        params,
        topo,
        &RecurrentState::zero(topo),
        adaptive,
        t_len,
        mode,
        eps,
        None,
    )
}

/// Regenerates a trajectory from explicitly given latent samples (used by the
/// ablation analysis). `z_override[k][m]` replaces the latent of module `m`
/// at step offset `k`; entries set to `None` leave that module's recorded z.
pub fn replay_with_z(
    params: &Parameters,
    topo: &NetworkTopology,
    z_series: &[ModuleVecs],
    zero_module: Option<Module>,
) -> Result<Vec<Prediction>> {
    let mut prev = RecurrentState::zero(topo);
    let mut out = Vec::with_capacity(z_series.len());
    for zs in z_series {
        let mut z = zs.clone();
        if let Some(m) = zero_module {
            z[m.index()].iter_mut().for_each(|v| *v = 0.0);
        }
        let sample = LatentSample {
            eps: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
            z,
        };
        let state = leaky_step(&prev, &sample, params, topo)?;
        let e = Module::Extero.index();
        let p = Module::Proprio.index();
        out.push(decode(&state.d[e], &state.d[p], params, None));
        prev = state;
    }
    Ok(out)
}
