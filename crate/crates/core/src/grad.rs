//! Reverse-mode gradients of free-energy objectives through the unrolled
//! network, including the reparameterized latent samples.
//!
//! The adjoints are hand-derived for this fixed architecture; the
//! finite-difference harness at the bottom is the correctness contract and
//! runs over every trainable group.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::free_energy::{ObservationMask, StepObs};
use crate::math::{self, Mat};
use crate::net::forward::{
    forward_span, EpsSource, LatentMode, ModuleVecs, RecurrentState, Trajectory, SIGMA_CLAMP,
};
use crate::net::params::{Dense, Parameters};
use crate::net::topology::{Module, NetworkTopology};

/// Per-sequence, per-step internal states parameterizing the posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptivePosterior {
    pub seq_id: usize,
    start_t: usize,
    a_mu: Vec<ModuleVecs>,
    a_sig: Vec<ModuleVecs>,
}

impl AdaptivePosterior {
    /// Zero-initialized adaptive variables covering steps `start_t ..
    /// start_t+len-1`. At a = 0 the posterior is the unit Gaussian, which at
    /// t = 1 coincides exactly with the prior (d_0 = 0 forces mu_p = 0,
    /// sigma_p = 1).
    pub fn zeros(topo: &NetworkTopology, seq_id: usize, start_t: usize, len: usize) -> Self {
        let mk = || -> Vec<ModuleVecs> {
            (0..len)
                .map(|_| {
                    [
                        vec![0.0; topo.n_z[0]],
                        vec![0.0; topo.n_z[1]],
                        vec![0.0; topo.n_z[2]],
                        vec![0.0; topo.n_z[3]],
                    ]
                })
                .collect()
        };
        AdaptivePosterior {
            seq_id,
            start_t,
            a_mu: mk(),
            a_sig: mk(),
        }
    }

    pub fn start_t(&self) -> usize {
        self.start_t
    }

    pub fn len(&self) -> usize {
        self.a_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_mu.is_empty()
    }

    pub fn end_t(&self) -> usize {
        self.start_t + self.len() - 1
    }

    pub fn covers(&self, t: usize) -> bool {
        !self.is_empty() && t >= self.start_t && t <= self.end_t()
    }

    pub fn step(&self, t: usize) -> (&ModuleVecs, &ModuleVecs) {
        let k = t - self.start_t;
        (&self.a_mu[k], &self.a_sig[k])
    }

    pub fn step_mut(&mut self, t: usize) -> (&mut ModuleVecs, &mut ModuleVecs) {
        let k = t - self.start_t;
        (&mut self.a_mu[k], &mut self.a_sig[k])
    }

    /// Appends one zero-initialized step at the end of the covered range.
    pub fn push_zero_step(&mut self, topo: &NetworkTopology) {
        let mk = || {
            [
                vec![0.0; topo.n_z[0]],
                vec![0.0; topo.n_z[1]],
                vec![0.0; topo.n_z[2]],
                vec![0.0; topo.n_z[3]],
            ]
        };
        self.a_mu.push(mk());
        self.a_sig.push(mk());
    }

    /// Drops the first covered step, returning its values.
    pub fn pop_front(&mut self) -> (ModuleVecs, ModuleVecs) {
        let mu = self.a_mu.remove(0);
        let sig = self.a_sig.remove(0);
        self.start_t += 1;
        (mu, sig)
    }

    /// Mutable slices in canonical order (per step, per module, mu then
    /// sigma), matching [`AdaptiveGrads::flat`].
    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (mu_step, sig_step) in self.a_mu.iter_mut().zip(self.a_sig.iter_mut()) {
            for m in mu_step.iter_mut() {
                out.push(m);
            }
            for s in sig_step.iter_mut() {
                out.push(s);
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.a_mu
            .iter()
            .chain(self.a_sig.iter())
            .all(|step| step.iter().all(|v| math::all_finite(v)))
    }
}

/// Gradients for every trainable parameter tensor. Fixed recurrent biases
/// deliberately have no slot here.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub w_dd: [Mat; 4],
    pub w_dz: [Mat; 4],
    pub w_dh: [Mat; 4],
    pub w_pmu: [Mat; 4],
    pub w_psig: [Mat; 4],
    pub ext1: Dense,
    pub ext2: Dense,
    pub ext_out: Dense,
    pub pro1: Dense,
    pub pro_out: Dense,
}

impl ParamGrads {
    pub fn zeros(topo: &NetworkTopology) -> Self {
        let p = Parameters::zeros(topo).expect("validated topology");
        ParamGrads {
            w_dd: p.w_dd,
            w_dz: p.w_dz,
            w_dh: p.w_dh,
            w_pmu: p.w_pmu,
            w_psig: p.w_psig,
            ext1: p.ext1,
            ext2: p.ext2,
            ext_out: p.ext_out,
            pro1: p.pro1,
            pro_out: p.pro_out,
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.w_dd.iter_mut().zip(&other.w_dd) {
            a.add_assign(b);
        }
        for (a, b) in self.w_dz.iter_mut().zip(&other.w_dz) {
            a.add_assign(b);
        }
        for (a, b) in self.w_dh.iter_mut().zip(&other.w_dh) {
            a.add_assign(b);
        }
        for (a, b) in self.w_pmu.iter_mut().zip(&other.w_pmu) {
            a.add_assign(b);
        }
        for (a, b) in self.w_psig.iter_mut().zip(&other.w_psig) {
            a.add_assign(b);
        }
        for (a, b) in [
            (&mut self.ext1, &other.ext1),
            (&mut self.ext2, &other.ext2),
            (&mut self.ext_out, &other.ext_out),
            (&mut self.pro1, &other.pro1),
            (&mut self.pro_out, &other.pro_out),
        ] {
            a.w.add_assign(&b.w);
            math::axpy(1.0, &b.b, &mut a.b);
        }
    }

    /// Slices in the same canonical order as `Parameters::trainable_mut`.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.w_dd.iter().map(|m| m.data()));
        out.extend(self.w_dz.iter().map(|m| m.data()));
        out.extend(self.w_dh.iter().filter(|m| !m.is_empty()).map(|m| m.data()));
        out.extend(self.w_pmu.iter().map(|m| m.data()));
        out.extend(self.w_psig.iter().map(|m| m.data()));
        for d in [&self.ext1, &self.ext2, &self.ext_out, &self.pro1, &self.pro_out] {
            out.push(d.w.data());
            out.push(&d.b);
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let ParamGrads {
            w_dd,
            w_dz,
            w_dh,
            w_pmu,
            w_psig,
            ext1,
            ext2,
            ext_out,
            pro1,
            pro_out,
        } = self;
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(w_dd.iter_mut().map(|m| m.data_mut()));
        out.extend(w_dz.iter_mut().map(|m| m.data_mut()));
        out.extend(w_dh.iter_mut().filter(|m| !m.is_empty()).map(|m| m.data_mut()));
        out.extend(w_pmu.iter_mut().map(|m| m.data_mut()));
        out.extend(w_psig.iter_mut().map(|m| m.data_mut()));
        for d in [ext1, ext2, ext_out, pro1, pro_out] {
            out.push(d.w.data_mut());
            out.push(&mut d.b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|t| math::all_finite(t))
    }
}

/// Gradients for the adaptive variables of one covered step range.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveGrads {
    pub start_t: usize,
    pub a_mu: Vec<ModuleVecs>,
    pub a_sig: Vec<ModuleVecs>,
}

impl AdaptiveGrads {
    pub fn zeros(topo: &NetworkTopology, start_t: usize, len: usize) -> Self {
        let a = AdaptivePosterior::zeros(topo, 0, start_t, len);
        AdaptiveGrads {
            start_t,
            a_mu: a.a_mu,
            a_sig: a.a_sig,
        }
    }

    /// Slices in the canonical order matching `AdaptivePosterior::flat_mut`.
    pub fn flat(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (mu_step, sig_step) in self.a_mu.iter().zip(&self.a_sig) {
            for m in mu_step.iter() {
                out.push(m);
            }
            for s in sig_step.iter() {
                out.push(s);
            }
        }
        out
    }
}

/// The result of one backward pass.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub params: ParamGrads,
    pub adaptive: AdaptiveGrads,
    /// Adjoint of the recurrent outputs entering the span's left edge. Never
    /// applied as an update; reported for the truncation-boundary contract.
    pub boundary_d: ModuleVecs,
    /// Adjoint of the internal states entering the span's left edge.
    pub boundary_h: ModuleVecs,
    pub sequences: usize,
    pub steps: usize,
}

/// Options for [`backward`].
#[derive(Clone, Copy, Debug)]
pub struct BackwardOpts {
    /// Compute parameter gradients (disable during online inference, where
    /// only adaptive variables are updated).
    pub with_param_grads: bool,
}

impl Default for BackwardOpts {
    fn default() -> Self {
        BackwardOpts {
            with_param_grads: true,
        }
    }
}

fn clamp_gate(u: f64) -> f64 {
    if u > -SIGMA_CLAMP && u < SIGMA_CLAMP {
        1.0
    } else {
        0.0
    }
}

fn dense_backward(
    layer: &Dense,
    input: &[f64],
    output: &[f64],
    g_out: &[f64],
    grads: Option<&mut Dense>,
    g_input: &mut [f64],
) {
    // g_y = g_out * (1 - out^2); then split into weight grads and input
    // adjoints.
    let mut gy = vec![0.0; output.len()];
    for ((g, o), go) in gy.iter_mut().zip(output).zip(g_out) {
        *g = go * (1.0 - o * o);
    }
    if let Some(gl) = grads {
        gl.w.outer_acc(&gy, input);
        math::axpy(1.0, &gy, &mut gl.b);
    }
    layer.w.matvec_t_acc(&gy, g_input);
}

/// Exact reverse-mode gradients of the summed free energy of `traj` against
/// `obs`/`masks`, with respect to every trainable parameter and the adaptive
/// variables of every posterior-driven step in the span.
///
/// Gradients flow through the reparameterized samples into both posterior
/// moments, through the leaky recurrence, through same-step top-down edges,
/// and through the prior parameterization into the previous step's outputs.
pub fn backward(
    params: &Parameters,
    topo: &NetworkTopology,
    traj: &Trajectory,
    obs: &[StepObs<'_>],
    masks: &ObservationMask,
    meta_prior: f64,
    opts: BackwardOpts,
) -> Result<GradientSet> {
    let len = traj.len();
    if obs.len() != len || masks.steps.len() != len {
        return Err(CoreError::Shape(
            "backward needs one observation and mask per trajectory step".into(),
        ));
    }
    for rec in &traj.steps {
        if rec.posterior.is_some() && rec.sample.eps[0].len() != topo.n_z[0] {
            return Err(CoreError::Contract(
                "trajectory step is missing its recorded noise".into(),
            ));
        }
    }
    let d_ext = topo.extero_dim() as f64;
    let d_pro = topo.proprio_dim as f64;

    let mut grads = ParamGrads::zeros(topo);
    let mut adaptive = AdaptiveGrads::zeros(topo, traj.start_t, len);
    let pg = opts.with_param_grads;

    // Adjoints carried from step t+1 to step t (indexed by module).
    let mut gd_carry: ModuleVecs = [
        vec![0.0; topo.n_d[0]],
        vec![0.0; topo.n_d[1]],
        vec![0.0; topo.n_d[2]],
        vec![0.0; topo.n_d[3]],
    ];
    let mut gh_carry: ModuleVecs = gd_carry.clone();

    for k in (0..len).rev() {
        let rec = &traj.steps[k];
        let prev_state = if k > 0 {
            &traj.steps[k - 1].state
        } else {
            &traj.boundary
        };
        let mask = masks.step(k);
        let x = obs[k];

        let mut gd = core::mem::replace(
            &mut gd_carry,
            [
                vec![0.0; topo.n_d[0]],
                vec![0.0; topo.n_d[1]],
                vec![0.0; topo.n_d[2]],
                vec![0.0; topo.n_d[3]],
            ],
        );
        let gh_in = core::mem::replace(
            &mut gh_carry,
            [
                vec![0.0; topo.n_d[0]],
                vec![0.0; topo.n_d[1]],
                vec![0.0; topo.n_d[2]],
                vec![0.0; topo.n_d[3]],
            ],
        );

        // --- decoding heads ---
        let pred = &rec.prediction;
        let mut gx_ext = vec![0.0; pred.extero.len()];
        for i in 0..gx_ext.len() {
            if mask.extero[i] {
                gx_ext[i] = (pred.extero[i] - x.extero[i]) / d_ext;
            }
        }
        let mut gx_pro = vec![0.0; pred.proprio.len()];
        for i in 0..gx_pro.len() {
            if mask.proprio[i] {
                gx_pro[i] = (pred.proprio[i] - x.proprio[i]) / d_pro;
            }
        }
        let e = Module::Extero.index();
        let p = Module::Proprio.index();
        {
            let mut gf2 = vec![0.0; pred.f_ext2.len()];
            dense_backward(
                &params.ext_out,
                &pred.f_ext2,
                &pred.extero,
                &gx_ext,
                pg.then_some(&mut grads.ext_out),
                &mut gf2,
            );
            let mut gf1 = vec![0.0; pred.f_ext1.len()];
            dense_backward(
                &params.ext2,
                &pred.f_ext1,
                &pred.f_ext2,
                &gf2,
                pg.then_some(&mut grads.ext2),
                &mut gf1,
            );
            dense_backward(
                &params.ext1,
                &rec.state.d[e],
                &pred.f_ext1,
                &gf1,
                pg.then_some(&mut grads.ext1),
                &mut gd[e],
            );
            let mut gfp = vec![0.0; pred.f_pro.len()];
            dense_backward(
                &params.pro_out,
                &pred.f_pro,
                &pred.proprio,
                &gx_pro,
                pg.then_some(&mut grads.pro_out),
                &mut gfp,
            );
            dense_backward(
                &params.pro1,
                &rec.state.d[p],
                &pred.f_pro,
                &gfp,
                pg.then_some(&mut grads.pro1),
                &mut gd[p],
            );
        }

        // --- recurrent modules, bottom-up so same-step top-down edges are
        // fully accumulated before their source module is processed ---
        let mut gz: ModuleVecs = [
            vec![0.0; topo.n_z[0]],
            vec![0.0; topo.n_z[1]],
            vec![0.0; topo.n_z[2]],
            vec![0.0; topo.n_z[3]],
        ];
        for module in Module::ALL.iter().rev() {
            let m = module.index();
            let n = topo.n_d[m];
            let mut gh = gh_in[m].clone();
            for i in 0..n {
                let d = rec.state.d[m][i];
                gh[i] += gd[m][i] * (1.0 - d * d);
            }
            let mut gpre = vec![0.0; n];
            for i in 0..n {
                let inv_tau = 1.0 / topo.tau[m][i];
                gpre[i] = gh[i] * inv_tau;
                gh_carry[m][i] += gh[i] * (1.0 - inv_tau);
            }
            if pg {
                grads.w_dd[m].outer_acc(&gpre, &prev_state.d[m]);
            }
            params.w_dd[m].matvec_t_acc(&gpre, &mut gd_carry[m]);
            if pg {
                grads.w_dz[m].outer_acc(&gpre, &rec.sample.z[m]);
            }
            params.w_dz[m].matvec_t_acc(&gpre, &mut gz[m]);
            if let Some(hi) = module.higher() {
                let hi = hi.index();
                if pg {
                    grads.w_dh[m].outer_acc(&gpre, &rec.state.d[hi]);
                }
                params.w_dh[m].matvec_t_acc(&gpre, &mut gd[hi]);
            }
        }

        // --- latents: reparameterized samples, KLD, priors ---
        let posterior_step = rec.posterior.is_some();
        for module in Module::ALL {
            let m = module.index();
            let nz = topo.n_z[m];
            let mut g_pmu = vec![0.0; nz];
            let mut g_psig = vec![0.0; nz];
            if posterior_step {
                let post = rec.posterior.as_ref().unwrap();
                let a_sig_raw = rec.posterior_pre_sigma.as_ref().unwrap();
                let c = meta_prior / nz as f64;
                let mut g_qmu = vec![0.0; nz];
                let mut g_qsig = vec![0.0; nz];
                for i in 0..nz {
                    // z = mu_q + sigma_q * eps
                    g_qmu[i] += gz[m][i];
                    g_qsig[i] += gz[m][i] * rec.sample.eps[m][i];
                    // KLD terms
                    let mu_q = post.mu[m][i];
                    let mu_p = rec.prior.mu[m][i];
                    let sig_q = post.sigma[m][i];
                    let sig_p = rec.prior.sigma[m][i];
                    let inv_p2 = 1.0 / (sig_p * sig_p);
                    g_qmu[i] += c * (mu_q - mu_p) * inv_p2;
                    g_pmu[i] += c * (mu_p - mu_q) * inv_p2;
                    g_qsig[i] += c * (sig_q * inv_p2 - 1.0 / sig_q);
                    let dm = mu_p - mu_q;
                    g_psig[i] +=
                        c * (1.0 / sig_p - (dm * dm + sig_q * sig_q) * inv_p2 / sig_p);
                    // map onto the adaptive variables
                    adaptive.a_mu[k][m][i] = g_qmu[i] * (1.0 - mu_q * mu_q);
                    adaptive.a_sig[k][m][i] =
                        g_qsig[i] * sig_q * clamp_gate(a_sig_raw[m][i]);
                }
            } else {
                // Prior-driven step: z flows back into the prior moments.
                for i in 0..nz {
                    g_pmu[i] += gz[m][i];
                    g_psig[i] += gz[m][i] * rec.sample.eps[m][i];
                }
            }
            // Prior moments into pre-activations and the previous step's d.
            let mut g_umu = vec![0.0; nz];
            let mut g_usig = vec![0.0; nz];
            for i in 0..nz {
                let mu_p = rec.prior.mu[m][i];
                let sig_p = rec.prior.sigma[m][i];
                g_umu[i] = g_pmu[i] * (1.0 - mu_p * mu_p);
                g_usig[i] = g_psig[i] * sig_p * clamp_gate(rec.prior_pre_sigma[m][i]);
            }
            if pg {
                grads.w_pmu[m].outer_acc(&g_umu, &prev_state.d[m]);
                grads.w_psig[m].outer_acc(&g_usig, &prev_state.d[m]);
            }
            params.w_pmu[m].matvec_t_acc(&g_umu, &mut gd_carry[m]);
            params.w_psig[m].matvec_t_acc(&g_usig, &mut gd_carry[m]);
        }
    }

    Ok(GradientSet {
        params: grads,
        adaptive,
        boundary_d: gd_carry,
        boundary_h: gh_carry,
        sequences: 1,
        steps: len,
    })
}

// ---------------------------------------------------------------------------
// Finite-difference harness
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub max_rel_err: f64,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub failed: Vec<String>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.failed.is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Relative error with a floor that absorbs finite-difference noise on
/// near-zero gradients while still catching proportional errors.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = math::abs(a).max(math::abs(n)).max(1e-4);
    math::abs(a - n) / denom
}

/// Compares an analytic gradient set against a numeric one, group by group.
pub fn compare_gradients(
    params_template: &Parameters,
    analytic: &GradientSet,
    numeric: &GradientSet,
    tolerance: f64,
) -> GradCheckReport {
    let mut groups = Vec::new();
    let mut failed = Vec::new();
    let names = params_template.trainable_names();
    let a_flat = analytic.params.flat();
    let n_flat = numeric.params.flat();
    for ((name, a), n) in names.iter().zip(&a_flat).zip(&n_flat) {
        let mut worst = 0.0;
        for (x, y) in a.iter().zip(n.iter()) {
            worst = f64::max(worst, rel_err(*x, *y));
        }
        if worst > tolerance {
            failed.push(name.clone());
        }
        groups.push(GroupReport {
            name: name.clone(),
            max_rel_err: worst,
            count: a.len(),
        });
    }
    for (name, a, n) in [
        ("adaptive.a_mu", &analytic.adaptive.a_mu, &numeric.adaptive.a_mu),
        ("adaptive.a_sig", &analytic.adaptive.a_sig, &numeric.adaptive.a_sig),
    ] {
        let mut worst = 0.0;
        let mut count = 0;
        for (sa, sn) in a.iter().zip(n.iter()) {
            for (ma, mn) in sa.iter().zip(sn.iter()) {
                for (x, y) in ma.iter().zip(mn.iter()) {
                    worst = f64::max(worst, rel_err(*x, *y));
                    count += 1;
                }
            }
        }
        if worst > tolerance {
            failed.push(String::from(name));
        }
        groups.push(GroupReport {
            name: String::from(name),
            max_rel_err: worst,
            count,
        });
    }
    GradCheckReport {
        tolerance,
        groups,
        failed,
    }
}

/// The fixed test bed used by [`check_gradients`]: an all-threes topology.
pub fn tiny_topology() -> NetworkTopology {
    NetworkTopology::from_sizes(
        [3, 3, 3, 3],
        [3, 3, 3, 3],
        [(4.0, 8.0), (2.0, 4.0), (1.0, 2.0), (1.0, 2.0)],
        vec![3],
        3,
        (3, 3),
        3,
    )
    .expect("tiny topology is valid")
}

pub struct GradCheckSetup {
    pub topo: NetworkTopology,
    pub params: Parameters,
    pub adaptive: AdaptivePosterior,
    pub extero: Vec<Vec<f64>>,
    pub proprio: Vec<Vec<f64>>,
    pub t_len: usize,
    pub meta_prior: f64,
}

/// Builds a randomized small problem away from the symmetric stationary
/// point (nonzero adaptive variables, mild bias scale to avoid saturation).
pub fn grad_check_setup(seed: u64) -> GradCheckSetup {
    use crate::net::params::{init_parameters_with, InitOptions};
    let topo = tiny_topology();
    let t_len = 5;
    let params =
        init_parameters_with(&topo, seed, InitOptions { bias_std: 0.5 }).expect("valid");
    let mut adaptive = AdaptivePosterior::zeros(&topo, 0, 1, t_len);
    let mut rng = crate::rng::stream(seed, &[0xadaf]);
    for t in 1..=t_len {
        let (mu, sig) = adaptive.step_mut(t);
        for m in 0..4 {
            for v in mu[m].iter_mut().chain(sig[m].iter_mut()) {
                *v = crate::rng::uniform_symmetric(&mut rng, 0.5);
            }
        }
    }
    let mut extero = Vec::new();
    let mut proprio = Vec::new();
    for _ in 0..t_len {
        extero.push(
            (0..topo.extero_dim())
                .map(|_| crate::rng::uniform_symmetric(&mut rng, 0.9))
                .collect(),
        );
        proprio.push(
            (0..topo.proprio_dim)
                .map(|_| crate::rng::uniform_symmetric(&mut rng, 0.9))
                .collect(),
        );
    }
    GradCheckSetup {
        topo,
        params,
        adaptive,
        extero,
        proprio,
        t_len,
        meta_prior: crate::free_energy::DEFAULT_META_PRIOR,
    }
}

fn setup_obs<'a>(s: &'a GradCheckSetup) -> Vec<StepObs<'a>> {
    (0..s.t_len)
        .map(|k| StepObs {
            extero: &s.extero[k],
            proprio: &s.proprio[k],
        })
        .collect()
}

fn objective(
    s: &GradCheckSetup,
    eps: &[ModuleVecs],
    boundary: &RecurrentState,
    span: usize,
) -> f64 {
    let traj = forward_span(
        &s.params,
        &s.topo,
        boundary,
        Some(&s.adaptive),
        span,
        LatentMode::PosteriorSample,
        EpsSource::Fixed(eps),
        None,
    )
    .expect("forward");
    let obs_all = setup_obs(s);
    let first = boundary.t;
    let masks = ObservationMask::all_on(&s.topo, span);
    let mut total = 0.0;
    for k in 0..span {
        total += crate::free_energy::trajectory_step_terms(
            &traj,
            k,
            obs_all[first + k],
            masks.step(k),
            s.meta_prior,
        )
        .expect("fe")
        .total;
    }
    total
}

/// Central finite differences over every trainable parameter and adaptive
/// variable of the setup, for the objective over `span` steps starting after
/// `boundary`.
pub fn numeric_gradients(
    s: &mut GradCheckSetup,
    eps: &[ModuleVecs],
    boundary: &RecurrentState,
    span: usize,
    fd_step: f64,
) -> GradientSet {
    let topo = s.topo.clone();
    let mut out = GradientSet {
        params: ParamGrads::zeros(&topo),
        adaptive: AdaptiveGrads::zeros(&topo, boundary.t + 1, span),
        boundary_d: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
        boundary_h: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
        sequences: 1,
        steps: span,
    };
    // Parameters.
    let n_tensors = s.params.trainable_mut().len();
    for ti in 0..n_tensors {
        let len = s.params.trainable_mut()[ti].len();
        for i in 0..len {
            let orig = s.params.trainable_mut()[ti][i];
            s.params.trainable_mut()[ti][i] = orig + fd_step;
            let fp = objective(s, eps, boundary, span);
            s.params.trainable_mut()[ti][i] = orig - fd_step;
            let fm = objective(s, eps, boundary, span);
            s.params.trainable_mut()[ti][i] = orig;
            out.params.flat_mut()[ti][i] = (fp - fm) / (2.0 * fd_step);
        }
    }
    // Adaptive variables inside the span.
    for k in 0..span {
        let t = boundary.t + 1 + k;
        for m in 0..4 {
            for i in 0..topo.n_z[m] {
                for which in 0..2 {
                    let orig = {
                        let (mu, sig) = s.adaptive.step_mut(t);
                        let slot = if which == 0 { &mut mu[m][i] } else { &mut sig[m][i] };
                        let o = *slot;
                        *slot = o + fd_step;
                        o
                    };
                    let fp = objective(s, eps, boundary, span);
                    {
                        let (mu, sig) = s.adaptive.step_mut(t);
                        let slot = if which == 0 { &mut mu[m][i] } else { &mut sig[m][i] };
                        *slot = orig - fd_step;
                    }
                    let fm = objective(s, eps, boundary, span);
                    {
                        let (mu, sig) = s.adaptive.step_mut(t);
                        let slot = if which == 0 { &mut mu[m][i] } else { &mut sig[m][i] };
                        *slot = orig;
                    }
                    let g = (fp - fm) / (2.0 * fd_step);
                    if which == 0 {
                        out.adaptive.a_mu[k][m][i] = g;
                    } else {
                        out.adaptive.a_sig[k][m][i] = g;
                    }
                }
            }
        }
    }
    out
}

/// Runs the finite-difference oracle over all parameter groups and adaptive
/// variables, for both the cumulative objective and a windowed objective
/// anchored at a cached boundary state. Fails if any group exceeds the
/// tolerance.
pub fn check_gradients(seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    const FD_STEP: f64 = 1e-5;
    let mut s = grad_check_setup(seed);
    let topo = s.topo.clone();
    // One stochastic forward fixes the noise for everything that follows.
    let mut rng = crate::rng::stream(seed, &[0xec5]);
    let traj = forward_span(
        &s.params,
        &topo,
        &RecurrentState::zero(&topo),
        Some(&s.adaptive),
        s.t_len,
        LatentMode::PosteriorSample,
        EpsSource::Rng(&mut rng),
        None,
    )?;
    let eps: Vec<ModuleVecs> = traj.steps.iter().map(|r| r.sample.eps.clone()).collect();
    let obs = setup_obs(&s);
    let masks = ObservationMask::all_on(&topo, s.t_len);
    let analytic = backward(
        &s.params,
        &topo,
        &traj,
        &obs,
        &masks,
        s.meta_prior,
        BackwardOpts::default(),
    )?;
    drop(obs);
    let zero = RecurrentState::zero(&topo);
    let span = s.t_len;
    let numeric = numeric_gradients(&mut s, &eps, &zero, span, FD_STEP);
    let mut report = compare_gradients(&s.params, &analytic, &numeric, tolerance);

    // Windowed objective: trailing three steps from a cached boundary state.
    let window = 3;
    let boundary = traj.steps[s.t_len - window - 1].state.clone();
    let w_eps = &eps[s.t_len - window..];
    let w_traj = forward_span(
        &s.params,
        &topo,
        &boundary,
        Some(&s.adaptive),
        window,
        LatentMode::PosteriorSample,
        EpsSource::Fixed(w_eps),
        None,
    )?;
    let w_obs: Vec<StepObs<'_>> = (s.t_len - window..s.t_len)
        .map(|k| StepObs {
            extero: &s.extero[k],
            proprio: &s.proprio[k],
        })
        .collect();
    let w_masks = ObservationMask::all_on(&topo, window);
    let w_analytic = backward(
        &s.params,
        &topo,
        &w_traj,
        &w_obs,
        &w_masks,
        s.meta_prior,
        BackwardOpts::default(),
    )?;
    drop(w_obs);
    let w_numeric = numeric_gradients(&mut s, w_eps, &boundary, window, FD_STEP);
    let w_report = compare_gradients(&s.params, &w_analytic, &w_numeric, tolerance);
    for mut g in w_report.groups {
        g.name = format!("window.{}", g.name);
        if g.max_rel_err > tolerance {
            report.failed.push(g.name.clone());
        }
        report.groups.push(g);
    }
    Ok(report)
}
