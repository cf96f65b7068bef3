//! Variational free energy: masked, per-modality-normalized squared
//! prediction error plus weighted per-module-normalized KL divergence.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::net::forward::{LatentMoments, Trajectory};
use crate::net::topology::{Module, NetworkTopology};

/// Meta-prior weighting of the complexity term.
pub const DEFAULT_META_PRIOR: f64 = 0.005;

/// Per-dimension inclusion mask for one step's observation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMask {
    pub extero: Vec<bool>,
    pub proprio: Vec<bool>,
}

impl StepMask {
    pub fn all_on(topo: &NetworkTopology) -> Self {
        StepMask {
            extero: vec![true; topo.extero_dim()],
            proprio: vec![true; topo.proprio_dim],
        }
    }

    pub fn all_off(topo: &NetworkTopology) -> Self {
        StepMask {
            extero: vec![false; topo.extero_dim()],
            proprio: vec![false; topo.proprio_dim],
        }
    }

    /// Admits only the listed resolution groups, and proprioception when
    /// `proprio` is set.
    pub fn with_groups(topo: &NetworkTopology, groups: &[usize], proprio: bool) -> Self {
        let mut extero = vec![false; topo.extero_dim()];
        for &g in groups {
            let off = topo.group_offset(g);
            for v in &mut extero[off..off + topo.extero_groups[g]] {
                *v = true;
            }
        }
        StepMask {
            extero,
            proprio: vec![proprio; topo.proprio_dim],
        }
    }

    pub fn validate(&self, topo: &NetworkTopology) -> Result<()> {
        if self.extero.len() != topo.extero_dim() || self.proprio.len() != topo.proprio_dim {
            return Err(CoreError::Shape(format!(
                "mask dims ({}, {}) do not match sensory dims ({}, {})",
                self.extero.len(),
                self.proprio.len(),
                topo.extero_dim(),
                topo.proprio_dim
            )));
        }
        Ok(())
    }
}

/// Per-step, per-dimension observation mask for a whole sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    pub steps: Vec<StepMask>,
}

impl ObservationMask {
    pub fn constant(mask: StepMask, t_len: usize) -> Self {
        ObservationMask {
            steps: vec![mask; t_len],
        }
    }

    pub fn all_on(topo: &NetworkTopology, t_len: usize) -> Self {
        Self::constant(StepMask::all_on(topo), t_len)
    }

    pub fn step(&self, offset: usize) -> &StepMask {
        &self.steps[offset]
    }
}

/// One step's observation, borrowed from a dataset.
#[derive(Clone, Copy, Debug)]
pub struct StepObs<'a> {
    pub extero: &'a [f64],
    pub proprio: &'a [f64],
}

/// Accuracy per modality, complexity per module, and the weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergyTerms {
    pub accuracy_extero: f64,
    pub accuracy_proprio: f64,
    /// Normalized KL divergence per module, indexed by `Module::index`.
    pub complexity: [f64; 4],
    pub meta_prior: f64,
    pub total: f64,
}

impl FreeEnergyTerms {
    pub fn zero(meta_prior: f64) -> Self {
        FreeEnergyTerms {
            accuracy_extero: 0.0,
            accuracy_proprio: 0.0,
            complexity: [0.0; 4],
            meta_prior,
            total: 0.0,
        }
    }

    pub fn accuracy_sum(&self) -> f64 {
        self.accuracy_extero + self.accuracy_proprio
    }

    pub fn complexity_sum(&self) -> f64 {
        self.complexity.iter().sum()
    }

    pub fn add_assign(&mut self, other: &FreeEnergyTerms) {
        self.accuracy_extero += other.accuracy_extero;
        self.accuracy_proprio += other.accuracy_proprio;
        for (a, b) in self.complexity.iter_mut().zip(&other.complexity) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn is_finite(&self) -> bool {
        self.accuracy_extero.is_finite()
            && self.accuracy_proprio.is_finite()
            && self.complexity.iter().all(|c| c.is_finite())
            && self.total.is_finite()
    }
}

fn masked_half_sq(x: &[f64], xhat: &[f64], mask: &[bool]) -> f64 {
    let mut acc = 0.0;
    for ((xi, pi), mi) in x.iter().zip(xhat).zip(mask) {
        if *mi {
            let e = xi - pi;
            acc += 0.5 * e * e;
        }
    }
    acc
}

/// Masked squared prediction error per modality, each divided by that
/// modality's full dimensionality (the divisor does not shrink with the
/// mask, so excluding dimensions removes error pressure).
pub fn accuracy_term(obs: StepObs<'_>, pred_extero: &[f64], pred_proprio: &[f64], mask: &StepMask) -> Result<(f64, f64)> {
    if obs.extero.len() != pred_extero.len()
        || obs.proprio.len() != pred_proprio.len()
        || mask.extero.len() != obs.extero.len()
        || mask.proprio.len() != obs.proprio.len()
    {
        return Err(CoreError::Shape(format!(
            "accuracy shapes disagree: obs ({}, {}), pred ({}, {}), mask ({}, {})",
            obs.extero.len(),
            obs.proprio.len(),
            pred_extero.len(),
            pred_proprio.len(),
            mask.extero.len(),
            mask.proprio.len()
        )));
    }
    let ext = masked_half_sq(obs.extero, pred_extero, &mask.extero) / obs.extero.len() as f64;
    let pro = masked_half_sq(obs.proprio, pred_proprio, &mask.proprio) / obs.proprio.len() as f64;
    Ok((ext, pro))
}

/// Analytic KL divergence between diagonal Gaussians, per module, each
/// divided by the module's latent dimensionality.
pub fn complexity_term(posterior: &LatentMoments, prior: &LatentMoments) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for module in Module::ALL {
        let m = module.index();
        let n = posterior.mu[m].len();
        if prior.mu[m].len() != n {
            return Err(CoreError::Shape(format!(
                "posterior/prior latent sizes disagree in module {}",
                module.label()
            )));
        }
        let mut acc = 0.0;
        for i in 0..n {
            let mu_q = posterior.mu[m][i];
            let mu_p = prior.mu[m][i];
            let sig_q = posterior.sigma[m][i];
            let sig_p = prior.sigma[m][i];
            if !(sig_q.is_finite() && sig_p.is_finite() && mu_q.is_finite() && mu_p.is_finite()) {
                return Err(CoreError::Numeric {
                    what: format!("non-finite latent moments in module {}", module.label()),
                    step: 0,
                });
            }
            let dm = mu_p - mu_q;
            acc += crate::math::ln(sig_p / sig_q) + (dm * dm + sig_q * sig_q) / (2.0 * sig_p * sig_p)
                - 0.5;
        }
        out[m] = acc / n as f64;
    }
    Ok(out)
}

/// Combines accuracy and complexity for one step. The meta-prior weights the
/// complexity sum over all four modules.
pub fn step_free_energy(
    obs: StepObs<'_>,
    pred_extero: &[f64],
    pred_proprio: &[f64],
    posterior: &LatentMoments,
    prior: &LatentMoments,
    mask: &StepMask,
    meta_prior: f64,
) -> Result<FreeEnergyTerms> {
    let (accuracy_extero, accuracy_proprio) = accuracy_term(obs, pred_extero, pred_proprio, mask)?;
    let complexity = complexity_term(posterior, prior)?;
    let total = accuracy_extero
        + accuracy_proprio
        + meta_prior * complexity.iter().sum::<f64>();
    Ok(FreeEnergyTerms {
        accuracy_extero,
        accuracy_proprio,
        complexity,
        meta_prior,
        total,
    })
}

/// Free energy of one recorded step of a trajectory. Steps generated without
/// a posterior contribute zero complexity.
pub fn trajectory_step_terms(
    traj: &Trajectory,
    offset: usize,
    obs: StepObs<'_>,
    mask: &StepMask,
    meta_prior: f64,
) -> Result<FreeEnergyTerms> {
    let rec = &traj.steps[offset];
    match &rec.posterior {
        Some(post) => step_free_energy(
            obs,
            &rec.prediction.extero,
            &rec.prediction.proprio,
            post,
            &rec.prior,
            mask,
            meta_prior,
        ),
        None => {
            let (accuracy_extero, accuracy_proprio) =
                accuracy_term(obs, &rec.prediction.extero, &rec.prediction.proprio, mask)?;
            Ok(FreeEnergyTerms {
                accuracy_extero,
                accuracy_proprio,
                complexity: [0.0; 4],
                meta_prior,
                total: accuracy_extero + accuracy_proprio,
            })
        }
    }
}

/// Cumulative free energy over a full trajectory against per-step
/// observations.
pub fn sequence_free_energy(
    traj: &Trajectory,
    obs: &[StepObs<'_>],
    masks: &ObservationMask,
    meta_prior: f64,
) -> Result<FreeEnergyTerms> {
    if obs.len() != traj.len() || masks.steps.len() != traj.len() {
        return Err(CoreError::Shape(format!(
            "trajectory covers {} steps but {} observations and {} masks were given",
            traj.len(),
            obs.len(),
            masks.steps.len()
        )));
    }
    let mut sum = FreeEnergyTerms::zero(meta_prior);
    for k in 0..traj.len() {
        sum.add_assign(&trajectory_step_terms(traj, k, obs[k], masks.step(k), meta_prior)?);
    }
    Ok(sum)
}

/// Free energy summed over the trailing window `[max(start, t-h+1), t]` of a
/// trajectory, with `t` the trajectory's last step. For `t < h` the window is
/// the whole trajectory.
pub fn window_free_energy(
    traj: &Trajectory,
    obs: &[StepObs<'_>],
    masks: &ObservationMask,
    h: usize,
    meta_prior: f64,
) -> Result<FreeEnergyTerms> {
    if h == 0 {
        return Err(CoreError::Config("window length must be positive".into()));
    }
    if traj.is_empty() {
        return Err(CoreError::Config("window is empty".into()));
    }
    if obs.len() != traj.len() || masks.steps.len() != traj.len() {
        return Err(CoreError::Shape(
            "window observations/masks must align with the trajectory".into(),
        ));
    }
    let first = traj.len().saturating_sub(h);
    let mut sum = FreeEnergyTerms::zero(meta_prior);
    for k in first..traj.len() {
        sum.add_assign(&trajectory_step_terms(traj, k, obs[k], masks.step(k), meta_prior)?);
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::forward::LatentMoments;

    fn tiny_topo() -> NetworkTopology {
        NetworkTopology::from_sizes(
            [3, 3, 3, 3],
            [3, 3, 3, 3],
            [(4.0, 8.0), (2.0, 4.0), (1.0, 2.0), (1.0, 2.0)],
            alloc::vec![2, 2],
            2,
            (3, 3),
            3,
        )
        .unwrap()
    }

    fn moments_with(topo: &NetworkTopology, mu: f64, sigma: f64) -> LatentMoments {
        let mut m = LatentMoments::unit(topo);
        for i in 0..4 {
            m.mu[i].iter_mut().for_each(|v| *v = mu);
            m.sigma[i].iter_mut().for_each(|v| *v = sigma);
        }
        m
    }

    #[test]
    fn perfect_prediction_has_zero_accuracy() {
        let topo = tiny_topo();
        let x = alloc::vec![0.3, -0.2, 0.5, 0.1];
        let xp = alloc::vec![0.7, -0.7];
        let mask = StepMask::all_on(&topo);
        let (e, p) = accuracy_term(
            StepObs { extero: &x, proprio: &xp },
            &x,
            &xp,
            &mask,
        )
        .unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn single_dim_accuracy_arithmetic() {
        // x = 0.9, xhat = -0.9 in a 1-dim modality: 0.5 * 1.8^2 / 1 = 1.62
        let x = [0.9];
        let xh = [-0.9];
        let mask = StepMask {
            extero: alloc::vec![true],
            proprio: alloc::vec![true],
        };
        let (e, p) = accuracy_term(
            StepObs { extero: &x, proprio: &x },
            &xh,
            &x,
            &mask,
        )
        .unwrap();
        assert!((e - 1.62).abs() < 1e-15);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn masking_a_modality_zeroes_its_accuracy_only() {
        let topo = tiny_topo();
        let x = alloc::vec![0.5; 4];
        let xh = alloc::vec![-0.5; 4];
        let xp = alloc::vec![0.2, 0.4];
        let xph = alloc::vec![0.0, 0.0];
        let mut mask = StepMask::all_on(&topo);
        mask.extero.iter_mut().for_each(|m| *m = false);
        let (e, p) = accuracy_term(
            StepObs { extero: &x, proprio: &xp },
            &xh,
            &xph,
            &mask,
        )
        .unwrap();
        assert_eq!(e, 0.0);
        assert!(p > 0.0);
    }

    #[test]
    fn accuracy_shape_mismatch_is_an_error() {
        let topo = tiny_topo();
        let mask = StepMask::all_on(&topo);
        let x = alloc::vec![0.0; 3];
        let xp = alloc::vec![0.0; 2];
        let r = accuracy_term(StepObs { extero: &x, proprio: &xp }, &x[..2], &xp, &mask);
        assert!(matches!(r, Err(CoreError::Shape(_))));
    }

    #[test]
    fn kld_zero_when_posterior_equals_prior() {
        let topo = tiny_topo();
        let m = moments_with(&topo, 0.4, 0.7);
        let c = complexity_term(&m, &m).unwrap();
        assert_eq!(c, [0.0; 4]);
    }

    #[test]
    fn kld_half_for_unit_shift() {
        // mu_q = 1, mu_p = 0, sigma_q = sigma_p = 1, one latent per module.
        let topo = tiny_topo();
        let mut q = moments_with(&topo, 0.0, 1.0);
        let p = moments_with(&topo, 0.0, 1.0);
        // Single-latent case: use one unit and leave the others identical.
        q.mu[0][0] = 1.0;
        let c = complexity_term(&q, &p).unwrap();
        // Module 0 has 3 latents, one of which contributes 0.5.
        assert!((c[0] - 0.5 / 3.0).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn meta_prior_weighting_matches_scalar_arithmetic() {
        let topo = tiny_topo();
        let x = alloc::vec![0.1, 0.2, -0.1, 0.4];
        let xh = alloc::vec![0.0; 4];
        let xp = alloc::vec![0.3, 0.3];
        let xph = alloc::vec![0.1, 0.5];
        let mask = StepMask::all_on(&topo);
        let q = moments_with(&topo, 0.5, 1.0);
        let p = moments_with(&topo, 0.0, 1.0);
        let w = 0.005;
        let fe = step_free_energy(
            StepObs { extero: &x, proprio: &xp },
            &xh,
            &xph,
            &q,
            &p,
            &mask,
            w,
        )
        .unwrap();
        let a = fe.accuracy_sum();
        let c = fe.complexity_sum();
        assert!((fe.total - (a + w * c)).abs() < 1e-15);
        // W = 0 excludes complexity from the total but still reports it.
        let fe0 = step_free_energy(
            StepObs { extero: &x, proprio: &xp },
            &xh,
            &xph,
            &q,
            &p,
            &mask,
            0.0,
        )
        .unwrap();
        assert!(fe0.complexity_sum() > 0.0);
        assert!((fe0.total - fe0.accuracy_sum()).abs() < 1e-15);
        // Perfect fit + posterior == prior => total exactly zero.
        let fe_zero = step_free_energy(
            StepObs { extero: &x, proprio: &xp },
            &x,
            &xp,
            &p,
            &p,
            &mask,
            w,
        )
        .unwrap();
        assert_eq!(fe_zero.total, 0.0);
    }

    #[test]
    fn normalization_is_invariant_under_dimension_duplication() {
        // Duplicating every dimension of a modality (and its predictions)
        // leaves the normalized accuracy unchanged.
        let x = alloc::vec![0.4, -0.2, 0.9];
        let xh = alloc::vec![0.1, 0.1, 0.1];
        let xp = alloc::vec![0.5];
        let mask1 = StepMask {
            extero: alloc::vec![true; 3],
            proprio: alloc::vec![true; 1],
        };
        let (e1, _) = accuracy_term(
            StepObs { extero: &x, proprio: &xp },
            &xh,
            &xp,
            &mask1,
        )
        .unwrap();
        let x2: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let xh2: Vec<f64> = xh.iter().flat_map(|v| [*v, *v]).collect();
        let mask2 = StepMask {
            extero: alloc::vec![true; 6],
            proprio: alloc::vec![true; 1],
        };
        let (e2, _) = accuracy_term(
            StepObs { extero: &x2, proprio: &xp },
            &xh2,
            &xp,
            &mask2,
        )
        .unwrap();
        assert!((e1 - e2).abs() < 1e-15);
    }

    #[test]
    fn mask_monotonicity() {
        // Adding included dimensions never decreases the accuracy term.
        let x = alloc::vec![0.4, -0.6, 0.3, 0.8];
        let xh = alloc::vec![0.0; 4];
        let xp = alloc::vec![0.1];
        let mut included = alloc::vec![false; 4];
        let mut last = 0.0;
        for k in 0..4 {
            included[k] = true;
            let mask = StepMask {
                extero: included.clone(),
                proprio: alloc::vec![false],
            };
            let (e, _) = accuracy_term(
                StepObs { extero: &x, proprio: &xp },
                &xh,
                &xp,
                &mask,
            )
            .unwrap();
            assert!(e >= last);
            last = e;
        }
    }
}
