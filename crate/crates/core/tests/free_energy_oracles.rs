//! Free-energy oracles: analytic KL divergence against numerical
//! quadrature, window boundary semantics, and additivity.

use hvrnn_core::free_energy::{
    complexity_term, sequence_free_energy, window_free_energy, ObservationMask, StepObs,
};
use hvrnn_core::grad::AdaptivePosterior;
use hvrnn_core::net::{
    forward_sequence, init_parameters, EpsSource, LatentMode, LatentMoments, NetworkTopology,
};

fn tiny() -> NetworkTopology {
    hvrnn_core::grad::tiny_topology()
}

/// Simpson-rule quadrature of KL(q || p) for scalar Gaussians. Independent
/// of the analytic formula under test.
fn kld_quadrature(mu_q: f64, sig_q: f64, mu_p: f64, sig_p: f64) -> f64 {
    let lo = mu_q - 14.0 * sig_q;
    let hi = mu_q + 14.0 * sig_q;
    let n = 40_000usize; // even
    let h = (hi - lo) / n as f64;
    let ln_norm_q = -(sig_q.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let ln_norm_p = -(sig_p.ln()) - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |z: f64| -> f64 {
        let uq = (z - mu_q) / sig_q;
        let up = (z - mu_p) / sig_p;
        let ln_q = ln_norm_q - 0.5 * uq * uq;
        let ln_p = ln_norm_p - 0.5 * up * up;
        ln_q.exp() * (ln_q - ln_p)
    };
    let mut acc = f(lo) + f(hi);
    for k in 1..n {
        let z = lo + k as f64 * h;
        acc += f(z) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn analytic_kld_matches_quadrature_on_random_moments() {
    let topo = tiny();
    let mut rng = hvrnn_core::rng::stream(123, &[0]);
    for case in 0..50 {
        let mut q = LatentMoments::unit(&topo);
        let mut p = LatentMoments::unit(&topo);
        // One scalar pair per module per case; the analytic term divides by
        // the latent dimensionality.
        let mut expected = [0.0f64; 4];
        for m in 0..4 {
            for i in 0..3 {
                let mu_q = hvrnn_core::rng::uniform_symmetric(&mut rng, 0.95);
                let mu_p = hvrnn_core::rng::uniform_symmetric(&mut rng, 0.95);
                let sig_q = (hvrnn_core::rng::uniform_symmetric(&mut rng, 1.5)).exp();
                let sig_p = (hvrnn_core::rng::uniform_symmetric(&mut rng, 1.5)).exp();
                q.mu[m][i] = mu_q;
                q.sigma[m][i] = sig_q;
                p.mu[m][i] = mu_p;
                p.sigma[m][i] = sig_p;
                expected[m] += kld_quadrature(mu_q, sig_q, mu_p, sig_p);
            }
            expected[m] /= 3.0;
        }
        let analytic = complexity_term(&q, &p).unwrap();
        for m in 0..4 {
            let err = (analytic[m] - expected[m]).abs();
            assert!(
                err < 1e-6 * analytic[m].abs().max(1.0),
                "case {case}, module {m}: analytic {} vs quadrature {}",
                analytic[m],
                expected[m]
            );
            assert!(analytic[m] >= 0.0, "KLD must be nonnegative");
        }
    }
}

fn setup_sequence(
    t_len: usize,
) -> (
    NetworkTopology,
    hvrnn_core::net::Parameters,
    AdaptivePosterior,
    Vec<Vec<f64>>,
    Vec<Vec<f64>>,
) {
    let topo = tiny();
    let params = init_parameters(&topo, 99).unwrap();
    let mut adaptive = AdaptivePosterior::zeros(&topo, 0, 1, t_len);
    let mut rng = hvrnn_core::rng::stream(4, &[1]);
    for t in 1..=t_len {
        let (mu, sig) = adaptive.step_mut(t);
        for m in 0..4 {
            for v in mu[m].iter_mut().chain(sig[m].iter_mut()) {
                *v = hvrnn_core::rng::uniform_symmetric(&mut rng, 0.4);
            }
        }
    }
    let extero: Vec<Vec<f64>> = (0..t_len)
        .map(|_| {
            (0..topo.extero_dim())
                .map(|_| hvrnn_core::rng::uniform_symmetric(&mut rng, 0.9))
                .collect()
        })
        .collect();
    let proprio: Vec<Vec<f64>> = (0..t_len)
        .map(|_| {
            (0..topo.proprio_dim)
                .map(|_| hvrnn_core::rng::uniform_symmetric(&mut rng, 0.9))
                .collect()
        })
        .collect();
    (topo, params, adaptive, extero, proprio)
}

#[test]
fn window_boundary_and_equivalences() {
    let t_len = 8;
    let (topo, params, adaptive, extero, proprio) = setup_sequence(t_len);
    let mut rng = hvrnn_core::rng::stream(77, &[2]);
    let traj = forward_sequence(
        &params,
        &topo,
        Some(&adaptive),
        t_len,
        LatentMode::PosteriorSample,
        EpsSource::Rng(&mut rng),
    )
    .unwrap();
    let obs: Vec<StepObs<'_>> = (0..t_len)
        .map(|k| StepObs {
            extero: &extero[k],
            proprio: &proprio[k],
        })
        .collect();
    let masks = ObservationMask::all_on(&topo, t_len);
    let w = 0.005;
    let seq = sequence_free_energy(&traj, &obs, &masks, w).unwrap();

    // H = T: window equals the full sequence value.
    let win = window_free_energy(&traj, &obs, &masks, t_len, w).unwrap();
    assert_eq!(win.total.to_bits(), seq.total.to_bits());

    // H larger than the trajectory (t < H): the window is [1, t].
    let win = window_free_energy(&traj, &obs, &masks, 30, w).unwrap();
    assert_eq!(win.total.to_bits(), seq.total.to_bits());

    // H = 1 equals the last step's value.
    let step_terms = hvrnn_core::free_energy::trajectory_step_terms(
        &traj,
        t_len - 1,
        obs[t_len - 1],
        masks.step(t_len - 1),
        w,
    )
    .unwrap();
    let win1 = window_free_energy(&traj, &obs, &masks, 1, w).unwrap();
    assert_eq!(win1.total.to_bits(), step_terms.total.to_bits());

    // Concatenation additivity over a split of the same trajectory.
    let k = 3;
    let head: f64 = (0..k)
        .map(|i| {
            hvrnn_core::free_energy::trajectory_step_terms(&traj, i, obs[i], masks.step(i), w)
                .unwrap()
                .total
        })
        .sum();
    let tail: f64 = (k..t_len)
        .map(|i| {
            hvrnn_core::free_energy::trajectory_step_terms(&traj, i, obs[i], masks.step(i), w)
                .unwrap()
                .total
        })
        .sum();
    assert!((seq.total - (head + tail)).abs() < 1e-12);

    // Empty window is rejected.
    assert!(window_free_energy(&traj, &obs, &masks, 0, w).is_err());

    // Single-step trajectory: sequence value equals the step value.
    let (topo1, params1, adaptive1, extero1, proprio1) = setup_sequence(1);
    let mut rng = hvrnn_core::rng::stream(78, &[3]);
    let traj1 = forward_sequence(
        &params1,
        &topo1,
        Some(&adaptive1),
        1,
        LatentMode::PosteriorSample,
        EpsSource::Rng(&mut rng),
    )
    .unwrap();
    let obs1 = vec![StepObs {
        extero: &extero1[0],
        proprio: &proprio1[0],
    }];
    let masks1 = ObservationMask::all_on(&topo1, 1);
    let s1 = sequence_free_energy(&traj1, &obs1, &masks1, w).unwrap();
    let t1 = hvrnn_core::free_energy::trajectory_step_terms(&traj1, 0, obs1[0], masks1.step(0), w)
        .unwrap();
    assert_eq!(s1.total.to_bits(), t1.total.to_bits());
}

#[test]
fn two_sequence_batch_sums_per_sequence_values() {
    let (topo, params, adaptive, extero, proprio) = setup_sequence(5);
    let mut rng_a = hvrnn_core::rng::stream(1, &[4]);
    let mut rng_b = hvrnn_core::rng::stream(2, &[4]);
    let masks = ObservationMask::all_on(&topo, 5);
    let mut totals = Vec::new();
    for rng in [&mut rng_a, &mut rng_b] {
        let traj = forward_sequence(
            &params,
            &topo,
            Some(&adaptive),
            5,
            LatentMode::PosteriorSample,
            EpsSource::Rng(rng),
        )
        .unwrap();
        let obs: Vec<StepObs<'_>> = (0..5)
            .map(|k| StepObs {
                extero: &extero[k],
                proprio: &proprio[k],
            })
            .collect();
        totals.push(sequence_free_energy(&traj, &obs, &masks, 0.005).unwrap().total);
    }
    let batch_total: f64 = totals.iter().sum();
    assert!((batch_total - (totals[0] + totals[1])).abs() < 1e-15);
}
