//! Property tests for the free-energy invariants.

use proptest::prelude::*;

use hvrnn_core::free_energy::{accuracy_term, complexity_term, StepMask, StepObs};
use hvrnn_core::net::LatentMoments;

fn tiny() -> hvrnn_core::net::NetworkTopology {
    hvrnn_core::grad::tiny_topology()
}

proptest! {
    /// KL divergence is nonnegative for any latent moments.
    #[test]
    fn complexity_is_nonnegative(
        mu_q in proptest::collection::vec(-0.999f64..0.999, 12),
        mu_p in proptest::collection::vec(-0.999f64..0.999, 12),
        ls_q in proptest::collection::vec(-4.0f64..4.0, 12),
        ls_p in proptest::collection::vec(-4.0f64..4.0, 12),
    ) {
        let topo = tiny();
        let mut q = LatentMoments::unit(&topo);
        let mut p = LatentMoments::unit(&topo);
        let mut it = 0;
        for m in 0..4 {
            for i in 0..3 {
                q.mu[m][i] = mu_q[it];
                p.mu[m][i] = mu_p[it];
                q.sigma[m][i] = ls_q[it].exp();
                p.sigma[m][i] = ls_p[it].exp();
                it += 1;
            }
        }
        let c = complexity_term(&q, &p).unwrap();
        for m in 0..4 {
            // Allow a hair of negative rounding slack around zero.
            prop_assert!(c[m] >= -1e-12, "module {m}: {}", c[m]);
        }
    }

    /// Including more dimensions never decreases the accuracy term, and a
    /// fully masked modality contributes exactly zero.
    #[test]
    fn accuracy_is_mask_monotone(
        x in proptest::collection::vec(-0.9f64..0.9, 6),
        xh in proptest::collection::vec(-0.9f64..0.9, 6),
        include in proptest::collection::vec(any::<bool>(), 6),
    ) {
        let xp = [0.25];
        let xph = [-0.1];
        let masked = StepMask { extero: include.clone(), proprio: vec![false] };
        let all = StepMask { extero: vec![true; 6], proprio: vec![false] };
        let none = StepMask { extero: vec![false; 6], proprio: vec![false] };
        let obs = StepObs { extero: &x, proprio: &xp };
        let (e_masked, p_masked) = accuracy_term(obs, &xh, &xph, &masked).unwrap();
        let (e_all, _) = accuracy_term(obs, &xh, &xph, &all).unwrap();
        let (e_none, _) = accuracy_term(obs, &xh, &xph, &none).unwrap();
        prop_assert!(e_masked <= e_all + 1e-15);
        prop_assert_eq!(e_none, 0.0);
        prop_assert_eq!(p_masked, 0.0);
        // Adding one more included dimension never decreases the term.
        if let Some(first_off) = include.iter().position(|b| !*b) {
            let mut bigger = include.clone();
            bigger[first_off] = true;
            let mask2 = StepMask { extero: bigger, proprio: vec![false] };
            let (e2, _) = accuracy_term(obs, &xh, &xph, &mask2).unwrap();
            prop_assert!(e2 >= e_masked - 1e-15);
        }
    }

    /// tanh/exp ranges of the latent moments. f64 tanh saturates to exactly
    /// 1.0 above ~19, so the open interval is only meaningful for the
    /// pre-activation magnitudes the network actually produces.
    #[test]
    fn moment_ranges(
        a_mu in proptest::collection::vec(-15.0f64..15.0, 12),
        a_sig in proptest::collection::vec(-50.0f64..50.0, 12),
    ) {
        let mut mu = [vec![0.0; 3], vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]];
        let mut sig = mu.clone();
        let mut it = 0;
        for m in 0..4 {
            for i in 0..3 {
                mu[m][i] = a_mu[it];
                sig[m][i] = a_sig[it];
                it += 1;
            }
        }
        let post = hvrnn_core::net::compute_posterior(&mu, &sig);
        for m in 0..4 {
            for i in 0..3 {
                prop_assert!(post.mu[m][i] > -1.0 && post.mu[m][i] < 1.0);
                prop_assert!(post.sigma[m][i] > 0.0);
                prop_assert!(post.sigma[m][i] <= hvrnn_core::net::SIGMA_CLAMP.exp());
            }
        }
    }
}
