//! Synaptic weights and biases, their initialization and canonical ordering.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::math::{self, Mat};
use crate::rng;

use super::topology::{Module, NetworkTopology};

/// Standard deviation of the fixed recurrent biases. The cited convention is
/// a zero-mean Gaussian with variance 10.
pub const DEFAULT_BIAS_STD: f64 = 3.162_277_660_168_379_5; // sqrt(10)

/// One fully connected head layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: Mat::zeros(out, inp),
            b: vec![0.0; out],
        }
    }
}

/// All synaptic weights of the network plus the fixed recurrent biases.
///
/// Recurrent biases are drawn once at initialization and never touched by an
/// optimizer step; everything else is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// Recurrent weights d(t-1) -> h(t), per module.
    pub w_dd: [Mat; 4],
    /// Latent weights z(t) -> h(t), per module.
    pub w_dz: [Mat; 4],
    /// Top-down weights d_higher(t) -> h(t); 0 x 0 for the executive module.
    pub w_dh: [Mat; 4],
    /// Prior mean weights d(t-1) -> latent mean pre-activation.
    pub w_pmu: [Mat; 4],
    /// Prior sigma weights d(t-1) -> latent sigma pre-activation.
    pub w_psig: [Mat; 4],
    /// Fixed recurrent biases, per module.
    pub bias: [Vec<f64>; 4],
    /// Exteroceptive head: two hidden layers, then the output layer.
    pub ext1: Dense,
    pub ext2: Dense,
    pub ext_out: Dense,
    /// Proprioceptive head: one hidden layer, then the output layer.
    pub pro1: Dense,
    pub pro_out: Dense,
}

/// Options for [`init_parameters_with`].
#[derive(Clone, Copy, Debug)]
pub struct InitOptions {
    /// Standard deviation of the fixed recurrent bias draw.
    pub bias_std: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            bias_std: DEFAULT_BIAS_STD,
        }
    }
}

fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    math::sqrt(6.0 / (fan_in + fan_out) as f64)
}

fn xavier_fill(rng: &mut ChaCha8Rng, m: &mut Mat) {
    if m.is_empty() {
        return;
    }
    let bound = xavier_bound(m.cols(), m.rows());
    for v in m.data_mut() {
        *v = rng::uniform_symmetric(rng, bound);
    }
}

fn xavier_fill_dense(rng: &mut ChaCha8Rng, d: &mut Dense) {
    xavier_fill(rng, &mut d.w);
    let bound = xavier_bound(d.w.cols(), d.w.rows());
    for v in &mut d.b {
        *v = rng::uniform_symmetric(rng, bound);
    }
}

impl Parameters {
    pub fn zeros(topo: &NetworkTopology) -> Result<Self> {
        topo.validate()?;
        let n_d = topo.n_d;
        let n_z = topo.n_z;
        let mk4 = |f: &dyn Fn(usize) -> Mat| {
            [f(0), f(1), f(2), f(3)]
        };
        let w_dd = mk4(&|m| Mat::zeros(n_d[m], n_d[m]));
        let w_dz = mk4(&|m| Mat::zeros(n_d[m], n_z[m]));
        let w_dh = mk4(&|m| match Module::from_index(m).higher() {
            Some(hi) => Mat::zeros(n_d[m], n_d[hi.index()]),
            None => Mat::zeros(0, 0),
        });
        let w_pmu = mk4(&|m| Mat::zeros(n_z[m], n_d[m]));
        let w_psig = mk4(&|m| Mat::zeros(n_z[m], n_d[m]));
        let bias = [
            vec![0.0; n_d[0]],
            vec![0.0; n_d[1]],
            vec![0.0; n_d[2]],
            vec![0.0; n_d[3]],
        ];
        let e = Module::Extero.index();
        let p = Module::Proprio.index();
        Ok(Parameters {
            w_dd,
            w_dz,
            w_dh,
            w_pmu,
            w_psig,
            bias,
            ext1: Dense::zeros(topo.extero_hidden.0, n_d[e]),
            ext2: Dense::zeros(topo.extero_hidden.1, topo.extero_hidden.0),
            ext_out: Dense::zeros(topo.extero_dim(), topo.extero_hidden.1),
            pro1: Dense::zeros(topo.proprio_hidden, n_d[p]),
            pro_out: Dense::zeros(topo.proprio_dim, topo.proprio_hidden),
        })
    }

    /// Visits every trainable tensor in canonical order with its name.
    pub fn visit_trainable<'a>(&'a self, mut f: impl FnMut(&str, &'a [f64])) {
        for (i, m) in self.w_dd.iter().enumerate() {
            f(&tensor_name("w_dd", i), m.data());
        }
        for (i, m) in self.w_dz.iter().enumerate() {
            f(&tensor_name("w_dz", i), m.data());
        }
        for (i, m) in self.w_dh.iter().enumerate() {
            if !m.is_empty() {
                f(&tensor_name("w_dh", i), m.data());
            }
        }
        for (i, m) in self.w_pmu.iter().enumerate() {
            f(&tensor_name("w_pmu", i), m.data());
        }
        for (i, m) in self.w_psig.iter().enumerate() {
            f(&tensor_name("w_psig", i), m.data());
        }
        f("head.ext1.w", self.ext1.w.data());
        f("head.ext1.b", &self.ext1.b);
        f("head.ext2.w", self.ext2.w.data());
        f("head.ext2.b", &self.ext2.b);
        f("head.ext_out.w", self.ext_out.w.data());
        f("head.ext_out.b", &self.ext_out.b);
        f("head.pro1.w", self.pro1.w.data());
        f("head.pro1.b", &self.pro1.b);
        f("head.pro_out.w", self.pro_out.w.data());
        f("head.pro_out.b", &self.pro_out.b);
    }

    /// Mutable slices of every trainable tensor in canonical order.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let Parameters {
            w_dd,
            w_dz,
            w_dh,
            w_pmu,
            w_psig,
            bias: _,
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

    /// Names in the same order as [`Parameters::trainable_mut`].
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_trainable(|n, _| names.push(String::from(n)));
        names
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_trainable(|_, t| ok &= math::all_finite(t));
        ok && self.bias.iter().all(|b| math::all_finite(b))
    }
}

pub fn tensor_name(kind: &str, module_index: usize) -> String {
    format!("{kind}.{}", Module::from_index(module_index).label())
}

/// Xavier-initializes every weight tensor and draws the fixed recurrent
/// biases, deterministically from `seed`.
pub fn init_parameters(topo: &NetworkTopology, seed: u64) -> Result<Parameters> {
    init_parameters_with(topo, seed, InitOptions::default())
}

pub fn init_parameters_with(
    topo: &NetworkTopology,
    seed: u64,
    opts: InitOptions,
) -> Result<Parameters> {
    if !opts.bias_std.is_finite() || opts.bias_std < 0.0 {
        return Err(CoreError::Config("bias_std must be finite and >= 0".into()));
    }
    let mut p = Parameters::zeros(topo)?;
    let mut rng = rng::stream(seed, &[rng::salt::INIT]);
    // Draw order is fixed: recurrent groups per module, then heads, then the
    // fixed biases.
    for m in &mut p.w_dd {
        xavier_fill(&mut rng, m);
    }
    for m in &mut p.w_dz {
        xavier_fill(&mut rng, m);
    }
    for m in &mut p.w_dh {
        xavier_fill(&mut rng, m);
    }
    for m in &mut p.w_pmu {
        xavier_fill(&mut rng, m);
    }
    for m in &mut p.w_psig {
        xavier_fill(&mut rng, m);
    }
    xavier_fill_dense(&mut rng, &mut p.ext1);
    xavier_fill_dense(&mut rng, &mut p.ext2);
    xavier_fill_dense(&mut rng, &mut p.ext_out);
    xavier_fill_dense(&mut rng, &mut p.pro1);
    xavier_fill_dense(&mut rng, &mut p.pro_out);
    for b in &mut p.bias {
        for v in b.iter_mut() {
            *v = opts.bias_std * rng::standard_normal(&mut rng);
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> NetworkTopology {
        NetworkTopology::desk_default()
    }

    #[test]
    fn xavier_entries_within_bound() {
        let topo = desk();
        let p = init_parameters(&topo, 1).unwrap();
        // Top-down matrix between associative (30) and executive (30):
        // entries within +-sqrt(6/60).
        let bound = math::sqrt(6.0 / 60.0);
        let m = &p.w_dh[Module::Associative.index()];
        assert_eq!((m.rows(), m.cols()), (30, 30));
        assert!(m.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let topo = desk();
        let a = init_parameters(&topo, 99).unwrap();
        let b = init_parameters(&topo, 99).unwrap();
        assert_eq!(a, b);
        let c = init_parameters(&topo, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_sample_variance_matches_formula() {
        // Monte-Carlo check against Var[U(-a,a)] = a^2/3 = 2/(fan_in+fan_out)
        // for every matrix with at least 900 entries.
        let topo = desk();
        let p = init_parameters(&topo, 7).unwrap();
        let mut checked = 0;
        let mut check = |m: &Mat| {
            if m.len() < 900 {
                return;
            }
            let expected = 2.0 / (m.rows() + m.cols()) as f64;
            let mean: f64 = m.data().iter().sum::<f64>() / m.len() as f64;
            let var: f64 =
                m.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m.len() as f64;
            assert!(
                (var - expected).abs() <= 0.2 * expected,
                "variance {var} vs expected {expected}"
            );
            checked += 1;
        };
        for m in &p.w_dd {
            check(m);
        }
        for m in &p.w_dz {
            check(m);
        }
        check(&p.ext_out.w);
        assert!(checked >= 5);
    }

    #[test]
    fn bias_draw_uses_requested_std() {
        let topo = desk();
        let p = init_parameters_with(&topo, 3, InitOptions { bias_std: 0.0 }).unwrap();
        assert!(p.bias.iter().all(|b| b.iter().all(|v| *v == 0.0)));
        let p = init_parameters(&topo, 3).unwrap();
        let all: Vec<f64> = p.bias.iter().flatten().copied().collect();
        let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
        // 120 draws of N(0, 10): loose check that the scale is right.
        assert!(var > 5.0 && var < 17.0, "bias variance {var}");
    }

    #[test]
    fn trainable_order_is_stable_and_complete() {
        let topo = desk();
        let mut p = init_parameters(&topo, 5).unwrap();
        let names = p.trainable_names();
        let slices = p.trainable_mut();
        assert_eq!(names.len(), slices.len());
        // 4x w_dd + 4x w_dz + 3x w_dh + 4x w_pmu + 4x w_psig + 5 heads x 2
        assert_eq!(names.len(), 4 + 4 + 3 + 4 + 4 + 10);
        assert_eq!(names[0], "w_dd.Exe");
        assert!(names.contains(&String::from("head.pro_out.b")));
        assert!(!names.iter().any(|n| n.starts_with("bias")));
    }

    #[test]
    fn zero_sized_module_is_a_config_error() {
        let bad = NetworkTopology {
            n_z: [30, 30, 0, 30],
            ..desk()
        };
        assert!(matches!(
            init_parameters(&bad, 1),
            Err(CoreError::Config(_))
        ));
    }
}
