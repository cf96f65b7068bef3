//! Network structure: four modules in a fixed tree, per-unit time constants,
//! modality output sizes and head layer sizes.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

/// The four recurrent modules. `ALL` is the top-down evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Module {
    Executive,
    Associative,
    Extero,
    Proprio,
}

impl Module {
    pub const COUNT: usize = 4;
    /// Top-down evaluation order: a module's higher-level parent always
    /// precedes it.
    pub const ALL: [Module; 4] = [
        Module::Executive,
        Module::Associative,
        Module::Extero,
        Module::Proprio,
    ];

    pub fn index(self) -> usize {
        match self {
            Module::Executive => 0,
            Module::Associative => 1,
            Module::Extero => 2,
            Module::Proprio => 3,
        }
    }

    pub fn from_index(i: usize) -> Module {
        Module::ALL[i]
    }

    /// The module whose same-step output feeds this one top-down.
    pub fn higher(self) -> Option<Module> {
        match self {
            Module::Executive => None,
            Module::Associative => Some(Module::Executive),
            Module::Extero | Module::Proprio => Some(Module::Associative),
        }
    }

    /// Short labels used in logs and CSV columns.
    pub fn label(self) -> &'static str {
        match self {
            Module::Executive => "Exe",
            Module::Associative => "Mul",
            Module::Extero => "Ext",
            Module::Proprio => "Pro",
        }
    }

    pub fn from_label(s: &str) -> Option<Module> {
        match s {
            "Exe" => Some(Module::Executive),
            "Mul" => Some(Module::Associative),
            "Ext" => Some(Module::Extero),
            "Pro" => Some(Module::Proprio),
            _ => None,
        }
    }
}

/// Sizes, time constants and head layout of the network.
///
/// The hierarchy itself is fixed: executive -> associative -> {exteroceptive,
/// proprioceptive}. Only the sizes vary.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    /// Deterministic units per module, indexed by `Module::index`.
    pub n_d: [usize; 4],
    /// Latent units per module.
    pub n_z: [usize; 4],
    /// Per-unit time constants, `tau[m].len() == n_d[m]`, every value >= 1.
    pub tau: [Vec<f64>; 4],
    /// Flat dimensionality of each exteroceptive resolution group, coarsest
    /// first.
    pub extero_groups: Vec<usize>,
    /// Proprioceptive output dimensionality.
    pub proprio_dim: usize,
    /// Hidden layer sizes of the two-layer exteroceptive head.
    pub extero_hidden: (usize, usize),
    /// Hidden layer size of the one-layer proprioceptive head.
    pub proprio_hidden: usize,
}

/// Splits `n` units between a fast and a slow time constant, first half fast.
pub fn tau_split(n: usize, fast: f64, slow: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        v.push(if i < n / 2 { fast } else { slow });
    }
    v
}

impl NetworkTopology {
    /// Builds a topology from per-module sizes and (fast, slow) tau pairs.
    pub fn from_sizes(
        n_d: [usize; 4],
        n_z: [usize; 4],
        tau_pairs: [(f64, f64); 4],
        extero_groups: Vec<usize>,
        proprio_dim: usize,
        extero_hidden: (usize, usize),
        proprio_hidden: usize,
    ) -> Result<Self> {
        let tau = [
            tau_split(n_d[0], tau_pairs[0].0, tau_pairs[0].1),
            tau_split(n_d[1], tau_pairs[1].0, tau_pairs[1].1),
            tau_split(n_d[2], tau_pairs[2].0, tau_pairs[2].1),
            tau_split(n_d[3], tau_pairs[3].0, tau_pairs[3].1),
        ];
        let topo = NetworkTopology {
            n_d,
            n_z,
            tau,
            extero_groups,
            proprio_dim,
            extero_hidden,
            proprio_hidden,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Desk-scale default: module sizes 30, latents 40/30/30/30, tau pairs
    /// (8,16)/(4,8)/(2,4)/(2,4), three grayscale resolution groups 4/8/16 and
    /// four proprioceptive dimensions.
    pub fn desk_default() -> Self {
        NetworkTopology::from_sizes(
            [30, 30, 30, 30],
            [30, 30, 40, 30],
            [(8.0, 16.0), (4.0, 8.0), (2.0, 4.0), (2.0, 4.0)],
            alloc::vec![16, 64, 256],
            4,
            (40, 50),
            40,
        )
        .expect("desk default is valid")
    }

    /// Full-scale configuration: binocular RGB at three resolutions
    /// (32,256 visual dimensions) plus 28 proprioceptive dimensions.
    pub fn full_scale() -> Self {
        NetworkTopology::from_sizes(
            [30, 30, 30, 30],
            [30, 30, 40, 30],
            [(8.0, 16.0), (4.0, 8.0), (2.0, 4.0), (2.0, 4.0)],
            alloc::vec![2 * 3 * 16 * 16, 2 * 3 * 32 * 32, 2 * 3 * 64 * 64],
            28,
            (40, 50),
            40,
        )
        .expect("full-scale topology is valid")
    }

    pub fn extero_dim(&self) -> usize {
        self.extero_groups.iter().sum()
    }

    pub fn sensory_dim(&self) -> usize {
        self.extero_dim() + self.proprio_dim
    }

    /// Offset of a resolution group inside the concatenated extero vector.
    pub fn group_offset(&self, group: usize) -> usize {
        self.extero_groups[..group].iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        for m in Module::ALL {
            let i = m.index();
            if self.n_d[i] == 0 || self.n_z[i] == 0 {
                return Err(CoreError::Config(format!(
                    "module {} has a zero-sized variable group",
                    m.label()
                )));
            }
            if self.tau[i].len() != self.n_d[i] {
                return Err(CoreError::Config(format!(
                    "module {} has {} tau values for {} units",
                    m.label(),
                    self.tau[i].len(),
                    self.n_d[i]
                )));
            }
            if self.tau[i].iter().any(|t| !t.is_finite() || *t < 1.0) {
                return Err(CoreError::Config(format!(
                    "module {} has a time constant below 1",
                    m.label()
                )));
            }
        }
        // Temporal hierarchy must be monotone: every tau in a module is >=
        // every tau in the modules below it.
        let min_tau = |m: Module| -> f64 {
            self.tau[m.index()].iter().copied().fold(f64::INFINITY, f64::min)
        };
        let max_tau = |m: Module| -> f64 {
            self.tau[m.index()].iter().copied().fold(1.0, f64::max)
        };
        if min_tau(Module::Executive) < max_tau(Module::Associative) {
            return Err(CoreError::Config(
                "executive time constants must dominate associative ones".into(),
            ));
        }
        for lower in [Module::Extero, Module::Proprio] {
            if min_tau(Module::Associative) < max_tau(lower) {
                return Err(CoreError::Config(format!(
                    "associative time constants must dominate {} ones",
                    lower.label()
                )));
            }
        }
        if self.extero_groups.is_empty() || self.extero_groups.iter().any(|&g| g == 0) {
            return Err(CoreError::Config(
                "exteroceptive resolution groups must be nonempty".into(),
            ));
        }
        if self.proprio_dim == 0 {
            return Err(CoreError::Config("proprioceptive dimension is zero".into()));
        }
        if self.extero_hidden.0 == 0 || self.extero_hidden.1 == 0 || self.proprio_hidden == 0 {
            return Err(CoreError::Config("head layer sizes must be positive".into()));
        }
        Ok(())
    }
}
