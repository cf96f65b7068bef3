//! The in-memory checkpoint: everything needed to reproduce or resume a
//! trained network. Serialization lives in the companion crate.

use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::grad::AdaptivePosterior;
use crate::net::params::Parameters;
use crate::net::topology::NetworkTopology;
use crate::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub iterations: u64,
    pub dataset_hash: [u8; 32],
    pub train_indices: Vec<usize>,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub topology: NetworkTopology,
    pub params: Parameters,
    pub provenance: Provenance,
    /// Final adaptive posteriors of the training sequences, in ascending
    /// sequence order.
    pub adaptive: Vec<AdaptivePosterior>,
}

impl Checkpoint {
    /// SHA-256 over every parameter tensor (trainable and fixed), used to
    /// verify that inference never touches the weights.
    pub fn params_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        self.params.visit_trainable(|name, t| {
            h.update(name.as_bytes());
            for v in t {
                h.update(v.to_le_bytes());
            }
        });
        for b in &self.params.bias {
            for v in b {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}
