//! Deterministic synthetic multimodal tasks: a low-variability rigid-load
//! reposition task and a high-variability oscillatory wipe task, executed by
//! a 2-link planar arm under three height conditions, rendered at multiple
//! resolutions with proprioception (joint angles plus a torque surrogate).

pub mod render;
pub mod tasks;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::free_energy::StepObs;

pub use render::{box_downsample, render_views, Scene, SceneObject};
pub use tasks::{generate, GenCounts};

/// Per-task jitter magnitudes. The wipe task must dominate the reposition
/// task in every component (it is the high-variability task by design).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskJitter {
    /// Phase-timing jitter (fraction of the sequence that phase boundaries
    /// and oscillation phases may shift).
    pub phase: f64,
    /// Relative amplitude jitter of the task motion.
    pub amplitude: f64,
    /// Start-pose jitter in canvas units.
    pub start_pose: f64,
}

/// Geometry and variability of the synthetic world.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    /// Arm base position on the unit canvas.
    pub arm_base: (f64, f64),
    pub link1: f64,
    pub link2: f64,
    /// Height conditions for the work surface.
    pub heights: Vec<f64>,
    pub reposition_jitter: TaskJitter,
    pub wipe_jitter: TaskJitter,
    pub t_len: usize,
    /// Square grayscale resolutions, strictly increasing; the highest is
    /// rendered and the lower ones are exact box-filter downsamples.
    pub resolutions: Vec<usize>,
    /// Line half-thickness of the arm, in canvas units.
    pub arm_thickness: f64,
    pub object_thickness: f64,
    /// Load carried during the reposition lift (torque surrogate scale).
    pub load: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            arm_base: (0.45, 0.05),
            link1: 0.42,
            link2: 0.38,
            heights: vec![0.45, 0.52, 0.59],
            reposition_jitter: TaskJitter {
                phase: 0.02,
                amplitude: 0.05,
                start_pose: 0.01,
            },
            wipe_jitter: TaskJitter {
                phase: 0.75,
                amplitude: 0.30,
                start_pose: 0.04,
            },
            t_len: 80,
            resolutions: vec![4, 8, 16],
            arm_thickness: 0.060,
            object_thickness: 0.055,
            load: 1.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 9 {
            return Err(CoreError::Config(
                "sequence length too short for the three task phases".into(),
            ));
        }
        if self.heights.is_empty() {
            return Err(CoreError::Config("at least one height condition required".into()));
        }
        if self.resolutions.is_empty()
            || !self.resolutions.windows(2).all(|w| w[0] < w[1])
        {
            return Err(CoreError::Config(
                "resolutions must be nonempty and strictly increasing".into(),
            ));
        }
        let r = &self.reposition_jitter;
        let w = &self.wipe_jitter;
        if !(w.phase > r.phase && w.amplitude > r.amplitude && w.start_pose > r.start_pose) {
            return Err(CoreError::Config(
                "wipe jitter must exceed reposition jitter in every component".into(),
            ));
        }
        Ok(())
    }

    pub fn extero_groups(&self) -> Vec<usize> {
        self.resolutions.iter().map(|r| r * r).collect()
    }

    pub fn extero_dim(&self) -> usize {
        self.extero_groups().iter().sum()
    }

    pub fn proprio_dim(&self) -> usize {
        4 // two joint angles + two torque surrogates
    }

    /// Content hash of the spec (canonical little-endian field encoding).
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut push = |v: f64| h.update(v.to_le_bytes());
        push(self.arm_base.0);
        push(self.arm_base.1);
        push(self.link1);
        push(self.link2);
        for v in &self.heights {
            push(*v);
        }
        for j in [&self.reposition_jitter, &self.wipe_jitter] {
            push(j.phase);
            push(j.amplitude);
            push(j.start_pose);
        }
        push(self.t_len as f64);
        for r in &self.resolutions {
            push(*r as f64);
        }
        push(self.arm_thickness);
        push(self.object_thickness);
        push(self.load);
        h.finalize().into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Reposition,
    Wipe,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Reposition, Task::Wipe];

    pub fn label(self) -> &'static str {
        match self {
            Task::Reposition => "R",
            Task::Wipe => "W",
        }
    }

    pub fn from_label(s: &str) -> Option<Task> {
        match s {
            "R" => Some(Task::Reposition),
            "W" => Some(Task::Wipe),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// One normalized multimodal sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub task: Task,
    pub role: Role,
    /// Height condition index.
    pub condition: usize,
    pub t_len: usize,
    /// Step-major exteroceptive values (all resolution groups concatenated).
    pub extero: Vec<f64>,
    /// Step-major proprioceptive values.
    pub proprio: Vec<f64>,
}

impl Sequence {
    pub fn extero_dim(&self) -> usize {
        self.extero.len() / self.t_len
    }

    pub fn proprio_dim(&self) -> usize {
        self.proprio.len() / self.t_len
    }

    /// Observation at step offset `k` (0-based).
    pub fn obs(&self, k: usize) -> StepObs<'_> {
        let de = self.extero_dim();
        let dp = self.proprio_dim();
        StepObs {
            extero: &self.extero[k * de..(k + 1) * de],
            proprio: &self.proprio[k * dp..(k + 1) * dp],
        }
    }

    pub fn all_obs(&self) -> Vec<StepObs<'_>> {
        (0..self.t_len).map(|k| self.obs(k)).collect()
    }
}

/// Per-dimension affine scaling applied to the raw proprioceptive pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRecord {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalingRecord {
    /// Computes per-dimension extrema over a pool of raw rows. A degenerate
    /// (constant) dimension is an error naming the dimension.
    pub fn from_pool(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map(|r| r.len()).unwrap_or(0);
        if dims == 0 {
            return Err(CoreError::Data("empty pool".into()));
        }
        let mut min = vec![f64::INFINITY; dims];
        let mut max = vec![f64::NEG_INFINITY; dims];
        for row in rows {
            for (d, v) in row.iter().enumerate() {
                min[d] = min[d].min(*v);
                max[d] = max[d].max(*v);
            }
        }
        for d in 0..dims {
            if !(max[d] > min[d]) {
                return Err(CoreError::Data(format!(
                    "dimension {d} is degenerate (max == min == {})",
                    min[d]
                )));
            }
        }
        Ok(ScalingRecord { min, max })
    }

    pub fn normalize_value(&self, dim: usize, v: f64) -> f64 {
        -0.9 + 1.8 * (v - self.min[dim]) / (self.max[dim] - self.min[dim])
    }

    pub fn denormalize_value(&self, dim: usize, v: f64) -> f64 {
        self.min[dim] + (v + 0.9) / 1.8 * (self.max[dim] - self.min[dim])
    }
}

/// Affine map of a raw step-major series onto [-0.9, 0.9] per dimension.
pub fn normalize(raw_rows: &[Vec<f64>], scaling: &ScalingRecord) -> Result<Vec<Vec<f64>>> {
    let dims = scaling.min.len();
    let mut out = Vec::with_capacity(raw_rows.len());
    for row in raw_rows {
        if row.len() != dims {
            return Err(CoreError::Shape(format!(
                "row has {} dims, scaling record has {dims}",
                row.len()
            )));
        }
        out.push(
            row.iter()
                .enumerate()
                .map(|(d, v)| scaling.normalize_value(d, *v))
                .collect(),
        );
    }
    Ok(out)
}

/// The generated multimodal dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub extero_groups: Vec<usize>,
    pub proprio_dim: usize,
    pub sequences: Vec<Sequence>,
    pub scaling: ScalingRecord,
    pub spec_hash: [u8; 32],
    pub seed: u64,
}

impl SequenceBatch {
    pub fn extero_dim(&self) -> usize {
        self.extero_groups.iter().sum()
    }

    pub fn indices_where(&self, task: Option<Task>, role: Option<Role>) -> Vec<usize> {
        self.sequences
            .iter()
            .enumerate()
            .filter(|(_, s)| task.map(|t| s.task == t).unwrap_or(true))
            .filter(|(_, s)| role.map(|r| s.role == r).unwrap_or(true))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_where(None, Some(Role::Train))
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_where(None, Some(Role::Test))
    }

    /// SHA-256 over the canonical encoding of the batch content.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.sequences.len() as u64).to_le_bytes());
        for g in &self.extero_groups {
            h.update((*g as u64).to_le_bytes());
        }
        h.update((self.proprio_dim as u64).to_le_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.spec_hash);
        for s in &self.sequences {
            h.update([
                match s.task {
                    Task::Reposition => 0u8,
                    Task::Wipe => 1,
                },
                match s.role {
                    Role::Train => 0u8,
                    Role::Test => 1,
                },
                s.condition as u8,
            ]);
            h.update((s.t_len as u64).to_le_bytes());
            for v in s.extero.iter().chain(&s.proprio) {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Mean over steps and proprioceptive dims of the cross-sequence
    /// variance, for the train sequences of one task.
    pub fn mean_step_variance(&self, task: Task) -> f64 {
        let idx = self.indices_where(Some(task), Some(Role::Train));
        if idx.len() < 2 {
            return 0.0;
        }
        let t_len = self.sequences[idx[0]].t_len;
        let dp = self.proprio_dim;
        let n = idx.len() as f64;
        let mut total = 0.0;
        for k in 0..t_len {
            for d in 0..dp {
                let vals: Vec<f64> = idx
                    .iter()
                    .map(|&s| self.sequences[s].proprio[k * dp + d])
                    .collect();
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                total += var;
            }
        }
        total / (t_len * dp) as f64
    }
}
