//! Run configuration: a TOML document with optional fields over the
//! published defaults. Unknown keys are rejected, all of them reported at
//! once, and the effective (merged) configuration is echoed into every run
//! manifest.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hvrnn_core::datagen::{TaskJitter, WorldSpec};
use hvrnn_core::infer::{InferConfig, InferOptimizer, MaskPolicy};
use hvrnn_core::net::NetworkTopology;
use hvrnn_core::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub world: WorldSection,
    pub topology: TopologySection,
    pub train: TrainSection,
    pub infer: InferSection,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldSection::default(),
            topology: TopologySection::default(),
            train: TrainSection::default(),
            infer: InferSection::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub arm_base: [f64; 2],
    pub link1: f64,
    pub link2: f64,
    pub heights: Vec<f64>,
    pub reposition_jitter: JitterSection,
    pub wipe_jitter: JitterSection,
    pub t_len: usize,
    pub resolutions: Vec<usize>,
    pub arm_thickness: f64,
    pub object_thickness: f64,
    pub load: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct JitterSection {
    pub phase: f64,
    pub amplitude: f64,
    pub start_pose: f64,
}

impl Default for WorldSection {
    fn default() -> Self {
        WorldSection::from(&WorldSpec::default())
    }
}

impl From<&WorldSpec> for WorldSection {
    fn from(w: &WorldSpec) -> Self {
        WorldSection {
            arm_base: [w.arm_base.0, w.arm_base.1],
            link1: w.link1,
            link2: w.link2,
            heights: w.heights.clone(),
            reposition_jitter: JitterSection {
                phase: w.reposition_jitter.phase,
                amplitude: w.reposition_jitter.amplitude,
                start_pose: w.reposition_jitter.start_pose,
            },
            wipe_jitter: JitterSection {
                phase: w.wipe_jitter.phase,
                amplitude: w.wipe_jitter.amplitude,
                start_pose: w.wipe_jitter.start_pose,
            },
            t_len: w.t_len,
            resolutions: w.resolutions.clone(),
            arm_thickness: w.arm_thickness,
            object_thickness: w.object_thickness,
            load: w.load,
        }
    }
}

impl Default for JitterSection {
    fn default() -> Self {
        JitterSection {
            phase: 0.0,
            amplitude: 0.0,
            start_pose: 0.0,
        }
    }
}

impl WorldSection {
    pub fn to_spec(&self) -> WorldSpec {
        WorldSpec {
            arm_base: (self.arm_base[0], self.arm_base[1]),
            link1: self.link1,
            link2: self.link2,
            heights: self.heights.clone(),
            reposition_jitter: TaskJitter {
                phase: self.reposition_jitter.phase,
                amplitude: self.reposition_jitter.amplitude,
                start_pose: self.reposition_jitter.start_pose,
            },
            wipe_jitter: TaskJitter {
                phase: self.wipe_jitter.phase,
                amplitude: self.wipe_jitter.amplitude,
                start_pose: self.wipe_jitter.start_pose,
            },
            t_len: self.t_len,
            resolutions: self.resolutions.clone(),
            arm_thickness: self.arm_thickness,
            object_thickness: self.object_thickness,
            load: self.load,
        }
    }
}

/// Module-indexed arrays follow the order executive, associative,
/// exteroceptive, proprioceptive.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub module_sizes: [usize; 4],
    pub latent_sizes: [usize; 4],
    pub tau: [[f64; 2]; 4],
    pub extero_hidden: [usize; 2],
    pub proprio_hidden: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            module_sizes: [30, 30, 30, 30],
            latent_sizes: [30, 30, 40, 30],
            tau: [[8.0, 16.0], [4.0, 8.0], [2.0, 4.0], [2.0, 4.0]],
            extero_hidden: [40, 50],
            proprio_hidden: 40,
        }
    }
}

impl TopologySection {
    pub fn to_topology(&self, world: &WorldSpec) -> Result<NetworkTopology> {
        NetworkTopology::from_sizes(
            self.module_sizes,
            self.latent_sizes,
            [
                (self.tau[0][0], self.tau[0][1]),
                (self.tau[1][0], self.tau[1][1]),
                (self.tau[2][0], self.tau[2][1]),
                (self.tau[3][0], self.tau[3][1]),
            ],
            world.extero_groups(),
            world.proprio_dim(),
            (self.extero_hidden[0], self.extero_hidden[1]),
            self.proprio_hidden,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub meta_prior: f64,
    pub bias_std: f64,
    pub checkpoint_cadence: u64,
    pub loss_log_cadence: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            iterations: d.iterations,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            meta_prior: d.meta_prior,
            bias_std: d.bias_std,
            checkpoint_cadence: d.checkpoint_cadence,
            loss_log_cadence: d.loss_log_cadence,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            meta_prior: self.meta_prior,
            seed,
            bias_std: self.bias_std,
            checkpoint_cadence: self.checkpoint_cadence,
            loss_log_cadence: self.loss_log_cadence,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub window: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    pub trials_per_sequence: usize,
    pub horizon: usize,
    /// Included exteroceptive resolution groups (indices, coarsest = 0).
    pub mask_groups: Option<Vec<usize>>,
    pub mask_proprio: bool,
    /// "sgd" or "radam".
    pub optimizer: String,
    pub fixed_eps: bool,
    pub deterministic_z: bool,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            window: 30,
            rounds: 50,
            learning_rate: 1.0,
            trials_per_sequence: 5,
            horizon: 0,
            mask_groups: None,
            mask_proprio: true,
            optimizer: "sgd".into(),
            fixed_eps: false,
            deterministic_z: false,
        }
    }
}

impl InferSection {
    pub fn to_config(&self, topo: &NetworkTopology) -> Result<InferConfig> {
        let optimizer = match self.optimizer.as_str() {
            "sgd" => InferOptimizer::Sgd,
            "radam" => InferOptimizer::RAdam,
            other => bail!("unknown inference optimizer {other:?} (expected \"sgd\" or \"radam\")"),
        };
        Ok(InferConfig {
            window: self.window,
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            trials_per_sequence: self.trials_per_sequence,
            horizon: self.horizon,
            mask: MaskPolicy {
                groups: self
                    .mask_groups
                    .clone()
                    .unwrap_or_else(|| (0..topo.extero_groups.len()).collect()),
                proprio: self.mask_proprio,
            },
            optimizer,
            fixed_eps: self.fixed_eps,
            deterministic_z: self.deterministic_z,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Independently trained networks per experiment.
    pub networks: usize,
    pub train_per_condition: usize,
    pub test_per_condition: usize,
    /// Varied-task counts of the data-balance grid.
    pub interference_counts: Vec<usize>,
    /// Training budget for grid cells (the full budget is used for the main
    /// fleets).
    pub interference_iterations: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            networks: 5,
            train_per_condition: 3,
            test_per_condition: 1,
            interference_counts: vec![0, 3, 6, 9],
            interference_iterations: 1500,
        }
    }
}

/// Collects every unknown key in the document (against the serialization of
/// the fully populated default), so a bad config reports all offenders at
/// once.
fn unknown_keys(value: &toml::Value, schema: &toml::Value, path: &str, out: &mut Vec<String>) {
    match (value, schema) {
        (toml::Value::Table(v), toml::Value::Table(s)) => {
            for (k, child) in v {
                let child_path = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match s.get(k) {
                    None => out.push(child_path),
                    Some(sc) => unknown_keys(child, sc, &child_path, out),
                }
            }
        }
        _ => {}
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let value: toml::Value = toml::from_str(text).context("config is not valid TOML")?;
        let schema = toml::Value::try_from(RunConfig::default())
            .expect("default config serializes");
        let mut unknown = Vec::new();
        unknown_keys(&value, &schema, "", &mut unknown);
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        let cfg: RunConfig = value.try_into().context("config has invalid values")?;
        Ok(cfg)
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                Self::parse(&text)
            }
        }
    }

    /// The effective configuration as TOML (for the run manifest).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
