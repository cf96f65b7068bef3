//! On-disk artifacts: self-describing binary containers (checkpoint,
//! dataset, trial logs), portable graymaps, CSV tables and run manifests.
//!
//! Container layout: 8 magic bytes, u32 format version, u64 header length,
//! a TOML header describing shapes and per-tensor hashes, the payload as
//! little-endian f64, and a trailing SHA-256 over everything before it.

pub mod csv;
pub mod manifest;
pub mod pgm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use hvrnn_core::checkpoint::{Checkpoint, Provenance, CHECKPOINT_VERSION};
use hvrnn_core::datagen::{Role, ScalingRecord, Sequence, SequenceBatch, Task};
use hvrnn_core::grad::AdaptivePosterior;
use hvrnn_core::infer::{Trial, TrialSet};
use hvrnn_core::net::{NetworkTopology, Parameters};
use hvrnn_core::train::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HVRNCKP\0";
pub const DATASET_MAGIC: &[u8; 8] = b"HVRNDAT\0";
pub const TRIALLOG_MAGIC: &[u8; 8] = b"HVRNTRL\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {expected} file (bad magic bytes)")]
    BadMagic { expected: &'static str },
    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("file integrity check failed: {0}")]
    Integrity(String),
    #[error("tensor {name}: {problem}")]
    Tensor { name: String, problem: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("cannot serialize non-finite values in tensor {0}")]
    NonFinite(String),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn sha256(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}

pub fn file_sha256_hex(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Shape, row-major.
    shape: Vec<usize>,
    /// Offset into the payload, in f64 elements.
    offset: usize,
    /// SHA-256 of the tensor's little-endian bytes.
    sha256: String,
}

impl TensorEntry {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Accumulates tensors and serializes the container.
struct ContainerWriter {
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl ContainerWriter {
    fn new() -> Self {
        ContainerWriter {
            entries: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: &[f64]) -> Result<()> {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        if !data.iter().all(|v| v.is_finite()) {
            return Err(IoError::NonFinite(name.to_string()));
        }
        let offset = self.payload.len() / 8;
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry {
            name: name.to_string(),
            shape,
            offset,
            sha256: hex::encode(sha256(&bytes)),
        });
        self.payload.extend_from_slice(&bytes);
        Ok(())
    }

    fn finish<H: Serialize>(self, magic: &[u8; 8], header_meta: &H) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct FullHeader<'a, H> {
            #[serde(flatten)]
            meta: &'a H,
            tensors: &'a [TensorEntry],
        }
        let header = toml::to_string(&FullHeader {
            meta: header_meta,
            tensors: &self.entries,
        })
        .map_err(|e| IoError::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(self.payload.len() + header.len() + 64);
        out.extend_from_slice(magic);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.payload);
        let digest = sha256(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }
}

/// Parsed container: header table plus raw payload.
struct ContainerReader {
    header: toml::Value,
    entries: Vec<TensorEntry>,
    payload: Vec<u8>,
}

impl ContainerReader {
    fn parse(bytes: &[u8], magic: &[u8; 8], kind: &'static str) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(IoError::Integrity(format!("{kind} file is truncated")));
        }
        if &bytes[..8] != magic {
            return Err(IoError::BadMagic { expected: kind });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(IoError::Version {
                kind,
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        let body_end = bytes.len() - 32;
        let declared: [u8; 32] = bytes[body_end..].try_into().unwrap();
        let actual = sha256(&bytes[..body_end]);
        if declared != actual {
            return Err(IoError::Integrity(format!(
                "{kind} content hash mismatch (file corrupted or truncated)"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if 20 + header_len > body_end {
            return Err(IoError::Integrity(format!(
                "{kind} header length exceeds the file"
            )));
        }
        let header_text = std::str::from_utf8(&bytes[20..20 + header_len])
            .map_err(|e| IoError::Header(e.to_string()))?;
        let header: toml::Value =
            toml::from_str(header_text).map_err(|e| IoError::Header(e.to_string()))?;
        let entries: Vec<TensorEntry> = header
            .get("tensors")
            .cloned()
            .map(|v| v.try_into().map_err(|e: toml::de::Error| IoError::Header(e.to_string())))
            .transpose()?
            .unwrap_or_default();
        let payload = bytes[20 + header_len..body_end].to_vec();
        Ok(ContainerReader {
            header,
            entries,
            payload,
        })
    }

    fn meta<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        self.header
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| IoError::Header(e.to_string()))
    }

    fn tensor(&self, name: &str) -> Result<Vec<f64>> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| IoError::Tensor {
                name: name.to_string(),
                problem: "missing from the header".into(),
            })?;
        self.tensor_entry(entry)
    }

    fn tensor_entry(&self, entry: &TensorEntry) -> Result<Vec<f64>> {
        let start = entry.offset * 8;
        let end = start + entry.len() * 8;
        if end > self.payload.len() {
            return Err(IoError::Tensor {
                name: entry.name.clone(),
                problem: format!(
                    "declared shape {:?} exceeds the payload ({} of {} bytes)",
                    entry.shape,
                    end,
                    self.payload.len()
                ),
            });
        }
        let bytes = &self.payload[start..end];
        if hex::encode(sha256(bytes)) != entry.sha256 {
            return Err(IoError::Tensor {
                name: entry.name.clone(),
                problem: "payload does not match the header-declared hash".into(),
            });
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Validates every tensor entry (bounds and hash).
    fn verify_all(&self) -> Result<()> {
        for e in &self.entries {
            self.tensor_entry(e)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TopologyMeta {
    n_d: Vec<usize>,
    n_z: Vec<usize>,
    extero_groups: Vec<usize>,
    proprio_dim: usize,
    extero_hidden: [usize; 2],
    proprio_hidden: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainConfigMeta {
    iterations: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    meta_prior: f64,
    seed_hex: String,
    bias_std: f64,
    checkpoint_cadence: u64,
    loss_log_cadence: u64,
}

impl From<&TrainConfig> for TrainConfigMeta {
    fn from(c: &TrainConfig) -> Self {
        TrainConfigMeta {
            iterations: c.iterations,
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            meta_prior: c.meta_prior,
            seed_hex: format!("{:016x}", c.seed),
            bias_std: c.bias_std,
            checkpoint_cadence: c.checkpoint_cadence,
            loss_log_cadence: c.loss_log_cadence,
        }
    }
}

impl TrainConfigMeta {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            meta_prior: self.meta_prior,
            seed: u64::from_str_radix(&self.seed_hex, 16).unwrap_or(0),
            bias_std: self.bias_std,
            checkpoint_cadence: self.checkpoint_cadence,
            loss_log_cadence: self.loss_log_cadence,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    checkpoint_version: u32,
    topology: TopologyMeta,
    seed_hex: String,
    iterations: u64,
    dataset_hash: String,
    train_indices: Vec<usize>,
    train_config: TrainConfigMeta,
    /// Covered step count per stored adaptive posterior.
    adaptive_steps: Vec<usize>,
}

/// Serializes a checkpoint: tau vectors and every parameter tensor
/// (including the fixed biases) plus the per-sequence adaptive posteriors.
pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let topo = &ck.topology;
    let meta = CheckpointMeta {
        checkpoint_version: ck.version,
        topology: TopologyMeta {
            n_d: topo.n_d.to_vec(),
            n_z: topo.n_z.to_vec(),
            extero_groups: topo.extero_groups.clone(),
            proprio_dim: topo.proprio_dim,
            extero_hidden: [topo.extero_hidden.0, topo.extero_hidden.1],
            proprio_hidden: topo.proprio_hidden,
        },
        seed_hex: format!("{:016x}", ck.provenance.seed),
        iterations: ck.provenance.iterations,
        dataset_hash: hex::encode(ck.provenance.dataset_hash),
        train_indices: ck.provenance.train_indices.clone(),
        train_config: (&ck.provenance.config).into(),
        adaptive_steps: ck.adaptive.iter().map(|a| a.len()).collect(),
    };
    let mut w = ContainerWriter::new();
    for (m, tau) in topo.tau.iter().enumerate() {
        w.push(&format!("tau.{m}"), vec![tau.len()], tau)?;
    }
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    collect_param_tensors(&ck.params, topo, &mut tensors);
    for (name, shape, data) in tensors {
        w.push(&name, shape, &data)?;
    }
    for (i, a) in ck.adaptive.iter().enumerate() {
        let (mu, sig) = flatten_adaptive(a, topo);
        let z_total: usize = topo.n_z.iter().sum();
        w.push(
            &format!("adaptive.{i:03}.mu"),
            vec![a.len(), z_total],
            &mu,
        )?;
        w.push(
            &format!("adaptive.{i:03}.sig"),
            vec![a.len(), z_total],
            &sig,
        )?;
    }
    w.finish(CHECKPOINT_MAGIC, &meta)
}

fn collect_param_tensors(
    p: &Parameters,
    topo: &NetworkTopology,
    out: &mut Vec<(String, Vec<usize>, Vec<f64>)>,
) {
    p.visit_trainable(|name, data| {
        out.push((name.to_string(), vec![data.len()], data.to_vec()));
    });
    for (m, b) in p.bias.iter().enumerate() {
        out.push((format!("bias.{m}"), vec![topo.n_d[m]], b.clone()));
    }
}

fn flatten_adaptive(a: &AdaptivePosterior, topo: &NetworkTopology) -> (Vec<f64>, Vec<f64>) {
    let z_total: usize = topo.n_z.iter().sum();
    let mut mu = Vec::with_capacity(a.len() * z_total);
    let mut sig = Vec::with_capacity(a.len() * z_total);
    for t in a.start_t()..=a.end_t() {
        let (am, asg) = a.step(t);
        for m in 0..4 {
            mu.extend_from_slice(&am[m]);
            sig.extend_from_slice(&asg[m]);
        }
    }
    (mu, sig)
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_bytes(ck)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let r = ContainerReader::parse(bytes, CHECKPOINT_MAGIC, "checkpoint")?;
    let meta: CheckpointMeta = r.meta()?;
    if meta.checkpoint_version != CHECKPOINT_VERSION {
        return Err(IoError::Version {
            kind: "checkpoint",
            found: meta.checkpoint_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    r.verify_all()?;
    let tm = &meta.topology;
    if tm.n_d.len() != 4 || tm.n_z.len() != 4 {
        return Err(IoError::Header("topology must have four modules".into()));
    }
    let mut tau: [Vec<f64>; 4] = Default::default();
    for (m, t) in tau.iter_mut().enumerate() {
        *t = r.tensor(&format!("tau.{m}"))?;
    }
    let topo = NetworkTopology {
        n_d: [tm.n_d[0], tm.n_d[1], tm.n_d[2], tm.n_d[3]],
        n_z: [tm.n_z[0], tm.n_z[1], tm.n_z[2], tm.n_z[3]],
        tau,
        extero_groups: tm.extero_groups.clone(),
        proprio_dim: tm.proprio_dim,
        extero_hidden: (tm.extero_hidden[0], tm.extero_hidden[1]),
        proprio_hidden: tm.proprio_hidden,
    };
    topo.validate()
        .map_err(|e| IoError::Header(format!("stored topology invalid: {e}")))?;
    let mut params = Parameters::zeros(&topo)
        .map_err(|e| IoError::Header(format!("cannot allocate parameters: {e}")))?;
    {
        let names = params.trainable_names();
        let mut slices = params.trainable_mut();
        for (name, slice) in names.iter().zip(slices.iter_mut()) {
            let data = r.tensor(name)?;
            if data.len() != slice.len() {
                return Err(IoError::Tensor {
                    name: name.clone(),
                    problem: format!(
                        "stored length {} does not match topology ({})",
                        data.len(),
                        slice.len()
                    ),
                });
            }
            slice.copy_from_slice(&data);
        }
    }
    for m in 0..4 {
        let data = r.tensor(&format!("bias.{m}"))?;
        if data.len() != topo.n_d[m] {
            return Err(IoError::Tensor {
                name: format!("bias.{m}"),
                problem: "stored length does not match topology".into(),
            });
        }
        params.bias[m].copy_from_slice(&data);
    }
    let z_total: usize = topo.n_z.iter().sum();
    let mut adaptive = Vec::new();
    for (i, (&steps, &seq_id)) in meta
        .adaptive_steps
        .iter()
        .zip(meta.train_indices.iter())
        .enumerate()
    {
        let mu = r.tensor(&format!("adaptive.{i:03}.mu"))?;
        let sig = r.tensor(&format!("adaptive.{i:03}.sig"))?;
        if mu.len() != steps * z_total || sig.len() != steps * z_total {
            return Err(IoError::Tensor {
                name: format!("adaptive.{i:03}"),
                problem: "stored length does not match declared steps".into(),
            });
        }
        let mut a = AdaptivePosterior::zeros(&topo, seq_id, 1, steps);
        for t in 1..=steps {
            let (am, asg) = a.step_mut(t);
            let mut off = (t - 1) * z_total;
            for m in 0..4 {
                let n = topo.n_z[m];
                am[m].copy_from_slice(&mu[off..off + n]);
                asg[m].copy_from_slice(&sig[off..off + n]);
                off += n;
            }
        }
        adaptive.push(a);
    }
    let mut dataset_hash = [0u8; 32];
    let decoded = hex::decode(&meta.dataset_hash)
        .map_err(|e| IoError::Header(format!("bad dataset hash: {e}")))?;
    if decoded.len() != 32 {
        return Err(IoError::Header("dataset hash must be 32 bytes".into()));
    }
    dataset_hash.copy_from_slice(&decoded);
    Ok(Checkpoint {
        version: meta.checkpoint_version,
        topology: topo,
        params,
        provenance: Provenance {
            seed: u64::from_str_radix(&meta.seed_hex, 16)
                .map_err(|e| IoError::Header(format!("bad seed: {e}")))?,
            iterations: meta.iterations,
            dataset_hash,
            train_indices: meta.train_indices,
            config: meta.train_config.to_config(),
        },
        adaptive,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SequenceMeta {
    task: String,
    role: String,
    condition: usize,
    t_len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetMeta {
    extero_groups: Vec<usize>,
    proprio_dim: usize,
    seed_hex: String,
    spec_hash: String,
    scaling_min: Vec<f64>,
    scaling_max: Vec<f64>,
    sequences: Vec<SequenceMeta>,
}

pub fn dataset_to_bytes(batch: &SequenceBatch) -> Result<Vec<u8>> {
    let meta = DatasetMeta {
        extero_groups: batch.extero_groups.clone(),
        proprio_dim: batch.proprio_dim,
        seed_hex: format!("{:016x}", batch.seed),
        spec_hash: hex::encode(batch.spec_hash),
        scaling_min: batch.scaling.min.clone(),
        scaling_max: batch.scaling.max.clone(),
        sequences: batch
            .sequences
            .iter()
            .map(|s| SequenceMeta {
                task: s.task.label().to_string(),
                role: s.role.label().to_string(),
                condition: s.condition,
                t_len: s.t_len,
            })
            .collect(),
    };
    let mut w = ContainerWriter::new();
    for (i, s) in batch.sequences.iter().enumerate() {
        w.push(
            &format!("seq.{i:03}.extero"),
            vec![s.t_len, s.extero_dim()],
            &s.extero,
        )?;
        w.push(
            &format!("seq.{i:03}.proprio"),
            vec![s.t_len, s.proprio_dim()],
            &s.proprio,
        )?;
    }
    w.finish(DATASET_MAGIC, &meta)
}

pub fn save_dataset(batch: &SequenceBatch, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_bytes(batch)?)?;
    Ok(())
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<SequenceBatch> {
    let r = ContainerReader::parse(bytes, DATASET_MAGIC, "dataset")?;
    let meta: DatasetMeta = r.meta()?;
    r.verify_all()?;
    let mut sequences = Vec::with_capacity(meta.sequences.len());
    for (i, sm) in meta.sequences.iter().enumerate() {
        let extero = r.tensor(&format!("seq.{i:03}.extero"))?;
        let proprio = r.tensor(&format!("seq.{i:03}.proprio"))?;
        let task = Task::from_label(&sm.task)
            .ok_or_else(|| IoError::Header(format!("unknown task label {:?}", sm.task)))?;
        let role = match sm.role.as_str() {
            "train" => Role::Train,
            "test" => Role::Test,
            other => return Err(IoError::Header(format!("unknown role {other:?}"))),
        };
        sequences.push(Sequence {
            task,
            role,
            condition: sm.condition,
            t_len: sm.t_len,
            extero,
            proprio,
        });
    }
    let mut spec_hash = [0u8; 32];
    let decoded = hex::decode(&meta.spec_hash)
        .map_err(|e| IoError::Header(format!("bad spec hash: {e}")))?;
    if decoded.len() != 32 {
        return Err(IoError::Header("spec hash must be 32 bytes".into()));
    }
    spec_hash.copy_from_slice(&decoded);
    Ok(SequenceBatch {
        extero_groups: meta.extero_groups,
        proprio_dim: meta.proprio_dim,
        sequences,
        scaling: ScalingRecord {
            min: meta.scaling_min,
            max: meta.scaling_max,
        },
        spec_hash,
        seed: u64::from_str_radix(&meta.seed_hex, 16)
            .map_err(|e| IoError::Header(format!("bad seed: {e}")))?,
    })
}

pub fn load_dataset(path: &Path) -> Result<SequenceBatch> {
    dataset_from_bytes(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Trial logs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrialMeta {
    seq_index: usize,
    trial: usize,
    seed_hex: String,
    t_len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrialLogMeta {
    checkpoint_hash: String,
    dataset_hash: String,
    z_total: usize,
    extero_dim: usize,
    proprio_dim: usize,
    trials: Vec<TrialMeta>,
}

/// Persists the per-step logs of a trial set: latent samples, prior and
/// posterior moments, predictions, and free-energy terms.
pub fn trials_to_bytes(
    set: &TrialSet,
    ck: &Checkpoint,
    dataset_hash: [u8; 32],
) -> Result<Vec<u8>> {
    let topo = &ck.topology;
    let z_total: usize = topo.n_z.iter().sum();
    let meta = TrialLogMeta {
        checkpoint_hash: hex::encode(ck.params_hash()),
        dataset_hash: hex::encode(dataset_hash),
        z_total,
        extero_dim: topo.extero_dim(),
        proprio_dim: topo.proprio_dim,
        trials: set
            .trials
            .iter()
            .map(|t| TrialMeta {
                seq_index: t.seq_index,
                trial: t.trial,
                seed_hex: format!("{:016x}", t.seed),
                t_len: t.steps.len(),
            })
            .collect(),
    };
    let mut w = ContainerWriter::new();
    let flat_latent = |get: &dyn Fn(&hvrnn_core::infer::StepResult) -> Vec<f64>,
                       trial: &Trial| {
        let mut out = Vec::with_capacity(trial.steps.len() * z_total);
        for s in &trial.steps {
            out.extend(get(s));
        }
        out
    };
    for (i, trial) in set.trials.iter().enumerate() {
        let t_len = trial.steps.len();
        let cat = |f: &dyn Fn(&hvrnn_core::infer::StepResult) -> Vec<f64>| flat_latent(f, trial);
        w.push(
            &format!("trial.{i:03}.z"),
            vec![t_len, z_total],
            &cat(&|s| s.z.iter().flatten().copied().collect()),
        )?;
        w.push(
            &format!("trial.{i:03}.prior_mu"),
            vec![t_len, z_total],
            &cat(&|s| s.prior.mu.iter().flatten().copied().collect()),
        )?;
        w.push(
            &format!("trial.{i:03}.prior_sigma"),
            vec![t_len, z_total],
            &cat(&|s| s.prior.sigma.iter().flatten().copied().collect()),
        )?;
        w.push(
            &format!("trial.{i:03}.post_mu"),
            vec![t_len, z_total],
            &cat(&|s| s.posterior.mu.iter().flatten().copied().collect()),
        )?;
        w.push(
            &format!("trial.{i:03}.post_sigma"),
            vec![t_len, z_total],
            &cat(&|s| s.posterior.sigma.iter().flatten().copied().collect()),
        )?;
        let mut pred_e = Vec::with_capacity(t_len * topo.extero_dim());
        let mut pred_p = Vec::with_capacity(t_len * topo.proprio_dim);
        let mut fe = Vec::with_capacity(t_len * 8);
        for s in &trial.steps {
            pred_e.extend_from_slice(&s.prediction.extero);
            pred_p.extend_from_slice(&s.prediction.proprio);
            fe.push(s.fe.accuracy_extero);
            fe.push(s.fe.accuracy_proprio);
            fe.extend_from_slice(&s.fe.complexity);
            fe.push(s.fe.total);
            fe.push(s.window_total);
        }
        w.push(
            &format!("trial.{i:03}.pred_extero"),
            vec![t_len, topo.extero_dim()],
            &pred_e,
        )?;
        w.push(
            &format!("trial.{i:03}.pred_proprio"),
            vec![t_len, topo.proprio_dim],
            &pred_p,
        )?;
        w.push(&format!("trial.{i:03}.fe"), vec![t_len, 8], &fe)?;
    }
    w.finish(TRIALLOG_MAGIC, &meta)
}

pub fn save_trials(
    set: &TrialSet,
    ck: &Checkpoint,
    dataset_hash: [u8; 32],
    path: &Path,
) -> Result<()> {
    fs::write(path, trials_to_bytes(set, ck, dataset_hash)?)?;
    Ok(())
}

/// The parts of a trial log the ablation analysis needs.
pub struct LoadedTrials {
    pub checkpoint_hash: String,
    pub dataset_hash: String,
    pub set: TrialSet,
}

/// Reconstructs a trial set from a log file (per-step moments, latents,
/// predictions and free-energy terms; diagnostics like per-round losses are
/// not persisted).
pub fn load_trials(path: &Path, topo: &NetworkTopology) -> Result<LoadedTrials> {
    let bytes = fs::read(path)?;
    let r = ContainerReader::parse(&bytes, TRIALLOG_MAGIC, "trial log")?;
    let meta: TrialLogMeta = r.meta()?;
    r.verify_all()?;
    let z_total: usize = topo.n_z.iter().sum();
    if meta.z_total != z_total
        || meta.extero_dim != topo.extero_dim()
        || meta.proprio_dim != topo.proprio_dim
    {
        return Err(IoError::Header(
            "trial log dims do not match the given topology".into(),
        ));
    }
    let unflatten = |flat: &[f64], t_len: usize| -> Vec<[Vec<f64>; 4]> {
        (0..t_len)
            .map(|k| {
                let mut off = k * z_total;
                let mut out: [Vec<f64>; 4] = Default::default();
                for m in 0..4 {
                    out[m] = flat[off..off + topo.n_z[m]].to_vec();
                    off += topo.n_z[m];
                }
                out
            })
            .collect()
    };
    let mut trials = Vec::with_capacity(meta.trials.len());
    for (i, tm) in meta.trials.iter().enumerate() {
        let z = unflatten(&r.tensor(&format!("trial.{i:03}.z"))?, tm.t_len);
        let pmu = unflatten(&r.tensor(&format!("trial.{i:03}.prior_mu"))?, tm.t_len);
        let psig = unflatten(&r.tensor(&format!("trial.{i:03}.prior_sigma"))?, tm.t_len);
        let qmu = unflatten(&r.tensor(&format!("trial.{i:03}.post_mu"))?, tm.t_len);
        let qsig = unflatten(&r.tensor(&format!("trial.{i:03}.post_sigma"))?, tm.t_len);
        let pred_e = r.tensor(&format!("trial.{i:03}.pred_extero"))?;
        let pred_p = r.tensor(&format!("trial.{i:03}.pred_proprio"))?;
        let fe = r.tensor(&format!("trial.{i:03}.fe"))?;
        let de = topo.extero_dim();
        let dp = topo.proprio_dim;
        let steps = (0..tm.t_len)
            .map(|k| hvrnn_core::infer::StepResult {
                t: k + 1,
                prediction: hvrnn_core::net::Prediction {
                    extero: pred_e[k * de..(k + 1) * de].to_vec(),
                    proprio: pred_p[k * dp..(k + 1) * dp].to_vec(),
                    f_ext1: Vec::new(),
                    f_ext2: Vec::new(),
                    f_pro: Vec::new(),
                },
                prior: hvrnn_core::net::LatentMoments {
                    mu: pmu[k].clone(),
                    sigma: psig[k].clone(),
                },
                posterior: hvrnn_core::net::LatentMoments {
                    mu: qmu[k].clone(),
                    sigma: qsig[k].clone(),
                },
                z: z[k].clone(),
                fe: hvrnn_core::free_energy::FreeEnergyTerms {
                    accuracy_extero: fe[k * 8],
                    accuracy_proprio: fe[k * 8 + 1],
                    complexity: [fe[k * 8 + 2], fe[k * 8 + 3], fe[k * 8 + 4], fe[k * 8 + 5]],
                    meta_prior: 0.0,
                    total: fe[k * 8 + 6],
                },
                window_total: fe[k * 8 + 7],
                round_fe: Vec::new(),
            })
            .collect();
        trials.push(Trial {
            seq_index: tm.seq_index,
            trial: tm.trial,
            seed: u64::from_str_radix(&tm.seed_hex, 16)
                .map_err(|e| IoError::Header(format!("bad seed: {e}")))?,
            steps,
            rollout: Vec::new(),
        });
    }
    Ok(LoadedTrials {
        checkpoint_hash: meta.checkpoint_hash,
        dataset_hash: meta.dataset_hash,
        set: TrialSet { trials },
    })
}
