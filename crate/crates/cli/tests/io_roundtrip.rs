//! Container round-trips, integrity checks and fault injection.

use hvrnn_cli::io::{
    self, checkpoint_from_bytes, checkpoint_to_bytes, dataset_from_bytes, dataset_to_bytes,
    pgm, IoError, CHECKPOINT_MAGIC,
};
use hvrnn_core::datagen::{generate, GenCounts, WorldSpec};
use hvrnn_core::net::NetworkTopology;
use hvrnn_core::runner::SerialMap;
use hvrnn_core::train::{fit, TrainConfig};

use sha2::{Digest, Sha256};

fn tiny_checkpoint() -> hvrnn_core::Checkpoint {
    let topo = hvrnn_core::grad::tiny_topology();
    let batch = wave_batch(&topo);
    let cfg = TrainConfig {
        iterations: 3,
        seed: 7,
        ..Default::default()
    };
    fit(&batch, &[0, 1], &topo, &cfg, &SerialMap, None)
        .unwrap()
        .checkpoint
}

/// Small smooth batch matching the tiny topology (3 extero dims, 3 proprio).
fn wave_batch(topo: &NetworkTopology) -> hvrnn_core::datagen::SequenceBatch {
    use hvrnn_core::datagen::{Role, ScalingRecord, Sequence, SequenceBatch, Task};
    let t_len = 8;
    let mk = |phase: f64, task: Task| Sequence {
        task,
        role: Role::Train,
        condition: 0,
        t_len,
        extero: (0..t_len * topo.extero_dim())
            .map(|i| 0.5 * ((i as f64) * 0.37 + phase).sin())
            .collect(),
        proprio: (0..t_len * topo.proprio_dim)
            .map(|i| 0.5 * ((i as f64) * 0.53 + phase).cos())
            .collect(),
    };
    SequenceBatch {
        extero_groups: topo.extero_groups.clone(),
        proprio_dim: topo.proprio_dim,
        sequences: vec![mk(0.0, Task::Reposition), mk(1.0, Task::Wipe)],
        scaling: ScalingRecord {
            min: vec![-1.0; topo.proprio_dim],
            max: vec![1.0; topo.proprio_dim],
        },
        spec_hash: [7; 32],
        seed: 3,
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise_exact() {
    let ck = tiny_checkpoint();
    let bytes = checkpoint_to_bytes(&ck).unwrap();
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(ck.params, back.params);
    assert_eq!(ck.topology, back.topology);
    assert_eq!(ck.adaptive, back.adaptive);
    assert_eq!(ck.provenance.seed, back.provenance.seed);
    assert_eq!(ck.provenance.dataset_hash, back.provenance.dataset_hash);
    assert_eq!(ck.params_hash(), back.params_hash());
    // Serialization itself is deterministic.
    assert_eq!(bytes, checkpoint_to_bytes(&back).unwrap());
}

#[test]
fn wrong_magic_is_not_a_checkpoint() {
    let ck = tiny_checkpoint();
    let mut bytes = checkpoint_to_bytes(&ck).unwrap();
    bytes[0] = b'X';
    match checkpoint_from_bytes(&bytes) {
        Err(IoError::BadMagic { expected }) => assert_eq!(expected, "checkpoint"),
        other => panic!("expected BadMagic, got {other:?}"),
    }
}

#[test]
fn version_mismatch_is_detected_before_tensors() {
    let ck = tiny_checkpoint();
    let mut bytes = checkpoint_to_bytes(&ck).unwrap();
    bytes[8] = 99; // container version field
    match checkpoint_from_bytes(&bytes) {
        Err(IoError::Version { kind, found, .. }) => {
            assert_eq!(kind, "checkpoint");
            assert_eq!(found, 99);
        }
        other => panic!("expected Version error, got {other:?}"),
    }
}

#[test]
fn truncated_file_fails_integrity_not_garbage() {
    let ck = tiny_checkpoint();
    let bytes = checkpoint_to_bytes(&ck).unwrap();
    let truncated = &bytes[..bytes.len() - 100];
    match checkpoint_from_bytes(truncated) {
        Err(IoError::Integrity(_)) => {}
        other => panic!("expected Integrity error, got {other:?}"),
    }
}

#[test]
fn flipped_payload_byte_fails_integrity() {
    let ck = tiny_checkpoint();
    let mut bytes = checkpoint_to_bytes(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    match checkpoint_from_bytes(&bytes) {
        Err(IoError::Integrity(_)) => {}
        other => panic!("expected Integrity error, got {other:?}"),
    }
}

/// Re-signs a container after header tampering so that only the per-tensor
/// validation can catch the problem.
fn resign(bytes: &mut Vec<u8>) {
    bytes.truncate(bytes.len() - 32);
    let mut h = Sha256::new();
    h.update(&bytes[..]);
    let digest: [u8; 32] = h.finalize().into();
    bytes.extend_from_slice(&digest);
}

#[test]
fn header_shape_mismatch_names_the_tensor() {
    let ck = tiny_checkpoint();
    let bytes = checkpoint_to_bytes(&ck).unwrap();
    // Parse the header, inflate one declared tensor shape, re-sign.
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[20..20 + header_len]).unwrap();
    let tampered_header = header.replace("name = \"w_dd.Mul\"\nshape = [9]", "name = \"w_dd.Mul\"\nshape = [9000]");
    assert_ne!(header, tampered_header, "tamper target must exist");
    let mut tampered = Vec::new();
    tampered.extend_from_slice(CHECKPOINT_MAGIC);
    tampered.extend_from_slice(&bytes[8..12]);
    tampered.extend_from_slice(&(tampered_header.len() as u64).to_le_bytes());
    tampered.extend_from_slice(tampered_header.as_bytes());
    tampered.extend_from_slice(&bytes[20 + header_len..bytes.len() - 32]);
    tampered.extend_from_slice(&[0; 32]);
    resign(&mut tampered);
    match checkpoint_from_bytes(&tampered) {
        Err(IoError::Tensor { name, .. }) => assert_eq!(name, "w_dd.Mul"),
        other => panic!("expected Tensor error, got {other:?}"),
    }
}

#[test]
fn dataset_round_trip_and_integrity() {
    let mut spec = WorldSpec::default();
    spec.t_len = 12;
    let batch = generate(&spec, &GenCounts { train_per_condition: 1, test_per_condition: 1 }, 5).unwrap();
    let bytes = dataset_to_bytes(&batch).unwrap();
    let back = dataset_from_bytes(&bytes).unwrap();
    assert_eq!(batch, back);
    assert_eq!(batch.content_hash(), back.content_hash());
    let mut corrupt = bytes.clone();
    corrupt[40] ^= 1;
    assert!(dataset_from_bytes(&corrupt).is_err());
}

#[test]
fn nonfinite_values_are_rejected_at_save() {
    let mut ck = tiny_checkpoint();
    ck.params.bias[0][0] = f64::NAN;
    match checkpoint_to_bytes(&ck) {
        Err(IoError::NonFinite(name)) => assert!(name.contains("bias")),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn pgm_export_and_quantized_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.pgm");
    // Uniform -0.9 frame: all-zero intensity.
    let pixels = vec![-0.9; 64];
    pgm::export_frame(&pixels, 8, 8, pgm::GrayMapping::Signed, &path).unwrap();
    let (w, h, data) = pgm::read_frame(&path).unwrap();
    assert_eq!((w, h), (8, 8));
    assert!(data.iter().all(|b| *b == 0));
    // Header tokens: P5 8 8 255.
    let raw = std::fs::read(&path).unwrap();
    let header = std::str::from_utf8(&raw[..10]).unwrap();
    assert_eq!(header, "P5\n8 8\n255");
    // Round trip of arbitrary values reproduces the quantized bytes exactly.
    let pixels: Vec<f64> = (0..64).map(|i| -0.9 + 1.8 * (i as f64) / 63.0).collect();
    pgm::export_frame(&pixels, 8, 8, pgm::GrayMapping::Signed, &path).unwrap();
    let (_, _, data) = pgm::read_frame(&path).unwrap();
    let expected: Vec<u8> = pixels
        .iter()
        .map(|v| (((v + 0.9) / 1.8).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    assert_eq!(data, expected);
    // Sidecar exists and documents the mapping.
    let sidecar = std::fs::read_to_string(dir.path().join("frame.pgm.txt")).unwrap();
    assert!(sidecar.contains("-0.9"));
}

#[test]
fn trial_log_round_trip() {
    let ck = tiny_checkpoint();
    let topo = ck.topology.clone();
    let batch = wave_batch(&topo);
    let mut cfg = hvrnn_core::infer::InferConfig::new(&topo);
    cfg.window = 4;
    cfg.rounds = 2;
    cfg.trials_per_sequence = 2;
    let set = hvrnn_core::infer::run_trials(&ck, &batch, &[0, 1], &cfg, 9, &SerialMap).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trials.hvt");
    io::save_trials(&set, &ck, batch.content_hash(), &path).unwrap();
    let loaded = io::load_trials(&path, &topo).unwrap();
    assert_eq!(loaded.set.trials.len(), set.trials.len());
    for (a, b) in loaded.set.trials.iter().zip(&set.trials) {
        assert_eq!(a.seq_index, b.seq_index);
        assert_eq!(a.steps.len(), b.steps.len());
        for (sa, sb) in a.steps.iter().zip(&b.steps) {
            assert_eq!(sa.z, sb.z);
            assert_eq!(sa.prior.sigma, sb.prior.sigma);
            assert_eq!(sa.prediction.extero, sb.prediction.extero);
            assert_eq!(sa.fe.total, sb.fe.total);
        }
    }
    assert_eq!(loaded.checkpoint_hash, hex::encode(ck.params_hash()));
}
