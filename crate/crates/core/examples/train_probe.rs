//! Quick desk-scale training probe: iterations/sec and the free-energy and
//! reconstruction-error trajectory.

use std::time::Instant;

use hvrnn_core::datagen::{generate, GenCounts, WorldSpec};
use hvrnn_core::net::{forward_sequence, EpsSource, LatentMode, NetworkTopology};
use hvrnn_core::runner::SerialMap;
use hvrnn_core::train::{fit, TrainConfig};

fn main() {
    let iters: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let meta_prior: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.005);
    let bias_std: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(hvrnn_core::net::DEFAULT_BIAS_STD);
    let spec = WorldSpec::default();
    let batch = generate(&spec, &GenCounts::default(), 1).unwrap();
    let topo = NetworkTopology::desk_default();
    let cfg = TrainConfig {
        iterations: iters,
        seed: 1,
        loss_log_cadence: 10,
        meta_prior,
        bias_std,
        ..Default::default()
    };
    let train_idx = batch.train_indices();
    let t0 = Instant::now();
    let out = fit(&batch, &train_idx, &topo, &cfg, &SerialMap, None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{} iterations in {:.1}s ({:.2} it/s)",
        iters,
        dt,
        iters as f64 / dt
    );
    for row in out
        .history
        .iter()
        .step_by((out.history.len() / 12).max(1))
        .chain(out.history.last())
    {
        println!(
            "it {:5}  total {:10.4}  acc_e {:9.5} acc_p {:9.5}  kld {:8.3}",
            row.iteration,
            row.total,
            row.accuracy_extero,
            row.accuracy_proprio,
            row.complexity.iter().sum::<f64>()
        );
    }
    // Reconstruction error with posterior means, split by modality, plus the
    // typical latent scales.
    let ck = out.checkpoint;
    let mut worst = 0.0f64;
    let mut mean_all = 0.0;
    let mut mae_e_all = 0.0;
    let mut mae_p_all = 0.0;
    let mut sig_q = 0.0;
    let mut sig_p = 0.0;
    let mut sig_n = 0usize;
    for (ai, &s) in ck.provenance.train_indices.iter().enumerate() {
        let seq = &batch.sequences[s];
        let traj = forward_sequence(
            &ck.params,
            &ck.topology,
            Some(&ck.adaptive[ai]),
            seq.t_len,
            LatentMode::PosteriorMean,
            EpsSource::Zero,
        )
        .unwrap();
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut sum_e = 0.0;
        let mut n_e = 0usize;
        let mut sum_p = 0.0;
        let mut n_p = 0usize;
        for (k, rec) in traj.steps.iter().enumerate() {
            let obs = seq.obs(k);
            for (p, x) in rec.prediction.extero.iter().zip(obs.extero) {
                sum += (p - x).abs();
                sum_e += (p - x).abs();
                n += 1;
                n_e += 1;
            }
            for (p, x) in rec.prediction.proprio.iter().zip(obs.proprio) {
                sum += (p - x).abs();
                sum_p += (p - x).abs();
                n += 1;
                n_p += 1;
            }
            if let Some(post) = &rec.posterior {
                for m in 0..4 {
                    for i in 0..post.sigma[m].len() {
                        sig_q += post.sigma[m][i];
                        sig_p += rec.prior.sigma[m][i];
                        sig_n += 1;
                    }
                }
            }
        }
        let mae = sum / n as f64;
        mean_all += mae;
        mae_e_all += sum_e / n_e as f64;
        mae_p_all += sum_p / n_p as f64;
        worst = worst.max(mae);
    }
    let n_seq = ck.provenance.train_indices.len() as f64;
    println!(
        "train recon MAE: mean {:.5}, worst {:.5} (extero {:.5}, proprio {:.5})",
        mean_all / n_seq,
        worst,
        mae_e_all / n_seq,
        mae_p_all / n_seq
    );
    println!(
        "mean sigma_q {:.4}, mean sigma_p {:.4}",
        sig_q / sig_n as f64,
        sig_p / sig_n as f64
    );

    // Error profiles: per step, per resolution group, per task.
    let t_len = batch.sequences[0].t_len;
    let groups = batch.extero_groups.clone();
    let mut step_mae = vec![0.0f64; t_len];
    let mut group_mae = vec![0.0f64; groups.len()];
    let mut task_mae = [0.0f64; 2];
    let mut task_n = [0usize; 2];
    for (ai, &s) in ck.provenance.train_indices.iter().enumerate() {
        let seq = &batch.sequences[s];
        let traj = forward_sequence(
            &ck.params,
            &ck.topology,
            Some(&ck.adaptive[ai]),
            seq.t_len,
            LatentMode::PosteriorMean,
            EpsSource::Zero,
        )
        .unwrap();
        let ti = match seq.task {
            hvrnn_core::datagen::Task::Reposition => 0,
            hvrnn_core::datagen::Task::Wipe => 1,
        };
        task_n[ti] += 1;
        for (k, rec) in traj.steps.iter().enumerate() {
            let obs = seq.obs(k);
            let mut sum = 0.0;
            for (p, x) in rec.prediction.extero.iter().zip(obs.extero) {
                sum += (p - x).abs();
            }
            step_mae[k] += sum / obs.extero.len() as f64;
            task_mae[ti] += sum / obs.extero.len() as f64 / t_len as f64;
            let mut off = 0;
            for (g, dim) in groups.iter().enumerate() {
                let mut gsum = 0.0;
                for i in off..off + dim {
                    gsum += (rec.prediction.extero[i] - obs.extero[i]).abs();
                }
                group_mae[g] += gsum / *dim as f64;
                off += dim;
            }
        }
    }
    print!("per-step extero MAE: ");
    for k in (0..t_len).step_by(8) {
        print!("{}:{:.4} ", k, step_mae[k] / n_seq);
    }
    println!();
    for (g, dim) in groups.iter().enumerate() {
        println!(
            "group {g} ({dim} dims): MAE {:.5}",
            group_mae[g] / (n_seq * t_len as f64)
        );
    }
    println!(
        "task MAE extero: R {:.5}, W {:.5}",
        task_mae[0] / task_n[0] as f64,
        task_mae[1] / task_n[1] as f64
    );
}
