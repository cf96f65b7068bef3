//! CSV exports: loss history, per-trial latent and error logs, error tables
//! and uncertainty statistics. Plain numeric CSV, shortest-roundtrip float
//! formatting, so identical values give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hvrnn_core::analysis::{ErrorTable, UncertaintyStats};
use hvrnn_core::datagen::SequenceBatch;
use hvrnn_core::infer::TrialSet;
use hvrnn_core::net::{Module, NetworkTopology};
use hvrnn_core::train::LossRow;

use super::Result;

pub fn write_loss_history(rows: &[LossRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        "iteration,total,accuracy.extero,accuracy.proprio,complexity.Exe,complexity.Mul,complexity.Ext,complexity.Pro\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.total,
            r.accuracy_extero,
            r.accuracy_proprio,
            r.complexity[0],
            r.complexity[1],
            r.complexity[2],
            r.complexity[3]
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-trial latent log: one row per (trial, step, module, latent index).
pub fn write_latent_log(set: &TrialSet, topo: &NetworkTopology, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("seq_index,trial,step,module,latent,mu_p,sigma_p,mu_q,sigma_q\n");
    for trial in &set.trials {
        for step in &trial.steps {
            for module in Module::ALL {
                let m = module.index();
                for i in 0..topo.n_z[m] {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        trial.seq_index,
                        trial.trial,
                        step.t,
                        module.label(),
                        i,
                        step.prior.mu[m][i],
                        step.prior.sigma[m][i],
                        step.posterior.mu[m][i],
                        step.posterior.sigma[m][i]
                    )
                    .unwrap();
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-step prediction-error log: one row per (trial, step, modality).
pub fn write_error_log(set: &TrialSet, batch: &SequenceBatch, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("seq_index,trial,step,modality,error\n");
    for trial in &set.trials {
        let seq = &batch.sequences[trial.seq_index];
        for (k, step) in trial.steps.iter().enumerate() {
            let obs = seq.obs(k);
            let mae = |pred: &[f64], x: &[f64]| -> f64 {
                pred.iter()
                    .zip(x)
                    .map(|(p, v)| (p - v).abs())
                    .sum::<f64>()
                    / x.len() as f64
            };
            writeln!(
                out,
                "{},{},{},extero,{}",
                trial.seq_index,
                trial.trial,
                step.t,
                mae(&step.prediction.extero, obs.extero)
            )
            .unwrap();
            writeln!(
                out,
                "{},{},{},proprio,{}",
                trial.seq_index,
                trial.trial,
                step.t,
                mae(&step.prediction.proprio, obs.proprio)
            )
            .unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_error_table(table: &ErrorTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("condition,network,mean_error,trials\n");
    for r in &table.rows {
        writeln!(out, "{},{},{},{}", r.condition, r.network, r.mean_error, r.trials).unwrap();
    }
    out.push_str("\ncondition,mean,std_error,networks\n");
    for a in &table.aggregates {
        writeln!(out, "{},{},{},{}", a.condition, a.mean, a.std_error, a.networks).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_uncertainty_stats(stats: &UncertaintyStats, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("task,module,mean_sigma,mean_abs_dsigma,trials\n");
    for r in &stats.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.task.label(),
            r.module.map(|m| m.label()).unwrap_or("All"),
            r.mean_sigma,
            r.mean_abs_dsigma,
            r.trials
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Raw per-step ablation map values (the PGM scaling is cosmetic).
pub fn write_ablation_values(
    map: &hvrnn_core::analysis::AblationMap,
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    out.push_str("step,pixel,value\n");
    let d = map.resolution * map.resolution;
    for k in 0..map.t_len {
        for (i, v) in map.frame(k).iter().enumerate() {
            writeln!(out, "{},{},{}", k + 1, i, v).unwrap();
        }
        let _ = d;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Dataset CSV export for inspection: one row per (sequence, step) with the
/// proprioceptive dims and per-group mean pixel values.
pub fn write_dataset_summary(batch: &SequenceBatch, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("seq,task,role,condition,step");
    for d in 0..batch.proprio_dim {
        write!(out, ",proprio{d}").unwrap();
    }
    for (g, _) in batch.extero_groups.iter().enumerate() {
        write!(out, ",vision_mean{g}").unwrap();
    }
    out.push('\n');
    for (si, seq) in batch.sequences.iter().enumerate() {
        for k in 0..seq.t_len {
            let obs = seq.obs(k);
            write!(
                out,
                "{},{},{},{},{}",
                si,
                seq.task.label(),
                seq.role.label(),
                seq.condition,
                k + 1
            )
            .unwrap();
            for v in obs.proprio {
                write!(out, ",{v}").unwrap();
            }
            let mut off = 0;
            for g in &batch.extero_groups {
                let mean: f64 = obs.extero[off..off + g].iter().sum::<f64>() / *g as f64;
                write!(out, ",{mean}").unwrap();
                off += g;
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}
