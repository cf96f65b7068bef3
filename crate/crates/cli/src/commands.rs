//! Command implementations. Every command is a pure function of its named
//! inputs plus the seed; outputs land in one run directory together with a
//! manifest listing input and output hashes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};

use hvrnn_core::analysis::{
    ablate, default_resolution_conditions, interference_protocol_on, paired_t_test,
    robustness_protocol, uncertainty_stats, InterferenceGrid, UncertaintyStats,
};
use hvrnn_core::datagen::{generate, GenCounts, Role, SequenceBatch, Task};
use hvrnn_core::grad::check_gradients;
use hvrnn_core::infer::{run_trials, InferConfig, TrialSet};
use hvrnn_core::net::Module;
use hvrnn_core::rng;
use hvrnn_core::train::fit;

use crate::config::RunConfig;
use crate::io::manifest::ManifestBuilder;
use crate::io::pgm::{export_frame, GrayMapping};
use crate::io::{self, csv};
use crate::runner::RayonMap;

pub struct CommandCtx {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub deterministic: bool,
}

impl CommandCtx {
    fn infer_config(&self, topo: &hvrnn_core::net::NetworkTopology) -> Result<InferConfig> {
        let mut cfg = self.config.infer.to_config(topo)?;
        if self.deterministic {
            cfg.fixed_eps = true;
            cfg.deterministic_z = true;
        }
        Ok(cfg)
    }

    fn manifest(&self, command: &str) -> ManifestBuilder {
        let mut b = ManifestBuilder::new(
            command,
            self.seed,
            self.threads,
            self.config.to_toml(),
        );
        if let Some(p) = &self.config_path {
            b.input(p);
        }
        b
    }

    fn ensure_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create output directory {}", self.out.display()))
    }
}

pub fn cmd_gen_data(ctx: &CommandCtx) -> Result<()> {
    ctx.ensure_out()?;
    let spec = ctx.config.world.to_spec();
    let counts = GenCounts {
        train_per_condition: ctx.config.experiment.train_per_condition,
        test_per_condition: ctx.config.experiment.test_per_condition,
    };
    let batch = generate(&spec, &counts, ctx.seed)?;
    let data_path = ctx.out.join("dataset.hvd");
    io::save_dataset(&batch, &data_path)?;
    let csv_path = ctx.out.join("dataset_summary.csv");
    csv::write_dataset_summary(&batch, &csv_path)?;
    let mut m = ctx.manifest("gen-data");
    m.output(&data_path).output(&csv_path);
    m.write(&ctx.out.join("manifest.toml"))?;
    println!(
        "generated {} sequences ({} train, {} test) -> {}",
        batch.sequences.len(),
        batch.train_indices().len(),
        batch.test_indices().len(),
        data_path.display()
    );
    Ok(())
}

pub fn cmd_train(ctx: &CommandCtx, data: &Path) -> Result<()> {
    ctx.ensure_out()?;
    let batch = io::load_dataset(data)?;
    let spec = ctx.config.world.to_spec();
    let topo = ctx.config.topology.to_topology(&spec)?;
    let train_cfg = ctx.config.train.to_config(ctx.seed);
    let train_idx = batch.train_indices();
    let runner = RayonMap;
    let ck_dir = ctx.out.clone();
    let mut sink = |it: u64, ck: &hvrnn_core::Checkpoint| {
        let p = ck_dir.join(format!("checkpoint_{it:06}.hvc"));
        if let Err(e) = io::save_checkpoint(ck, &p) {
            eprintln!("warning: failed to write cadence checkpoint: {e}");
        }
    };
    let out = fit(
        &batch,
        &train_idx,
        &topo,
        &train_cfg,
        &runner,
        Some(&mut sink),
    )?;
    let ck_path = ctx.out.join("checkpoint.hvc");
    io::save_checkpoint(&out.checkpoint, &ck_path)?;
    let loss_path = ctx.out.join("loss_history.csv");
    csv::write_loss_history(&out.history, &loss_path)?;
    let mut m = ctx.manifest("train");
    m.input(data).output(&ck_path).output(&loss_path);
    m.write(&ctx.out.join("manifest.toml"))?;
    let last = out.history.last().expect("nonempty history");
    println!(
        "trained {} iterations, final total free energy {:.4} -> {}",
        train_cfg.iterations,
        last.total,
        ck_path.display()
    );
    Ok(())
}

pub fn cmd_infer(ctx: &CommandCtx, checkpoint: &Path, data: &Path) -> Result<()> {
    ctx.ensure_out()?;
    let ck = io::load_checkpoint(checkpoint)?;
    let batch = io::load_dataset(data)?;
    let infer_cfg = ctx.infer_config(&ck.topology)?;
    let test_idx = batch.test_indices();
    if test_idx.is_empty() {
        bail!("dataset has no test sequences");
    }
    let runner = RayonMap;
    let trials = run_trials(&ck, &batch, &test_idx, &infer_cfg, ctx.seed, &runner)?;
    let log_path = ctx.out.join("trials.hvt");
    io::save_trials(&trials, &ck, batch.content_hash(), &log_path)?;
    let latent_path = ctx.out.join("latents.csv");
    csv::write_latent_log(&trials, &ck.topology, &latent_path)?;
    let err_path = ctx.out.join("errors.csv");
    csv::write_error_log(&trials, &batch, &err_path)?;
    // Final-step predicted frames at every resolution for the first trial.
    let mut frames = Vec::new();
    if let Some(trial) = trials.trials.first() {
        if let Some(step) = trial.steps.last() {
            let spec_res = &batch.extero_groups;
            let mut off = 0;
            for (g, dim) in spec_res.iter().enumerate() {
                let side = (*dim as f64).sqrt() as usize;
                let p = ctx.out.join(format!("pred_final_res{g}.pgm"));
                export_frame(
                    &step.prediction.extero[off..off + dim],
                    side,
                    side,
                    GrayMapping::Signed,
                    &p,
                )?;
                frames.push(p);
                off += dim;
            }
        }
    }
    let mut m = ctx.manifest("infer");
    m.input(checkpoint).input(data);
    m.output(&log_path).output(&latent_path).output(&err_path);
    for f in &frames {
        m.output(f);
    }
    m.write(&ctx.out.join("manifest.toml"))?;
    println!(
        "ran {} trials over {} test sequences -> {}",
        trials.len(),
        test_idx.len(),
        log_path.display()
    );
    Ok(())
}

pub fn cmd_ablate(
    ctx: &CommandCtx,
    checkpoint: &Path,
    trials_path: &Path,
    module: Option<Module>,
) -> Result<()> {
    ctx.ensure_out()?;
    let ck = io::load_checkpoint(checkpoint)?;
    let loaded = io::load_trials(trials_path, &ck.topology)?;
    if loaded.checkpoint_hash != hex::encode(ck.params_hash()) {
        bail!("trial log was produced by a different checkpoint");
    }
    let map = ablate(&ck, &loaded.set, module)?;
    let label = module.map(|m| m.label().to_string()).unwrap_or_else(|| "none".into());
    let csv_path = ctx.out.join(format!("ablation_{label}.csv"));
    csv::write_ablation_values(&map, &csv_path)?;
    // Time-mean map image, max-scaled.
    let d = map.resolution * map.resolution;
    let mut mean = vec![0.0; d];
    for k in 0..map.t_len {
        for (i, v) in map.frame(k).iter().enumerate() {
            mean[i] += v / map.t_len as f64;
        }
    }
    let max = mean.iter().copied().fold(0.0, f64::max);
    let pgm_path = ctx.out.join(format!("ablation_{label}.pgm"));
    export_frame(
        &mean,
        map.resolution,
        map.resolution,
        GrayMapping::NonNegative { max },
        &pgm_path,
    )?;
    let mut m = ctx.manifest("ablate");
    m.input(checkpoint).input(trials_path);
    m.output(&csv_path).output(&pgm_path);
    m.write(&ctx.out.join("manifest.toml"))?;
    println!(
        "ablation map for {label}: mean energy {:.6} -> {}",
        map.mean_energy(),
        csv_path.display()
    );
    Ok(())
}

pub fn cmd_check(tolerance: f64, seed: u64) -> Result<()> {
    let t0 = Instant::now();
    let report = check_gradients(seed, tolerance)?;
    for g in &report.groups {
        println!(
            "{:28} max rel err {:10.3e}  ({} values)",
            g.name, g.max_rel_err, g.count
        );
    }
    println!(
        "gradient check {} in {:.2}s (tolerance {:.1e}, worst {:.3e})",
        if report.pass() { "PASS" } else { "FAIL" },
        t0.elapsed().as_secs_f64(),
        tolerance,
        report.max_rel_err()
    );
    if !report.pass() {
        bail!("gradient check failed for: {}", report.failed.join(", "));
    }
    Ok(())
}

/// Trains the experiment fleet: one network per experiment seed index.
fn train_fleet(
    ctx: &CommandCtx,
    batch: &SequenceBatch,
    iterations_override: Option<u64>,
) -> Result<Vec<hvrnn_core::Checkpoint>> {
    let spec = ctx.config.world.to_spec();
    let topo = ctx.config.topology.to_topology(&spec)?;
    let runner = RayonMap;
    let train_idx = batch.train_indices();
    let n = ctx.config.experiment.networks;
    let checkpoints: Vec<Result<hvrnn_core::Checkpoint>> = (0..n)
        .map(|net| {
            let mut cfg = ctx.config.train.to_config(rng::mix(ctx.seed, &[0xf1ee7, net as u64]));
            if let Some(it) = iterations_override {
                cfg.iterations = it;
            }
            let out = fit(batch, &train_idx, &topo, &cfg, &runner, None)?;
            Ok(out.checkpoint)
        })
        .collect();
    checkpoints.into_iter().collect()
}

fn per_network_uncertainty(
    cks: &[hvrnn_core::Checkpoint],
    batch: &SequenceBatch,
    infer_cfg: &InferConfig,
    seed: u64,
) -> Result<(Vec<(usize, UncertaintyStats)>, Vec<(usize, Task, TrialSet)>)> {
    let runner = RayonMap;
    let mut per_net = Vec::new();
    let mut all: Vec<(usize, Task, TrialSet)> = Vec::new();
    for (net, ck) in cks.iter().enumerate() {
        let mut sets = Vec::new();
        for task in Task::ALL {
            let idx = batch.indices_where(Some(task), Some(Role::Test));
            let trials = run_trials(
                ck,
                batch,
                &idx,
                infer_cfg,
                rng::mix(seed, &[0x0e1, net as u64]),
                &runner,
            )?;
            sets.push((task, trials));
        }
        let stats = uncertainty_stats(&[(sets[0].0, &sets[0].1), (sets[1].0, &sets[1].1)])?;
        per_net.push((net, stats));
        for (task, set) in sets {
            all.push((net, task, set));
        }
    }
    Ok((per_net, all))
}

/// Experiment 1: hierarchical uncertainty dynamics plus ablation maps.
pub fn cmd_exp1(ctx: &CommandCtx) -> Result<()> {
    ctx.ensure_out()?;
    let spec = ctx.config.world.to_spec();
    let counts = GenCounts {
        train_per_condition: ctx.config.experiment.train_per_condition,
        test_per_condition: ctx.config.experiment.test_per_condition,
    };
    let batch = generate(&spec, &counts, rng::mix(ctx.seed, &[0xda7a]))?;
    let data_path = ctx.out.join("dataset.hvd");
    io::save_dataset(&batch, &data_path)?;
    let cks = train_fleet(ctx, &batch, None)?;
    let topo = &cks[0].topology;
    let infer_cfg = ctx.infer_config(topo)?;

    let (per_net, pooled) = per_network_uncertainty(&cks, &batch, &infer_cfg, ctx.seed)?;
    let mut outputs = Vec::new();

    // Pooled two-stage statistics over every trial of every network.
    let pooled_refs: Vec<(Task, &TrialSet)> = pooled.iter().map(|(_, t, s)| (*t, s)).collect();
    let pooled_stats = uncertainty_stats(&pooled_refs)?;
    let stats_path = ctx.out.join("uncertainty_stats.csv");
    csv::write_uncertainty_stats(&pooled_stats, &stats_path)?;
    outputs.push(stats_path);

    // Per-network values and the paired t-tests across networks.
    let mut per_net_csv = String::from("network,task,mean_sigma,mean_abs_dsigma\n");
    let mut r_sigma = Vec::new();
    let mut w_sigma = Vec::new();
    let mut r_dsig = Vec::new();
    let mut w_dsig = Vec::new();
    for (net, stats) in &per_net {
        for row in stats.rows.iter().filter(|r| r.module.is_none()) {
            per_net_csv.push_str(&format!(
                "{},{},{},{}\n",
                net,
                row.task.label(),
                row.mean_sigma,
                row.mean_abs_dsigma
            ));
            match row.task {
                Task::Reposition => {
                    r_sigma.push(row.mean_sigma);
                    r_dsig.push(row.mean_abs_dsigma);
                }
                Task::Wipe => {
                    w_sigma.push(row.mean_sigma);
                    w_dsig.push(row.mean_abs_dsigma);
                }
            }
        }
    }
    let per_net_path = ctx.out.join("uncertainty_per_network.csv");
    fs::write(&per_net_path, per_net_csv)?;
    outputs.push(per_net_path);

    let mut summary = String::new();
    for (label, a, b) in [
        ("mean_sigma R vs W", &r_sigma, &w_sigma),
        ("mean_abs_dsigma R vs W", &r_dsig, &w_dsig),
    ] {
        match paired_t_test(a, b) {
            Ok(t) => summary.push_str(&format!(
                "{label}: t = {:.4}, df = {}, p = {:.5}\n",
                t.t, t.df, t.p
            )),
            Err(e) => summary.push_str(&format!("{label}: not testable ({e})\n")),
        }
    }
    let wins = w_dsig
        .iter()
        .zip(&r_dsig)
        .filter(|(w, r)| w > r)
        .count();
    summary.push_str(&format!(
        "variability(W) > variability(R) in {wins} of {} networks\n",
        w_dsig.len()
    ));
    let summary_path = ctx.out.join("exp1_summary.txt");
    fs::write(&summary_path, &summary)?;
    outputs.push(summary_path);
    print!("{summary}");

    // Ablation maps per task and module: each network's trials are replayed
    // against its own weights, then the maps are averaged across networks.
    for task in Task::ALL {
        for module in [None, Some(Module::Executive), Some(Module::Associative), Some(Module::Extero), Some(Module::Proprio)] {
            let mut mean: Vec<f64> = Vec::new();
            let mut resolution = 0;
            let mut nets = 0;
            for (net, t, set) in &pooled {
                if *t != task {
                    continue;
                }
                let map = ablate(&cks[*net], set, module)?;
                resolution = map.resolution;
                let d = map.resolution * map.resolution;
                if mean.is_empty() {
                    mean = vec![0.0; d];
                }
                for k in 0..map.t_len {
                    for (i, v) in map.frame(k).iter().enumerate() {
                        mean[i] += v / map.t_len as f64;
                    }
                }
                nets += 1;
            }
            mean.iter_mut().for_each(|v| *v /= nets as f64);
            let max = mean.iter().copied().fold(0.0, f64::max);
            let label = module.map(|m| m.label().to_string()).unwrap_or_else(|| "none".into());
            let p = ctx
                .out
                .join(format!("ablation_{}_{label}.pgm", task.label()));
            export_frame(&mean, resolution, resolution, GrayMapping::NonNegative { max }, &p)?;
            outputs.push(p);
        }
    }

    let mut m = ctx.manifest("exp1");
    m.output(&data_path);
    for o in &outputs {
        m.output(o);
    }
    m.write(&ctx.out.join("manifest.toml"))?;
    Ok(())
}

/// Experiment 2: robustness under degraded vision.
pub fn cmd_exp2(ctx: &CommandCtx) -> Result<()> {
    ctx.ensure_out()?;
    let spec = ctx.config.world.to_spec();
    let counts = GenCounts {
        train_per_condition: ctx.config.experiment.train_per_condition,
        test_per_condition: ctx.config.experiment.test_per_condition,
    };
    let batch = generate(&spec, &counts, rng::mix(ctx.seed, &[0xda7a]))?;
    let data_path = ctx.out.join("dataset.hvd");
    io::save_dataset(&batch, &data_path)?;
    let cks = train_fleet(ctx, &batch, None)?;
    let infer_cfg = ctx.infer_config(&cks[0].topology)?;
    let conditions = default_resolution_conditions(batch.extero_groups.len());
    let runner = RayonMap;
    let table = robustness_protocol(
        &cks,
        &batch,
        &batch.test_indices(),
        &conditions,
        &infer_cfg,
        ctx.seed,
        &runner,
    )?;
    let table_path = ctx.out.join("robustness.csv");
    csv::write_error_table(&table, &table_path)?;
    // Paired t-test: lowest-resolution-only, with vs without proprioception.
    let n = cks.len();
    let lowest = format!("low1/proprio");
    let lowest_np = format!("low1/noproprio");
    let a: Vec<f64> = (0..n)
        .filter_map(|s| table.condition_mean(&lowest, s))
        .collect();
    let b: Vec<f64> = (0..n)
        .filter_map(|s| table.condition_mean(&lowest_np, s))
        .collect();
    let mut summary = String::new();
    if let Ok(t) = paired_t_test(&a, &b) {
        summary.push_str(&format!(
            "lowest-res with vs without proprio: t = {:.4}, df = {}, p = {:.5}\n",
            t.t, t.df, t.p
        ));
    }
    let wins = a.iter().zip(&b).filter(|(x, y)| x < y).count();
    summary.push_str(&format!(
        "with-proprio error lower in {wins} of {n} networks\n"
    ));
    let summary_path = ctx.out.join("exp2_summary.txt");
    fs::write(&summary_path, &summary)?;
    print!("{summary}");
    let mut m = ctx.manifest("exp2");
    m.output(&data_path).output(&table_path).output(&summary_path);
    m.write(&ctx.out.join("manifest.toml"))?;
    Ok(())
}

/// Experiment 3: multitask data-balance interference grid.
pub fn cmd_exp3(ctx: &CommandCtx) -> Result<()> {
    ctx.ensure_out()?;
    let spec = ctx.config.world.to_spec();
    let counts = GenCounts {
        train_per_condition: ctx.config.experiment.train_per_condition,
        test_per_condition: ctx.config.experiment.test_per_condition,
    };
    let batch = generate(&spec, &counts, rng::mix(ctx.seed, &[0xda7a]))?;
    let data_path = ctx.out.join("dataset.hvd");
    io::save_dataset(&batch, &data_path)?;
    let topo = ctx.config.topology.to_topology(&spec)?;
    let mut train_cfg = ctx.config.train.to_config(ctx.seed);
    train_cfg.iterations = ctx.config.experiment.interference_iterations;
    let infer_cfg = ctx.infer_config(&topo)?;
    let grid = InterferenceGrid {
        varied_counts: ctx.config.experiment.interference_counts.clone(),
        n_seeds: ctx.config.experiment.networks,
    };
    let runner = RayonMap;
    let result = interference_protocol_on(&batch, &topo, &grid, &train_cfg, &infer_cfg, &runner)?;
    let p1 = ctx.out.join("interference_reposition_fixed.csv");
    csv::write_error_table(&result.fixed_reposition, &p1)?;
    let p2 = ctx.out.join("interference_wipe_fixed.csv");
    csv::write_error_table(&result.fixed_wipe, &p2)?;
    let p3 = ctx.out.join("interference_unseen.csv");
    csv::write_error_table(&result.unseen, &p3)?;
    let mut summary = String::new();
    for (label, t) in &result.t_tests {
        summary.push_str(&format!(
            "{label}: t = {:.4}, df = {}, p = {:.5}\n",
            t.t, t.df, t.p
        ));
    }
    let summary_path = ctx.out.join("exp3_summary.txt");
    fs::write(&summary_path, &summary)?;
    print!("{summary}");
    let mut m = ctx.manifest("exp3");
    m.output(&data_path).output(&p1).output(&p2).output(&p3).output(&summary_path);
    m.write(&ctx.out.join("manifest.toml"))?;
    Ok(())
}
