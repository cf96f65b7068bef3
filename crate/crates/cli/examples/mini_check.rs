//! Scratch: reduced-budget directional check for the uncertainty and
//! robustness protocols (2 seeds, shortened training).

use hvrnn_cli::runner::RayonMap;
use hvrnn_core::analysis::{default_resolution_conditions, robustness_protocol, uncertainty_stats};
use hvrnn_core::datagen::{generate, GenCounts, Role, Task, WorldSpec};
use hvrnn_core::infer::{run_trials, InferConfig};
use hvrnn_core::net::NetworkTopology;
use hvrnn_core::rng;
use hvrnn_core::train::{fit, TrainConfig};

fn main() {
    let seeds: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let iters: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let trials: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    hvrnn_cli::runner::init_threads(None);
    let spec = WorldSpec::default();
    let batch = generate(&spec, &GenCounts::default(), 1).unwrap();
    let topo = NetworkTopology::desk_default();
    let runner = RayonMap;
    let train_idx = batch.train_indices();
    let mut cks = Vec::new();
    for net in 0..seeds {
        let cfg = TrainConfig {
            seed: rng::mix(40, &[net as u64]),
            iterations: iters,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let out = fit(&batch, &train_idx, &topo, &cfg, &runner, None).unwrap();
        println!(
            "net {net}: trained {iters} iters in {:.0}s, final total {:.3}",
            t0.elapsed().as_secs_f64(),
            out.history.last().unwrap().total
        );
        cks.push(out.checkpoint);
    }

    // Criterion-5 style: per-seed |dsigma| per task.
    let mut cfg = InferConfig::new(&topo);
    cfg.trials_per_sequence = trials;
    for (net, ck) in cks.iter().enumerate() {
        let mut vals = Vec::new();
        for task in Task::ALL {
            let idx = batch.indices_where(Some(task), Some(Role::Test));
            let t0 = std::time::Instant::now();
            let set = run_trials(ck, &batch, &idx, &cfg, rng::mix(50, &[net as u64]), &runner).unwrap();
            let stats = uncertainty_stats(&[(task, &set)]).unwrap();
            let all = stats.rows.iter().find(|r| r.module.is_none()).unwrap();
            println!(
                "net {net} task {}: mean_sigma {:.4}, |dsigma| {:.5} ({} trials, {:.0}s)",
                task.label(),
                all.mean_sigma,
                all.mean_abs_dsigma,
                set.len(),
                t0.elapsed().as_secs_f64()
            );
            vals.push(all.mean_abs_dsigma);
        }
        println!(
            "net {net}: W > R dsigma: {}",
            if vals[1] > vals[0] { "YES" } else { "NO" }
        );
    }

    // Criterion-6 style: robustness conditions.
    let conditions = default_resolution_conditions(topo.extero_groups.len());
    let t0 = std::time::Instant::now();
    let table = robustness_protocol(
        &cks,
        &batch,
        &batch.test_indices(),
        &conditions,
        &cfg,
        60,
        &runner,
    )
    .unwrap();
    println!("robustness protocol in {:.0}s", t0.elapsed().as_secs_f64());
    for a in &table.aggregates {
        println!("  {}: mean {:.4} (se {:.4})", a.condition, a.mean, a.std_error);
    }
    for net in 0..seeds {
        let with = table.condition_mean("low1/proprio", net).unwrap();
        let without = table.condition_mean("low1/noproprio", net).unwrap();
        println!(
            "  net {net}: low-res with {:.4} vs without {:.4} -> {}",
            with,
            without,
            if with < without { "YES" } else { "NO" }
        );
    }
}
