//! Analysis procedures: module-ablation contribution maps, uncertainty
//! statistics, the masked-input robustness protocol, and the data-balance
//! interference protocol.

pub mod stats;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::datagen::{generate, GenCounts, Role, SequenceBatch, Task, WorldSpec};
use crate::error::{CoreError, Result};
use crate::infer::{run_trials, InferConfig, MaskPolicy, Trial, TrialSet};
use crate::math;
use crate::net::forward::{replay_with_z, ModuleVecs};
use crate::net::topology::Module;
use crate::rng;
use crate::runner::ParallelMap;
use crate::train::{fit, TrainConfig};

pub use stats::{paired_t_test, student_t_two_tailed, TTest};

/// Per-step, per-pixel mean absolute difference between standard and ablated
/// predictions at the highest resolution.
#[derive(Clone, Debug)]
pub struct AblationMap {
    pub module: Option<Module>,
    pub t_len: usize,
    /// Side length of the highest resolution group.
    pub resolution: usize,
    /// Step-major pixel values, length `t_len * resolution^2`.
    pub values: Vec<f64>,
    pub trials_averaged: usize,
}

impl AblationMap {
    pub fn frame(&self, k: usize) -> &[f64] {
        let d = self.resolution * self.resolution;
        &self.values[k * d..(k + 1) * d]
    }

    pub fn mean_energy(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Regenerates predictions from the inferred latents of every trial, with
/// and without the target module's z, and averages the per-pixel absolute
/// difference across trials. `module = None` is the empty ablation and gives
/// an exactly zero map.
pub fn ablate(ck: &Checkpoint, trials: &TrialSet, module: Option<Module>) -> Result<AblationMap> {
    if trials.is_empty() {
        return Err(CoreError::Data("ablation needs at least one trial".into()));
    }
    let topo = &ck.topology;
    let n_groups = topo.extero_groups.len();
    let hi_dim = topo.extero_groups[n_groups - 1];
    let hi_off = topo.group_offset(n_groups - 1);
    let resolution = {
        let mut r = 1;
        while r * r < hi_dim {
            r += 1;
        }
        r
    };
    let t_len = trials.trials[0].steps.len();
    let mut acc = vec![0.0; t_len * hi_dim];
    for trial in &trials.trials {
        if trial.steps.len() != t_len {
            return Err(CoreError::Shape("trials have unequal lengths".into()));
        }
        let z_series: Vec<ModuleVecs> = trial.steps.iter().map(|s| s.z.clone()).collect();
        let standard = replay_with_z(&ck.params, topo, &z_series, None)?;
        let ablated = replay_with_z(&ck.params, topo, &z_series, module)?;
        for k in 0..t_len {
            let s = &standard[k].extero[hi_off..hi_off + hi_dim];
            let a = &ablated[k].extero[hi_off..hi_off + hi_dim];
            for (i, (sv, av)) in s.iter().zip(a).enumerate() {
                acc[k * hi_dim + i] += math::abs(sv - av);
            }
        }
    }
    let n = trials.trials.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(AblationMap {
        module,
        t_len,
        resolution,
        values: acc,
        trials_averaged: trials.trials.len(),
    })
}

/// Mean prior sigma and its mean absolute step difference, two-stage
/// averaged: first across all time steps and latent states within each
/// trial, then across trials.
#[derive(Clone, Debug)]
pub struct UncertaintyStats {
    pub rows: Vec<UncertaintyRow>,
}

#[derive(Clone, Debug)]
pub struct UncertaintyRow {
    pub task: Task,
    /// `None` aggregates over all modules.
    pub module: Option<Module>,
    pub mean_sigma: f64,
    pub mean_abs_dsigma: f64,
    pub trials: usize,
}

fn trial_sigma_stats(trial: &Trial, module: Option<Module>) -> Result<(f64, f64)> {
    if trial.steps.len() < 2 {
        return Err(CoreError::Data(
            "sigma variability is undefined for single-step trials".into(),
        ));
    }
    let modules: Vec<usize> = match module {
        Some(m) => vec![m.index()],
        None => (0..Module::COUNT).collect(),
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut dsum = 0.0;
    let mut dcount = 0usize;
    for (k, step) in trial.steps.iter().enumerate() {
        for &m in &modules {
            for (i, s) in step.prior.sigma[m].iter().enumerate() {
                sum += s;
                count += 1;
                if k > 0 {
                    dsum += math::abs(s - trial.steps[k - 1].prior.sigma[m][i]);
                    dcount += 1;
                }
            }
        }
    }
    Ok((sum / count as f64, dsum / dcount as f64))
}

/// Aggregates prior-sigma statistics per task (and per module plus the
/// all-module pool), two-stage averaged exactly as described above.
pub fn uncertainty_stats(sets: &[(Task, &TrialSet)]) -> Result<UncertaintyStats> {
    let mut rows = Vec::new();
    for task in Task::ALL {
        let trials: Vec<&Trial> = sets
            .iter()
            .filter(|(t, _)| *t == task)
            .flat_map(|(_, s)| s.trials.iter())
            .collect();
        if trials.is_empty() {
            continue;
        }
        for module in [None, Some(Module::Executive), Some(Module::Associative), Some(Module::Extero), Some(Module::Proprio)] {
            let mut means = Vec::with_capacity(trials.len());
            let mut dmeans = Vec::with_capacity(trials.len());
            for tr in &trials {
                let (m, d) = trial_sigma_stats(tr, module)?;
                means.push(m);
                dmeans.push(d);
            }
            let n = means.len() as f64;
            rows.push(UncertaintyRow {
                task,
                module,
                mean_sigma: means.iter().sum::<f64>() / n,
                mean_abs_dsigma: dmeans.iter().sum::<f64>() / n,
                trials: trials.len(),
            });
        }
    }
    Ok(UncertaintyStats { rows })
}

/// Which dimensions a prediction error is measured over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorScope {
    /// Highest-resolution vision only (the signals withheld in the
    /// robustness protocol).
    HighestResolution,
    /// All exteroceptive and proprioceptive dimensions.
    AllModalities,
}

/// Mean absolute prediction error per dimension, two-stage: mean over steps
/// and dims within the trial.
pub fn trial_prediction_error(
    trial: &Trial,
    batch: &SequenceBatch,
    scope: ErrorScope,
) -> f64 {
    let seq = &batch.sequences[trial.seq_index];
    let n_groups = batch.extero_groups.len();
    let hi_dim = batch.extero_groups[n_groups - 1];
    let hi_off: usize = batch.extero_groups[..n_groups - 1].iter().sum();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, step) in trial.steps.iter().enumerate() {
        let obs = seq.obs(k);
        match scope {
            ErrorScope::HighestResolution => {
                for i in 0..hi_dim {
                    sum += math::abs(step.prediction.extero[hi_off + i] - obs.extero[hi_off + i]);
                    count += 1;
                }
            }
            ErrorScope::AllModalities => {
                for (p, x) in step.prediction.extero.iter().zip(obs.extero) {
                    sum += math::abs(p - x);
                    count += 1;
                }
                for (p, x) in step.prediction.proprio.iter().zip(obs.proprio) {
                    sum += math::abs(p - x);
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

/// One condition x network entry of an error table.
#[derive(Clone, Debug)]
pub struct ErrorRow {
    pub condition: String,
    pub network: usize,
    pub mean_error: f64,
    pub trials: usize,
}

#[derive(Clone, Debug)]
pub struct ErrorAggregate {
    pub condition: String,
    pub mean: f64,
    /// Standard error across networks.
    pub std_error: f64,
    pub networks: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub aggregates: Vec<ErrorAggregate>,
}

impl ErrorTable {
    pub fn push_rows(&mut self, rows: Vec<ErrorRow>) {
        self.rows.extend(rows);
    }

    /// Builds per-condition aggregates (mean and standard error across
    /// networks) from the accumulated rows, preserving first-seen condition
    /// order.
    pub fn aggregate(&mut self) {
        let mut order: Vec<String> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.condition) {
                order.push(r.condition.clone());
            }
        }
        self.aggregates = order
            .iter()
            .map(|cond| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| &r.condition == cond)
                    .map(|r| r.mean_error)
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = if vals.len() > 1 {
                    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                ErrorAggregate {
                    condition: cond.clone(),
                    mean,
                    std_error: math::sqrt(var / n),
                    networks: vals.len(),
                }
            })
            .collect();
    }

    pub fn condition_mean(&self, condition: &str, network: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.network == network)
            .map(|r| r.mean_error)
    }
}

/// A named masking condition of the robustness protocol.
#[derive(Clone, Debug)]
pub struct MaskCondition {
    pub label: String,
    pub policy: MaskPolicy,
}

/// The degraded-vision conditions: all resolutions, progressively dropping
/// the highest ones, each with and without proprioceptive error.
pub fn default_resolution_conditions(n_groups: usize) -> Vec<MaskCondition> {
    let mut out = Vec::new();
    for keep in (1..=n_groups).rev() {
        let groups: Vec<usize> = (0..keep).collect();
        let res_label = if keep == n_groups {
            String::from("all")
        } else {
            format!("low{keep}")
        };
        for proprio in [true, false] {
            out.push(MaskCondition {
                label: format!(
                    "{res_label}/{}",
                    if proprio { "proprio" } else { "noproprio" }
                ),
                policy: MaskPolicy {
                    groups: groups.clone(),
                    proprio,
                },
            });
        }
    }
    out
}

/// Runs each masking condition over the test set for every network and
/// measures the full-resolution prediction error (ground truth is never fed
/// back into the error signal for masked dimensions).
pub fn robustness_protocol<R: ParallelMap>(
    checkpoints: &[Checkpoint],
    batch: &SequenceBatch,
    test_indices: &[usize],
    conditions: &[MaskCondition],
    base_cfg: &InferConfig,
    master_seed: u64,
    runner: &R,
) -> Result<ErrorTable> {
    if conditions.is_empty() {
        return Err(CoreError::Config("robustness protocol needs at least one condition".into()));
    }
    let mut table = ErrorTable::default();
    for (net, ck) in checkpoints.iter().enumerate() {
        for cond in conditions {
            let cfg = InferConfig {
                mask: cond.policy.clone(),
                ..base_cfg.clone()
            };
            let seed = rng::mix(master_seed, &[net as u64, 0x0b5]);
            let trials = run_trials(ck, batch, test_indices, &cfg, seed, runner)?;
            let per_trial: Vec<f64> = trials
                .trials
                .iter()
                .map(|t| trial_prediction_error(t, batch, ErrorScope::HighestResolution))
                .collect();
            let mean = per_trial.iter().sum::<f64>() / per_trial.len() as f64;
            table.rows.push(ErrorRow {
                condition: cond.label.clone(),
                network: net,
                mean_error: mean,
                trials: per_trial.len(),
            });
        }
    }
    table.aggregate();
    Ok(table)
}

/// Data-balance grid: one task's training count fixed at the full count, the
/// other varied; trains one network per cell per seed and evaluates the
/// fixed task's test error (plus the varied task's for the unseen-task
/// check).
#[derive(Clone, Debug)]
pub struct InterferenceResult {
    /// Fixed reposition, varied wipe: reposition test error per cell.
    pub fixed_reposition: ErrorTable,
    /// Fixed wipe, varied reposition: wipe test error per cell.
    pub fixed_wipe: ErrorTable,
    /// Unseen-task sanity rows: error of the never-trained task on the
    /// zero-count cells, per seed.
    pub unseen: ErrorTable,
    /// Paired t-test comparing the varied count 0 against the largest count,
    /// per direction (fixed task label, test).
    pub t_tests: Vec<(String, TTest)>,
}

pub struct InterferenceGrid {
    /// Counts for the varied task (the fixed task always uses all its train
    /// sequences).
    pub varied_counts: Vec<usize>,
    pub n_seeds: usize,
}

impl Default for InterferenceGrid {
    fn default() -> Self {
        InterferenceGrid {
            varied_counts: vec![0, 3, 6, 9],
            n_seeds: 5,
        }
    }
}

pub fn interference_protocol<R: ParallelMap>(
    spec: &WorldSpec,
    topo: &crate::net::topology::NetworkTopology,
    grid: &InterferenceGrid,
    train_cfg: &TrainConfig,
    infer_cfg: &InferConfig,
    data_seed: u64,
    runner: &R,
) -> Result<InterferenceResult> {
    let batch = generate(spec, &GenCounts::default(), data_seed)?;
    interference_protocol_on(&batch, topo, grid, train_cfg, infer_cfg, runner)
}

/// Grid driver over an existing dataset (cells share one data pool and its
/// normalization).
pub fn interference_protocol_on<R: ParallelMap>(
    batch: &SequenceBatch,
    topo: &crate::net::topology::NetworkTopology,
    grid: &InterferenceGrid,
    train_cfg: &TrainConfig,
    infer_cfg: &InferConfig,
    runner: &R,
) -> Result<InterferenceResult> {
    let r_train = batch.indices_where(Some(Task::Reposition), Some(Role::Train));
    let w_train = batch.indices_where(Some(Task::Wipe), Some(Role::Train));
    let r_test = batch.indices_where(Some(Task::Reposition), Some(Role::Test));
    let w_test = batch.indices_where(Some(Task::Wipe), Some(Role::Test));
    for &c in &grid.varied_counts {
        if c > r_train.len() || c > w_train.len() {
            return Err(CoreError::Config(format!(
                "varied count {c} exceeds the available train sequences"
            )));
        }
    }
    let full = r_train.len();

    // Unique cells over both directions; (full, full) is shared.
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for &k in &grid.varied_counts {
        if !cells.contains(&(full, k)) {
            cells.push((full, k));
        }
        if !cells.contains(&(k, full)) {
            cells.push((k, full));
        }
    }

    struct CellRun {
        r_count: usize,
        w_count: usize,
        seed_idx: usize,
        r_err: Option<f64>,
        w_err: Option<f64>,
    }

    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| (0..grid.n_seeds).map(move |s| (ci, s)))
        .collect();
    let outcomes: Vec<Result<CellRun>> = runner.map(jobs.len(), &|j: usize| {
        let (ci, seed_idx) = jobs[j];
        let (r_count, w_count) = cells[ci];
        let mut indices: Vec<usize> = Vec::new();
        indices.extend(&r_train[..r_count]);
        indices.extend(&w_train[..w_count]);
        let cfg = TrainConfig {
            seed: rng::mix(train_cfg.seed, &[0x9f1d, r_count as u64, w_count as u64, seed_idx as u64]),
            ..train_cfg.clone()
        };
        let fitres = fit(batch, &indices, topo, &cfg, &crate::runner::SerialMap, None)?;
        let eval = |test: &[usize]| -> Result<f64> {
            let trials = run_trials(
                &fitres.checkpoint,
                batch,
                test,
                infer_cfg,
                rng::mix(cfg.seed, &[0xe7a1]),
                &crate::runner::SerialMap,
            )?;
            let per: Vec<f64> = trials
                .trials
                .iter()
                .map(|t| trial_prediction_error(t, batch, ErrorScope::AllModalities))
                .collect();
            Ok(per.iter().sum::<f64>() / per.len() as f64)
        };
        // Evaluate the fixed task of each direction the cell belongs to,
        // plus the never-trained task on the zero-count cells.
        let need_r = r_count == full || (r_count == 0 && w_count == full);
        let need_w = w_count == full || (w_count == 0 && r_count == full);
        Ok(CellRun {
            r_count,
            w_count,
            seed_idx,
            r_err: if need_r { Some(eval(&r_test)?) } else { None },
            w_err: if need_w { Some(eval(&w_test)?) } else { None },
        })
    });

    let mut runs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        runs.push(o?);
    }

    let mut fixed_reposition = ErrorTable::default();
    let mut fixed_wipe = ErrorTable::default();
    let mut unseen = ErrorTable::default();
    for run in &runs {
        if run.r_count == full {
            fixed_reposition.rows.push(ErrorRow {
                condition: format!("W={}", run.w_count),
                network: run.seed_idx,
                mean_error: run.r_err.expect("fixed-task error evaluated"),
                trials: r_test.len() * infer_cfg.trials_per_sequence,
            });
            if run.w_count == 0 {
                unseen.rows.push(ErrorRow {
                    condition: String::from("unseen W (trained R only)"),
                    network: run.seed_idx,
                    mean_error: run.w_err.expect("unseen-task error evaluated"),
                    trials: w_test.len() * infer_cfg.trials_per_sequence,
                });
            }
        }
        if run.w_count == full {
            fixed_wipe.rows.push(ErrorRow {
                condition: format!("R={}", run.r_count),
                network: run.seed_idx,
                mean_error: run.w_err.expect("fixed-task error evaluated"),
                trials: w_test.len() * infer_cfg.trials_per_sequence,
            });
            if run.r_count == 0 {
                unseen.rows.push(ErrorRow {
                    condition: String::from("unseen R (trained W only)"),
                    network: run.seed_idx,
                    mean_error: run.r_err.expect("unseen-task error evaluated"),
                    trials: r_test.len() * infer_cfg.trials_per_sequence,
                });
            }
        }
    }
    fixed_reposition.aggregate();
    fixed_wipe.aggregate();
    unseen.aggregate();

    let mut t_tests = Vec::new();
    let lo = *grid.varied_counts.iter().min().unwrap_or(&0);
    let hi = *grid.varied_counts.iter().max().unwrap_or(&0);
    for (label, table, cond_of) in [
        ("R test: W=lo vs W=hi", &fixed_reposition, 'W'),
        ("W test: R=lo vs R=hi", &fixed_wipe, 'R'),
    ] {
        let a: Vec<f64> = (0..grid.n_seeds)
            .filter_map(|s| table.condition_mean(&format!("{cond_of}={lo}"), s))
            .collect();
        let b: Vec<f64> = (0..grid.n_seeds)
            .filter_map(|s| table.condition_mean(&format!("{cond_of}={hi}"), s))
            .collect();
        if a.len() == b.len() && a.len() >= 2 {
            if let Ok(t) = paired_t_test(&a, &b) {
                t_tests.push((String::from(label), t));
            }
        }
    }

    Ok(InterferenceResult {
        fixed_reposition,
        fixed_wipe,
        unseen,
        t_tests,
    })
}
