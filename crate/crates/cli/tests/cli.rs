//! End-to-end runs of the binary with a reduced configuration: gen-data,
//! train, infer, ablate, check, plus rerun determinism and error codes.

use std::path::Path;
use std::process::{Command, Output};

fn hvrnn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hvrnn"))
}

fn run(args: &[&str]) -> Output {
    hvrnn().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny but complete configuration: short sequences, small network, few
/// iterations.
const SMALL_CONFIG: &str = r#"
[world]
t_len = 16
resolutions = [4, 8]

[topology]
module_sizes = [6, 6, 6, 6]
latent_sizes = [4, 4, 6, 4]
tau = [[8.0, 16.0], [4.0, 8.0], [2.0, 4.0], [2.0, 4.0]]
extero_hidden = [8, 10]
proprio_hidden = 8

[train]
iterations = 30
loss_log_cadence = 5

[infer]
window = 5
rounds = 3
trials_per_sequence = 2

[experiment]
networks = 2
train_per_condition = 1
test_per_condition = 1
interference_counts = [0, 3]
interference_iterations = 10
"#;

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

#[test]
fn pipeline_gen_train_infer_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    let gen_out = dir.path().join("data");
    let train_out = dir.path().join("trained");
    let infer_out = dir.path().join("inferred");
    let ablate_out = dir.path().join("ablated");

    let out = run(&[
        "gen-data",
        "--config",
        cfg_s,
        "--seed",
        "3",
        "--out",
        gen_out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_ok(&out);
    let data = gen_out.join("dataset.hvd");
    assert!(data.exists());
    assert!(gen_out.join("manifest.toml").exists());
    assert!(gen_out.join("dataset_summary.csv").exists());

    let out = run(&[
        "train",
        "--config",
        cfg_s,
        "--seed",
        "5",
        "--out",
        train_out.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let ck = train_out.join("checkpoint.hvc");
    assert!(ck.exists());
    let loss = std::fs::read_to_string(train_out.join("loss_history.csv")).unwrap();
    assert!(loss.starts_with(
        "iteration,total,accuracy.extero,accuracy.proprio,complexity.Exe,complexity.Mul,complexity.Ext,complexity.Pro"
    ));
    // Cadence 5 over 30 iterations: rows at 0,5,...,25 and the final 29.
    assert_eq!(loss.lines().count(), 1 + 7);

    let out = run(&[
        "infer",
        "--config",
        cfg_s,
        "--seed",
        "7",
        "--out",
        infer_out.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let trials = infer_out.join("trials.hvt");
    assert!(trials.exists());
    let latents = std::fs::read_to_string(infer_out.join("latents.csv")).unwrap();
    assert!(latents.starts_with("seq_index,trial,step,module,latent,mu_p,sigma_p,mu_q,sigma_q"));
    // 4 test sequences (2 tasks x 2 conditions... configured 2 heights? 3
    // heights default) x trials x steps x latent rows: just check nonempty.
    assert!(latents.lines().count() > 10);
    let errors = std::fs::read_to_string(infer_out.join("errors.csv")).unwrap();
    assert!(errors.starts_with("seq_index,trial,step,modality,error"));

    let out = run(&[
        "ablate",
        "--config",
        cfg_s,
        "--out",
        ablate_out.to_str().unwrap(),
        "--checkpoint",
        ck.to_str().unwrap(),
        "--trials",
        trials.to_str().unwrap(),
        "--module",
        "Ext",
    ]);
    assert_ok(&out);
    assert!(ablate_out.join("ablation_Ext.pgm").exists());
    assert!(ablate_out.join("ablation_Ext.csv").exists());
}

#[test]
fn checkpoint_cadence_writes_intermediates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = format!("{SMALL_CONFIG}\n[train.extra]\n");
    // Reuse the small config with a cadence override.
    let cfg_text = cfg_text.replace("[train]\niterations = 30", "[train]\niterations = 30\ncheckpoint_cadence = 10");
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, cfg_text.replace("[train.extra]\n", "")).unwrap();
    let gen_out = dir.path().join("data");
    let train_out = dir.path().join("trained");
    assert_ok(&run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap(),
    ]));
    assert_ok(&run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
        "--data",
        gen_out.join("dataset.hvd").to_str().unwrap(),
    ]));
    assert!(train_out.join("checkpoint_000010.hvc").exists());
    assert!(train_out.join("checkpoint_000020.hvc").exists());
    // The final iteration is the main checkpoint, not a cadence file.
    assert!(!train_out.join("checkpoint_000030.hvc").exists());
    assert!(train_out.join("checkpoint.hvc").exists());
}

#[test]
fn rerun_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let o = run(&[
            "gen-data",
            "--config",
            cfg_s,
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert_ok(&o);
    }
    let a = std::fs::read(out_a.join("dataset.hvd")).unwrap();
    let b = std::fs::read(out_b.join("dataset.hvd")).unwrap();
    assert_eq!(a, b, "dataset bytes must not depend on thread count or rerun");
    let a = std::fs::read(out_a.join("dataset_summary.csv")).unwrap();
    let b = std::fs::read(out_b.join("dataset_summary.csv")).unwrap();
    assert_eq!(a, b);
    // Manifests differ only by the timestamp line (and hashes of identical
    // outputs are identical).
    let ma = std::fs::read_to_string(out_a.join("manifest.toml")).unwrap();
    let mb = std::fs::read_to_string(out_b.join("manifest.toml")).unwrap();
    let strip = |s: &str| -> String {
        s.lines()
            .filter(|l| !l.starts_with("unix_time") && !l.starts_with("threads") && !l.contains("/a/") && !l.contains("/b/"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&ma), strip(&mb));
}

#[test]
fn bad_config_lists_every_unknown_key_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[world]\nbogus = 1\n[train]\nwrong = 2\n").unwrap();
    let out = run(&[
        "gen-data",
        "--config",
        p.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("world.bogus"), "{err}");
    assert!(err.contains("train.wrong"), "{err}");
}

#[test]
fn missing_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--data",
        dir.path().join("nope.hvd").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "one-line machine-parsable error, got: {err}");
}

#[test]
fn wrong_file_type_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let gen_out = dir.path().join("data");
    let o = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        gen_out.to_str().unwrap(),
    ]);
    assert_ok(&o);
    // Feed the dataset where a checkpoint is expected.
    let out = run(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--checkpoint",
        gen_out.join("dataset.hvd").to_str().unwrap(),
        "--data",
        gen_out.join("dataset.hvd").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not a checkpoint"), "{err}");
}

#[test]
fn experiment_drivers_run_end_to_end_at_toy_scale() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg_s = cfg.to_str().unwrap();
    for which in ["1", "2", "3"] {
        let out_dir = dir.path().join(format!("exp{which}"));
        let out = run(&[
            "exp",
            which,
            "--config",
            cfg_s,
            "--seed",
            "17",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_ok(&out);
        assert!(out_dir.join("manifest.toml").exists());
        assert!(out_dir.join("dataset.hvd").exists());
        match which {
            "1" => {
                assert!(out_dir.join("uncertainty_stats.csv").exists());
                assert!(out_dir.join("uncertainty_per_network.csv").exists());
                assert!(out_dir.join("ablation_R_Ext.pgm").exists());
                assert!(out_dir.join("ablation_W_none.pgm").exists());
            }
            "2" => {
                let table = std::fs::read_to_string(out_dir.join("robustness.csv")).unwrap();
                assert!(table.starts_with("condition,network,mean_error,trials"));
                assert!(table.contains("all/proprio"));
                assert!(table.contains("low1/noproprio"));
            }
            "3" => {
                for f in [
                    "interference_reposition_fixed.csv",
                    "interference_wipe_fixed.csv",
                    "interference_unseen.csv",
                ] {
                    assert!(out_dir.join(f).exists(), "{f} missing");
                }
            }
            _ => unreachable!(),
        }
    }
}

#[test]
fn check_subcommand_passes_and_help_lists_flags() {
    let out = run(&["check", "--tolerance", "1e-4"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradient check PASS"), "{stdout}");

    let out = run(&["--help"]);
    assert_ok(&out);
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--config", "--seed", "--out", "--threads", "--deterministic"] {
        assert!(help.contains(flag), "help must list {flag}");
    }
    // Unknown flags are rejected.
    let out = run(&["check", "--bogus-flag"]);
    assert!(!out.status.success());
}
