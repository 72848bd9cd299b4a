//! End-to-end tests of the command-line contract: subcommands, exit codes,
//! output files, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_msrs-lab")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("MSRS_LAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("msrs_lab_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_cfg(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_MSRS: &str = "\
seed = 7
model.depth = 2
model.width = 16
model.d_in = 8
model.d_out = 4
model.residual = true
model.init_gain = 1.7320508075688772
task.kind = teacher
task.n = 64
method.name = msrs
msrs.lambda = 1e-4
optim.batch_size = 16
optim.total_epochs = 4
optim.peak_lr_theta = 1e-3
optim.peak_lr_phi = 5e-3
log.interval = 2
";

#[test]
fn train_writes_outputs_and_exits_zero() {
    let dir = tmp("train_ok");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let out_dir = dir.join("out");
    let out = run(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("metrics.jsonl").exists());
    assert!(out_dir.join("final.ckpt").exists());
    assert!(out_dir.join("joint.ckpt").exists());
    assert!(out_dir.join("resolved-config.snapshot").exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert!(!metrics.trim().is_empty());
}

#[test]
fn unknown_config_key_exits_two_and_names_it() {
    let dir = tmp("bad_key");
    let cfg = write_cfg(&dir, "msrs.lamda = 1e-3\n");
    let out = run(&["train", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("msrs.lamda"), "{err}");
}

#[test]
fn train_is_byte_deterministic() {
    let dir = tmp("determinism");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let (a, b) = (dir.join("a"), dir.join("b"));
    for out_dir in [&a, &b] {
        let out = run(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    let mb = std::fs::read(b.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, mb, "metric streams differ");
    let ca = std::fs::read(a.join("final.ckpt")).unwrap();
    let cb = std::fs::read(b.join("final.ckpt")).unwrap();
    assert_eq!(ca, cb, "checkpoints differ");
}

#[test]
fn snapshot_feeds_back_identically() {
    let dir = tmp("snapshot");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let first = dir.join("first");
    assert_eq!(
        run(&["train", cfg.to_str().unwrap(), "--out", first.to_str().unwrap(), "--quiet"])
            .status
            .code(),
        Some(0)
    );
    let snapshot = first.join("resolved-config.snapshot");
    let second = dir.join("second");
    assert_eq!(
        run(&["train", snapshot.to_str().unwrap(), "--out", second.to_str().unwrap(), "--quiet"])
            .status
            .code(),
        Some(0)
    );
    let ma = std::fs::read(first.join("metrics.jsonl")).unwrap();
    let mb = std::fs::read(second.join("metrics.jsonl")).unwrap();
    assert_eq!(ma, mb, "snapshot did not reproduce the run");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tmp("seed_override");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let (a, b) = (dir.join("a"), dir.join("b"));
    run(&["train", cfg.to_str().unwrap(), "--out", a.to_str().unwrap(), "--quiet"]);
    run(&["train", cfg.to_str().unwrap(), "--seed", "9", "--out", b.to_str().unwrap(), "--quiet"]);
    let ma = std::fs::read(a.join("metrics.jsonl")).unwrap();
    let mb = std::fs::read(b.join("metrics.jsonl")).unwrap();
    assert_ne!(ma, mb);
    let snap = std::fs::read_to_string(b.join("resolved-config.snapshot")).unwrap();
    assert!(snap.contains("seed = 9"));
}

#[test]
fn gradcheck_passes_and_perturb_fails() {
    let ok = run(&["gradcheck", "--seed", "0"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    // One line per registered primitive.
    for op in [
        "matmul", "add", "sub", "mul", "scale", "add_bias", "row_scale", "tanh", "relu",
        "gelu", "sigmoid", "layer_norm", "mse", "softmax_xent", "residual_block",
        "masked_backward_l1", "masked_backward_l10", "full_model",
    ] {
        assert!(stdout.lines().any(|l| l.starts_with(op)), "missing line for {op}");
    }

    let bad = run(&["gradcheck", "--seed", "0", "--perturb", "gelu"]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("gelu"), "{err}");
}

#[test]
fn sweep_contract() {
    let dir = tmp("sweep");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let out_dir = dir.join("out");

    // Missing lambda list is a usage error.
    let missing = run(&["sweep", cfg.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let empty = run(&["sweep", cfg.to_str().unwrap(), "--lambda", ""]);
    assert_eq!(empty.status.code(), Some(2));

    // Single lambda, single seed: one data row.
    let ok = run(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--lambda",
        "1e-4",
        "--seeds",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines[0], "lambda,seed,final_sparsity,final_loss,epochs_joint,status");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(",ok"));
}

#[test]
fn report_contract() {
    let dir = tmp("report");
    let cfg = write_cfg(&dir, SMALL_MSRS);
    let out_dir = dir.join("out");
    run(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"]);
    let rep = run(&["report", out_dir.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(
        summary.contains("stop_reason=epsilon") || summary.contains("stop_reason=max_epochs"),
        "{summary}"
    );
    let grad = std::fs::read_to_string(out_dir.join("gradnorms.csv")).unwrap();
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    let logged_steps = metrics
        .lines()
        .filter(|l| l.contains("\"per_layer_grad_l2\":{"))
        .count();
    assert_eq!(grad.trim().lines().count(), logged_steps + 1, "header plus one row per logged step");
    assert!(out_dir.join("sparsity_by_module.csv").exists());

    // Corrupt metrics: exit 2 with a line number.
    let broken_dir = dir.join("broken");
    std::fs::create_dir_all(&broken_dir).unwrap();
    let good_line = metrics.lines().next().unwrap();
    std::fs::write(
        broken_dir.join("metrics.jsonl"),
        format!("{good_line}\nnot json\n"),
    )
    .unwrap();
    let bad = run(&["report", broken_dir.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("line 2"), "{err}");

    // A directory with neither metrics nor sweep output is a usage error.
    let vacant = dir.join("vacant");
    std::fs::create_dir_all(&vacant).unwrap();
    assert_eq!(run(&["report", vacant.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn dense_run_report_shows_zero_sparsity() {
    let dir = tmp("dense_report");
    let cfg = write_cfg(&dir, &SMALL_MSRS.replace("method.name = msrs", "method.name = dense"));
    let out_dir = dir.join("out");
    run(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--quiet"]);
    run(&["report", out_dir.to_str().unwrap(), "--quiet"]);
    let csv = std::fs::read_to_string(out_dir.join("sparsity_by_module.csv")).unwrap();
    for line in csv.trim().lines().skip(1) {
        let sparsity: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(sparsity, 0.0, "{line}");
    }
    let summary = std::fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("stop_reason=n/a"));
}

#[test]
fn print_defaults_lists_every_key() {
    let out = run(&["--print-defaults"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for key in [
        "seed", "model.depth", "model.width", "model.activation", "task.kind",
        "method.name", "msrs.mu", "msrs.rho", "msrs.varsigma", "msrs.lambda",
        "msrs.epsilon", "msrs.l_fwd", "msrs.l_bwd", "msrs.max_joint_epochs",
        "optim.beta1", "optim.beta2", "optim.clip_norm", "log.interval",
    ] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{key} ="))), "missing {key}");
    }
    // The canonical mask hyperparameters survive as the defaults.
    assert!(text.contains("msrs.lambda = 0.0000000002") || text.contains("msrs.lambda = 2e-10"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["train", "/nonexistent/config.cfg"]).status.code(), Some(2));
    assert_eq!(run(&["compare", "sideways"]).status.code(), Some(2));
    assert_eq!(run(&["train", "x.cfg", "--bogus"]).status.code(), Some(2));
}

#[test]
fn numerical_abort_exits_three_with_partial_metrics() {
    let dir = tmp("abort");
    let cfg = write_cfg(
        &dir,
        "\
seed = 7
model.depth = 2
model.width = 16
model.d_in = 8
model.d_out = 4
model.residual = true
model.activation = relu
model.init_gain = 1.7320508075688772
task.kind = teacher
task.n = 64
method.name = dense
optim.batch_size = 16
optim.total_epochs = 10
optim.peak_lr_theta = 1e30
optim.clip_norm = 1e30
log.interval = 1
",
    );
    let out_dir = dir.join("out");
    let out = run(&["train", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert!(!metrics.trim().is_empty(), "partial metrics should be flushed");
}
