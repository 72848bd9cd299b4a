//! Command-line driver.
//!
//! ```text
//! msrs-lab train <config> [--seed N] [--out DIR] [--quiet]
//! msrs-lab sweep <config> --lambda L1,L2,.. [--seeds S1,S2,..] [--out DIR] [--quiet]
//! msrs-lab gradcheck [--seed N] [--perturb OP] [--quiet]
//! msrs-lab report <dir>
//! msrs-lab compare <preset> [--seed N] [--out DIR] [--quiet]
//! msrs-lab --print-defaults
//! ```
//!
//! Exit codes: 0 success, 1 check/comparison failure, 2 usage or config
//! error, 3 numerical abort. `MSRS_LAB_THREADS` caps sweep/compare worker
//! parallelism (default 1).

use std::path::{Path, PathBuf};

use crate::compare::{run_compare, ComparePreset};
use crate::config::RunFileConfig;
use crate::error::LabError;
use crate::gradcheck::{run_gradcheck, GRADCHECK_TOL};
use crate::report::{report_run_dir, report_sweep_dir};
use crate::train::{lambda_sweep, run_experiment};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const USAGE: &str = "usage: msrs-lab <train|sweep|gradcheck|report|compare> [args]
  train <config>            run one experiment (--seed N, --out DIR, --quiet)
  sweep <config>            lambda sweep (--lambda L1,L2,.. --seeds S1,S2,.. --out DIR)
  gradcheck                 finite-difference oracle suite (--seed N, --perturb OP)
  report <dir>              write gradnorms.csv, sparsity_by_module.csv, summary.txt
  compare <preset>          method comparison: from-scratch | warm-start
  --print-defaults          print every config key with its default value";

fn exit_code_for(err: &LabError) -> i32 {
    match err {
        LabError::NonFiniteLoss { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

struct Flags {
    positional: Vec<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
    lambda: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    perturb: Option<String>,
}

fn parse_flags(args: &[String]) -> Result<Flags, String> {
    let mut f = Flags {
        positional: Vec::new(),
        seed: None,
        out: None,
        quiet: false,
        lambda: None,
        seeds: None,
        perturb: None,
    };
    let mut it = args.iter().peekable();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                f.seed = Some(v.parse().map_err(|_| format!("bad --seed '{v}'"))?);
            }
            "--out" => {
                let v = it.next().ok_or("--out needs a value")?;
                f.out = Some(PathBuf::from(v));
            }
            "--quiet" => f.quiet = true,
            "--lambda" => {
                let v = it.next().ok_or("--lambda needs a comma-separated list")?;
                let parsed: Result<Vec<f64>, _> =
                    v.split(',').filter(|s| !s.is_empty()).map(str::parse).collect();
                f.lambda = Some(parsed.map_err(|_| format!("bad --lambda list '{v}'"))?);
            }
            "--seeds" => {
                let v = it.next().ok_or("--seeds needs a comma-separated list")?;
                let parsed: Result<Vec<u64>, _> =
                    v.split(',').filter(|s| !s.is_empty()).map(str::parse).collect();
                f.seeds = Some(parsed.map_err(|_| format!("bad --seeds list '{v}'"))?);
            }
            "--perturb" => {
                let v = it.next().ok_or("--perturb needs an op name")?;
                f.perturb = Some(v.clone());
            }
            other if other.starts_with("--") => {
                return Err(format!("unknown flag '{other}'"));
            }
            other => f.positional.push(other.to_string()),
        }
    }
    Ok(f)
}

fn load_config(path: &str, seed_override: Option<u64>) -> Result<RunFileConfig, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read config '{path}': {e}")))?;
    let mut cfg = RunFileConfig::parse(&text)?;
    if let Some(s) = seed_override {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_train(flags: &Flags) -> i32 {
    let Some(path) = flags.positional.first() else {
        eprintln!("train: missing config path\n{USAGE}");
        return EXIT_USAGE;
    };
    let cfg = match load_config(path, flags.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("train: {e}");
            return EXIT_USAGE;
        }
    };
    let exp = match cfg.to_experiment() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("train: {e}");
            return EXIT_USAGE;
        }
    };
    let out_dir = flags
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("msrs-out").join(exp.run_id()));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("train: cannot create out dir: {e}");
        return EXIT_USAGE;
    }
    if let Err(e) = std::fs::write(out_dir.join("resolved-config.snapshot"), cfg.to_text()) {
        eprintln!("train: {e}");
        return EXIT_USAGE;
    }
    match run_experiment(&exp, Some(&out_dir)) {
        Ok(out) => {
            if !flags.quiet {
                println!(
                    "{}: initial_loss={:.6} final_loss={:.6} final_sparsity={:.4} j={} stop_reason={}",
                    out.run_id,
                    out.initial_loss,
                    out.final_loss,
                    out.final_sparsity,
                    out.epochs_joint,
                    out.stop_reason.name()
                );
                println!("wrote {}", out_dir.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("train: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_sweep(flags: &Flags) -> i32 {
    let Some(path) = flags.positional.first() else {
        eprintln!("sweep: missing config path\n{USAGE}");
        return EXIT_USAGE;
    };
    let Some(lambdas) = flags.lambda.clone() else {
        eprintln!("sweep: --lambda list is required");
        return EXIT_USAGE;
    };
    if lambdas.is_empty() {
        eprintln!("sweep: --lambda list is empty");
        return EXIT_USAGE;
    }
    let cfg = match load_config(path, flags.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("sweep: {e}");
            return EXIT_USAGE;
        }
    };
    let exp = match cfg.to_experiment() {
        Ok(e) => e,
        Err(e) => {
            eprintln!("sweep: {e}");
            return EXIT_USAGE;
        }
    };
    let seeds = flags.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    if seeds.is_empty() {
        eprintln!("sweep: --seeds list is empty");
        return EXIT_USAGE;
    }
    let out_dir = flags
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("msrs-out").join("sweep"));
    match lambda_sweep(&exp, &lambdas, &seeds, Some(&out_dir)) {
        Ok(table) => {
            if !flags.quiet {
                print!("{}", table.to_csv());
                println!("wrote {}", out_dir.join("sweep.csv").display());
            }
            if table.any_ok() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("sweep: {e}");
            exit_code_for(&e)
        }
    }
}

fn cmd_gradcheck(flags: &Flags) -> i32 {
    let seed = flags.seed.unwrap_or(0);
    let report = match run_gradcheck(seed, 100, flags.perturb.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("gradcheck: {e}");
            return EXIT_USAGE;
        }
    };
    for c in &report.checks {
        if !flags.quiet {
            println!("{:<22} max_rel_err {:.3e}", c.name, c.max_rel_err);
        }
    }
    let failures = report.failures(GRADCHECK_TOL);
    if failures.is_empty() {
        if !flags.quiet {
            println!("gradcheck: all {} ops within {GRADCHECK_TOL:e}", report.checks.len());
        }
        EXIT_OK
    } else {
        for f in failures {
            eprintln!(
                "gradcheck: FAILED {} (max rel err {:.3e} >= {GRADCHECK_TOL:e})",
                f.name, f.max_rel_err
            );
        }
        EXIT_CHECK_FAILED
    }
}

fn cmd_report(flags: &Flags) -> i32 {
    let Some(dir) = flags.positional.first() else {
        eprintln!("report: missing run or sweep directory\n{USAGE}");
        return EXIT_USAGE;
    };
    let dir = Path::new(dir);
    let result = if dir.join("metrics.jsonl").exists() {
        report_run_dir(dir)
    } else if dir.join("sweep.csv").exists() {
        report_sweep_dir(dir)
    } else {
        eprintln!(
            "report: {} has neither metrics.jsonl nor sweep.csv",
            dir.display()
        );
        return EXIT_USAGE;
    };
    match result {
        Ok(()) => {
            if !flags.quiet {
                println!("wrote reports under {}", dir.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("report: {e}");
            EXIT_USAGE
        }
    }
}

fn cmd_compare(flags: &Flags) -> i32 {
    let Some(preset_name) = flags.positional.first() else {
        eprintln!("compare: missing preset (from-scratch|warm-start)");
        return EXIT_USAGE;
    };
    let preset = match ComparePreset::parse(preset_name) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("compare: {e}");
            return EXIT_USAGE;
        }
    };
    let seed = flags.seed.unwrap_or(0);
    let out_dir = flags
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("msrs-out").join(format!("compare-{preset_name}")));
    match run_compare(preset, seed, Some(&out_dir)) {
        Ok(table) => {
            if !flags.quiet {
                print!("{}", table.to_csv());
                println!("wrote {}", out_dir.join("compare.csv").display());
            }
            if table.any_ok() {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("compare: {e}");
            exit_code_for(&e)
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    if args.iter().any(|a| a == "--print-defaults") {
        print!("{}", RunFileConfig::default().to_text());
        return EXIT_OK;
    }
    let Some((cmd, rest)) = args.split_first() else {
        eprintln!("{USAGE}");
        return EXIT_USAGE;
    };
    let flags = match parse_flags(rest) {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("{cmd}: {msg}\n{USAGE}");
            return EXIT_USAGE;
        }
    };
    match cmd.as_str() {
        "train" => cmd_train(&flags),
        "sweep" => cmd_sweep(&flags),
        "gradcheck" => cmd_gradcheck(&flags),
        "report" => cmd_report(&flags),
        "compare" => cmd_compare(&flags),
        other => {
            eprintln!("unknown command '{other}'\n{USAGE}");
            EXIT_USAGE
        }
    }
}
