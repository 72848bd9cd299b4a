//! Save a checkpoint at the phase transition and resume the continuation:
//! the resumed metric records match the uninterrupted run exactly.
//!
//! ```text
//! cargo run --example checkpoint_resume
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::ModelSpec;
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::sparse::{Method, SparseMethodConfig};
use msrs_lab::tasks::TeacherSpec;
use msrs_lab::train::{resume_continue_phase, run_experiment, ExperimentConfig, TaskSpec};

fn main() {
    let dir = std::env::temp_dir().join("msrs_lab_example_resume");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("temp dir");

    let cfg = ExperimentConfig {
        model: ModelSpec {
            depth: 3,
            width: 16,
            d_in: 8,
            d_out: 4,
            residual: true,
            init_gain: 1.7320508075688772,
            ..ModelSpec::default()
        },
        task: TaskSpec::Teacher {
            seed: 7,
            n: 128,
            d_in: 8,
            teacher: TeacherSpec::default(),
        },
        method: SparseMethodConfig {
            method: Method::Msrs,
            dense_after: false,
            ..SparseMethodConfig::default()
        },
        msrs: MsrsHyper {
            lambda: 1e-4,
            ..MsrsHyper::default()
        },
        optim: OptimizerConfig {
            total_epochs: 6,
            batch_size: 16,
            peak_lr_theta: 1e-3,
            peak_lr_phi: 5e-3,
            ..OptimizerConfig::default()
        },
        log_interval: 4,
        seed: 1,
    };

    let full = run_experiment(&cfg, Some(&dir)).expect("full run");
    println!(
        "uninterrupted: final loss {:.6}, checkpoint at {}",
        full.final_loss,
        dir.join("joint.ckpt").display()
    );

    let resumed =
        resume_continue_phase(&cfg, &dir.join("joint.ckpt"), None).expect("resume runs");
    println!("resumed:       final loss {:.6}", resumed.final_loss);

    let full_continue: Vec<_> = full.records.iter().filter(|r| r.phase == "continue").collect();
    let resumed_continue: Vec<_> =
        resumed.records.iter().filter(|r| r.phase == "continue").collect();
    let identical = full_continue
        .iter()
        .zip(&resumed_continue)
        .all(|(a, b)| a == b);
    println!(
        "continuation records: {} vs {} -> {}",
        full_continue.len(),
        resumed_continue.len(),
        if identical && full_continue.len() == resumed_continue.len() {
            "identical"
        } else {
            "MISMATCH"
        }
    );
}
