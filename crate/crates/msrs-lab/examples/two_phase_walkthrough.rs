//! Walk through the two-phase mask-optimization run on the teacher task:
//! joint phase until the mask stabilizes, condensation, then the sparse
//! continuation with frozen zeros.
//!
//! ```text
//! cargo run --example two_phase_walkthrough
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::ModelSpec;
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::report::sparsity_report;
use msrs_lab::sparse::{Method, SparseMethodConfig};
use msrs_lab::tasks::TeacherSpec;
use msrs_lab::train::{run_experiment, ExperimentConfig, TaskSpec};

fn main() {
    let cfg = ExperimentConfig {
        model: ModelSpec {
            depth: 4,
            width: 32,
            d_in: 16,
            d_out: 4,
            residual: true,
            init_gain: 1.7320508075688772,
            ..ModelSpec::default()
        },
        task: TaskSpec::Teacher {
            seed: 7,
            n: 256,
            d_in: 16,
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
            peak_lr_theta: 1e-3,
            peak_lr_phi: 5e-3,
            warmup_epochs: 1,
            total_epochs: 15,
            batch_size: 32,
            ..OptimizerConfig::default()
        },
        log_interval: 4,
        seed: 7,
    };

    let out = run_experiment(&cfg, None).expect("run succeeds");

    println!("initial loss {:.4}", out.initial_loss);
    println!("\nepoch  phase     loss    sparsity  mask-diff  hamming");
    for r in out.records.iter().filter(|r| r.per_layer_grad_l2.is_none()) {
        println!(
            "{:>5}  {:<8} {:>7.4}  {:>7.4}   {:>8}  {:>7}",
            r.epoch,
            r.phase,
            r.loss,
            r.global_sparsity.unwrap_or(0.0),
            r.mask_sparsity_diff
                .map_or("-".to_string(), |d| format!("{d:.4}")),
            r.mask_hamming_delta
                .map_or("-".to_string(), |h| h.to_string()),
        );
    }
    println!(
        "\njoint epochs used: {} (stop: {})",
        out.epochs_joint,
        out.stop_reason.name()
    );
    println!(
        "final loss {:.4}, final sparsity {:.4}, masked-zero violations {}",
        out.final_loss, out.final_sparsity, out.mask_zero_violations
    );

    // Per-module sparsity of the final model.
    let masks: Vec<_> = out
        .model
        .prunable_indices()
        .iter()
        .map(|&i| {
            msrs_lab::mask::BinaryMask::from_tensor(&out.model.params[i].value.map(|v| {
                if v == 0.0 {
                    0.0
                } else {
                    1.0
                }
            }))
        })
        .collect();
    let report = sparsity_report(&out.model, Some(&masks)).expect("report builds");
    println!("\nper-block sparsity:");
    for (block, s) in &report.blocks {
        println!("  {block:<10} {s:.4}");
    }
    println!("  global     {:.4}", report.global);
}
