//! Mask optimization combined with LayerScale: the near-zero residual
//! branch scale and the learned sparsity regularize depth and width
//! together.
//!
//! ```text
//! cargo run --example layerscale_combo
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::ModelSpec;
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::sparse::{Method, SparseMethodConfig};
use msrs_lab::tasks::TeacherSpec;
use msrs_lab::train::{run_experiment, ExperimentConfig, TaskSpec};

fn main() {
    for (label, layerscale) in [("plain residual", None), ("with layerscale", Some(1e-4))] {
        let cfg = ExperimentConfig {
            model: ModelSpec {
                depth: 8,
                width: 32,
                d_in: 16,
                d_out: 4,
                residual: true,
                layerscale,
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
                total_epochs: 20,
                batch_size: 32,
                ..OptimizerConfig::default()
            },
            log_interval: 8,
            seed: 5,
        };
        let out = run_experiment(&cfg, None).expect("run succeeds");
        println!(
            "{label:<16} loss {:.4} -> {:.4}, sparsity {:.3}, joint epochs {}",
            out.initial_loss, out.final_loss, out.final_sparsity, out.epochs_joint
        );
    }
}
