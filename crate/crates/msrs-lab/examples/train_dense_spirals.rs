//! Dense classification on the two-spirals task.
//!
//! ```text
//! cargo run --example train_dense_spirals
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::{Activation, ModelSpec};
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::sparse::SparseMethodConfig;
use msrs_lab::tasks::classification_accuracy;
use msrs_lab::train::{run_experiment, ExperimentConfig, TaskSpec};

fn main() {
    let cfg = ExperimentConfig {
        model: ModelSpec {
            depth: 4,
            width: 32,
            d_in: 2,
            d_out: 2,
            activation: Activation::Relu,
            residual: true,
            init_gain: 1.7320508075688772,
            ..ModelSpec::default()
        },
        task: TaskSpec::Spirals {
            seed: 11,
            n: 256,
            noise: 0.0,
        },
        method: SparseMethodConfig::default(),
        msrs: MsrsHyper::default(),
        optim: OptimizerConfig {
            peak_lr_theta: 3e-3,
            warmup_epochs: 1,
            total_epochs: 60,
            batch_size: 32,
            ..OptimizerConfig::default()
        },
        log_interval: 16,
        seed: 3,
    };
    let out = run_experiment(&cfg, None).expect("run succeeds");
    let ds = cfg.task.build().expect("dataset builds");
    let acc = classification_accuracy(&out.model, &ds).expect("accuracy");
    println!(
        "cross-entropy {:.4} -> {:.4}, train accuracy {:.1}%",
        out.initial_loss,
        out.final_loss,
        100.0 * acc
    );
}
