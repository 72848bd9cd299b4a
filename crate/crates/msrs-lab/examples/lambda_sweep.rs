//! Sweep the pruning-speed penalty and watch the final sparsity respond.
//!
//! ```text
//! cargo run --example lambda_sweep
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::ModelSpec;
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::sparse::{Method, SparseMethodConfig};
use msrs_lab::tasks::TeacherSpec;
use msrs_lab::train::{lambda_sweep, ExperimentConfig, TaskSpec};

fn main() {
    let base = ExperimentConfig {
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
            ..SparseMethodConfig::default()
        },
        msrs: MsrsHyper::default(),
        optim: OptimizerConfig {
            peak_lr_theta: 1e-3,
            peak_lr_phi: 1e-3,
            warmup_epochs: 1,
            total_epochs: 10,
            batch_size: 256,
            ..OptimizerConfig::default()
        },
        log_interval: 1,
        seed: 1,
    };
    let lambdas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
    let table = lambda_sweep(&base, &lambdas, &[1, 2, 3], None).expect("sweep runs");
    print!("{}", table.to_csv());
    println!("\nmean final sparsity per lambda:");
    for (l, s) in table.mean_final_sparsity_by_lambda() {
        println!("  {l:>8.0e}  {s:.4}");
    }
}
