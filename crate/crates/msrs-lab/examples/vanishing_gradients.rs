//! Gradient-flow diagnostics on the deep non-residual tanh stack: the
//! collapsed per-layer norms at initialization, against the residual
//! sibling whose flow stays healthy.
//!
//! ```text
//! cargo run --example vanishing_gradients
//! ```

use msrs_lab::mask::MsrsHyper;
use msrs_lab::model::{pathological_model_spec, ModelSpec};
use msrs_lab::optim::OptimizerConfig;
use msrs_lab::sparse::SparseMethodConfig;
use msrs_lab::tasks::TeacherSpec;
use msrs_lab::train::{run_experiment, ExperimentConfig, TaskSpec};

fn probe(spec: ModelSpec, label: &str) {
    let cfg = ExperimentConfig {
        model: spec,
        task: TaskSpec::Teacher {
            seed: 7,
            n: 256,
            d_in: 16,
            teacher: TeacherSpec::default(),
        },
        method: SparseMethodConfig::default(),
        msrs: MsrsHyper::default(),
        optim: OptimizerConfig {
            total_epochs: 1,
            batch_size: 16,
            ..OptimizerConfig::default()
        },
        log_interval: 1000,
        seed: 0,
    };
    let out = run_experiment(&cfg, None).expect("probe runs");
    let first = out
        .records
        .iter()
        .find(|r| r.per_layer_grad_l2.is_some())
        .expect("one logged step");
    let grads = first.per_layer_grad_l2.as_ref().unwrap();
    println!("{label}: first-linear gradient L2 per block at init");
    for b in [1usize, 4, 8, 12, 16] {
        let key = format!("block{b:02}.w1");
        println!("  block {b:>2}: {:.3e}", grads[&key]);
    }
    println!(
        "  first/last ratio: {:.3e}\n",
        grads["block01.w1"] / grads["block16.w1"]
    );
}

fn main() {
    let mut plain = pathological_model_spec();
    plain.head_gain = 0.3;
    probe(plain, "plain deep tanh stack (collapsed flow)");

    let mut residual = pathological_model_spec();
    residual.head_gain = 0.3;
    residual.residual = true;
    residual.init_gain = 1.7320508075688772;
    probe(residual, "residual sibling (healthy flow)");
}
