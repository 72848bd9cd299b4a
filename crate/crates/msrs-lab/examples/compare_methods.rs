//! The from-scratch comparison on the deep non-residual tanh fixture:
//! dense and prune/grow baselines stall while mask optimization converges.
//! Runs all six methods over three seeds; expect a couple of minutes.
//!
//! ```text
//! MSRS_LAB_THREADS=4 cargo run --example compare_methods
//! ```

use msrs_lab::compare::{run_compare, ComparePreset};

fn main() {
    for preset in [ComparePreset::FromScratch, ComparePreset::WarmStart] {
        let name = match preset {
            ComparePreset::FromScratch => "from-scratch",
            ComparePreset::WarmStart => "warm-start",
        };
        println!("== {name} ==");
        let table = run_compare(preset, 0, None).expect("comparison runs");
        print!("{}", table.to_csv());
        println!();
    }
}
