//! Run the finite-difference oracle over every registered primitive.
//!
//! ```text
//! cargo run --example gradcheck
//! ```

use msrs_lab::gradcheck::{run_gradcheck, GRADCHECK_TOL};

fn main() {
    let report = run_gradcheck(0, 100, None).expect("oracle runs");
    for check in &report.checks {
        println!("{:<22} max rel err {:.3e}", check.name, check.max_rel_err);
    }
    let worst = report.worst();
    println!(
        "\nworst: {} at {:.3e} (tolerance {GRADCHECK_TOL:e}) -> {}",
        worst.name,
        worst.max_rel_err,
        if report.all_within(GRADCHECK_TOL) { "ok" } else { "FAILED" }
    );
}
