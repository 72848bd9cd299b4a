//! Erdos-Renyi(-Kernel) sparsity allocation: larger layers take more of the
//! pruning, and the global nonzero budget lands on target.
//!
//! ```text
//! cargo run --example erk_masks
//! ```

use msrs_lab::mask::BinaryMask;
use msrs_lab::sparse::{erk_densities, erk_init, LayerShape};

fn main() {
    let inv = vec![
        LayerShape { name: "in_proj.w".into(), fan_in: 16, fan_out: 128 },
        LayerShape { name: "block.w1".into(), fan_in: 128, fan_out: 128 },
        LayerShape { name: "block.w2".into(), fan_in: 128, fan_out: 128 },
        LayerShape { name: "head.w".into(), fan_in: 128, fan_out: 10 },
    ];
    let target = 0.8;
    let densities = erk_densities(&inv, target).expect("solvable");
    let masks = erk_init(&inv, target, 42).expect("masks sample");

    println!("target sparsity {target}");
    println!("{:<12} {:>8} {:>9} {:>9}", "layer", "params", "density", "sparsity");
    for ((layer, d), mask) in inv.iter().zip(&densities).zip(&masks) {
        println!(
            "{:<12} {:>8} {:>9.4} {:>9.4}",
            layer.name,
            layer.params(),
            d,
            mask.sparsity()
        );
    }
    let total: usize = inv.iter().map(LayerShape::params).sum();
    let active: usize = masks.iter().map(BinaryMask::active_count).sum();
    println!(
        "global: {} of {} active ({:.4} sparsity)",
        active,
        total,
        1.0 - active as f64 / total as f64
    );
}
