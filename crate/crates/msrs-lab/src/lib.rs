//! Desk-scale sparse-training laboratory.
//!
//! The centerpiece is MSRS-style mask optimization: every prunable weight
//! matrix carries continuous mask logits, trained jointly with the weights
//! through a two-temperature sigmoid relaxation (sharp forward, smooth
//! backward) under a linear penalty that prunes whatever the task gradient
//! does not defend. Once consecutive binary masks agree in sparsity, the
//! model condenses and training continues densely or with the masked
//! weights frozen at exactly zero.
//!
//! Around that core sit the baselines it is usually compared against -
//! gradual magnitude pruning, SET and RigL prune-and-grow with ERK
//! initialization, and a gradient-masking probe - plus a minimal f64
//! reverse-mode autodiff engine, deterministic synthetic tasks, per-layer
//! gradient-norm instrumentation, and a finite-difference oracle that
//! checks every backward rule.
//!
//! Start with the runnable examples (`cargo run --example gradcheck`,
//! `two_phase_walkthrough`, `compare_methods`, ...) or the `msrs-lab`
//! binary (`train`, `sweep`, `gradcheck`, `report`, `compare`).

pub mod checkpoint;
pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod rng;
pub mod sparse;
pub mod tape;
pub mod tasks;
pub mod tensor;
pub mod train;
