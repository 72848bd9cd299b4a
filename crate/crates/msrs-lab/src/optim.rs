//! AdamW with decoupled weight decay, a warmup+cosine schedule, and
//! global-norm gradient clipping. Two independent optimizer states are kept
//! during joint training: one for the weights, one for the mask logits.

use crate::error::{LabError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptKind {
    AdamW,
    /// Plain gradient descent; exposes the raw update rule for unit tests.
    Sgd,
}

impl OptKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(OptKind::AdamW),
            "sgd" => Ok(OptKind::Sgd),
            other => Err(LabError::Config(format!(
                "unknown optimizer '{other}' (expected adamw|sgd)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptKind::AdamW => "adamw",
            OptKind::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub optimizer: OptKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr_theta: f64,
    pub peak_lr_phi: f64,
    pub clip_norm: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            optimizer: OptKind::AdamW,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            peak_lr_theta: 6e-4,
            peak_lr_phi: 6e-4,
            clip_norm: 5.0,
            warmup_epochs: 1,
            total_epochs: 30,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(LabError::InvalidArgument(format!(
                    "{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if self.clip_norm <= 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 || self.total_epochs == 0 {
            return Err(LabError::InvalidArgument(
                "batch_size and total_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment accumulators for one optimizer.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m = Tensor::zeros(self.m.shape());
        self.v = Tensor::zeros(self.v.shape());
        self.step = 0;
    }

    /// Zero the moments of one entry (used when a prune/grow event changes
    /// which positions are active).
    pub fn reset_entry(&mut self, i: usize) {
        self.m.data_mut()[i] = 0.0;
        self.v.data_mut()[i] = 0.0;
    }
}

/// One decoupled-weight-decay AdamW step with bias correction. Entries whose
/// `freeze` mask is 0 receive neither the update nor the decay, which keeps
/// masked-out weights bit-exact at their current value.
#[allow(clippy::too_many_arguments)]
pub fn adamw_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    freeze: Option<&BinaryMask>,
) -> Result<()> {
    if !param.same_shape(grad) {
        return Err(LabError::shape(
            "adamw_step",
            format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        ));
    }
    if !grad.is_finite() {
        return Err(LabError::InvalidArgument(
            "non-finite gradient reached the optimizer".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let keep = freeze.map(BinaryMask::keep);
    for i in 0..param.len() {
        if let Some(k) = keep {
            if !k[i] {
                continue;
            }
        }
        let g = grad.data()[i];
        let m = &mut state.m.data_mut()[i];
        *m = beta1 * *m + (1.0 - beta1) * g;
        let mhat = *m / bc1;
        let v = &mut state.v.data_mut()[i];
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let vhat = *v / bc2;
        let p = &mut param.data_mut()[i];
        *p -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *p);
    }
    Ok(())
}

/// Plain SGD step with the same freeze semantics.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    lr: f64,
    freeze: Option<&BinaryMask>,
) -> Result<()> {
    if !param.same_shape(grad) {
        return Err(LabError::shape(
            "sgd_step",
            format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        ));
    }
    let keep = freeze.map(BinaryMask::keep);
    for i in 0..param.len() {
        if let Some(k) = keep {
            if !k[i] {
                continue;
            }
        }
        param.data_mut()[i] -= lr * grad.data()[i];
    }
    Ok(())
}

/// Linear warmup to `peak` over `warmup_steps`, then cosine decay to zero at
/// `total_steps`.
pub fn lr_schedule(step: usize, warmup_steps: usize, total_steps: usize, peak: f64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return peak;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    let progress = progress.min(1.0);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale all gradients by `clip_norm / g` when their joint L2 norm `g`
/// exceeds `clip_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [&mut Tensor], clip_norm: f64) -> f64 {
    let total: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = total.sqrt();
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_zero_decay_leaves_param() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[3]);
        let before = p.clone();
        adamw_step(&mut p, &g, &mut st, 1e-3, 0.9, 0.98, 1e-8, 0.0, None).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        // Bias correction makes the first update lr * g/(|g| + eps').
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(0.5);
        let mut st = AdamState::new(&[1]);
        adamw_step(&mut p, &g, &mut st, 1e-3, 0.9, 0.98, 1e-8, 0.0, None).unwrap();
        assert!((p.item() + 1e-3).abs() < 1e-7, "got {}", p.item());
    }

    #[test]
    fn decoupled_decay_shrinks_exactly() {
        let mut p = Tensor::scalar(2.0);
        let g = Tensor::scalar(0.0);
        let mut st = AdamState::new(&[1]);
        adamw_step(&mut p, &g, &mut st, 0.1, 0.9, 0.98, 1e-8, 0.01, None).unwrap();
        assert_eq!(p.item(), 2.0 - 0.1 * 0.01 * 2.0);
    }

    #[test]
    fn frozen_entries_never_move() {
        let mut p = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let g = Tensor::new(vec![2], vec![0.7, 0.7]).unwrap();
        let mut st = AdamState::new(&[2]);
        let freeze = BinaryMask::from_keep(&[2], vec![false, true]).unwrap();
        for _ in 0..10 {
            adamw_step(&mut p, &g, &mut st, 1e-2, 0.9, 0.98, 1e-8, 0.1, Some(&freeze)).unwrap();
        }
        assert_eq!(p.data()[0], 1.0);
        assert!(p.data()[1] < 1.0);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let peak = 6e-4;
        assert_eq!(lr_schedule(0, 10, 100, peak), 0.0);
        assert_eq!(lr_schedule(10, 10, 100, peak), peak);
        // Halfway through the cosine segment: cos(pi/2) = 0 -> peak/2.
        let mid = (100 + 10) / 2;
        assert!((lr_schedule(mid, 10, 100, peak) - peak / 2.0).abs() < 1e-12);
        // Past the end the schedule stays at zero.
        assert!(lr_schedule(100, 10, 100, peak).abs() < 1e-19);
        assert!(lr_schedule(140, 10, 100, peak).abs() < 1e-19);
        // Zero warmup starts at the peak.
        assert_eq!(lr_schedule(0, 0, 100, peak), peak);
    }

    #[test]
    fn clip_examples() {
        let mut a = Tensor::new(vec![1], vec![3.0]).unwrap();
        let norm = clip_global_norm(&mut [&mut a], 5.0);
        assert_eq!(norm, 3.0);
        assert_eq!(a.item(), 3.0);

        let mut b = Tensor::new(vec![2], vec![6.0, 8.0]).unwrap();
        let norm = clip_global_norm(&mut [&mut b], 5.0);
        assert_eq!(norm, 10.0);
        assert_eq!(b.data(), &[3.0, 4.0]);

        // Post-clip norm never exceeds the bound.
        let mut rng = crate::rng::Rng::new(3);
        for _ in 0..50 {
            let mut x = Tensor::uniform(&[5], -10.0, 10.0, &mut rng);
            let mut y = Tensor::uniform(&[7], -10.0, 10.0, &mut rng);
            let before_x = x.clone();
            clip_global_norm(&mut [&mut x, &mut y], 5.0);
            let post = (x.data().iter().map(|v| v * v).sum::<f64>()
                + y.data().iter().map(|v| v * v).sum::<f64>())
            .sqrt();
            assert!(post <= 5.0 + 1e-12);
            // Clipping never grows a coordinate.
            for (u, w) in before_x.data().iter().zip(x.data()) {
                assert!(w.abs() <= u.abs() + 1e-15);
            }
        }
    }

    #[test]
    fn grad_norm_probe_three_four_five() {
        let g = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        assert_eq!(g.l2_norm(), 5.0);
    }
}
