//! Learned binary masks through a continuous sigmoid relaxation.
//!
//! Every prunable weight matrix theta carries a same-shaped tensor of mask
//! logits phi. The forward pass sees `theta * sigmoid(l_fwd * phi)` with a
//! sharp temperature, the backward pass differentiates the relaxation at a
//! smooth temperature, and a linear penalty drifts every logit downward at a
//! constant rate so that weights the task gradient does not defend get
//! pruned. Thresholding phi at zero yields the binary mask.
//!
//! Derivative convention: `masked_backward` returns the phi-gradient with
//! respect to the pre-sigmoid logit (no chain factor for the temperature),
//! i.e. `upstream * theta * s * (1 - s)` with `s = sigmoid(l_bwd * phi)`.
//! At `l_bwd = 1` this equals the plain derivative in phi.

use crate::error::{LabError, Result};
use crate::tape::sigmoid_scalar;
use crate::tensor::Tensor;

/// Hyperparameters of the mask optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct MsrsHyper {
    pub mu: f64,
    pub rho: f64,
    pub varsigma: f64,
    /// Pruning-speed penalty: per-step downward drift applied to every phi.
    pub lambda: f64,
    /// Stopping tolerance on the sparsity difference of consecutive masks.
    pub epsilon: f64,
    /// Forward (sharp) temperature.
    pub l_fwd: f64,
    /// Backward (smooth) temperature.
    pub l_bwd: f64,
    /// Cap on the number of joint-phase epochs.
    pub max_joint_epochs: usize,
}

impl Default for MsrsHyper {
    fn default() -> Self {
        MsrsHyper {
            mu: 1e-3,
            rho: 5e-4,
            varsigma: 1e-8,
            lambda: 2e-10,
            epsilon: 0.01,
            l_fwd: 1e5,
            l_bwd: 1.0,
            max_joint_epochs: 10,
        }
    }
}

impl MsrsHyper {
    pub fn validate(&self) -> Result<()> {
        if self.varsigma <= 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "varsigma must be positive, got {}",
                self.varsigma
            )));
        }
        if self.lambda < 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(LabError::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.l_bwd > 0.0 && self.l_fwd >= self.l_bwd) {
            return Err(LabError::InvalidArgument(format!(
                "temperatures need l_fwd >= l_bwd > 0, got l_fwd={} l_bwd={}",
                self.l_fwd, self.l_bwd
            )));
        }
        if self.max_joint_epochs == 0 {
            return Err(LabError::InvalidArgument(
                "max_joint_epochs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// |theta0| above which the initial logit is non-negative:
    /// solving `(ln(|t| + varsigma)/2 + 1) * rho + mu = 0` gives
    /// `|t| = exp(-2 (1 + mu/rho)) - varsigma`.
    pub fn phi_sign_threshold(&self) -> f64 {
        (-2.0 * (1.0 + self.mu / self.rho)).exp() - self.varsigma
    }
}

/// Logit initialization: `phi0 = (ln(|theta0| + varsigma)/2 + 1) * rho + mu`.
/// Small-magnitude weights start with negative logits, large ones positive.
pub fn init_phi(theta0: &Tensor, h: &MsrsHyper) -> Tensor {
    theta0.map(|t| ((t.abs() + h.varsigma).ln() / 2.0 + 1.0) * h.rho + h.mu)
}

/// Continuous mask `sigmoid(l * phi)`, entries in (0, 1).
pub fn relaxed_mask(phi: &Tensor, l: f64) -> Tensor {
    debug_assert!(l > 0.0);
    phi.map(|p| sigmoid_scalar(l * p))
}

/// A prunable weight matrix with its mask logits and the two temperatures.
#[derive(Debug, Clone)]
pub struct MaskedParameter {
    pub theta: Tensor,
    pub phi: Tensor,
    pub l_fwd: f64,
    pub l_bwd: f64,
}

impl MaskedParameter {
    /// Wrap initial weights, deriving phi from the logit initialization.
    pub fn new(theta: Tensor, h: &MsrsHyper) -> Self {
        let phi = init_phi(&theta, h);
        MaskedParameter {
            theta,
            phi,
            l_fwd: h.l_fwd,
            l_bwd: h.l_bwd,
        }
    }

    /// Forward-pass weights: `theta * sigmoid(l_fwd * phi)`.
    pub fn effective_weight(&self) -> Tensor {
        debug_assert!(self.theta.same_shape(&self.phi));
        self.theta
            .zip_map(&self.phi, "effective_weight", |t, p| {
                t * sigmoid_scalar(self.l_fwd * p)
            })
            .expect("theta and phi shapes are kept equal")
    }

    /// Two-temperature backward: from `upstream = dL/d(effective weight)`,
    /// produce the gradient for theta (through the sharp forward mask) and
    /// for phi (through the smooth backward sigmoid; see module docs for the
    /// temperature convention).
    pub fn masked_backward(&self, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
        if !upstream.same_shape(&self.theta) {
            return Err(LabError::shape(
                "masked_backward",
                format!(
                    "upstream {:?} vs parameter {:?}",
                    upstream.shape(),
                    self.theta.shape()
                ),
            ));
        }
        let grad_theta = upstream
            .zip_map(&self.phi, "masked_backward", |g, p| {
                g * sigmoid_scalar(self.l_fwd * p)
            })
            .expect("shapes checked");
        let mut grad_phi = upstream.clone();
        for ((g, &t), &p) in grad_phi
            .data_mut()
            .iter_mut()
            .zip(self.theta.data())
            .zip(self.phi.data())
        {
            let s = sigmoid_scalar(self.l_bwd * p);
            *g *= t * s * (1.0 - s);
        }
        Ok((grad_theta, grad_phi))
    }

    pub fn binarize(&self) -> BinaryMask {
        binarize(&self.phi)
    }
}

/// A {0,1} mask over one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl BinaryMask {
    pub fn ones(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        BinaryMask {
            shape: shape.to_vec(),
            keep: vec![true; n],
        }
    }

    pub fn from_keep(shape: &[usize], keep: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if keep.len() != n {
            return Err(LabError::shape(
                "binary_mask",
                format!("shape {shape:?} needs {n} entries, got {}", keep.len()),
            ));
        }
        Ok(BinaryMask {
            shape: shape.to_vec(),
            keep,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn keep_mut(&mut self) -> &mut [bool] {
        &mut self.keep
    }

    pub fn active_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn zero_count(&self) -> usize {
        self.len() - self.active_count()
    }

    /// Fraction of entries that are zero.
    pub fn sparsity(&self) -> f64 {
        self.zero_count() as f64 / self.len() as f64
    }

    /// Elementwise product with a tensor of the same shape.
    pub fn apply(&self, t: &Tensor) -> Result<Tensor> {
        if t.shape() != self.shape.as_slice() {
            return Err(LabError::shape(
                "mask_apply",
                format!("mask {:?} vs tensor {:?}", self.shape, t.shape()),
            ));
        }
        let mut out = t.clone();
        for (v, &k) in out.data_mut().iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    /// Mask entries as 0.0/1.0 values (checkpoint encoding).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            self.shape.clone(),
            self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect(),
        )
        .expect("lengths match by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        BinaryMask {
            shape: t.shape().to_vec(),
            keep: t.data().iter().map(|&v| v != 0.0).collect(),
        }
    }
}

/// Threshold logits at zero; the boundary `phi = 0` maps to 1.
pub fn binarize(phi: &Tensor) -> BinaryMask {
    BinaryMask {
        shape: phi.shape().to_vec(),
        keep: phi.data().iter().map(|&p| p >= 0.0).collect(),
    }
}

/// Zero fraction aggregated over a collection of masks.
pub fn global_sparsity(masks: &[BinaryMask]) -> Result<f64> {
    let total: usize = masks.iter().map(BinaryMask::len).sum();
    if total == 0 {
        return Err(LabError::InvalidArgument(
            "sparsity of an empty mask collection".into(),
        ));
    }
    let zeros: usize = masks.iter().map(BinaryMask::zero_count).sum();
    Ok(zeros as f64 / total as f64)
}

/// Sparsity difference and Hamming distance between two masks of equal shape.
pub fn mask_delta(prev: &BinaryMask, cur: &BinaryMask) -> Result<(f64, usize)> {
    if prev.shape != cur.shape {
        return Err(LabError::shape(
            "mask_delta",
            format!("{:?} vs {:?}", prev.shape, cur.shape),
        ));
    }
    let hamming = prev
        .keep
        .iter()
        .zip(&cur.keep)
        .filter(|(a, b)| a != b)
        .count();
    Ok(((cur.sparsity() - prev.sparsity()).abs(), hamming))
}

/// Sparsity difference and total Hamming distance across collections.
pub fn mask_collection_delta(prev: &[BinaryMask], cur: &[BinaryMask]) -> Result<(f64, usize)> {
    if prev.len() != cur.len() {
        return Err(LabError::shape(
            "mask_delta",
            format!("{} vs {} masks", prev.len(), cur.len()),
        ));
    }
    let mut hamming = 0;
    for (p, c) in prev.iter().zip(cur) {
        let (_, h) = mask_delta(p, c)?;
        hamming += h;
    }
    let diff = (global_sparsity(cur)? - global_sparsity(prev)?).abs();
    Ok((diff, hamming))
}

/// Penalty term `lambda * sum(phi)` over all logit tensors.
pub fn penalty_value(phis: &[&Tensor], lambda: f64) -> f64 {
    lambda * phis.iter().map(|p| p.sum()).sum::<f64>()
}

/// The penalty's gradient is the constant `lambda` per entry; it is applied
/// as a direct per-step decrement on phi after the optimizer step, keeping
/// the pruning speed independent of the adaptive learning rate.
pub fn apply_penalty_decrement(phi: &mut Tensor, lambda: f64) {
    for p in phi.data_mut() {
        *p -= lambda;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> MsrsHyper {
        MsrsHyper::default()
    }

    // Frozen from direct evaluation of the initialization formula with the
    // default hyperparameters.
    const PHI0_AT_ZERO: f64 = -3.105170185988092e-3;

    #[test]
    fn init_phi_worked_values() {
        let h = hyper();
        let theta = Tensor::new(vec![3], vec![0.0, 1.0, (-2.0f64).exp()]).unwrap();
        let phi = init_phi(&theta, &h);
        assert!((phi.data()[0] - PHI0_AT_ZERO).abs() < 1e-12);
        assert!((phi.data()[1] - 1.5e-3).abs() < 1e-9);
        assert!((phi.data()[2] - h.mu).abs() < 1e-9);
    }

    #[test]
    fn init_phi_monotone_in_magnitude() {
        let h = hyper();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..200 {
            let t = 1e-6 * (1.2f64).powi(k);
            let phi = init_phi(&Tensor::scalar(t), &h).item();
            assert!(phi > prev, "not monotone at |theta|={t}");
            prev = phi;
        }
        // Sign symmetry: only |theta| matters.
        let a = init_phi(&Tensor::scalar(-0.3), &h).item();
        let b = init_phi(&Tensor::scalar(0.3), &h).item();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_threshold_matches_closed_form() {
        let h = hyper();
        let thr = h.phi_sign_threshold();
        assert!((thr - (((-6.0f64).exp()) - 1e-8)).abs() < 1e-15);
        let below = init_phi(&Tensor::scalar(thr * (1.0 - 1e-6)), &h).item();
        let above = init_phi(&Tensor::scalar(thr * (1.0 + 1e-6)), &h).item();
        assert!(below < 0.0 && above >= 0.0);
    }

    #[test]
    fn relaxed_mask_values() {
        let phi = Tensor::new(vec![3], vec![0.0, 1e-4, -1e-4]).unwrap();
        let m = relaxed_mask(&phi, 1e5);
        assert_eq!(m.data()[0], 0.5);
        assert!((m.data()[1] - 0.9999546021312976).abs() < 1e-10);
        assert!((m.data()[2] - 4.5397868702434395e-5).abs() < 1e-12);
        // Overflow safety at extreme logits.
        let extreme = Tensor::new(vec![2], vec![10.0, -10.0]).unwrap();
        let m = relaxed_mask(&extreme, 1e5);
        assert_eq!(m.data()[0], 1.0);
        assert_eq!(m.data()[1], 0.0);
        assert!(m.is_finite());
    }

    #[test]
    fn relaxed_mask_monotone_and_bounded() {
        // Strict monotonicity where the sigmoid is representable; at extreme
        // logits f64 saturates to exactly 0 or 1, so only non-strict holds.
        for l in [0.5, 1.0, 10.0, 1e5] {
            let mut prev = -1.0;
            for k in -50..=50 {
                let x = l * k as f64 * 0.01;
                let v = sigmoid_scalar(x);
                if x.abs() < 30.0 {
                    assert!(v > prev);
                } else {
                    assert!(v >= prev);
                }
                assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn binarize_equals_half_thresholded_relaxation() {
        // sigmoid(l*phi) >= 0.5 iff phi >= 0, for every positive temperature.
        let mut rng = crate::rng::Rng::new(5);
        for _ in 0..100 {
            let phi = Tensor::uniform(&[4, 4], -0.5, 0.5, &mut rng);
            let mask = binarize(&phi);
            for l in [0.3, 1.0, 10.0, 1e5] {
                let relaxed = relaxed_mask(&phi, l);
                for (&r, &k) in relaxed.data().iter().zip(mask.keep()) {
                    assert_eq!(r >= 0.5, k);
                }
            }
        }
    }

    #[test]
    fn binarize_boundary_goes_to_one() {
        let phi = Tensor::new(vec![3], vec![0.0, -1e-12, 0.3]).unwrap();
        let m = binarize(&phi);
        assert_eq!(m.keep(), &[true, false, true]);
        let phi = Tensor::new(vec![3], vec![0.3, -0.2, 0.0]).unwrap();
        assert_eq!(binarize(&phi).keep(), &[true, false, true]);
    }

    #[test]
    fn effective_weight_values() {
        let h = hyper();
        let mp = MaskedParameter {
            theta: Tensor::new(vec![2], vec![2.0, -3.0]).unwrap(),
            phi: Tensor::new(vec![2], vec![1e-4, -1e-4]).unwrap(),
            l_fwd: 1e5,
            l_bwd: h.l_bwd,
        };
        let w = mp.effective_weight();
        assert!((w.data()[0] - 1.999_909_204_262_595).abs() < 1e-9);
        assert!((w.data()[1] - (-1.3619360610730319e-4)).abs() < 1e-12);

        // phi = 0 everywhere halves theta; theta = 0 stays zero.
        let mp = MaskedParameter {
            theta: Tensor::new(vec![2], vec![4.0, -1.0]).unwrap(),
            phi: Tensor::zeros(&[2]),
            l_fwd: 1e5,
            l_bwd: 1.0,
        };
        assert_eq!(mp.effective_weight().data(), &[2.0, -0.5]);
        let mp = MaskedParameter {
            theta: Tensor::zeros(&[3]),
            phi: Tensor::new(vec![3], vec![0.5, -0.5, 0.0]).unwrap(),
            l_fwd: 1e5,
            l_bwd: 1.0,
        };
        assert_eq!(mp.effective_weight().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_backward_worked_values() {
        let mp = MaskedParameter {
            theta: Tensor::scalar(2.0),
            phi: Tensor::scalar(0.0),
            l_fwd: 1.0,
            l_bwd: 1.0,
        };
        let (gt, gp) = mp.masked_backward(&Tensor::scalar(1.0)).unwrap();
        assert!((gp.item() - 0.5).abs() < 1e-15);
        assert!((gt.item() - 0.5).abs() < 1e-15);

        let (gt, gp) = mp.masked_backward(&Tensor::scalar(0.0)).unwrap();
        assert_eq!(gt.item(), 0.0);
        assert_eq!(gp.item(), 0.0);

        let mp = MaskedParameter {
            theta: Tensor::scalar(1.0),
            phi: Tensor::scalar(2.0),
            l_fwd: 1.0,
            l_bwd: 1.0,
        };
        let (_, gp) = mp.masked_backward(&Tensor::scalar(1.0)).unwrap();
        let s = sigmoid_scalar(2.0);
        assert!((gp.item() - s * (1.0 - s)).abs() < 1e-12);
        assert!((gp.item() - 0.10499358540350662).abs() < 1e-9);
    }

    #[test]
    fn masked_backward_rejects_shape_mismatch() {
        let mp = MaskedParameter {
            theta: Tensor::zeros(&[2, 2]),
            phi: Tensor::zeros(&[2, 2]),
            l_fwd: 1e5,
            l_bwd: 1.0,
        };
        assert!(mp.masked_backward(&Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn penalty_examples() {
        let phi1 = Tensor::new(vec![2], vec![1.0, -1.0]).unwrap();
        assert_eq!(penalty_value(&[&phi1], 0.5), 0.0);
        assert_eq!(penalty_value(&[&phi1], 0.0), 0.0);
        let phi2 = Tensor::new(vec![2], vec![0.01, 0.02]).unwrap();
        assert!((penalty_value(&[&phi2], 1e-3) - 3e-5).abs() < 1e-18);
    }

    #[test]
    fn penalty_drift_is_exactly_lambda_per_step() {
        let mut phi = Tensor::new(vec![2], vec![0.01, 0.02]).unwrap();
        apply_penalty_decrement(&mut phi, 1e-3);
        assert_eq!(phi.data(), &[0.01 - 1e-3, 0.02 - 1e-3]);
        // Sparsity under pure penalty flow is non-decreasing.
        let h = hyper();
        let mut phi = init_phi(
            &Tensor::new(vec![4], vec![0.5, 0.01, 0.002, 0.3]).unwrap(),
            &h,
        );
        let mut prev = binarize(&phi).sparsity();
        for _ in 0..2000 {
            apply_penalty_decrement(&mut phi, 1e-5);
            let s = binarize(&phi).sparsity();
            assert!(s >= prev);
            prev = s;
        }
        assert_eq!(prev, 1.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Thresholding the relaxed mask at one half equals binarizing
            /// the logits, for every positive temperature.
            #[test]
            fn binarize_is_half_threshold(phi in -5.0f64..5.0, l in 1e-3f64..1e6) {
                let relaxed = sigmoid_scalar(l * phi);
                prop_assert_eq!(relaxed >= 0.5, phi >= 0.0);
            }

            /// The logit initialization is monotone in |theta|.
            #[test]
            fn init_monotone_in_magnitude(a in 0.0f64..10.0, b in 0.0f64..10.0) {
                prop_assume!(a < b);
                let h = MsrsHyper::default();
                let pa = init_phi(&Tensor::scalar(a), &h).item();
                let pb = init_phi(&Tensor::scalar(b), &h).item();
                prop_assert!(pa < pb);
            }
        }
    }

    #[test]
    fn sparsity_examples() {
        let all_ones = BinaryMask::ones(&[5]);
        assert_eq!(all_ones.sparsity(), 0.0);
        let m = BinaryMask::from_keep(&[4], vec![true, false, false, true]).unwrap();
        assert_eq!(m.sparsity(), 0.5);
        // Weighted aggregation: sizes 10 and 90 with 5 and 45 zeros.
        let mut a = BinaryMask::ones(&[10]);
        a.keep_mut()[..5].fill(false);
        let mut b = BinaryMask::ones(&[90]);
        b.keep_mut()[..45].fill(false);
        assert_eq!(global_sparsity(&[a, b]).unwrap(), 0.5);
        assert!(global_sparsity(&[]).is_err());
    }

    #[test]
    fn mask_delta_examples() {
        let a = BinaryMask::from_keep(&[4], vec![true, true, false, false]).unwrap();
        assert_eq!(mask_delta(&a, &a).unwrap(), (0.0, 0));
        let b = BinaryMask::from_keep(&[4], vec![true, false, false, false]).unwrap();
        let (d, ham) = mask_delta(&a, &b).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert_eq!(ham, 1);
        let c = BinaryMask::ones(&[5]);
        assert!(mask_delta(&a, &c).is_err());
        // Sparsity diff below the default epsilon satisfies the criterion.
        assert!(0.005 < hyper().epsilon);
    }
}
