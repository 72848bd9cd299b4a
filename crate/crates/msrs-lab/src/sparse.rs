//! Baseline sparse-training machinery: ERK initialization, the cubic
//! gradual-magnitude-pruning schedule, magnitude pruning, SET/RigL
//! prune-and-grow events, and the condensation step that turns stabilized
//! mask logits into a fixed sparse (or dense) continuation.

use crate::error::{LabError, Result};
use crate::mask::BinaryMask;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dense,
    Msrs,
    Gmp,
    Set,
    Rigl,
    DenseMaskedGrads,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Method::Dense),
            "msrs" => Ok(Method::Msrs),
            "gmp" => Ok(Method::Gmp),
            "set" => Ok(Method::Set),
            "rigl" => Ok(Method::Rigl),
            "dense_masked_grads" => Ok(Method::DenseMaskedGrads),
            other => Err(LabError::Config(format!(
                "unknown method '{other}' (expected dense|msrs|gmp|set|rigl|dense_masked_grads)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Msrs => "msrs",
            Method::Gmp => "gmp",
            Method::Set => "set",
            Method::Rigl => "rigl",
            Method::DenseMaskedGrads => "dense_masked_grads",
        }
    }

    pub fn all() -> [Method; 6] {
        [
            Method::Dense,
            Method::Msrs,
            Method::Gmp,
            Method::Set,
            Method::Rigl,
            Method::DenseMaskedGrads,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneScope {
    PerLayer,
    Global,
}

impl PruneScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-layer" => Ok(PruneScope::PerLayer),
            "global" => Ok(PruneScope::Global),
            other => Err(LabError::Config(format!(
                "unknown prune scope '{other}' (expected per-layer|global)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PruneScope::PerLayer => "per-layer",
            PruneScope::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMethodConfig {
    pub method: Method,
    /// Final sparsity for gmp/set/rigl. Ignored for msrs, whose sparsity
    /// emerges from the penalty rather than a set target.
    pub target_sparsity: f64,
    /// Fraction zeta of active weights cycled per prune/grow event.
    pub prune_grow_fraction: f64,
    /// Steps between prune/grow (set/rigl) or schedule (gmp) events.
    pub update_interval: usize,
    /// Cosine-decay zeta to zero over the run (set/rigl).
    pub zeta_decay: bool,
    pub scope: PruneScope,
    /// After the joint phase: true resumes dense training, false keeps the
    /// masked weights at exactly zero.
    pub dense_after: bool,
}

impl Default for SparseMethodConfig {
    fn default() -> Self {
        SparseMethodConfig {
            method: Method::Dense,
            target_sparsity: 0.4,
            prune_grow_fraction: 0.3,
            update_interval: 100,
            zeta_decay: true,
            scope: PruneScope::PerLayer,
            dense_after: false,
        }
    }
}

impl SparseMethodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(LabError::InvalidArgument(format!(
                "target_sparsity must be in [0, 1), got {}",
                self.target_sparsity
            )));
        }
        if !(0.0..=1.0).contains(&self.prune_grow_fraction) {
            return Err(LabError::InvalidArgument(format!(
                "prune_grow_fraction must be in [0, 1], got {}",
                self.prune_grow_fraction
            )));
        }
        if self.update_interval == 0 {
            return Err(LabError::InvalidArgument(
                "update_interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Shape bookkeeping for the prunable layers of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerShape {
    pub fn params(&self) -> usize {
        self.fan_in * self.fan_out
    }
}

pub type LayerShapeInventory = Vec<LayerShape>;

/// Erdos-Renyi(-Kernel) initialization: layer densities proportional to
/// `(fan_in + fan_out) / (fan_in * fan_out)`, scaled so the global nonzero
/// count hits the target. Layers whose proportional density exceeds 1 are
/// fixed dense and the constant is re-solved over the rest. Active positions
/// are chosen uniformly at random per layer.
pub fn erk_init(
    inv: &LayerShapeInventory,
    target_sparsity: f64,
    rng_seed: u64,
) -> Result<Vec<BinaryMask>> {
    let densities = erk_densities(inv, target_sparsity)?;
    let root = Rng::new(rng_seed);
    let mut masks = Vec::with_capacity(inv.len());
    for (i, layer) in inv.iter().enumerate() {
        let params = layer.params();
        let active = (densities[i] * params as f64).round() as usize;
        let active = active.min(params);
        let mut keep = vec![false; params];
        let mut rng = root.derive(&layer.name, i as u64);
        for idx in rng.choose_indices(params, active) {
            keep[idx] = true;
        }
        masks.push(BinaryMask::from_keep(&[layer.fan_in, layer.fan_out], keep)?);
    }
    Ok(masks)
}

/// The continuous layer densities ERK assigns (before per-layer rounding).
pub fn erk_densities(inv: &LayerShapeInventory, target_sparsity: f64) -> Result<Vec<f64>> {
    if inv.is_empty() {
        return Err(LabError::InvalidArgument("empty layer inventory".into()));
    }
    if !(0.0..1.0).contains(&target_sparsity) {
        return Err(LabError::InvalidArgument(format!(
            "target_sparsity must be in [0, 1), got {target_sparsity}"
        )));
    }
    let total: usize = inv.iter().map(LayerShape::params).sum();
    let target_nonzeros = (1.0 - target_sparsity) * total as f64;

    // Solve for the proportionality constant, capping saturated layers and
    // re-solving over the remainder until the assignment is feasible.
    let mut capped = vec![false; inv.len()];
    let mut densities = vec![0.0f64; inv.len()];
    loop {
        let capped_params: f64 = inv
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| c)
            .map(|(l, _)| l.params() as f64)
            .sum();
        let uncapped_weight: f64 = inv
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(l, _)| (l.fan_in + l.fan_out) as f64)
            .sum();
        if uncapped_weight == 0.0 {
            if capped_params + 0.5 < target_nonzeros {
                return Err(LabError::InvalidArgument(format!(
                    "infeasible ERK target: {target_nonzeros:.0} nonzeros need density > 1 everywhere"
                )));
            }
            break;
        }
        let c = (target_nonzeros - capped_params) / uncapped_weight;
        let mut newly_capped = false;
        for (i, layer) in inv.iter().enumerate() {
            if capped[i] {
                densities[i] = 1.0;
                continue;
            }
            let d = c * (layer.fan_in + layer.fan_out) as f64 / layer.params() as f64;
            if d > 1.0 {
                capped[i] = true;
                newly_capped = true;
            } else {
                densities[i] = d.max(0.0);
            }
        }
        if !newly_capped {
            break;
        }
    }
    Ok(densities)
}

/// Cubic sparsity schedule: `s_t = s_f + (s_i - s_f) (1 - (t-t0)/span)^3`,
/// clamped to the window endpoints outside `[t0, t0 + span]`.
pub fn gmp_schedule(step: usize, start: usize, span: usize, s_initial: f64, s_final: f64) -> f64 {
    if span == 0 || step <= start {
        return if step < start { s_initial } else if span == 0 { s_final } else { s_initial };
    }
    let t = (step - start).min(span) as f64 / span as f64;
    let keep = 1.0 - t;
    s_final + (s_initial - s_final) * keep * keep * keep
}

/// Zero the `round(target * count)` smallest-magnitude entries, per layer or
/// across the concatenation of all layers. Ties break toward the lower flat
/// index (lower layer index first for global scope).
pub fn magnitude_prune(
    weights: &[&Tensor],
    target_sparsity: f64,
    scope: PruneScope,
) -> Result<Vec<BinaryMask>> {
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(LabError::InvalidArgument(format!(
            "target_sparsity must be in [0, 1], got {target_sparsity}"
        )));
    }
    match scope {
        PruneScope::PerLayer => weights
            .iter()
            .map(|w| {
                let k = (target_sparsity * w.len() as f64).round() as usize;
                Ok(prune_k_smallest(w, k))
            })
            .collect(),
        PruneScope::Global => {
            let total: usize = weights.iter().map(|w| w.len()).sum();
            let k = (target_sparsity * total as f64).round() as usize;
            let mut order: Vec<(usize, usize)> = Vec::with_capacity(total);
            for (li, w) in weights.iter().enumerate() {
                for i in 0..w.len() {
                    order.push((li, i));
                }
            }
            order.sort_by(|&(la, ia), &(lb, ib)| {
                let va = weights[la].data()[ia].abs();
                let vb = weights[lb].data()[ib].abs();
                va.total_cmp(&vb).then(la.cmp(&lb)).then(ia.cmp(&ib))
            });
            let mut keeps: Vec<Vec<bool>> =
                weights.iter().map(|w| vec![true; w.len()]).collect();
            for &(li, i) in order.iter().take(k.min(total)) {
                keeps[li][i] = false;
            }
            weights
                .iter()
                .zip(keeps)
                .map(|(w, keep)| BinaryMask::from_keep(w.shape(), keep))
                .collect()
        }
    }
}

fn prune_k_smallest(w: &Tensor, k: usize) -> BinaryMask {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        w.data()[a]
            .abs()
            .total_cmp(&w.data()[b].abs())
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; w.len()];
    for &i in order.iter().take(k.min(w.len())) {
        keep[i] = false;
    }
    BinaryMask::from_keep(w.shape(), keep).expect("lengths match")
}

/// Outcome of a prune/grow event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneGrowOutcome {
    pub mask: BinaryMask,
    /// Requested growth that could not be honored (no inactive slots left).
    pub shortfall: usize,
}

/// SET update: prune `round(zeta * active)` smallest-magnitude active
/// weights, grow the same number of inactive positions uniformly at random.
/// The active count is conserved exactly unless fewer inactive slots exist,
/// in which case the shortfall is reported.
pub fn set_prune_grow(
    weights: &Tensor,
    mask: &BinaryMask,
    zeta: f64,
    rng: &mut Rng,
) -> Result<PruneGrowOutcome> {
    prune_grow(weights, mask, zeta, GrowRule::Random(rng))
}

/// RigL update: prune as SET, grow at the inactive positions with the
/// largest dense-gradient magnitude (ties toward the lower flat index).
pub fn rigl_prune_grow(
    weights: &Tensor,
    dense_grads: &Tensor,
    mask: &BinaryMask,
    zeta: f64,
) -> Result<PruneGrowOutcome> {
    if !weights.same_shape(dense_grads) {
        return Err(LabError::shape(
            "rigl_prune_grow",
            format!("{:?} vs {:?}", weights.shape(), dense_grads.shape()),
        ));
    }
    prune_grow(weights, mask, zeta, GrowRule::ByGradient(dense_grads))
}

enum GrowRule<'a> {
    Random(&'a mut Rng),
    ByGradient(&'a Tensor),
}

fn prune_grow(
    weights: &Tensor,
    mask: &BinaryMask,
    zeta: f64,
    rule: GrowRule,
) -> Result<PruneGrowOutcome> {
    if weights.shape() != mask.shape() {
        return Err(LabError::shape(
            "prune_grow",
            format!("{:?} vs {:?}", weights.shape(), mask.shape()),
        ));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(LabError::InvalidArgument(format!(
            "zeta must be in [0, 1], got {zeta}"
        )));
    }
    let active: Vec<usize> = (0..mask.len()).filter(|&i| mask.keep()[i]).collect();
    if active.is_empty() {
        return Err(LabError::InvalidArgument(
            "prune/grow needs at least one active entry".into(),
        ));
    }
    let k = (zeta * active.len() as f64).round() as usize;
    let mut keep = mask.keep().to_vec();
    if k == 0 {
        return Ok(PruneGrowOutcome {
            mask: BinaryMask::from_keep(mask.shape(), keep)?,
            shortfall: 0,
        });
    }

    // Prune the k smallest-magnitude active weights.
    let mut by_magnitude = active.clone();
    by_magnitude.sort_by(|&a, &b| {
        weights.data()[a]
            .abs()
            .total_cmp(&weights.data()[b].abs())
            .then(a.cmp(&b))
    });
    for &i in by_magnitude.iter().take(k) {
        keep[i] = false;
    }

    // Inactive positions prior to this event are the growth candidates.
    let candidates: Vec<usize> = (0..mask.len()).filter(|&i| !mask.keep()[i]).collect();
    let grow_n = k.min(candidates.len());
    let shortfall = k - grow_n;
    match rule {
        GrowRule::Random(rng) => {
            for pick in rng.choose_indices(candidates.len(), grow_n) {
                keep[candidates[pick]] = true;
            }
        }
        GrowRule::ByGradient(grads) => {
            let mut by_grad = candidates.clone();
            by_grad.sort_by(|&a, &b| {
                grads.data()[b]
                    .abs()
                    .total_cmp(&grads.data()[a].abs())
                    .then(a.cmp(&b))
            });
            for &i in by_grad.iter().take(grow_n) {
                keep[i] = true;
            }
        }
    }

    Ok(PruneGrowOutcome {
        mask: BinaryMask::from_keep(mask.shape(), keep)?,
        shortfall,
    })
}

/// Condensation: weights entering the continuation phase are
/// `theta_j * m` per layer. Newly grown SET/RigL weights and pruned entries
/// are exactly zero afterwards.
pub fn condense(theta: &Tensor, mask: &BinaryMask) -> Result<Tensor> {
    mask.apply(theta)
}

/// Gradient masking for the sparse continuation: masked-out weights receive
/// zero gradient, so together with masked decay they stay at exactly zero.
pub fn sparse_continue_step(grads: &mut [Tensor], masks: &[&BinaryMask]) -> Result<()> {
    if grads.len() != masks.len() {
        return Err(LabError::shape(
            "sparse_continue_step",
            format!("{} grads vs {} masks", grads.len(), masks.len()),
        ));
    }
    for (g, m) in grads.iter_mut().zip(masks) {
        *g = m.apply(g)?;
    }
    Ok(())
}

/// The gradient-masking probe: multiply gradients by a fixed mask while the
/// weights themselves stay dense.
pub fn dense_masked_grads_step(grads: &mut [Tensor], masks: &[&BinaryMask]) -> Result<()> {
    sparse_continue_step(grads, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(name: &str, fan_in: usize, fan_out: usize) -> LayerShape {
        LayerShape {
            name: name.into(),
            fan_in,
            fan_out,
        }
    }

    #[test]
    fn erk_single_layer_density_is_target() {
        let inv = vec![layer("only", 20, 30)];
        let masks = erk_init(&inv, 0.25, 7).unwrap();
        let m = &masks[0];
        assert_eq!(m.active_count(), (0.75f64 * 600.0).round() as usize);
    }

    #[test]
    fn erk_worked_two_layer_example() {
        // Layers 100x100 and 10x10 at target sparsity 0.9:
        // c = 1010/220, densities (0.091818..., 0.91818...), nonzeros 918+92.
        let inv = vec![layer("a", 100, 100), layer("b", 10, 10)];
        let d = erk_densities(&inv, 0.9).unwrap();
        assert!((d[0] - 0.0918181818).abs() < 1e-6, "d0 = {}", d[0]);
        assert!((d[1] - 0.9181818181).abs() < 1e-6, "d1 = {}", d[1]);
        let masks = erk_init(&inv, 0.9, 42).unwrap();
        assert_eq!(masks[0].active_count(), 918);
        assert_eq!(masks[1].active_count(), 92);
        let total_active: usize = masks.iter().map(BinaryMask::active_count).sum();
        assert_eq!(total_active, 1010);
    }

    #[test]
    fn erk_zero_sparsity_is_dense() {
        let inv = vec![layer("a", 4, 4), layer("b", 3, 5)];
        let masks = erk_init(&inv, 0.0, 1).unwrap();
        for m in &masks {
            assert_eq!(m.sparsity(), 0.0);
        }
    }

    #[test]
    fn erk_caps_small_layers_dense() {
        // A tiny layer saturates at density 1; the big layer absorbs the rest.
        let inv = vec![layer("big", 100, 100), layer("tiny", 2, 2)];
        let masks = erk_init(&inv, 0.5, 3).unwrap();
        assert_eq!(masks[1].sparsity(), 0.0);
        let total: usize = masks.iter().map(BinaryMask::len).sum();
        let active: usize = masks.iter().map(BinaryMask::active_count).sum();
        let target = (0.5 * total as f64).round() as usize;
        assert!((active as i64 - target as i64).unsigned_abs() <= inv.len() as u64);
    }

    #[test]
    fn erk_densities_proportional_among_uncapped() {
        let inv = vec![layer("a", 64, 32), layer("b", 32, 32), layer("c", 16, 48)];
        let d = erk_densities(&inv, 0.8).unwrap();
        let ratio = |l: &LayerShape| (l.fan_in + l.fan_out) as f64 / l.params() as f64;
        let c0 = d[0] / ratio(&inv[0]);
        for (di, li) in d.iter().zip(&inv) {
            if *di < 1.0 {
                assert!((di / ratio(li) - c0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn erk_deterministic_per_seed() {
        let inv = vec![layer("a", 30, 20), layer("b", 10, 10)];
        assert_eq!(erk_init(&inv, 0.7, 5).unwrap(), erk_init(&inv, 0.7, 5).unwrap());
        assert_ne!(erk_init(&inv, 0.7, 5).unwrap(), erk_init(&inv, 0.7, 6).unwrap());
    }

    #[test]
    fn gmp_schedule_endpoints_and_midpoint() {
        assert_eq!(gmp_schedule(100, 100, 1000, 0.0, 0.4), 0.0);
        assert_eq!(gmp_schedule(1100, 100, 1000, 0.0, 0.4), 0.4);
        // Halfway: 0.4 * (1 - 0.125) = 0.35.
        let mid = gmp_schedule(600, 100, 1000, 0.0, 0.4);
        assert!((mid - 0.35).abs() < 1e-12);
        // Clamped outside the window.
        assert_eq!(gmp_schedule(0, 100, 1000, 0.0, 0.4), 0.0);
        assert_eq!(gmp_schedule(5000, 100, 1000, 0.0, 0.4), 0.4);
    }

    #[test]
    fn gmp_schedule_monotone() {
        let mut prev = -1.0;
        for t in 0..2000 {
            let s = gmp_schedule(t, 100, 1000, 0.0, 0.4);
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn magnitude_prune_examples() {
        let w = Tensor::new(vec![4], vec![0.9, -0.05, 0.4, 0.01]).unwrap();
        let masks = magnitude_prune(&[&w], 0.5, PruneScope::PerLayer).unwrap();
        assert_eq!(masks[0].keep(), &[true, false, true, false]);

        let masks = magnitude_prune(&[&w], 0.0, PruneScope::PerLayer).unwrap();
        assert_eq!(masks[0].sparsity(), 0.0);

        // Ties break at the lowest flat index.
        let w = Tensor::new(vec![3], vec![0.5, 0.5, 0.5]).unwrap();
        let masks = magnitude_prune(&[&w], 1.0 / 3.0, PruneScope::PerLayer).unwrap();
        assert_eq!(masks[0].keep(), &[false, true, true]);
    }

    #[test]
    fn magnitude_prune_global_scope() {
        let a = Tensor::new(vec![2], vec![0.9, 0.001]).unwrap();
        let b = Tensor::new(vec![2], vec![0.002, 0.8]).unwrap();
        let masks = magnitude_prune(&[&a, &b], 0.5, PruneScope::Global).unwrap();
        assert_eq!(masks[0].keep(), &[true, false]);
        assert_eq!(masks[1].keep(), &[false, true]);
    }

    #[test]
    fn gmp_masks_nested_under_frozen_weights() {
        let mut rng = Rng::new(12);
        let w = Tensor::uniform(&[8, 8], -1.0, 1.0, &mut rng);
        let mut prev_active: Option<Vec<bool>> = None;
        for event in 0..10 {
            let s = gmp_schedule(event * 10, 0, 90, 0.0, 0.6);
            let mask = &magnitude_prune(&[&w], s, PruneScope::PerLayer).unwrap()[0];
            if let Some(prev) = &prev_active {
                for (now, before) in mask.keep().iter().zip(prev) {
                    assert!(*before || !*now, "active set must shrink");
                }
            }
            prev_active = Some(mask.keep().to_vec());
        }
    }

    #[test]
    fn set_example_and_conservation() {
        // Active weights 0.9, -0.05, 0.4, 0.01; two inactive slots.
        let w = Tensor::new(vec![6], vec![0.9, -0.05, 0.4, 0.01, 0.0, 0.0]).unwrap();
        let mask =
            BinaryMask::from_keep(&[6], vec![true, true, true, true, false, false]).unwrap();
        let mut rng = Rng::new(4);
        let out = set_prune_grow(&w, &mask, 0.5, &mut rng).unwrap();
        assert_eq!(out.shortfall, 0);
        // Positions of -0.05 and 0.01 pruned; both spare slots grown.
        assert!(!out.mask.keep()[1]);
        assert!(!out.mask.keep()[3]);
        assert!(out.mask.keep()[4] && out.mask.keep()[5]);
        assert_eq!(out.mask.active_count(), mask.active_count());

        // zeta = 0 leaves the mask unchanged.
        let out = set_prune_grow(&w, &mask, 0.0, &mut rng).unwrap();
        assert_eq!(out.mask, mask);
    }

    #[test]
    fn set_reports_shortfall() {
        let w = Tensor::new(vec![3], vec![0.5, 0.2, 0.8]).unwrap();
        let mask = BinaryMask::ones(&[3]);
        let mut rng = Rng::new(1);
        // Want to cycle 2 of 3 active, but no inactive slots exist.
        let out = set_prune_grow(&w, &mask, 0.67, &mut rng).unwrap();
        assert_eq!(out.shortfall, 2);
        assert_eq!(out.mask.active_count(), 1);
    }

    #[test]
    fn rigl_grows_highest_gradient() {
        let w = Tensor::new(vec![5], vec![0.9, 0.01, 0.0, 0.0, 0.0]).unwrap();
        let g = Tensor::new(vec![5], vec![0.0, 0.0, 0.1, 0.9, 0.5]).unwrap();
        let mask =
            BinaryMask::from_keep(&[5], vec![true, true, false, false, false]).unwrap();
        let out = rigl_prune_grow(&w, &g, &mask, 0.5).unwrap();
        // k = 1: prune the 0.01, grow the |grad|=0.9 position.
        assert_eq!(
            out.mask.keep(),
            &[true, false, false, true, false],
            "prune smallest |w|, grow largest |grad|"
        );
        assert_eq!(out.mask.active_count(), 2);
    }

    #[test]
    fn rigl_gradient_ties_break_low_index() {
        let w = Tensor::new(vec![4], vec![0.9, 0.5, 0.0, 0.0]).unwrap();
        let g = Tensor::full(&[4], 0.3);
        let mask = BinaryMask::from_keep(&[4], vec![true, true, false, false]).unwrap();
        let out = rigl_prune_grow(&w, &g, &mask, 0.5).unwrap();
        assert_eq!(out.mask.keep(), &[true, false, true, false]);
    }

    #[test]
    fn prune_grow_popcount_conserved_over_events() {
        let mut rng = Rng::new(99);
        let w = Tensor::uniform(&[16, 16], -1.0, 1.0, &mut rng);
        let mut mask = BinaryMask::from_keep(
            &[16, 16],
            (0..256).map(|i| i % 2 == 0).collect(),
        )
        .unwrap();
        let start = mask.active_count();
        for event in 0..1000 {
            let zeta = 0.05 + 0.2 * ((event % 7) as f64 / 7.0);
            let out = if event % 2 == 0 {
                set_prune_grow(&w, &mask, zeta, &mut rng).unwrap()
            } else {
                let g = Tensor::uniform(&[16, 16], -1.0, 1.0, &mut rng);
                rigl_prune_grow(&w, &g, &mask, zeta).unwrap()
            };
            assert_eq!(out.shortfall, 0);
            assert_eq!(out.mask.active_count(), start);
            mask = out.mask;
        }
    }

    #[test]
    fn condense_examples() {
        let theta = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let ones = BinaryMask::ones(&[3]);
        assert_eq!(condense(&theta, &ones).unwrap(), theta);
        let zeros = BinaryMask::from_keep(&[3], vec![false; 3]).unwrap();
        assert_eq!(
            condense(&theta, &zeros).unwrap().data(),
            &[0.0, 0.0, 0.0]
        );
        let m = BinaryMask::from_keep(&[3], vec![true, false, true]).unwrap();
        assert_eq!(condense(&theta, &m).unwrap().data(), &[1.0, 0.0, 3.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// The cubic schedule is monotone and stays inside [s_i, s_f].
            #[test]
            fn gmp_schedule_monotone_and_bounded(
                start in 0usize..500,
                span in 1usize..2000,
                s_final in 0.05f64..1.0,
                probe in 0usize..4000,
            ) {
                let a = gmp_schedule(probe, start, span, 0.0, s_final);
                let b = gmp_schedule(probe + 1, start, span, 0.0, s_final);
                prop_assert!(b >= a - 1e-15);
                prop_assert!((0.0..=s_final + 1e-15).contains(&a));
            }

            /// Prune/grow conserves the active count whenever enough
            /// inactive slots exist, for any weights, mask, and zeta.
            #[test]
            fn prune_grow_conserves_popcount(
                seed in 0u64..1000,
                zeta in 0.0f64..0.45,
            ) {
                let mut rng = crate::rng::Rng::new(seed);
                let w = Tensor::uniform(&[6, 6], -1.0, 1.0, &mut rng);
                let keep: Vec<bool> = (0..36).map(|_| rng.uniform() < 0.5).collect();
                prop_assume!(keep.iter().filter(|&&k| k).count() >= 2);
                let mask = BinaryMask::from_keep(&[6, 6], keep).unwrap();
                let k = (zeta * mask.active_count() as f64).round() as usize;
                prop_assume!(k <= mask.zero_count());
                let out = set_prune_grow(&w, &mask, zeta, &mut rng).unwrap();
                prop_assert_eq!(out.shortfall, 0);
                prop_assert_eq!(out.mask.active_count(), mask.active_count());
            }
        }
    }

    #[test]
    fn masked_grad_steps() {
        let mut grads = vec![Tensor::new(vec![2], vec![0.5, -0.5]).unwrap()];
        let m = BinaryMask::from_keep(&[2], vec![false, true]).unwrap();
        sparse_continue_step(&mut grads, &[&m]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, -0.5]);

        let mut grads = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        dense_masked_grads_step(&mut grads, &[&m]).unwrap();
        assert_eq!(grads[0].data(), &[0.0, 2.0]);

        let ones = BinaryMask::ones(&[2]);
        let mut grads = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        dense_masked_grads_step(&mut grads, &[&ones]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 2.0]);

        let bad = BinaryMask::ones(&[3]);
        let mut grads = vec![Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()];
        assert!(dense_masked_grads_step(&mut grads, &[&bad]).is_err());
    }
}
