//! Two-phase experiment driver.
//!
//! Phase 1 (mask optimization methods only) jointly trains weights and mask
//! logits until consecutive end-of-epoch binary masks agree in sparsity to
//! within epsilon, or the epoch cap is hit. The model is then condensed
//! (`theta * mask`) and phase 2 trains either densely or with masked-out
//! weights frozen at exactly zero. The optimizer moments and the learning
//! rate schedule restart at the phase boundary.
//!
//! Baseline methods (dense, GMP, SET, RigL) run their native single-phase
//! loops through the same step machinery.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::error::{LabError, Result};
use crate::mask::{
    global_sparsity, mask_collection_delta, BinaryMask, MaskedParameter, MsrsHyper,
};
use crate::metrics::{MetricRecord, MetricsSink};
use crate::model::{Model, ModelSpec};
use crate::optim::{
    adamw_step, clip_global_norm, lr_schedule, sgd_step, AdamState, OptKind, OptimizerConfig,
};
use crate::rng::Rng;
use crate::sparse::{
    gmp_schedule, magnitude_prune, rigl_prune_grow, set_prune_grow, Method, SparseMethodConfig,
};
use crate::tape::Tape;
use crate::tasks::{Dataset, Targets, TargetKind, TeacherSpec};
use crate::tensor::Tensor;

/// Fraction of the continuation phase over which the GMP schedule ramps to
/// its final sparsity; the rest trains at the fixed target.
const GMP_SPAN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Teacher {
        seed: u64,
        n: usize,
        d_in: usize,
        teacher: TeacherSpec,
    },
    Spirals {
        seed: u64,
        n: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        d_in: usize,
        kind: TargetKind,
        skip_header: bool,
    },
}

impl TaskSpec {
    pub fn build(&self) -> Result<Dataset> {
        match self {
            TaskSpec::Teacher {
                seed,
                n,
                d_in,
                teacher,
            } => crate::tasks::gen_teacher_regression(*seed, *n, *d_in, teacher),
            TaskSpec::Spirals { seed, n, noise } => crate::tasks::gen_two_spirals(*seed, *n, *noise),
            TaskSpec::Csv {
                path,
                d_in,
                kind,
                skip_header,
            } => crate::tasks::load_csv(path, *d_in, *kind, *skip_header),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub task: TaskSpec,
    pub method: SparseMethodConfig,
    pub msrs: MsrsHyper,
    pub optim: OptimizerConfig,
    pub log_interval: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.method.method.name(), self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.method.validate()?;
        self.msrs.validate()?;
        self.optim.validate()?;
        if self.log_interval == 0 {
            return Err(LabError::InvalidArgument(
                "log interval must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Epsilon,
    MaxEpochs,
    NotApplicable,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Epsilon => "epsilon",
            StopReason::MaxEpochs => "max_epochs",
            StopReason::NotApplicable => "n/a",
        }
    }

    fn code(self) -> f64 {
        match self {
            StopReason::Epsilon => 0.0,
            StopReason::MaxEpochs => 1.0,
            StopReason::NotApplicable => 2.0,
        }
    }

    fn from_code(v: f64) -> StopReason {
        match v as i64 {
            0 => StopReason::Epsilon,
            1 => StopReason::MaxEpochs,
            _ => StopReason::NotApplicable,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    /// Full-dataset task loss at the very start of the run.
    pub initial_loss: f64,
    /// Full-dataset task loss after the last epoch.
    pub final_loss: f64,
    pub final_sparsity: f64,
    pub epochs_joint: usize,
    pub stop_reason: StopReason,
    /// Count of masked-out weights found nonzero at logging points; always
    /// zero unless the freeze path is broken.
    pub mask_zero_violations: usize,
    pub records: Vec<MetricRecord>,
    pub model: Model,
}

impl RunOutcome {
    /// The convergence flag used by method comparisons.
    pub fn converged(&self) -> bool {
        self.final_loss < 0.5 * self.initial_loss
    }
}

/// Full-dataset task loss of the model's current dense weights.
pub fn dataset_loss(model: &Model, ds: &Dataset) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = model.leaf_values();
    let (out, _) = model.forward(&mut tape, &ds.inputs, &leaves)?;
    let loss = match &ds.targets {
        Targets::Regression(t) => tape.mse(out, t)?,
        Targets::Classes(c) => tape.softmax_xent(out, c)?,
    };
    Ok(tape.value(loss).item())
}

enum MaskState {
    Dense,
    /// Joint phase: every prunable layer wrapped with mask logits.
    MsrsJoint { mps: Vec<MaskedParameter> },
    /// Continuation with fixed binary masks. `freeze_weights` keeps masked
    /// weights immovable (sparse training); without it only the gradients
    /// are masked (the dense gradient-masking probe).
    FixedMasks {
        masks: Vec<BinaryMask>,
        freeze_weights: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Joint,
    Continue,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Joint => "joint",
            Phase::Continue => "continue",
        }
    }
}

struct Trainer {
    cfg: ExperimentConfig,
    model: Model,
    dataset: Dataset,
    prunable: Vec<usize>,
    mask_state: MaskState,
    theta_opt: Vec<AdamState>,
    phi_opt: Vec<AdamState>,
    data_rng: Rng,
    prune_rng: Rng,
    phase: Phase,
    phase_step: usize,
    phase_epoch: usize,
    global_epoch: u64,
    global_step: u64,
    epochs_joint: usize,
    stop_reason: StopReason,
    initial_loss: f64,
    /// Initialization snapshot, kept so the gradient-masking probe can
    /// restart from the same dense weights after mask discovery.
    init_params: Vec<Tensor>,
    /// Masked-out weights that were not bit-exact zero at a logging point.
    /// Audited on every logged step while weights are mask-frozen.
    mask_zero_violations: usize,
    sink: MetricsSink,
}

struct StepGrads {
    /// Task gradient per parameter (theta view, after any mask transform).
    theta: Vec<Tensor>,
    /// Logit gradient per prunable layer (joint phase only).
    phi: Vec<Tensor>,
    batch_loss: f64,
}

impl Trainer {
    fn new(
        cfg: &ExperimentConfig,
        initial_params: Option<&[(String, Tensor)]>,
        out_dir: Option<&Path>,
    ) -> Result<Trainer> {
        cfg.validate()?;
        let dataset = cfg.task.build()?;
        if dataset.d_in() != cfg.model.d_in {
            return Err(LabError::Config(format!(
                "task produces d_in={} but model.d_in={}",
                dataset.d_in(),
                cfg.model.d_in
            )));
        }
        let needed = dataset.targets.d_out();
        if cfg.model.d_out < needed {
            return Err(LabError::Config(format!(
                "task needs d_out >= {needed} but model.d_out={}",
                cfg.model.d_out
            )));
        }

        let mut model = Model::build(&cfg.model, cfg.seed)?;
        if let Some(overrides) = initial_params {
            for (name, value) in overrides {
                let Some(i) = model.param_index(name) else {
                    return Err(LabError::InvalidArgument(format!(
                        "initial weights name unknown parameter '{name}'"
                    )));
                };
                if model.params[i].value.shape() != value.shape() {
                    return Err(LabError::shape(
                        "initial_params",
                        format!(
                            "'{name}': {:?} vs {:?}",
                            value.shape(),
                            model.params[i].value.shape()
                        ),
                    ));
                }
                model.params[i].value = value.clone();
            }
        }
        let model = model;
        let root = Rng::new(cfg.seed);
        let prunable = model.prunable_indices();

        let theta_opt = model
            .params
            .iter()
            .map(|p| AdamState::new(p.value.shape()))
            .collect();
        let phi_opt = prunable
            .iter()
            .map(|&i| AdamState::new(model.params[i].value.shape()))
            .collect();

        let sink = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                MetricsSink::to_file(&dir.join("metrics.jsonl"))?
            }
            None => MetricsSink::in_memory(),
        };

        let init_params = model.params.iter().map(|p| p.value.clone()).collect();
        let initial_loss = dataset_loss(&model, &dataset)?;

        let mut trainer = Trainer {
            model,
            dataset,
            prunable,
            mask_state: MaskState::Dense,
            theta_opt,
            phi_opt,
            data_rng: root.derive("data", 0),
            prune_rng: root.derive("prune", 0),
            phase: Phase::Continue,
            phase_step: 0,
            phase_epoch: 0,
            global_epoch: 0,
            global_step: 0,
            epochs_joint: 0,
            stop_reason: StopReason::NotApplicable,
            initial_loss,
            init_params,
            mask_zero_violations: 0,
            sink,
            cfg: cfg.clone(),
        };
        trainer.install_method_state()?;
        Ok(trainer)
    }

    fn install_method_state(&mut self) -> Result<()> {
        match self.cfg.method.method {
            Method::Dense => {
                self.mask_state = MaskState::Dense;
                self.phase = Phase::Continue;
            }
            Method::Msrs | Method::DenseMaskedGrads => {
                let mps = self
                    .prunable
                    .iter()
                    .map(|&i| MaskedParameter::new(self.model.params[i].value.clone(), &self.cfg.msrs))
                    .collect();
                self.mask_state = MaskState::MsrsJoint { mps };
                self.phase = Phase::Joint;
            }
            Method::Gmp => {
                let masks = self
                    .prunable
                    .iter()
                    .map(|&i| BinaryMask::ones(self.model.params[i].value.shape()))
                    .collect();
                self.mask_state = MaskState::FixedMasks {
                    masks,
                    freeze_weights: true,
                };
                self.phase = Phase::Continue;
            }
            Method::Set | Method::Rigl => {
                let inv: crate::sparse::LayerShapeInventory = self
                    .prunable
                    .iter()
                    .map(|&i| crate::sparse::LayerShape {
                        name: self.model.params[i].name.clone(),
                        fan_in: self.model.params[i].value.shape()[0],
                        fan_out: self.model.params[i].value.shape()[1],
                    })
                    .collect();
                let erk_seed = Rng::new(self.cfg.seed).derive("erk", 0).next_u64();
                let masks =
                    crate::sparse::erk_init(&inv, self.cfg.method.target_sparsity, erk_seed)?;
                for (slot, mask) in self.prunable.iter().zip(&masks) {
                    let masked = mask.apply(&self.model.params[*slot].value)?;
                    self.model.params[*slot].value = masked;
                }
                self.mask_state = MaskState::FixedMasks {
                    masks,
                    freeze_weights: true,
                };
                self.phase = Phase::Continue;
            }
        }
        Ok(())
    }

    fn steps_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.cfg.optim.batch_size)
    }

    fn phase_total_steps(&self) -> usize {
        let epochs = match self.phase {
            Phase::Joint => self.cfg.msrs.max_joint_epochs,
            Phase::Continue => self.cfg.optim.total_epochs,
        };
        epochs * self.steps_per_epoch()
    }

    fn warmup_steps(&self) -> usize {
        let w = self.cfg.optim.warmup_epochs * self.steps_per_epoch();
        w.min(self.phase_total_steps())
    }

    fn lr_theta(&self) -> f64 {
        lr_schedule(
            self.phase_step,
            self.warmup_steps(),
            self.phase_total_steps(),
            self.cfg.optim.peak_lr_theta,
        )
    }

    fn lr_phi(&self) -> f64 {
        lr_schedule(
            self.phase_step,
            self.warmup_steps(),
            self.phase_total_steps(),
            self.cfg.optim.peak_lr_phi,
        )
    }

    /// Current binary masks for sparsity reporting, when the method has any.
    fn sparsity_masks(&self) -> Option<Vec<BinaryMask>> {
        match &self.mask_state {
            MaskState::Dense => None,
            MaskState::MsrsJoint { mps } => Some(mps.iter().map(MaskedParameter::binarize).collect()),
            MaskState::FixedMasks {
                masks,
                freeze_weights,
            } => {
                // With dense weights and masked gradients the model itself
                // stays dense; its sparsity is zero.
                if *freeze_weights {
                    Some(masks.clone())
                } else {
                    None
                }
            }
        }
    }

    fn global_sparsity_now(&self) -> f64 {
        self.sparsity_masks()
            .map(|m| global_sparsity(&m).unwrap_or(0.0))
            .unwrap_or(0.0)
    }

    fn per_layer_sparsity(&self) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        match self.sparsity_masks() {
            Some(masks) => {
                for (slot, mask) in self.prunable.iter().zip(&masks) {
                    map.insert(self.model.params[*slot].name.clone(), mask.sparsity());
                }
            }
            None => {
                for &slot in &self.prunable {
                    map.insert(self.model.params[slot].name.clone(), 0.0);
                }
            }
        }
        map
    }

    /// Forward/backward over one batch; returns per-parameter task gradients
    /// (already transformed by the method's gradient masking) plus logit
    /// gradients during the joint phase.
    fn compute_grads(&mut self, inputs: &Tensor, targets: &Targets) -> Result<StepGrads> {
        let mut leaves = self.model.leaf_values();
        if let MaskState::MsrsJoint { mps } = &self.mask_state {
            for (k, &slot) in self.prunable.iter().enumerate() {
                leaves[slot] = mps[k].effective_weight();
            }
        }

        let mut tape = Tape::new();
        let (out, leaf_ids) = self.model.forward(&mut tape, inputs, &leaves)?;
        let loss_node = match targets {
            Targets::Regression(t) => tape.mse(out, t)?,
            Targets::Classes(c) => tape.softmax_xent(out, c)?,
        };
        let batch_loss = tape.value(loss_node).item();
        if !batch_loss.is_finite() {
            self.sink.flush()?;
            return Err(LabError::NonFiniteLoss {
                epoch: self.global_epoch as usize + 1,
                step: self.global_step as usize,
            });
        }
        let grads = tape.backward(loss_node)?;

        let mut theta: Vec<Tensor> = Vec::with_capacity(self.model.params.len());
        for (i, p) in self.model.params.iter().enumerate() {
            theta.push(grads.get_or_zeros(leaf_ids[i], p.value.shape()));
        }

        // During the joint phase the two-temperature rule turns the
        // effective-weight gradient into theta and phi gradients. Fixed-mask
        // methods keep these gradients dense here; RigL's growth criterion
        // reads them before the masking transform is applied.
        let mut phi = Vec::new();
        if let MaskState::MsrsJoint { mps } = &self.mask_state {
            for (k, &slot) in self.prunable.iter().enumerate() {
                let upstream = &theta[slot];
                let (g_theta, g_phi) = mps[k].masked_backward(upstream)?;
                theta[slot] = g_theta;
                phi.push(g_phi);
            }
        }

        Ok(StepGrads {
            theta,
            phi,
            batch_loss,
        })
    }

    /// Zero the gradients of masked-out positions (fixed-mask methods).
    fn mask_gradients(&self, grads: &mut StepGrads) -> Result<()> {
        if let MaskState::FixedMasks { masks, .. } = &self.mask_state {
            for (k, &slot) in self.prunable.iter().enumerate() {
                grads.theta[slot] = masks[k].apply(&grads.theta[slot])?;
            }
        }
        Ok(())
    }

    fn grad_norms(&self, grads: &StepGrads) -> BTreeMap<String, f64> {
        let mut map = BTreeMap::new();
        for &slot in &self.prunable {
            map.insert(
                self.model.params[slot].name.clone(),
                grads.theta[slot].l2_norm(),
            );
        }
        map
    }

    /// GMP / SET / RigL prune-and-grow events. RigL consumes the dense
    /// (pre-masking) gradients, so events run on freshly computed grads
    /// before the masking transform; this method is therefore called from
    /// inside the step, on raw gradients.
    fn mask_event(&mut self, raw_grads: &[Tensor]) -> Result<()> {
        let method = self.cfg.method.method;
        if !matches!(method, Method::Gmp | Method::Set | Method::Rigl) {
            return Ok(());
        }
        if self.phase_step == 0 || !self.phase_step.is_multiple_of(self.cfg.method.update_interval) {
            return Ok(());
        }
        let total = self.phase_total_steps();
        let MaskState::FixedMasks { masks, .. } = &mut self.mask_state else {
            return Ok(());
        };

        match method {
            Method::Gmp => {
                let span = ((total as f64 * GMP_SPAN_FRACTION).round() as usize).max(1);
                let s_t = gmp_schedule(
                    self.phase_step,
                    0,
                    span,
                    0.0,
                    self.cfg.method.target_sparsity,
                );
                let new_masks = {
                    let weights: Vec<&Tensor> = self
                        .prunable
                        .iter()
                        .map(|&slot| &self.model.params[slot].value)
                        .collect();
                    magnitude_prune(&weights, s_t, self.cfg.method.scope)?
                };
                for (k, &slot) in self.prunable.iter().enumerate() {
                    let masked = new_masks[k].apply(&self.model.params[slot].value)?;
                    self.model.params[slot].value = masked;
                    zero_inactive_moments(&mut self.theta_opt[slot], &new_masks[k]);
                }
                *masks = new_masks;
            }
            Method::Set | Method::Rigl => {
                let zeta0 = self.cfg.method.prune_grow_fraction;
                let zeta = if self.cfg.method.zeta_decay {
                    let progress = (self.phase_step as f64 / total as f64).min(1.0);
                    zeta0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                } else {
                    zeta0
                };
                let mut new_masks = Vec::with_capacity(masks.len());
                for (k, &slot) in self.prunable.iter().enumerate() {
                    // Layers ERK capped at full density have no room to
                    // explore; cycling them would only shrink the active set.
                    if masks[k].zero_count() == 0 {
                        new_masks.push(masks[k].clone());
                        continue;
                    }
                    let w = &self.model.params[slot].value;
                    let outcome = if method == Method::Set {
                        let mut rng = self.prune_rng.derive("set", self.global_step * 1000 + k as u64);
                        set_prune_grow(w, &masks[k], zeta, &mut rng)?
                    } else {
                        rigl_prune_grow(w, &raw_grads[slot], &masks[k], zeta)?
                    };
                    new_masks.push(outcome.mask);
                }
                for (k, &slot) in self.prunable.iter().enumerate() {
                    // Weights at grown positions were exactly zero already;
                    // re-applying the mask keeps pruned ones at zero.
                    let masked = new_masks[k].apply(&self.model.params[slot].value)?;
                    self.model.params[slot].value = masked;
                    zero_changed_moments(&mut self.theta_opt[slot], &masks[k], &new_masks[k]);
                }
                *masks = new_masks;
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    fn optimizer_step(&mut self, grads: &mut StepGrads) -> Result<()> {
        let lr_t = self.lr_theta();
        let lr_p = self.lr_phi();
        let oc = self.cfg.optim.clone();

        // Joint global-norm clip across every gradient the optimizers see.
        {
            let mut refs: Vec<&mut Tensor> = Vec::new();
            for g in grads.theta.iter_mut() {
                refs.push(g);
            }
            for g in grads.phi.iter_mut() {
                refs.push(g);
            }
            clip_global_norm(&mut refs[..], oc.clip_norm);
        }

        // Freeze masks keep masked-out entries from moving (update and
        // decay alike), so zeros stay bit-exact zeros.
        let mut freeze: Vec<Option<&BinaryMask>> = vec![None; self.model.params.len()];
        if let MaskState::FixedMasks { masks, .. } = &self.mask_state {
            for (k, &slot) in self.prunable.iter().enumerate() {
                freeze[slot] = Some(&masks[k]);
            }
        }

        for (i, p) in self.model.params.iter_mut().enumerate() {
            match oc.optimizer {
                OptKind::AdamW => adamw_step(
                    &mut p.value,
                    &grads.theta[i],
                    &mut self.theta_opt[i],
                    lr_t,
                    oc.beta1,
                    oc.beta2,
                    oc.eps,
                    oc.weight_decay,
                    freeze[i],
                )?,
                OptKind::Sgd => sgd_step(&mut p.value, &grads.theta[i], lr_t, freeze[i])?,
            }
        }

        if let MaskState::MsrsJoint { mps } = &mut self.mask_state {
            for (k, mp) in mps.iter_mut().enumerate() {
                match oc.optimizer {
                    OptKind::AdamW => adamw_step(
                        &mut mp.phi,
                        &grads.phi[k],
                        &mut self.phi_opt[k],
                        lr_p,
                        oc.beta1,
                        oc.beta2,
                        oc.eps,
                        0.0,
                        None,
                    )?,
                    OptKind::Sgd => sgd_step(&mut mp.phi, &grads.phi[k], lr_p, None)?,
                }
                // The pruning-speed penalty lands outside the adaptive
                // update: a constant decrement per step.
                crate::mask::apply_penalty_decrement(&mut mp.phi, self.cfg.msrs.lambda);
                // Keep the joint-phase thetas in sync with the model.
                mp.theta = self.model.params[self.prunable[k]].value.clone();
            }
        }
        Ok(())
    }

    fn log_step(&mut self, grads: &StepGrads) -> Result<()> {
        if !self.phase_step.is_multiple_of(self.cfg.log_interval) {
            return Ok(());
        }
        self.audit_masked_zeros();
        let record = MetricRecord {
            run_id: self.cfg.run_id(),
            phase: self.phase.name().into(),
            epoch: self.global_epoch + 1,
            step: self.global_step,
            loss: grads.batch_loss,
            global_sparsity: Some(self.global_sparsity_now()),
            per_layer_sparsity: Some(self.per_layer_sparsity()),
            mask_sparsity_diff: None,
            mask_hamming_delta: None,
            per_layer_grad_l2: Some(self.grad_norms(grads)),
            lr_theta: self.lr_theta(),
            lr_phi: match self.phase {
                Phase::Joint => Some(self.lr_phi()),
                Phase::Continue => None,
            },
            lambda: match self.phase {
                Phase::Joint => Some(self.cfg.msrs.lambda),
                Phase::Continue => None,
            },
        };
        self.sink.push(record)
    }

    /// Frozen sparse weights must read back as exactly 0.0 wherever the
    /// mask is off; any drift is a bug in the freeze path.
    fn audit_masked_zeros(&mut self) {
        if let MaskState::FixedMasks {
            masks,
            freeze_weights: true,
        } = &self.mask_state
        {
            for (k, &slot) in self.prunable.iter().enumerate() {
                let w = &self.model.params[slot].value;
                for (v, &keep) in w.data().iter().zip(masks[k].keep()) {
                    if !keep && *v != 0.0 {
                        self.mask_zero_violations += 1;
                    }
                }
            }
        }
    }

    fn log_epoch(
        &mut self,
        epoch_mean_loss: f64,
        delta: Option<(f64, usize)>,
    ) -> Result<()> {
        let record = MetricRecord {
            run_id: self.cfg.run_id(),
            phase: self.phase.name().into(),
            epoch: self.global_epoch + 1,
            step: self.global_step,
            loss: epoch_mean_loss,
            global_sparsity: Some(self.global_sparsity_now()),
            per_layer_sparsity: Some(self.per_layer_sparsity()),
            mask_sparsity_diff: delta.map(|(d, _)| d),
            mask_hamming_delta: delta.map(|(_, h)| h as u64),
            per_layer_grad_l2: None,
            lr_theta: self.lr_theta(),
            lr_phi: match self.phase {
                Phase::Joint => Some(self.lr_phi()),
                Phase::Continue => None,
            },
            lambda: match self.phase {
                Phase::Joint => Some(self.cfg.msrs.lambda),
                Phase::Continue => None,
            },
        };
        self.sink.push(record)
    }

    /// One pass over the shuffled dataset; returns the mean task loss.
    fn run_epoch(&mut self) -> Result<f64> {
        let n = self.dataset.len();
        let batch = self.cfg.optim.batch_size;
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = self.data_rng.derive("epoch", self.global_epoch);
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let (inputs, targets) = self.dataset.batch(chunk);
            let mut grads = self.compute_grads(&inputs, &targets)?;
            // Prune/grow events consume the dense gradients, then the
            // (possibly updated) masks are applied to them.
            self.mask_event(&grads.theta)?;
            self.mask_gradients(&mut grads)?;
            self.log_step(&grads)?;
            self.optimizer_step(&mut grads)?;
            loss_sum += grads.batch_loss * chunk.len() as f64;
            self.phase_step += 1;
            self.global_step += 1;
        }
        Ok(loss_sum / n as f64)
    }

    fn reset_optimizers(&mut self) {
        for st in &mut self.theta_opt {
            st.reset();
        }
        for st in &mut self.phi_opt {
            st.reset();
        }
    }

    /// Phase 1: joint weight/logit optimization with the epoch-level
    /// stopping criterion. Returns the stabilized binary masks.
    fn joint_phase(&mut self) -> Result<Vec<BinaryMask>> {
        let MaskState::MsrsJoint { mps } = &self.mask_state else {
            return Err(LabError::InvalidArgument(
                "joint phase requires mask logits".into(),
            ));
        };
        let mut prev: Vec<BinaryMask> = mps.iter().map(MaskedParameter::binarize).collect();

        for epoch in 1..=self.cfg.msrs.max_joint_epochs {
            let mean_loss = self.run_epoch()?;
            let MaskState::MsrsJoint { mps } = &self.mask_state else {
                unreachable!()
            };
            let cur: Vec<BinaryMask> = mps.iter().map(MaskedParameter::binarize).collect();
            let (diff, hamming) = mask_collection_delta(&prev, &cur)?;
            self.epochs_joint = epoch;
            self.log_epoch(mean_loss, Some((diff, hamming)))?;
            self.global_epoch += 1;
            self.phase_epoch += 1;
            if diff < self.cfg.msrs.epsilon {
                self.stop_reason = StopReason::Epsilon;
                return Ok(cur);
            }
            prev = cur;
        }
        self.stop_reason = StopReason::MaxEpochs;
        Ok(prev)
    }

    /// Condense and install the continuation-phase state.
    fn transition(&mut self, masks: Vec<BinaryMask>) -> Result<()> {
        match self.cfg.method.method {
            Method::Msrs => {
                for (k, &slot) in self.prunable.iter().enumerate() {
                    let condensed = masks[k].apply(&self.model.params[slot].value)?;
                    self.model.params[slot].value = condensed;
                }
                self.mask_state = if self.cfg.method.dense_after {
                    MaskState::Dense
                } else {
                    MaskState::FixedMasks {
                        masks,
                        freeze_weights: true,
                    }
                };
            }
            Method::DenseMaskedGrads => {
                // Restart from the original dense initialization; the
                // discovered masks apply to gradients only.
                for (i, init) in self.init_params.clone().into_iter().enumerate() {
                    self.model.params[i].value = init;
                }
                self.mask_state = MaskState::FixedMasks {
                    masks,
                    freeze_weights: false,
                };
            }
            _ => unreachable!("transition is only reached from a joint phase"),
        }
        self.reset_optimizers();
        self.phase = Phase::Continue;
        self.phase_step = 0;
        self.phase_epoch = 0;
        Ok(())
    }

    fn continue_phase(&mut self) -> Result<()> {
        for _ in 0..self.cfg.optim.total_epochs {
            let mean_loss = self.run_epoch()?;
            self.log_epoch(mean_loss, None)?;
            self.global_epoch += 1;
            self.phase_epoch += 1;
        }
        Ok(())
    }

    fn outcome(mut self) -> Result<RunOutcome> {
        self.audit_masked_zeros();
        self.sink.flush()?;
        let final_loss = dataset_loss(&self.model, &self.dataset)?;
        Ok(RunOutcome {
            run_id: self.cfg.run_id(),
            initial_loss: self.initial_loss,
            final_loss,
            final_sparsity: self.global_sparsity_now(),
            epochs_joint: self.epochs_joint,
            stop_reason: self.stop_reason,
            mask_zero_violations: self.mask_zero_violations,
            records: std::mem::take(&mut self.sink.records),
            model: self.model,
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut model = Vec::new();
        for p in &self.model.params {
            model.push((format!("param.{}", p.name), p.value.clone()));
        }
        match &self.mask_state {
            MaskState::MsrsJoint { mps } => {
                for (k, &slot) in self.prunable.iter().enumerate() {
                    model.push((
                        format!("phi.{}", self.model.params[slot].name),
                        mps[k].phi.clone(),
                    ));
                }
            }
            MaskState::FixedMasks { masks, .. } => {
                for (k, &slot) in self.prunable.iter().enumerate() {
                    model.push((
                        format!("mask.{}", self.model.params[slot].name),
                        masks[k].to_tensor(),
                    ));
                }
            }
            MaskState::Dense => {}
        }

        let mut optimizer = Vec::new();
        for (i, p) in self.model.params.iter().enumerate() {
            optimizer.push((format!("opt.theta.m.{}", p.name), self.theta_opt[i].m.clone()));
            optimizer.push((format!("opt.theta.v.{}", p.name), self.theta_opt[i].v.clone()));
        }
        for (k, &slot) in self.prunable.iter().enumerate() {
            let name = &self.model.params[slot].name;
            optimizer.push((format!("opt.phi.m.{name}"), self.phi_opt[k].m.clone()));
            optimizer.push((format!("opt.phi.v.{name}"), self.phi_opt[k].v.clone()));
        }

        let mut counters = vec![
            (
                "phase".to_string(),
                match self.phase {
                    Phase::Joint => 0.0,
                    Phase::Continue => 1.0,
                },
            ),
            ("epoch.global".to_string(), self.global_epoch as f64),
            ("epoch.phase".to_string(), self.phase_epoch as f64),
            ("step.phase".to_string(), self.phase_step as f64),
            ("step.global".to_string(), self.global_step as f64),
            ("epochs.joint".to_string(), self.epochs_joint as f64),
            ("stop.reason".to_string(), self.stop_reason.code()),
            ("loss.initial".to_string(), self.initial_loss),
            (
                "opt.step.theta".to_string(),
                self.theta_opt.first().map_or(0, |s| s.step) as f64,
            ),
            (
                "opt.step.phi".to_string(),
                self.phi_opt.first().map_or(0, |s| s.step) as f64,
            ),
            (
                "freeze.weights".to_string(),
                match &self.mask_state {
                    MaskState::FixedMasks { freeze_weights, .. } => {
                        if *freeze_weights {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => 1.0,
                },
            ),
        ];
        push_rng_counters(&mut counters, "rng.data", &self.data_rng);
        push_rng_counters(&mut counters, "rng.prune", &self.prune_rng);
        Checkpoint {
            model,
            optimizer,
            counters,
        }
    }
}

fn zero_inactive_moments(state: &mut AdamState, mask: &BinaryMask) {
    for (i, &keep) in mask.keep().iter().enumerate() {
        if !keep {
            state.reset_entry(i);
        }
    }
}

fn zero_changed_moments(state: &mut AdamState, old: &BinaryMask, new: &BinaryMask) {
    for i in 0..new.len() {
        let changed = old.keep()[i] != new.keep()[i];
        if changed || !new.keep()[i] {
            state.reset_entry(i);
        }
    }
}

fn push_rng_counters(counters: &mut Vec<(String, f64)>, prefix: &str, rng: &Rng) {
    for (i, w) in rng.snapshot().iter().enumerate() {
        counters.push((format!("{prefix}.w{i}.hi"), (w >> 32) as f64));
        counters.push((format!("{prefix}.w{i}.lo"), (w & 0xffff_ffff) as f64));
    }
}

fn rng_from_counters(ckpt: &Checkpoint, prefix: &str) -> Result<Rng> {
    let mut words = [0u64; 6];
    for (i, w) in words.iter_mut().enumerate() {
        let hi = ckpt
            .counter(&format!("{prefix}.w{i}.hi"))
            .ok_or_else(|| LabError::Checkpoint(format!("missing counter {prefix}.w{i}.hi")))?;
        let lo = ckpt
            .counter(&format!("{prefix}.w{i}.lo"))
            .ok_or_else(|| LabError::Checkpoint(format!("missing counter {prefix}.w{i}.lo")))?;
        *w = ((hi as u64) << 32) | (lo as u64);
    }
    Ok(Rng::restore(words))
}

/// Execute one experiment end to end. With an output directory the run
/// streams `metrics.jsonl`, saves `joint.ckpt` at the phase transition (for
/// methods with a joint phase) and `final.ckpt` at the end.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    run_experiment_from(cfg, None, out_dir)
}

/// Like [`run_experiment`], starting from explicit parameter values instead
/// of the seeded initialization (warm starts).
pub fn run_experiment_from(
    cfg: &ExperimentConfig,
    initial_params: Option<&[(String, Tensor)]>,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(cfg, initial_params, out_dir)?;

    if matches!(cfg.method.method, Method::Msrs | Method::DenseMaskedGrads) {
        let masks = trainer.joint_phase()?;
        trainer.transition(masks)?;
        if let Some(dir) = out_dir {
            save_checkpoint(&dir.join("joint.ckpt"), &trainer.checkpoint())?;
        }
    }

    trainer.continue_phase()?;
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final.ckpt"), &trainer.checkpoint())?;
    }
    trainer.outcome()
}

/// Resume the continuation phase from a `joint.ckpt` written at the phase
/// transition. Produces the same phase-2 metric records as an uninterrupted
/// run with the same config and seed.
pub fn resume_continue_phase(
    cfg: &ExperimentConfig,
    ckpt_path: &Path,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    let ckpt = crate::checkpoint::load_checkpoint(ckpt_path)?;
    if ckpt.counter("phase") != Some(1.0) || ckpt.counter("step.phase") != Some(0.0) {
        return Err(LabError::Checkpoint(
            "resume expects a checkpoint taken at the start of the continuation phase".into(),
        ));
    }
    let mut trainer = Trainer::new(cfg, None, out_dir)?;

    for p in trainer.model.params.iter_mut() {
        let t = ckpt
            .model_tensor(&format!("param.{}", p.name))
            .ok_or_else(|| LabError::Checkpoint(format!("missing tensor param.{}", p.name)))?;
        p.value = t.clone();
    }
    let freeze_weights = ckpt.counter("freeze.weights").unwrap_or(1.0) == 1.0;
    let mut masks = Vec::new();
    for &slot in &trainer.prunable {
        let name = &trainer.model.params[slot].name;
        if let Some(t) = ckpt.model_tensor(&format!("mask.{name}")) {
            masks.push(BinaryMask::from_tensor(t));
        }
    }
    trainer.mask_state = if masks.len() == trainer.prunable.len() {
        MaskState::FixedMasks {
            masks,
            freeze_weights,
        }
    } else {
        MaskState::Dense
    };
    trainer.reset_optimizers();
    trainer.phase = Phase::Continue;
    trainer.phase_step = 0;
    trainer.phase_epoch = 0;
    trainer.global_epoch = ckpt.counter("epoch.global").unwrap_or(0.0) as u64;
    trainer.global_step = ckpt.counter("step.global").unwrap_or(0.0) as u64;
    trainer.epochs_joint = ckpt.counter("epochs.joint").unwrap_or(0.0) as usize;
    trainer.stop_reason =
        StopReason::from_code(ckpt.counter("stop.reason").unwrap_or(2.0));
    trainer.initial_loss = ckpt
        .counter("loss.initial")
        .unwrap_or(trainer.initial_loss);
    trainer.data_rng = rng_from_counters(&ckpt, "rng.data")?;
    trainer.prune_rng = rng_from_counters(&ckpt, "rng.prune")?;

    trainer.continue_phase()?;
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final.ckpt"), &trainer.checkpoint())?;
    }
    trainer.outcome()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub final_sparsity: f64,
    pub final_loss: f64,
    pub epochs_joint: usize,
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,seed,final_sparsity,final_loss,epochs_joint,status\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.lambda, r.seed, r.final_sparsity, r.final_loss, r.epochs_joint, r.status
            ));
        }
        out
    }

    pub fn any_ok(&self) -> bool {
        self.rows.iter().any(|r| r.status == "ok")
    }

    /// Mean final sparsity per lambda over the succeeded seeds, in the
    /// lambda order of the sweep.
    pub fn mean_final_sparsity_by_lambda(&self) -> Vec<(f64, f64)> {
        let mut order: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !order.contains(&r.lambda) {
                order.push(r.lambda);
            }
        }
        order
            .into_iter()
            .map(|l| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.lambda == l && r.status == "ok")
                    .map(|r| r.final_sparsity)
                    .collect();
                let mean = if vals.is_empty() {
                    f64::NAN
                } else {
                    vals.iter().sum::<f64>() / vals.len() as f64
                };
                (l, mean)
            })
            .collect()
    }
}

/// Worker-thread cap for sweeps and comparisons.
pub fn worker_threads() -> usize {
    std::env::var("MSRS_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Run the mask-optimization config once per (lambda, seed) cell. Cells are
/// independent; with `MSRS_LAB_THREADS > 1` they execute on parallel workers
/// and the table is still assembled in sweep order.
pub fn lambda_sweep(
    base: &ExperimentConfig,
    lambdas: &[f64],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<SweepTable> {
    if lambdas.is_empty() {
        return Err(LabError::InvalidArgument(
            "sweep needs at least one lambda".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(LabError::InvalidArgument(
            "sweep needs at least one seed".into(),
        ));
    }
    let mut cells: Vec<(usize, f64, u64)> = Vec::new();
    for (li, &l) in lambdas.iter().enumerate() {
        for &s in seeds {
            cells.push((li, l, s));
        }
    }

    let run_cell = |&(li, lambda, seed): &(usize, f64, u64)| -> SweepRow {
        let mut cfg = base.clone();
        cfg.msrs.lambda = lambda;
        cfg.seed = seed;
        let cell_dir = out_dir.map(|d| d.join(format!("cell-l{li}-s{seed}")));
        match run_experiment(&cfg, cell_dir.as_deref()) {
            Ok(out) => SweepRow {
                lambda,
                seed,
                final_sparsity: out.final_sparsity,
                final_loss: out.final_loss,
                epochs_joint: out.epochs_joint,
                status: "ok".into(),
            },
            Err(_) => SweepRow {
                lambda,
                seed,
                final_sparsity: f64::NAN,
                final_loss: f64::NAN,
                epochs_joint: 0,
                status: "failed".into(),
            },
        }
    };

    let threads = worker_threads().min(cells.len().max(1));
    let rows: Vec<SweepRow> = if threads <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let mut rows: Vec<Option<SweepRow>> = vec![None; cells.len()];
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|w| (w..cells.len()).step_by(threads).collect())
                .collect();
            let mut handles = Vec::new();
            for chunk in chunks {
                let cells = &cells;
                handles.push(scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|i| (i, run_cell(&cells[i])))
                        .collect::<Vec<_>>()
                }));
            }
            for h in handles {
                for (i, row) in h.join().expect("sweep worker panicked") {
                    rows[i] = Some(row);
                }
            }
        });
        rows.into_iter().map(|r| r.expect("all cells ran")).collect()
    };

    let table = SweepTable { rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), table.to_csv())?;
    }
    Ok(table)
}
