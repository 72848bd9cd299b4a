//! Finite-difference gradient oracle.
//!
//! Central differences are the independent reference every analytic
//! backward rule is checked against. The suite registers one scenario per
//! primitive plus composite checks (residual block, masked backward at both
//! temperatures, a full 3-block model) and reports the worst relative error
//! per op.

use crate::error::Result;
use crate::mask::{MaskedParameter, MsrsHyper};
use crate::model::{Activation, InitScheme, Model, ModelSpec};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;
/// Relative-error bound every registered primitive must satisfy.
pub const GRADCHECK_TOL: f64 = 1e-5;

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference_grad(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        grad.data_mut()[i] = (f(&plus)? - f(&minus)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Fourth-order central differences (5-point stencil). Deep compositions
/// produce the occasional near-zero gradient entry; the wider stencil lets
/// the step grow (killing subtraction noise) while truncation stays O(h^4).
pub fn central_difference_grad_5pt(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    let eval = |i: usize, delta: f64, f: &mut dyn FnMut(&Tensor) -> Result<f64>| {
        let mut probe = x.clone();
        probe.data_mut()[i] += delta;
        f(&probe)
    };
    for i in 0..x.len() {
        let f1 = eval(i, h, f)? - eval(i, -h, f)?;
        let f2 = eval(i, 2.0 * h, f)? - eval(i, -2.0 * h, f)?;
        grad.data_mut()[i] = (8.0 * f1 - f2) / (12.0 * h);
    }
    Ok(grad)
}

fn max_rel_err(analytic: &Tensor, fd: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    for (&a, &d) in analytic.data().iter().zip(fd.data()) {
        let rel = (a - d).abs() / (a.abs() + 1e-12);
        worst = worst.max(rel);
    }
    worst
}

/// Max over coordinates of `|analytic - fd| / (|analytic| + 1e-12)`.
pub fn finite_difference_check(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
    analytic: &Tensor,
) -> Result<f64> {
    let fd = central_difference_grad(f, x, h)?;
    Ok(max_rel_err(analytic, &fd))
}

/// Like [`finite_difference_check`] with the 5-point stencil.
pub fn finite_difference_check_5pt(
    f: &mut dyn FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
    analytic: &Tensor,
) -> Result<f64> {
    let fd = central_difference_grad_5pt(f, x, h)?;
    Ok(max_rel_err(analytic, &fd))
}

/// Result of one registered check.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub checks: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn all_within(&self, tol: f64) -> bool {
        self.checks.iter().all(|c| c.max_rel_err < tol)
    }

    pub fn worst(&self) -> &OpCheck {
        self.checks
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("report is never empty")
    }

    pub fn failures(&self, tol: f64) -> Vec<&OpCheck> {
        self.checks
            .iter()
            .filter(|c| c.max_rel_err >= tol || c.max_rel_err.is_nan())
            .collect()
    }
}

type BuildFn = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId>;

/// Check one scenario: analytic gradients of a scalar-valued graph against
/// central differences, for every input tensor. `wide_stencil` switches to
/// the 5-point formula for deep compositions.
fn check_scenario(
    inputs: &[Tensor],
    build: &BuildFn,
    h: f64,
    wide_stencil: bool,
    perturb: bool,
) -> Result<f64> {
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let mut analytic = grads.get_or_zeros(ids[i], x.shape());
        if perturb {
            for v in analytic.data_mut() {
                *v *= 1.001;
            }
        }
        let mut f = |probe: &Tensor| -> Result<f64> {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| tape.leaf(if j == i { probe.clone() } else { t.clone() }))
                .collect();
            let loss = build(&mut tape, &ids)?;
            Ok(tape.value(loss).item())
        };
        worst = worst.max(if wide_stencil {
            finite_difference_check_5pt(&mut f, x, h, &analytic)?
        } else {
            finite_difference_check(&mut f, x, h, &analytic)?
        });
    }
    Ok(worst)
}

/// Random tensor with entries kept away from activation kinks.
fn sample_away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    sample_in(shape, rng, 2.0)
}

/// Bounded sample, still clear of zero. Deep compositions use a small bound
/// so no activation saturates: saturation collapses the analytic gradient
/// toward zero, where central differences lose all relative accuracy.
fn sample_in(shape: &[usize], rng: &mut Rng, bound: f64) -> Tensor {
    let mut t = Tensor::uniform(shape, -bound, bound, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 * bound {
            *v += if *v >= 0.0 { 0.1 * bound } else { -0.1 * bound };
        }
    }
    t
}

/// A scalar readout with fixed positive-ish weights so that no gradient
/// entry degenerates to zero by accident.
fn readout(tape: &mut Tape, x: NodeId, rng: &mut Rng) -> Result<NodeId> {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.leaf(Tensor::uniform(&shape, 0.5, 1.5, rng));
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

fn masked_backward_check(l: f64, rng: &mut Rng, _h: f64, perturb: bool) -> Result<f64> {
    let shape = [3usize, 4];
    // Larger step: the sigmoid tail keeps some gradient entries small, and
    // h = 1e-4 trades negligible truncation error for 10x less rounding
    // noise in the difference quotient.
    let h = 1e-4;
    let theta = sample_away_from_zero(&shape, rng);
    // Logit range bounded so sigma'(l * phi) stays well above rounding
    // noise at the highest smooth temperature.
    let phi = Tensor::uniform(&shape, -0.4, 0.4, rng);
    // Quadratic loss L(w) = sum(c * (w - t)^2) with a known upstream.
    let c = Tensor::uniform(&shape, 0.5, 1.5, rng);
    // Targets sit outside the effective-weight range so the upstream
    // gradient never vanishes.
    let t = Tensor::uniform(&shape, 3.0, 4.0, rng);
    let loss_of = |w: &Tensor| -> f64 {
        w.data()
            .iter()
            .zip(c.data())
            .zip(t.data())
            .map(|((&wv, &cv), &tv)| cv * (wv - tv) * (wv - tv))
            .sum()
    };
    let mp = MaskedParameter {
        theta: theta.clone(),
        phi: phi.clone(),
        l_fwd: l,
        l_bwd: l,
    };
    let w_eff = mp.effective_weight();
    // upstream = dL/dw = 2 c (w_eff - t)
    let upstream = {
        let mut u = w_eff.clone();
        for ((uv, &cv), &tv) in u.data_mut().iter_mut().zip(c.data()).zip(t.data()) {
            *uv = 2.0 * cv * (*uv - tv);
        }
        u
    };

    let (mut grad_theta, mut grad_phi) = mp.masked_backward(&upstream)?;
    if perturb {
        for v in grad_theta.data_mut() {
            *v *= 1.001;
        }
        for v in grad_phi.data_mut() {
            *v *= 1.001;
        }
    }

    // theta gradient vs differences in theta.
    let mut f_theta = |probe: &Tensor| -> Result<f64> {
        let mp = MaskedParameter {
            theta: probe.clone(),
            phi: phi.clone(),
            l_fwd: l,
            l_bwd: l,
        };
        Ok(loss_of(&mp.effective_weight()))
    };
    let worst_theta = finite_difference_check(&mut f_theta, &theta, h, &grad_theta)?;

    // phi gradient: the backward rule is the derivative with respect to the
    // pre-sigmoid logit psi = l*phi, so differentiate in psi-space.
    let psi = phi.map(|p| l * p);
    let mut f_psi = |probe: &Tensor| -> Result<f64> {
        let w = theta
            .zip_map(probe, "eff", |tv, pv| tv * crate::tape::sigmoid_scalar(pv))
            .unwrap();
        Ok(loss_of(&w))
    };
    let worst_phi = finite_difference_check(&mut f_psi, &psi, h, &grad_phi)?;
    Ok(worst_theta.max(worst_phi))
}

fn full_model_check(rng: &mut Rng, _h: f64, perturb: bool) -> Result<f64> {
    // Deep composition: occasional near-zero gradient entries need the
    // wide stencil's noise floor.
    let h = 5e-4;
    let spec = ModelSpec {
        depth: 3,
        width: 4,
        activation: Activation::Tanh,
        residual: true,
        layerscale: Some(0.5),
        normalization: false,
        d_in: 3,
        d_out: 2,
        init: InitScheme::UniformScaled,
        init_gain: 1.5,
        ..ModelSpec::default()
    };
    let model = Model::build(&spec, rng.next_u64())?;
    let x = Tensor::normal(&[4, 3], 1.0, rng);
    let target = Tensor::normal(&[4, 2], 1.0, rng);
    let leaves = model.leaf_values();

    let mut tape = Tape::new();
    let (out, leaf_ids) = model.forward(&mut tape, &x, &leaves)?;
    let loss = tape.mse(out, &target)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (i, param) in model.params.iter().enumerate() {
        let mut analytic = grads.get_or_zeros(leaf_ids[i], param.value.shape());
        if perturb {
            for v in analytic.data_mut() {
                *v *= 1.001;
            }
        }
        let mut f = |probe: &Tensor| -> Result<f64> {
            let mut leaves = model.leaf_values();
            leaves[i] = probe.clone();
            let mut tape = Tape::new();
            let (out, _) = model.forward(&mut tape, &x, &leaves)?;
            let loss = tape.mse(out, &target)?;
            Ok(tape.value(loss).item())
        };
        worst = worst.max(finite_difference_check_5pt(&mut f, &param.value, h, &analytic)?);
    }
    Ok(worst)
}

/// Run the oracle over every registered primitive. `cases` seeded scenarios
/// per op; `perturb` deliberately corrupts the analytic gradient of the
/// named op so the checker itself can be tested.
pub fn run_gradcheck(seed: u64, cases: usize, perturb: Option<&str>) -> Result<GradcheckReport> {
    let root = Rng::new(seed);
    let h = FD_STEP;
    let mut checks: Vec<OpCheck> = Vec::new();

    let mut run = |name: &str,
                   scenario: &mut dyn FnMut(&mut Rng, bool) -> Result<f64>|
     -> Result<()> {
        let bad = perturb == Some(name);
        let mut worst = 0.0f64;
        for case in 0..cases {
            let mut rng = root.derive(name, case as u64);
            worst = worst.max(scenario(&mut rng, bad)?);
        }
        checks.push(OpCheck {
            name: name.to_string(),
            max_rel_err: worst,
        });
        Ok(())
    };

    // Dims vary per case; kept small so 100 cases stay well under budget.
    let dims = |rng: &mut Rng| 2 + rng.below(3);

    run("matmul", &mut |rng, bad| {
        let (m, k, n) = (dims(rng), dims(rng), dims(rng));
        // Positive operands: the backward products are sums of same-sign
        // terms, so no analytic entry cancels toward zero where the
        // difference quotient loses relative accuracy.
        let a = Tensor::uniform(&[m, k], 0.3, 1.5, rng);
        let b = Tensor::uniform(&[k, n], 0.3, 1.5, rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[a, b],
            &move |tape, ids| {
                let c = tape.matmul(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("add", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let a = sample_away_from_zero(&[m, n], rng);
        let b = sample_away_from_zero(&[m, n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[a, b],
            &move |tape, ids| {
                let c = tape.add(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("sub", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let a = sample_away_from_zero(&[m, n], rng);
        let b = sample_away_from_zero(&[m, n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[a, b],
            &move |tape, ids| {
                let c = tape.sub(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("mul", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let a = sample_away_from_zero(&[m, n], rng);
        let b = sample_away_from_zero(&[m, n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[a, b],
            &move |tape, ids| {
                let c = tape.mul(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("scale", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let a = sample_away_from_zero(&[m, n], rng);
        let c = rng.uniform_range(-2.0, 2.0);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[a],
            &move |tape, ids| {
                let s = tape.scale(ids[0], c);
                readout(tape, s, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("add_bias", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let x = sample_away_from_zero(&[m, n], rng);
        let b = sample_away_from_zero(&[n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x, b],
            &move |tape, ids| {
                let c = tape.add_bias(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("row_scale", &mut |rng, bad| {
        let (m, n) = (dims(rng), dims(rng));
        let x = Tensor::uniform(&[m, n], 0.3, 1.5, rng);
        let v = sample_away_from_zero(&[n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x, v],
            &move |tape, ids| {
                let c = tape.row_scale(ids[0], ids[1])?;
                readout(tape, c, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("tanh", &mut |rng, bad| {
        let x = sample_away_from_zero(&[dims(rng), dims(rng)], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x],
            &move |tape, ids| {
                let y = tape.tanh(ids[0]);
                readout(tape, y, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("relu", &mut |rng, bad| {
        let x = sample_away_from_zero(&[dims(rng), dims(rng)], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x],
            &move |tape, ids| {
                let y = tape.relu(ids[0]);
                readout(tape, y, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("gelu", &mut |rng, bad| {
        // gelu'(x) crosses zero near x = -0.7518; keep a margin around it.
        let mut x = sample_away_from_zero(&[dims(rng), dims(rng)], rng);
        for v in x.data_mut() {
            if (*v + 0.7518).abs() < 0.15 {
                *v += 0.3;
            }
        }
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x],
            &move |tape, ids| {
                let y = tape.gelu(ids[0]);
                readout(tape, y, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("sigmoid", &mut |rng, bad| {
        let x = sample_away_from_zero(&[dims(rng), dims(rng)], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x],
            &move |tape, ids| {
                let y = tape.sigmoid(ids[0]);
                readout(tape, y, &mut ro.clone())
            },
            h,
            false,
            bad,
        )
    })?;

    run("layer_norm", &mut |rng, bad| {
        let (m, n) = (dims(rng) + 1, dims(rng) + 1);
        // A per-feature ramp guarantees each row real variance, keeping
        // rstd (and its higher derivatives) bounded.
        let mut x = sample_away_from_zero(&[m, n], rng);
        for i in 0..m {
            for j in 0..n {
                x.data_mut()[i * n + j] += j as f64 * 0.8;
            }
        }
        let gain = sample_away_from_zero(&[n], rng);
        let bias = sample_away_from_zero(&[n], rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x, gain, bias],
            &move |tape, ids| {
                let y = tape.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
                readout(tape, y, &mut ro.clone())
            },
            // Centered terms leave some analytic entries small; the wide
            // stencil keeps the noise floor well below tolerance.
            5e-4,
            true,
            bad,
        )
    })?;

    run("mse", &mut |rng, bad| {
        let (m, n) = (3, 2);
        let pred = sample_away_from_zero(&[m, n], rng);
        // Targets outside the prediction range keep every residual, and so
        // every gradient entry, bounded away from zero.
        let target = Tensor::uniform(&[m, n], 3.0, 4.0, rng);
        check_scenario(
            &[pred],
            &move |tape, ids| tape.mse(ids[0], &target),
            h,
            false,
            bad,
        )
    })?;

    run("softmax_xent", &mut |rng, bad| {
        let (m, c) = (dims(rng) + 1, dims(rng) + 1);
        let logits = sample_away_from_zero(&[m, c], rng);
        let classes: Vec<usize> = (0..m).map(|_| rng.below(c)).collect();
        check_scenario(
            &[logits],
            &move |tape, ids| tape.softmax_xent(ids[0], &classes),
            h,
            false,
            bad,
        )
    })?;

    run("residual_block", &mut |rng, bad| {
        let (n, w) = (3, 4);
        // All-positive, moderate magnitudes: tanh stays un-saturated and
        // every chain product keeps the same sign, so no gradient entry
        // collapses below finite-difference resolution.
        let x = Tensor::uniform(&[n, w], 0.1, 0.6, rng);
        let w1 = Tensor::uniform(&[w, w], 0.1, 0.6, rng);
        let b1 = Tensor::uniform(&[w], 0.1, 0.6, rng);
        let w2 = Tensor::uniform(&[w, w], 0.1, 0.6, rng);
        let b2 = Tensor::uniform(&[w], 0.1, 0.6, rng);
        let ls = Tensor::uniform(&[w], 0.1, 0.6, rng);
        let ro = rng.derive("ro", 0);
        check_scenario(
            &[x, w1, b1, w2, b2, ls],
            &move |tape, ids| {
                let y = crate::tape::residual_block_forward(
                    tape,
                    ids[0],
                    ids[1],
                    ids[2],
                    ids[3],
                    ids[4],
                    |t, n| t.tanh(n),
                    Some(ids[5]),
                    true,
                )?;
                readout(tape, y, &mut ro.clone())
            },
            5e-4,
            true,
            bad,
        )
    })?;

    run("masked_backward_l1", &mut |rng, bad| {
        masked_backward_check(1.0, rng, h, bad)
    })?;

    run("masked_backward_l10", &mut |rng, bad| {
        masked_backward_check(10.0, rng, h, bad)
    })?;

    run("full_model", &mut |rng, bad| full_model_check(rng, h, bad))?;

    Ok(GradcheckReport { checks })
}

/// Hyperparameters used by the masked-backward scenarios.
pub fn smooth_hyper(l: f64) -> MsrsHyper {
    MsrsHyper {
        l_fwd: l,
        l_bwd: l,
        ..MsrsHyper::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_quadratic_scalar() {
        // f(x) = x^2 at x = 3: analytic gradient 6.
        let x = Tensor::scalar(3.0);
        let mut f = |t: &Tensor| -> Result<f64> { Ok(t.item() * t.item()) };
        let fd = central_difference_grad(&mut f, &x, 1e-5).unwrap();
        assert!((fd.item() - 6.0).abs() < 1e-8);
        let err = finite_difference_check(&mut f, &x, 1e-5, &Tensor::scalar(6.0)).unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn fd_exact_for_linear() {
        let x = Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.01]).unwrap();
        let mut f = |t: &Tensor| -> Result<f64> { Ok(t.sum()) };
        let ones = Tensor::full(&[4], 1.0);
        let err = finite_difference_check(&mut f, &x, 1e-5, &ones).unwrap();
        assert!(err < 1e-10, "rel err {err}");
    }

    #[test]
    fn suite_passes_on_fresh_state() {
        let report = run_gradcheck(1234, 5, None).unwrap();
        assert!(
            report.all_within(GRADCHECK_TOL),
            "worst: {} at {}",
            report.worst().max_rel_err,
            report.worst().name
        );
        // One line per registered primitive.
        assert!(report.checks.len() >= 15);
    }

    #[test]
    fn suite_catches_perturbed_gradient() {
        let report = run_gradcheck(1234, 3, Some("matmul")).unwrap();
        let failures = report.failures(GRADCHECK_TOL);
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].name, "matmul");
    }

    #[test]
    fn zero_layerscale_passes_upstream_to_trunk_exactly() {
        // With the branch annihilated by a zero diagonal, the residual block
        // is the identity and the trunk input receives the upstream
        // gradient unchanged.
        let mut rng = Rng::new(4);
        let (n, w) = (3, 4);
        let x = Tensor::uniform(&[n, w], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let w1 = tape.leaf(Tensor::uniform(&[w, w], -1.0, 1.0, &mut rng));
        let b1 = tape.leaf(Tensor::uniform(&[w], -1.0, 1.0, &mut rng));
        let w2 = tape.leaf(Tensor::uniform(&[w, w], -1.0, 1.0, &mut rng));
        let b2 = tape.leaf(Tensor::uniform(&[w], -1.0, 1.0, &mut rng));
        let ls = tape.leaf(Tensor::zeros(&[w]));
        let y = crate::tape::residual_block_forward(
            &mut tape,
            xi,
            w1,
            b1,
            w2,
            b2,
            |t, n| t.tanh(n),
            Some(ls),
            true,
        )
        .unwrap();
        assert_eq!(tape.value(y), &x, "zero layerscale block is the identity");
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(xi).unwrap();
        for &g in gx.data() {
            assert_eq!(g, 1.0, "trunk gradient must equal the upstream exactly");
        }
    }

    #[test]
    fn backward_is_linear_in_seed() {
        let mut rng = Rng::new(8);
        let a = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let ia = tape.leaf(a);
        let ib = tape.leaf(b);
        let prod = tape.matmul(ia, ib).unwrap();
        let loss = tape.sum(prod);
        let g1 = tape.backward_seeded(loss, 1.0).unwrap();
        let g2 = tape.backward_seeded(loss, 2.0).unwrap();
        let (x1, x2) = (g1.get(ia).unwrap(), g2.get(ia).unwrap());
        for (&u, &v) in x1.data().iter().zip(x2.data()) {
            assert!((2.0 * u - v).abs() < 1e-12);
        }
    }
}
