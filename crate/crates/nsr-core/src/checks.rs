//! Self-verification suite: numeric properties the toolkit guarantees,
//! runnable from the CLI and asserted by the integration tests.
//!
//! Each check returns a pass/fail outcome with a worst-case detail string,
//! so a failing run points at the offending magnitude rather than just a
//! boolean.

use crate::attacks::{pgd_attack, AttackConfig};
use crate::error::Result;
use crate::losses::{eval_loss, nsr, reg_r2, LossConfig, LossKind};
use crate::nn::{build_cnn, build_mlp, effective_linear, forward, CnnConfig, Model};
use crate::rng::RandStream;
use crate::tensor::{conv1d, conv1d_toeplitz, dot, matmul, norm_l1, norm_linf, Dtype, Tensor};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
        CheckOutcome { name, passed, detail }
    }
}

fn small_mlp(dtype: Dtype, rng: &mut RandStream) -> Result<Model> {
    build_mlp(&[12, 10, 8, 4], true, dtype, rng)
}

fn small_cnn(dtype: Dtype, rng: &mut RandStream) -> Result<Model> {
    let cfg = CnnConfig { input_len: 40, blocks: 2, channels: 4, hidden: 8, ..CnnConfig::default() };
    build_cnn(&cfg, dtype, rng)
}

/// Largest |z - (w.x + b)| over random batches; exactness of the
/// effective linear form at the evaluation point itself.
pub fn exact_linearity(seed: u64) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut detail = String::new();
    for (arch, dtype, tol) in [("mlp", Dtype::F64, 1e-9), ("cnn", Dtype::F32, 1e-4)] {
        let mut rng = RandStream::new(seed, 0xC0);
        let model =
            if arch == "mlp" { small_mlp(dtype, &mut rng)? } else { small_cnn(dtype, &mut rng)? };
        let input_dim: usize = model.input_shape.iter().product();
        let mut shape = vec![8usize];
        shape.extend_from_slice(&model.input_shape);
        let x = rng.uniform_tensor(0.0, 1.0, &shape, dtype)?;
        let trace = forward(&model, &x)?;
        let eff = effective_linear(&model, &trace, &[])?;
        let logits = trace.logits();
        let mut gap = 0.0f64;
        for n in 0..8 {
            let xr = &x.data()[n * input_dim..(n + 1) * input_dim];
            for (ci, &c) in eff.classes.iter().enumerate() {
                let z_lin = dot(eff.w[ci].row(n), xr) + eff.b.row(n)[ci];
                gap = gap.max((logits.row(n)[c] - z_lin).abs());
            }
        }
        detail.push_str(&format!("{arch}/{dtype:?} gap {gap:.3e} (tol {tol:.0e}); "));
        if gap > tol {
            return Ok(CheckOutcome::new("exact-linearity", false, detail));
        }
        worst = worst.max(gap);
    }
    Ok(CheckOutcome::new("exact-linearity", true, detail))
}

/// Within a linear region the form must predict the network exactly: move
/// to a nearby point, and if the activation pattern is unchanged the old
/// (w, b) still reproduce the logits.
pub fn frozen_region_exactness(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = RandStream::new(seed, 0xF2);
    let model = small_mlp(Dtype::F64, &mut rng)?;
    let mut worst = 0.0f64;
    let mut kept = 0;
    for _ in 0..trials {
        let x = rng.uniform_tensor(0.0, 1.0, &[1, 12], Dtype::F64)?;
        let trace = forward(&model, &x)?;
        let eff = effective_linear(&model, &trace, &[])?;
        let step = rng.uniform_tensor(-1e-6, 1e-6, &[1, 12], Dtype::F64)?;
        let x2 = x.add(&step)?;
        let trace2 = forward(&model, &x2)?;
        if !trace.masks.same_region(&trace2.masks) {
            continue; // crossed a region boundary; the guarantee does not apply
        }
        kept += 1;
        for (ci, &c) in eff.classes.iter().enumerate() {
            let z_lin = dot(eff.w[ci].row(0), x2.row(0)) + eff.b.row(0)[ci];
            worst = worst.max((trace2.logits().row(0)[c] - z_lin).abs());
        }
    }
    let passed = worst < 1e-9 && kept > 0;
    Ok(CheckOutcome::new(
        "frozen-region-exactness",
        passed,
        format!("worst gap {worst:.3e} over {kept}/{trials} same-region trials"),
    ))
}

/// Central finite differences on the full objective (including the
/// regularizer terms that differentiate through the effective weights)
/// against the analytic parameter gradients.
pub fn double_backprop_fd(seed: u64) -> Result<CheckOutcome> {
    let mut rng = RandStream::new(seed, 0xDB);
    let model = build_mlp(&[6, 5, 4, 3], true, Dtype::F64, &mut rng)?;
    let x = rng.uniform_tensor(0.05, 0.95, &[4, 6], Dtype::F64)?;
    let labels = [0usize, 1, 2, 0];
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut worst_at = String::from("-");
    let mut checked = 0usize;
    for kind in [LossKind::Loss1, LossKind::Loss2, LossKind::Jacob] {
        let cfg = LossConfig::new(kind);
        let trace = forward(&model, &x)?;
        let (_, grads) = crate::losses::loss_param_grads(&model, &trace, &labels, &cfg)?;
        for (name, g) in &grads {
            // probe a spread of coordinates, not just the first
            let stride = (g.len() / 7).max(1);
            for i in (0..g.len()).step_by(stride) {
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap().data_mut()[i] -= h;
                // guard: the loss is piecewise smooth; skip probes that
                // land in a different activation region
                let mp = forward(&plus, &x)?;
                let mm = forward(&minus, &x)?;
                if !mp.masks.same_region(&mm.masks) {
                    continue;
                }
                let fd = (eval_loss(&plus, &mp, &labels, &cfg)?.value
                    - eval_loss(&minus, &mm, &labels, &cfg)?.value)
                    / (2.0 * h);
                let analytic = g.data()[i];
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
                checked += 1;
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{kind:?}:{name}[{i}]");
                }
            }
        }
    }
    let passed = worst < 1e-3 && checked > 20;
    Ok(CheckOutcome::new(
        "double-backprop-finite-difference",
        passed,
        format!("worst rel err {worst:.3e} at {worst_at} over {checked} probes"),
    ))
}

/// The noise-to-signal ratio of any perturbation with `||d||_inf <= eps`
/// never exceeds the bound `||w||_1 * eps / (|z| + stab)`.
pub fn holder_bound_fuzz(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = RandStream::new(seed, 0x01de4);
    let mut worst_margin = f64::INFINITY;
    for _ in 0..trials {
        let dim = 1 + rng.index(32);
        let w: Vec<f64> = (0..dim).map(|_| rng.normal(0.0, 2.0).unwrap()).collect();
        let eps_max = rng.uniform(1e-3, 1.0)?;
        let d: Vec<f64> = (0..dim).map(|_| rng.uniform(-eps_max, eps_max).unwrap()).collect();
        let z = rng.normal(0.0, 3.0)?;
        let bound = reg_r2(&w, z, eps_max);
        let ratio = nsr(&w, &d, z);
        if ratio > bound + 1e-12 {
            return Ok(CheckOutcome::new(
                "holder-bound",
                false,
                format!("nsr {ratio} exceeds bound {bound} (dim {dim}, eps {eps_max})"),
            ));
        }
        worst_margin = worst_margin.min(bound - ratio);
        debug_assert!(norm_linf(&d) <= eps_max && norm_l1(&w).is_finite());
    }
    Ok(CheckOutcome::new(
        "holder-bound",
        true,
        format!("{trials} trials, tightest slack {worst_margin:.3e}"),
    ))
}

/// Every PGD output stays inside both the eps-ball and the data bounds.
pub fn attack_containment_fuzz(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = RandStream::new(seed, 0xACF);
    let model = small_mlp(Dtype::F64, &mut rng)?;
    let mut worst = 0.0f64;
    let batch = 20;
    let rounds = trials.div_ceil(batch);
    for _ in 0..rounds {
        let eps = rng.uniform(1e-3, 0.4)?;
        let steps = 1 + rng.index(8);
        let x = rng.uniform_tensor(0.0, 1.0, &[batch, 12], Dtype::F64)?;
        let labels: Vec<usize> = (0..batch).map(|_| rng.index(4)).collect();
        let cfg = AttackConfig::pgd(eps, steps);
        let adv = pgd_attack(&model, &x, &labels, &cfg, &mut rng)?;
        for (a, b) in adv.data().iter().zip(x.data()) {
            let excess = (a - b).abs() - eps;
            let oob = (-a).max(a - 1.0);
            worst = worst.max(excess).max(oob);
        }
    }
    let passed = worst <= 1e-9;
    Ok(CheckOutcome::new(
        "attack-containment",
        passed,
        format!("worst violation {worst:.3e} over {} samples", rounds * batch),
    ))
}

/// Direct convolution agrees with the explicit Toeplitz matrix product.
pub fn conv_toeplitz_agreement(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = RandStream::new(seed, 0xC0117);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let in_ch = 1 + rng.index(3);
        let out_ch = 1 + rng.index(3);
        let k = 1 + rng.index(5);
        let len = k + rng.index(12);
        let stride = 1 + rng.index(2);
        let pad = rng.index(k);
        let x = rng.normal_tensor(0.0, 1.0, &[in_ch, len], Dtype::F64)?;
        let kernels = rng.normal_tensor(0.0, 1.0, &[out_ch, in_ch, k], Dtype::F64)?;
        let direct = conv1d(&x, &kernels, stride, pad)?;
        let toe = conv1d_toeplitz(&kernels, len, stride, pad)?;
        let flat = Tensor::new(vec![in_ch * len, 1], x.data().to_vec(), Dtype::F64)?;
        let via = matmul(&toe, &flat)?;
        for (a, b) in direct.data().iter().zip(via.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    let passed = worst < 1e-10;
    Ok(CheckOutcome::new(
        "conv-toeplitz-agreement",
        passed,
        format!("worst gap {worst:.3e} over {trials} configurations"),
    ))
}

/// Run every check at the given thoroughness (fuzz trial count).
pub fn run_all(seed: u64, fuzz_trials: usize) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        exact_linearity(seed)?,
        frozen_region_exactness(seed, 200)?,
        double_backprop_fd(seed)?,
        holder_bound_fuzz(seed, fuzz_trials)?,
        attack_containment_fuzz(seed, fuzz_trials)?,
        conv_toeplitz_agreement(seed, 300)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_at_reduced_scale() {
        for c in run_all(5, 500).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
