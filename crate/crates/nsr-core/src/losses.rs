//! Loss catalog: MSE-to-one-hot and margin classification terms, the two
//! noise-to-signal-ratio regularizers with correct/incorrect gating, the
//! Jacobian-regularized and adversarial-training baselines, and the frozen-
//! mask double-backprop composition that yields parameter gradients for all
//! of them.

use crate::error::{NsrError, Result};
use crate::nn::{
    backward_pass, effective_linear, effective_weight_for_labels, param_grads, tangent_pass,
    EffectiveLinear, ForwardTrace, Model, ParamGrads,
};
use crate::tensor::{dot, norm_l1, norm_l2_sq, Dtype, Tensor};

/// Stabilizer added to |z_y| in the R2 denominator.
pub const R2_STAB: f64 = 1e-8;
/// Below this squared norm an input is considered degenerate and its R1
/// term is skipped (and tallied).
pub const R1_DEGENERATE_XSQ: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Mse,
    MseMargin,
    Loss1,
    Loss2,
    Jacob,
    Adv,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    pub eps_max: f64,
    pub lambda_jac: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> LossConfig {
        LossConfig { kind, beta1: 0.2, beta2: 0.5, gamma: 1.0, eps_max: 1.0, lambda_jac: 0.01 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta1 < 0.0 || self.beta2 < 0.0 || self.lambda_jac < 0.0 || self.eps_max < 0.0 {
            return Err(NsrError::Argument(format!(
                "loss coefficients must be non-negative: beta1 {}, beta2 {}, lambda_jac {}, eps_max {}",
                self.beta1, self.beta2, self.lambda_jac, self.eps_max
            )));
        }
        Ok(())
    }

    /// Whether this loss needs per-sample effective weights for the true class.
    pub fn needs_wy(&self) -> bool {
        matches!(self.kind, LossKind::Loss1 | LossKind::Loss2)
    }

    pub fn needs_full_w(&self) -> bool {
        self.kind == LossKind::Jacob
    }
}

fn check_label(z: &[f64], y: usize) -> Result<()> {
    if y >= z.len() {
        return Err(NsrError::Argument(format!("label {y} out of range for {} classes", z.len())));
    }
    Ok(())
}

/// Squared distance of the logit vector to the one-hot target.
pub fn mse_onehot(z: &[f64], y: usize) -> Result<f64> {
    check_label(z, y)?;
    Ok(z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = if i == y { 1.0 } else { 0.0 };
            (v - t) * (v - t)
        })
        .sum())
}

/// Multi-class margin: sum over i != y of max(0, 1 - z_y + z_i). The i = y
/// term would be the constant 1 and is excluded.
pub fn margin_loss(z: &[f64], y: usize) -> Result<f64> {
    check_label(z, y)?;
    let zy = z[y];
    Ok(z.iter()
        .enumerate()
        .filter(|&(i, _)| i != y)
        .map(|(_, &zi)| (1.0 - zy + zi).max(0.0))
        .sum())
}

/// -log softmax(z)_y with max-shift stabilization.
pub fn cross_entropy(z: &[f64], y: usize) -> Result<f64> {
    check_label(z, y)?;
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - z[y])
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Alignment regularizer ||w_y - gamma * x / (x.x)||^2, or None when x is
/// degenerate (its term is skipped and tallied by the caller).
pub fn reg_r1(w_y: &[f64], x: &[f64], gamma: f64) -> Option<f64> {
    let xsq = norm_l2_sq(x);
    if xsq < R1_DEGENERATE_XSQ {
        return None;
    }
    Some(
        w_y.iter()
            .zip(x)
            .map(|(&w, &xv)| {
                let d = w - gamma * xv / xsq;
                d * d
            })
            .sum(),
    )
}

/// NSR upper bound ||w_y||_1 * eps_max / (|z_y| + stab).
pub fn reg_r2(w_y: &[f64], z_y: f64, eps_max: f64) -> f64 {
    norm_l1(w_y) * eps_max / (z_y.abs() + R2_STAB)
}

/// A w-dependent term's contribution to the double-backprop pass: a
/// cotangent seed at the logits paired with an input-space tangent. The
/// parameter gradient of the term is the pairing of the two passes.
#[derive(Debug, Clone)]
pub struct SecondOrderSeed {
    pub cot: Tensor,
    pub tangent: Tensor,
}

/// Value and backward signals of a batch loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    /// d(loss)/d(logits), already scaled by 1/N.
    pub dz: Tensor,
    pub seeds: Vec<SecondOrderSeed>,
    /// Samples currently classified correctly (margin/regularizer gate).
    pub gated: usize,
    /// Samples whose R1 term was skipped for degenerate x.
    pub r1_skipped: usize,
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct BatchAcc {
    value: f64,
    dz: Tensor,
    gated: usize,
    r1_skipped: usize,
}

fn mse_margin_base(
    logits: &Tensor,
    labels: &[usize],
    with_margin: bool,
) -> Result<BatchAcc> {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut dz = Tensor::zeros(&[n, c], Dtype::F64);
    let mut gated = 0;
    for s in 0..n {
        let z = logits.row(s);
        let y = labels[s];
        value += mse_onehot(z, y)? * inv_n;
        for i in 0..c {
            let t = if i == y { 1.0 } else { 0.0 };
            dz.data_mut()[s * c + i] += 2.0 * (z[i] - t) * inv_n;
        }
        let correct = argmax(z) == y;
        if correct {
            gated += 1;
            if with_margin {
                value += margin_loss(z, y)? * inv_n;
                let zy = z[y];
                let mut active = 0usize;
                for i in 0..c {
                    if i != y && 1.0 - zy + z[i] > 0.0 {
                        dz.data_mut()[s * c + i] += inv_n;
                        active += 1;
                    }
                }
                dz.data_mut()[s * c + y] -= active as f64 * inv_n;
            }
        }
    }
    Ok(BatchAcc { value, dz, gated, r1_skipped: 0 })
}

fn gate_mask(logits: &Tensor, labels: &[usize]) -> Vec<bool> {
    (0..logits.shape()[0]).map(|s| argmax(logits.row(s)) == labels[s]).collect()
}

/// loss1: mse + gated (margin + beta1 * R1). `wy` holds per-sample w_y rows.
pub fn loss1_batch(
    logits: &Tensor,
    wy: &Tensor,
    x: &Tensor,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossEval> {
    cfg.validate()?;
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    if wy.shape()[0] != n || x.shape()[0] != n {
        return Err(NsrError::Contract(format!(
            "loss1 batch misalignment: logits {n}, wy {}, x {}",
            wy.shape()[0],
            x.shape()[0]
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut acc = mse_margin_base(logits, labels, true)?;
    let gate = gate_mask(logits, labels);
    let in_dim = wy.shape()[1];
    let mut cot = Tensor::zeros(&[n, c], Dtype::F64);
    let mut tangent = Tensor::zeros(&[n, in_dim], Dtype::F64);
    let mut any = false;
    for s in 0..n {
        if !gate[s] {
            continue;
        }
        let xrow = x.row(s);
        match reg_r1(wy.row(s), xrow, cfg.gamma) {
            Some(r1) => {
                acc.value += cfg.beta1 * r1 * inv_n;
                if cfg.beta1 > 0.0 {
                    any = true;
                    let xsq = norm_l2_sq(xrow);
                    cot.data_mut()[s * c + labels[s]] = 1.0;
                    for (j, (&w, &xv)) in wy.row(s).iter().zip(xrow).enumerate() {
                        tangent.data_mut()[s * in_dim + j] =
                            2.0 * cfg.beta1 * inv_n * (w - cfg.gamma * xv / xsq);
                    }
                }
            }
            None => acc.r1_skipped += 1,
        }
    }
    let seeds = if any { vec![SecondOrderSeed { cot, tangent }] } else { vec![] };
    Ok(LossEval { value: acc.value, dz: acc.dz, seeds, gated: acc.gated, r1_skipped: acc.r1_skipped })
}

/// loss2: mse + gated (margin + beta2 * log(1 + R2)).
pub fn loss2_batch(
    logits: &Tensor,
    wy: &Tensor,
    x: &Tensor,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossEval> {
    cfg.validate()?;
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    if wy.shape()[0] != n || x.shape()[0] != n {
        return Err(NsrError::Contract(format!(
            "loss2 batch misalignment: logits {n}, wy {}, x {}",
            wy.shape()[0],
            x.shape()[0]
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut acc = mse_margin_base(logits, labels, true)?;
    let gate = gate_mask(logits, labels);
    let in_dim = wy.shape()[1];
    let mut cot = Tensor::zeros(&[n, c], Dtype::F64);
    let mut tangent = Tensor::zeros(&[n, in_dim], Dtype::F64);
    let mut any = false;
    for s in 0..n {
        if !gate[s] {
            continue;
        }
        let y = labels[s];
        let zy = logits.at2(s, y);
        let wrow = wy.row(s);
        let r2 = reg_r2(wrow, zy, cfg.eps_max);
        acc.value += cfg.beta2 * (1.0 + r2).ln() * inv_n;
        if cfg.beta2 > 0.0 {
            any = true;
            let chain = cfg.beta2 / (1.0 + r2) * inv_n;
            let denom = zy.abs() + R2_STAB;
            // d/dz_y of ||w||1 * eps / (|z_y| + stab)
            acc.dz.data_mut()[s * c + y] +=
                chain * (-norm_l1(wrow) * cfg.eps_max * zy.signum() / (denom * denom));
            cot.data_mut()[s * c + y] = 1.0;
            for (j, &w) in wrow.iter().enumerate() {
                tangent.data_mut()[s * in_dim + j] = chain * cfg.eps_max / denom * sign0(w);
            }
        }
    }
    let seeds = if any { vec![SecondOrderSeed { cot, tangent }] } else { vec![] };
    Ok(LossEval { value: acc.value, dz: acc.dz, seeds, gated: acc.gated, r1_skipped: 0 })
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cross-entropy batch (mean).
pub fn ce_batch(logits: &Tensor, labels: &[usize]) -> Result<LossEval> {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut dz = Tensor::zeros(&[n, c], Dtype::F64);
    let mut gated = 0;
    for s in 0..n {
        let z = logits.row(s);
        let y = labels[s];
        value += cross_entropy(z, y)? * inv_n;
        let p = softmax(z);
        for i in 0..c {
            let t = if i == y { 1.0 } else { 0.0 };
            dz.data_mut()[s * c + i] = (p[i] - t) * inv_n;
        }
        if argmax(z) == y {
            gated += 1;
        }
    }
    Ok(LossEval { value, dz, seeds: vec![], gated, r1_skipped: 0 })
}

/// Jacobian-regularized baseline: cross-entropy plus (lambda/2) times the
/// squared Frobenius norm of the effective input Jacobian (its rows are the
/// effective class weights).
pub fn jacob_batch(
    logits: &Tensor,
    full: &EffectiveLinear,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossEval> {
    cfg.validate()?;
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    if full.classes.len() != c {
        return Err(NsrError::Contract(format!(
            "jacob needs effective weights for all {c} classes, got {}",
            full.classes.len()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut eval = ce_batch(logits, labels)?;
    let mut seeds = Vec::new();
    for (ci, w) in full.w.iter().enumerate() {
        let in_dim = w.shape()[1];
        let mut cot = Tensor::zeros(&[n, c], Dtype::F64);
        let mut tangent = Tensor::zeros(&[n, in_dim], Dtype::F64);
        for s in 0..n {
            eval.value += 0.5 * cfg.lambda_jac * norm_l2_sq(w.row(s)) * inv_n;
            if cfg.lambda_jac > 0.0 {
                cot.data_mut()[s * c + full.classes[ci]] = 1.0;
                for (j, &wv) in w.row(s).iter().enumerate() {
                    tangent.data_mut()[s * in_dim + j] = cfg.lambda_jac * inv_n * wv;
                }
            }
        }
        if cfg.lambda_jac > 0.0 {
            seeds.push(SecondOrderSeed { cot, tangent });
        }
    }
    eval.seeds = seeds;
    Ok(eval)
}

/// Equal-weight clean/adversarial cross-entropy (the adversarial-training
/// objective). Returns the scalar only; the trainer backprops the two CE
/// halves separately.
pub fn adv_loss(logits_clean: &Tensor, logits_adv: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits_clean.shape() != logits_adv.shape() {
        return Err(NsrError::Argument(format!(
            "clean/adversarial logits shape mismatch: {:?} vs {:?}",
            logits_clean.shape(),
            logits_adv.shape()
        )));
    }
    Ok(0.5 * ce_batch(logits_clean, labels)?.value + 0.5 * ce_batch(logits_adv, labels)?.value)
}

/// Evaluate a catalog loss on a forward trace, producing backward signals.
pub fn eval_loss(
    model: &Model,
    trace: &ForwardTrace,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossEval> {
    let logits = trace.logits();
    let n = trace.batch();
    let x = trace.input().reshape(vec![n, model.input_dim()])?;
    match cfg.kind {
        LossKind::Ce | LossKind::Adv => ce_batch(logits, labels),
        LossKind::Mse => {
            let acc = mse_margin_base(logits, labels, false)?;
            Ok(LossEval {
                value: acc.value,
                dz: acc.dz,
                seeds: vec![],
                gated: acc.gated,
                r1_skipped: 0,
            })
        }
        LossKind::MseMargin => {
            let acc = mse_margin_base(logits, labels, true)?;
            Ok(LossEval {
                value: acc.value,
                dz: acc.dz,
                seeds: vec![],
                gated: acc.gated,
                r1_skipped: 0,
            })
        }
        LossKind::Loss1 => {
            let wy = effective_weight_for_labels(model, &trace.masks, labels)?;
            loss1_batch(logits, &wy, &x, labels, cfg)
        }
        LossKind::Loss2 => {
            let wy = effective_weight_for_labels(model, &trace.masks, labels)?;
            loss2_batch(logits, &wy, &x, labels, cfg)
        }
        LossKind::Jacob => {
            let full = effective_linear(model, trace, &[])?;
            jacob_batch(logits, &full, labels, cfg)
        }
    }
}

/// Full frozen-mask parameter gradient of a catalog loss: the ordinary
/// reverse pass for the logit-dependent part plus one tangent/cotangent
/// pairing per w-dependent term.
pub fn loss_param_grads(
    model: &Model,
    trace: &ForwardTrace,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossEval, ParamGrads)> {
    let eval = eval_loss(model, trace, labels, cfg)?;
    let mut grads = ParamGrads::new();
    let cots = backward_pass(model, &trace.masks, &eval.dz)?;
    param_grads(model, &trace.acts, &cots, true, &mut grads)?;
    let n = trace.batch();
    for seed in &eval.seeds {
        let u = seed.tangent.reshape(crate::nn::forward::batch_shape(n, model.shapes[0]))?;
        let tans = tangent_pass(model, &trace.masks, &u)?;
        let qs = backward_pass(model, &trace.masks, &seed.cot)?;
        param_grads(model, &tans, &qs, false, &mut grads)?;
    }
    Ok((eval, grads))
}

/// Exact NSR of a concrete perturbation, |w_y . eps| / |z_y|.
pub fn nsr(w_y: &[f64], eps: &[f64], z_y: f64) -> f64 {
    dot(w_y, eps).abs() / (z_y.abs() + R2_STAB)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandStream;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec(), Dtype::F64).unwrap()
    }

    #[test]
    fn mse_onehot_cases() {
        assert_eq!(mse_onehot(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_eq!(mse_onehot(&[0.0, 0.0, 0.0], 2).unwrap(), 1.0);
        assert!((mse_onehot(&[0.5, 0.5], 0).unwrap() - 0.5).abs() < 1e-15);
        assert!(mse_onehot(&[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn margin_cases() {
        assert_eq!(margin_loss(&[1.0, 0.0, 0.0], 0).unwrap(), 0.0);
        assert_eq!(margin_loss(&[0.5, 0.5], 0).unwrap(), 1.0);
        // shift invariance
        let z = [0.3, -0.2, 0.9];
        let zs: Vec<f64> = z.iter().map(|v| v + 13.7).collect();
        assert!((margin_loss(&z, 2).unwrap() - margin_loss(&zs, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_cases() {
        let uniform = [0.7; 5];
        assert!((cross_entropy(&uniform, 3).unwrap() - 5.0f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[100.0, 0.0], 0).unwrap() < 1e-10);
        assert!((cross_entropy(&[2.0, 0.0], 0).unwrap() - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn r1_cases() {
        let x = [1.0, 0.0];
        assert_eq!(reg_r1(&[1.0, 0.0], &x, 1.0).unwrap(), 0.0);
        assert_eq!(reg_r1(&[0.0, 1.0], &x, 1.0).unwrap(), 2.0);
        assert!(reg_r1(&[1.0, 1.0], &[0.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn r2_cases() {
        assert_eq!(reg_r2(&[0.0, 0.0], 5.0, 1.0), 0.0);
        assert!((reg_r2(&[1.0, -2.0, 3.0], 2.0, 1.0) - 3.0).abs() < 1e-7);
    }

    #[test]
    fn loss1_gating_partition() {
        // every sample misclassified -> pure mse
        let logits = t(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let labels = [0usize, 1];
        let wy = t(2, 3, &[0.0; 6]);
        let x = t(2, 3, &[0.5; 6]);
        let cfg = LossConfig::new(LossKind::Loss1);
        let e = loss1_batch(&logits, &wy, &x, &labels, &cfg).unwrap();
        let mut expect = 0.0;
        for s in 0..2 {
            expect += mse_onehot(logits.row(s), labels[s]).unwrap() / 2.0;
        }
        assert!((e.value - expect).abs() < 1e-12);
        assert_eq!(e.gated, 0);
        assert!(e.seeds.is_empty());
    }

    #[test]
    fn loss1_beta_zero_is_mse_margin() {
        let logits = t(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let labels = [0usize, 1];
        let wy = t(2, 3, &[0.3; 6]);
        let x = t(2, 3, &[0.5; 6]);
        let mut cfg = LossConfig::new(LossKind::Loss1);
        cfg.beta1 = 0.0;
        let e1 = loss1_batch(&logits, &wy, &x, &labels, &cfg).unwrap();
        let em = mse_margin_base(&logits, &labels, true).unwrap();
        assert!((e1.value - em.value).abs() < 1e-12);
    }

    #[test]
    fn loss2_zero_weights_regularizer_vanishes() {
        let logits = t(1, 2, &[0.9, 0.1]);
        let labels = [0usize];
        let wy = t(1, 3, &[0.0; 3]);
        let x = t(1, 3, &[0.5; 3]);
        let cfg = LossConfig::new(LossKind::Loss2);
        let e2 = loss2_batch(&logits, &wy, &x, &labels, &cfg).unwrap();
        let em = mse_margin_base(&logits, &labels, true).unwrap();
        assert!((e2.value - em.value).abs() < 1e-12);
    }

    #[test]
    fn loss2_hand_regularizer_value() {
        // single correct sample with R2 = 3, beta2 = 0.5 -> 0.5 ln 4
        let logits = t(1, 2, &[2.0, 0.0]);
        let labels = [0usize];
        let wy = t(1, 3, &[1.0, -2.0, 3.0]);
        let x = t(1, 3, &[0.1, 0.2, 0.3]);
        let cfg = LossConfig::new(LossKind::Loss2);
        let e2 = loss2_batch(&logits, &wy, &x, &labels, &cfg).unwrap();
        let em = mse_margin_base(&logits, &labels, true).unwrap();
        let reg = e2.value - em.value;
        assert!((reg - 0.5 * 4.0f64.ln()).abs() < 1e-6, "reg {reg}");
    }

    #[test]
    fn loss2_monotone_in_beta2_and_r2() {
        let logits = t(1, 2, &[2.0, 0.0]);
        let labels = [0usize];
        let x = t(1, 3, &[0.1, 0.2, 0.3]);
        let mut prev = f64::NEG_INFINITY;
        for beta2 in [0.0, 0.25, 0.5, 1.0] {
            let mut cfg = LossConfig::new(LossKind::Loss2);
            cfg.beta2 = beta2;
            let wy = t(1, 3, &[1.0, -2.0, 3.0]);
            let v = loss2_batch(&logits, &wy, &x, &labels, &cfg).unwrap().value;
            assert!(v >= prev);
            prev = v;
        }
        let cfg = LossConfig::new(LossKind::Loss2);
        let mut prev = f64::NEG_INFINITY;
        for scale in [0.5, 1.0, 2.0, 4.0] {
            let wy = t(1, 3, &[scale, -scale, scale]);
            let v = loss2_batch(&logits, &wy, &x, &labels, &cfg).unwrap().value;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn holder_bound_fuzz() {
        let mut rng = RandStream::new(99, 0);
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..8).map(|_| rng.uniform(-2.0, 2.0).unwrap()).collect();
            let e: Vec<f64> = (0..8).map(|_| rng.uniform(-0.5, 0.5).unwrap()).collect();
            let lhs = dot(&w, &e).abs();
            let rhs = norm_l1(&w) * crate::tensor::norm_linf(&e);
            assert!(lhs <= rhs + 1e-12);
        }
        // equality at eps = ||eps||_inf * sign(w)
        let w = [1.0, -2.0, 0.5];
        let eps: Vec<f64> = w.iter().map(|&v| 0.3 * sign0(v)).collect();
        let lhs = dot(&w, &eps).abs();
        assert!((lhs - norm_l1(&w) * 0.3).abs() < 1e-12);
    }

    #[test]
    fn catalog_losses_nonnegative_and_finite() {
        let mut rng = RandStream::new(7, 0);
        for _ in 0..200 {
            let z: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0).unwrap()).collect();
            let y = rng.index(5);
            assert!(mse_onehot(&z, y).unwrap() >= 0.0);
            assert!(margin_loss(&z, y).unwrap() >= 0.0);
            assert!(cross_entropy(&z, y).unwrap() >= 0.0);
            let w: Vec<f64> = (0..6).map(|_| rng.uniform(-3.0, 3.0).unwrap()).collect();
            let r2 = reg_r2(&w, z[y], 1.0);
            assert!(r2.is_finite() && r2 >= 0.0);
        }
    }
}
