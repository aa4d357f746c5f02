//! Adversarial example generators: white-box K-step PGD with sign steps and
//! L∞-ball projection, and the gradient-free SPSA attack driven by antithetic
//! forward evaluations and an Adamax update.

use crate::error::{NsrError, Result};
use crate::losses::softmax;
use crate::nn::{backward_pass, forward, Model};
use crate::rng::RandStream;
use crate::tensor::{Dtype, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackLoss {
    Ce,
    Margin,
    Mse,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub eps: f64,
    pub steps: usize,
    /// Defaults to 2.5 * eps / steps when absent.
    pub step_size: Option<f64>,
    pub random_start: bool,
    pub bounds: (f64, f64),
    pub loss: AttackLoss,
}

impl AttackConfig {
    pub fn pgd(eps: f64, steps: usize) -> AttackConfig {
        AttackConfig {
            eps,
            steps,
            step_size: None,
            random_start: true,
            bounds: (0.0, 1.0),
            loss: AttackLoss::Ce,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.eps / self.steps.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 {
            return Err(NsrError::Argument(format!("attack eps must be >= 0, got {}", self.eps)));
        }
        if let Some(a) = self.step_size {
            if a <= 0.0 {
                return Err(NsrError::Argument(format!("step size must be > 0, got {a}")));
            }
        }
        if self.bounds.0 >= self.bounds.1 {
            return Err(NsrError::Argument(format!(
                "data bounds must satisfy lo < hi, got {:?}",
                self.bounds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SpsaConfig {
    pub eps: f64,
    pub iterations: usize,
    /// Finite-difference perturbation size.
    pub delta: f64,
    /// Adamax learning rate.
    pub lr: f64,
    /// Antithetic pairs per gradient estimate (2 forward evaluations each).
    pub pairs: usize,
    pub bounds: (f64, f64),
}

impl SpsaConfig {
    pub fn paper(eps: f64) -> SpsaConfig {
        SpsaConfig { eps, iterations: 100, delta: 0.01, lr: 0.01, pairs: 1024, bounds: (0.0, 1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 || self.pairs == 0 || self.eps < 0.0 {
            return Err(NsrError::Argument(format!(
                "spsa needs delta > 0, pairs >= 1, eps >= 0; got delta {}, pairs {}, eps {}",
                self.delta, self.pairs, self.eps
            )));
        }
        Ok(())
    }
}

/// Gradient of the attack objective w.r.t. the logits, per sample; the
/// attacker ascends this objective.
fn attack_dz(logits: &Tensor, labels: &[usize], loss: AttackLoss) -> Tensor {
    let n = logits.shape()[0];
    let c = logits.shape()[1];
    let mut dz = Tensor::zeros(&[n, c], Dtype::F64);
    for s in 0..n {
        let z = logits.row(s);
        let y = labels[s];
        match loss {
            AttackLoss::Ce => {
                let p = softmax(z);
                for i in 0..c {
                    let t = if i == y { 1.0 } else { 0.0 };
                    dz.data_mut()[s * c + i] = p[i] - t;
                }
            }
            AttackLoss::Margin => {
                let zy = z[y];
                let mut active = 0usize;
                for i in 0..c {
                    if i != y && 1.0 - zy + z[i] > 0.0 {
                        dz.data_mut()[s * c + i] = 1.0;
                        active += 1;
                    }
                }
                dz.data_mut()[s * c + y] = -(active as f64);
            }
            AttackLoss::Mse => {
                for i in 0..c {
                    let t = if i == y { 1.0 } else { 0.0 };
                    dz.data_mut()[s * c + i] = 2.0 * (z[i] - t);
                }
            }
        }
    }
    dz
}

fn clamp_ball(x_adv: &mut Tensor, x: &Tensor, eps: f64, bounds: (f64, f64)) {
    for (v, &orig) in x_adv.data_mut().iter_mut().zip(x.data()) {
        *v = v.min(orig + eps).max(orig - eps).min(bounds.1).max(bounds.0);
    }
}

/// K-step PGD: x^k = clip(x^{k-1} + alpha * sign(grad_x loss)), projected to
/// the eps-ball around x and the data bounds after every step.
pub fn pgd_attack(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut RandStream,
) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.eps == 0.0 || cfg.steps == 0 {
        return Ok(x.clone());
    }
    let alpha = cfg.alpha();
    let mut x_adv = x.clone();
    if cfg.random_start {
        for v in x_adv.data_mut() {
            *v += cfg.eps * (2.0 * rng.next_f64() - 1.0);
        }
        clamp_ball(&mut x_adv, x, cfg.eps, cfg.bounds);
    }
    for _ in 0..cfg.steps {
        let trace = forward(model, &x_adv)?;
        let dz = attack_dz(trace.logits(), labels, cfg.loss);
        let cots = backward_pass(model, &trace.masks, &dz)?;
        let dx = &cots[0];
        for (v, &g) in x_adv.data_mut().iter_mut().zip(dx.data()) {
            if g > 0.0 {
                *v += alpha;
            } else if g < 0.0 {
                *v -= alpha;
            }
        }
        clamp_ball(&mut x_adv, x, cfg.eps, cfg.bounds);
    }
    Ok(x_adv)
}

/// Attack margin z_y - max_{i != y} z_i; negative means misclassified.
fn attack_margin(z: &[f64], y: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, &v) in z.iter().enumerate() {
        if i != y && v > best {
            best = v;
        }
    }
    z[y] - best
}

/// SPSA black-box attack. Per iteration it draws `pairs` Bernoulli sign
/// directions, estimates the margin gradient from antithetic forward
/// evaluations at x +/- delta*v, applies an Adamax descent step on the
/// margin, projects to the eps-ball and bounds, and keeps the iterate with
/// the lowest margin seen. Touches the model only through `forward`.
pub fn spsa_attack(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &SpsaConfig,
    rng: &mut RandStream,
) -> Result<Tensor> {
    cfg.validate()?;
    let n = x.shape()[0];
    let dim: usize = x.shape()[1..].iter().product();
    let mut out = x.clone();
    if cfg.iterations == 0 || cfg.eps == 0.0 {
        return Ok(out);
    }
    let feat_shape = &x.shape()[1..];
    for s in 0..n {
        let mut srng = rng.child(s as u64 + 1);
        let x0 = Tensor::new(
            feat_shape.to_vec(),
            x.data()[s * dim..(s + 1) * dim].to_vec(),
            x.dtype(),
        )?;
        let y = labels[s];
        let mut cur = x0.clone();
        let mut best = x0.clone();
        let mut best_margin = {
            let mut shape = vec![1];
            shape.extend_from_slice(feat_shape);
            let tr = forward(model, &cur.reshape(shape)?)?;
            attack_margin(tr.logits().row(0), y)
        };
        // Adamax state
        let mut m = vec![0.0f64; dim];
        let mut u = vec![0.0f64; dim];
        let (beta_m, beta_u, stab): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        for t in 1..=cfg.iterations {
            // antithetic evaluation batch: rows [0..pairs) are +delta, rest -delta
            let mut batch = Tensor::zeros(&[2 * cfg.pairs, dim], x.dtype());
            let mut dirs = Vec::with_capacity(cfg.pairs);
            for p in 0..cfg.pairs {
                let v: Vec<f64> = (0..dim).map(|_| srng.sign_bernoulli()).collect();
                for j in 0..dim {
                    let base = cur.data()[j];
                    batch.data_mut()[p * dim + j] =
                        (base + cfg.delta * v[j]).min(cfg.bounds.1).max(cfg.bounds.0);
                    batch.data_mut()[(cfg.pairs + p) * dim + j] =
                        (base - cfg.delta * v[j]).min(cfg.bounds.1).max(cfg.bounds.0);
                }
                dirs.push(v);
            }
            let mut shape = vec![2 * cfg.pairs];
            shape.extend_from_slice(feat_shape);
            let tr = forward(model, &batch.reshape(shape)?)?;
            let mut grad = vec![0.0f64; dim];
            for (p, v) in dirs.iter().enumerate() {
                let lp = attack_margin(tr.logits().row(p), y);
                let lm = attack_margin(tr.logits().row(cfg.pairs + p), y);
                let coeff = (lp - lm) / (2.0 * cfg.delta * cfg.pairs as f64);
                for j in 0..dim {
                    grad[j] += coeff * v[j];
                }
            }
            let corr = cfg.lr / (1.0 - beta_m.powi(t as i32));
            for j in 0..dim {
                m[j] = beta_m * m[j] + (1.0 - beta_m) * grad[j];
                u[j] = (beta_u * u[j]).max(grad[j].abs());
                // descend the margin
                let step = corr * m[j] / (u[j] + stab);
                let v = cur.data()[j] - step;
                cur.data_mut()[j] = v
                    .min(x0.data()[j] + cfg.eps)
                    .max(x0.data()[j] - cfg.eps)
                    .min(cfg.bounds.1)
                    .max(cfg.bounds.0);
            }
            let mut shape = vec![1];
            shape.extend_from_slice(feat_shape);
            let tr = forward(model, &cur.reshape(shape)?)?;
            let margin = attack_margin(tr.logits().row(0), y);
            if margin < best_margin {
                best_margin = margin;
                best = cur.clone();
            }
            // a negative margin is a successful misclassification; further
            // refinement cannot change the accuracy outcome
            if best_margin < 0.0 {
                break;
            }
        }
        out.data_mut()[s * dim..(s + 1) * dim].copy_from_slice(best.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mlp, weight_name, LayerSpec};
    use crate::tensor::norm_linf;
    use std::collections::BTreeMap;

    fn linear_binary(w: &[f64]) -> Model {
        // z = (w.x, 0)
        let d = w.len();
        let mut data = vec![0.0; d * 2];
        for (i, &wv) in w.iter().enumerate() {
            data[i * 2] = wv;
        }
        let mut params = BTreeMap::new();
        params.insert(weight_name(0), Tensor::new(vec![d, 2], data, Dtype::F64).unwrap());
        Model::build(
            vec![LayerSpec::Dense { inp: d, out: 2, bias: false }],
            params,
            vec![d],
            2,
            Dtype::F64,
        )
        .unwrap()
    }

    #[test]
    fn zero_eps_is_identity() {
        let m = linear_binary(&[1.0, -2.0, 0.5]);
        let x = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.5], Dtype::F64).unwrap();
        let mut rng = RandStream::new(1, 0);
        let cfg = AttackConfig::pgd(0.0, 10);
        let adv = pgd_attack(&m, &x, &[0], &cfg, &mut rng).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn single_step_moves_against_weight_sign() {
        // CE attack on z = (w.x, 0), true class 0: grad_x = (p0 - 1) w, so the
        // ascent step moves each coordinate opposite to sign(w_j).
        let w = [1.0, -2.0, 0.5];
        let m = linear_binary(&w);
        let x = Tensor::new(vec![1, 3], vec![0.5, 0.5, 0.5], Dtype::F64).unwrap();
        let mut rng = RandStream::new(2, 0);
        let mut cfg = AttackConfig::pgd(0.1, 1);
        cfg.random_start = false;
        cfg.step_size = Some(0.05);
        let adv = pgd_attack(&m, &x, &[0], &cfg, &mut rng).unwrap();
        for j in 0..3 {
            let moved = adv.data()[j] - x.data()[j];
            assert!((moved + 0.05 * w[j].signum()).abs() < 1e-12, "coord {j} moved {moved}");
        }
    }

    #[test]
    fn fgsm_reduction() {
        // K=1, no random start, alpha >= eps collapses to the single-step sign method
        let w = [1.0, -1.0];
        let m = linear_binary(&w);
        let x = Tensor::new(vec![1, 2], vec![0.5, 0.5], Dtype::F64).unwrap();
        let mut rng = RandStream::new(3, 0);
        let mut cfg = AttackConfig::pgd(0.1, 1);
        cfg.random_start = false;
        cfg.step_size = Some(1.0);
        let adv = pgd_attack(&m, &x, &[0], &cfg, &mut rng).unwrap();
        for j in 0..2 {
            assert!((adv.data()[j] - (x.data()[j] - 0.1 * w[j].signum())).abs() < 1e-12);
        }
    }

    #[test]
    fn pgd_containment_fuzz() {
        let mut rng = RandStream::new(4, 0);
        let mut init = RandStream::new(5, 0);
        let m = build_mlp(&[8, 12, 12, 4], true, Dtype::F64, &mut init).unwrap();
        for trial in 0..200 {
            let x = init.uniform_tensor(0.0, 1.0, &[2, 8], Dtype::F64).unwrap();
            let eps = 0.05 + 0.1 * init.next_f64();
            let cfg = AttackConfig::pgd(eps, 5);
            let labels = [init.index(4), init.index(4)];
            let adv = pgd_attack(&m, &x, &labels, &cfg, &mut rng).unwrap();
            let diff: Vec<f64> = adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
            assert!(norm_linf(&diff) <= eps + 1e-6, "trial {trial}");
            assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn spsa_zero_iterations_is_identity() {
        let m = linear_binary(&[1.0, -1.0]);
        let x = Tensor::new(vec![1, 2], vec![0.4, 0.6], Dtype::F64).unwrap();
        let mut rng = RandStream::new(6, 0);
        let cfg = SpsaConfig { iterations: 0, ..SpsaConfig::paper(0.1) };
        let adv = spsa_attack(&m, &x, &[0], &cfg, &mut rng).unwrap();
        assert_eq!(adv.data(), x.data());
    }

    #[test]
    fn spsa_estimator_matches_quadratic_gradient() {
        // L(x) = ||x||^2 has gradient 2x; check the raw antithetic estimator.
        let dim = 6;
        let x: Vec<f64> = (0..dim).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let delta = 1e-3;
        let mut rng = RandStream::new(7, 0);
        let pairs = 10_000;
        let mut grad = vec![0.0; dim];
        let l = |p: &[f64]| -> f64 { p.iter().map(|v| v * v).sum() };
        for _ in 0..pairs {
            let v: Vec<f64> = (0..dim).map(|_| rng.sign_bernoulli()).collect();
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + delta * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - delta * b).collect();
            let coeff = (l(&xp) - l(&xm)) / (2.0 * delta * pairs as f64);
            for j in 0..dim {
                grad[j] += coeff * v[j];
            }
        }
        for j in 0..dim {
            let expect = 2.0 * x[j];
            // cross-term noise has std ~0.02 at this pair count; allow 4 sigma
            assert!(
                (grad[j] - expect).abs() <= 0.08,
                "coord {j}: {} vs {expect}",
                grad[j]
            );
        }
    }

    #[test]
    fn spsa_containment_and_black_box_contract() {
        let mut init = RandStream::new(8, 0);
        let m = build_mlp(&[6, 10, 3], true, Dtype::F64, &mut init).unwrap();
        let x = init.uniform_tensor(0.0, 1.0, &[3, 6], Dtype::F64).unwrap();
        let labels = [0usize, 1, 2];
        let cfg = SpsaConfig { iterations: 4, pairs: 16, ..SpsaConfig::paper(0.08) };
        let mut rng = RandStream::new(9, 0);
        crate::nn::reset_backward_calls();
        let adv = spsa_attack(&m, &x, &labels, &cfg, &mut rng).unwrap();
        assert_eq!(crate::nn::backward_calls(), 0, "SPSA must never query gradients");
        let diff: Vec<f64> = adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        assert!(norm_linf(&diff) <= 0.08 + 1e-6);
        assert!(adv.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
