//! Adamax optimizer and the mini-batch training loop, including the
//! adversarial-training mode that regenerates PGD examples every batch.

use crate::attacks::{pgd_attack, AttackConfig};
use crate::data::{batch_iter, HeartbeatSet};
use crate::error::{NsrError, Result};
use crate::losses::{adv_loss, loss_param_grads, LossConfig, LossKind};
use crate::nn::ParamGrads;
use crate::nn::{forward, Model};
use crate::report::{evaluate_clean, Metrics};
use crate::rng::RandStream;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

/// Adamax: Adam with an infinity-norm second moment. The update is
/// `θ ← θ − lr/(1−β_m^t) · m/(u + stab)` with `m` the running first
/// moment and `u` the coordinate-wise max of past gradient magnitudes.
#[derive(Debug, Clone)]
pub struct Adamax {
    pub lr: f64,
    pub beta_m: f64,
    pub beta_u: f64,
    pub stab: f64,
    t: u64,
    m: BTreeMap<String, Tensor>,
    u: BTreeMap<String, Tensor>,
}

impl Adamax {
    pub fn new(lr: f64) -> Adamax {
        Adamax { lr, beta_m: 0.9, beta_u: 0.999, stab: 1e-8, t: 0, m: BTreeMap::new(), u: BTreeMap::new() }
    }

    pub fn step(&mut self, model: &mut Model, grads: &ParamGrads) -> Result<()> {
        self.t += 1;
        let corr = self.lr / (1.0 - self.beta_m.powi(self.t as i32));
        for (name, g) in grads {
            if !g.all_finite() {
                return Err(NsrError::Training(format!(
                    "non-finite gradient for parameter {name} at step {}",
                    self.t
                )));
            }
            let p = model
                .params
                .get_mut(name)
                .ok_or_else(|| NsrError::State(format!("gradient for unknown parameter {name}")))?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape(), g.dtype()));
            let u = self
                .u
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape(), g.dtype()));
            let (pd, md, ud) = (p.data_mut(), m.data_mut(), u.data_mut());
            if pd.len() != g.len() {
                return Err(NsrError::Dimension(format!(
                    "gradient/parameter size mismatch for {name}: {} vs {}",
                    g.len(),
                    pd.len()
                )));
            }
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = self.beta_m * md[i] + (1.0 - self.beta_m) * gi;
                ud[i] = (self.beta_u * ud[i]).max(gi.abs());
                pd[i] -= corr * md[i] / (ud[i] + self.stab);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AdvMode {
    pub eps: f64,
    pub pgd_steps: usize,
}

impl Default for AdvMode {
    fn default() -> Self {
        AdvMode { eps: 0.1, pgd_steps: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Present iff `loss.kind == Adv`.
    pub adv: Option<AdvMode>,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> TrainConfig {
        let adv = (loss.kind == LossKind::Adv).then(AdvMode::default);
        TrainConfig { loss, epochs: 50, lr: 0.001, batch_size: 128, seed: 1, adv }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NsrError::Argument("epochs and batch size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(NsrError::Argument(format!("learning rate must be positive, got {}", self.lr)));
        }
        match (&self.adv, self.loss.kind) {
            (Some(a), LossKind::Adv) => {
                if !(0.0..=1.0).contains(&a.eps) || a.pgd_steps == 0 {
                    return Err(NsrError::Argument(format!(
                        "adversarial mode needs eps in [0,1] and steps >= 1, got eps {} steps {}",
                        a.eps, a.pgd_steps
                    )));
                }
                Ok(())
            }
            (None, LossKind::Adv) => {
                Err(NsrError::Argument("adversarial-training loss needs an adversarial mode".into()))
            }
            (Some(_), _) => {
                Err(NsrError::Argument("adversarial mode set for a non-adversarial loss".into()))
            }
            (None, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    /// Fraction of training samples passing the correct-classification gate.
    pub gated_fraction: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_accuracy,val_precision,gated_fraction,wall_secs\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{:.3}",
                r.epoch, r.train_loss, r.val_accuracy, r.val_precision, r.gated_fraction, r.wall_secs
            )
            .unwrap();
        }
        s
    }
}

fn batch_grads(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut RandStream,
) -> Result<(f64, usize, ParamGrads)> {
    if cfg.loss.kind == LossKind::Adv {
        let adv_mode = cfg.adv.as_ref().expect("validated");
        let atk = AttackConfig::pgd(adv_mode.eps, adv_mode.pgd_steps);
        let x_adv = pgd_attack(model, x, labels, &atk, rng)?;
        let ce = LossConfig::new(LossKind::Ce);
        let trace_clean = forward(model, x)?;
        let trace_adv = forward(model, &x_adv)?;
        let value = adv_loss(trace_clean.logits(), trace_adv.logits(), labels)?;
        let (_, g_clean) = loss_param_grads(model, &trace_clean, labels, &ce)?;
        let (_, g_adv) = loss_param_grads(model, &trace_adv, labels, &ce)?;
        let mut grads = ParamGrads::new();
        for (name, gc) in g_clean {
            let ga = &g_adv[&name];
            let data: Vec<f64> =
                gc.data().iter().zip(ga.data()).map(|(a, b)| 0.5 * (a + b)).collect();
            grads.insert(name, Tensor::new(gc.shape().to_vec(), data, gc.dtype())?);
        }
        Ok((value, 0, grads))
    } else {
        let trace = forward(model, x)?;
        let (eval, grads) = loss_param_grads(model, &trace, labels, &cfg.loss)?;
        Ok((eval.value, eval.gated, grads))
    }
}

/// Train in place, returning the log; the model is left at the parameters
/// of the best validation epoch.
pub fn train(
    model: &mut Model,
    train_set: &HeartbeatSet,
    val_set: &HeartbeatSet,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NsrError::Argument("training and validation sets must be non-empty".into()));
    }
    let mut opt = Adamax::new(cfg.lr);
    let mut log = TrainLog::default();
    let mut best_params: Option<BTreeMap<String, Tensor>> = None;
    let mut attack_rng = RandStream::new(cfg.seed, 0xADF);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut gated = 0usize;
        let mut seen = 0usize;
        for (x, labels) in batch_iter(train_set, cfg.batch_size, cfg.seed, epoch)? {
            let x = x.with_dtype(model.dtype);
            let (value, g, grads) = batch_grads(model, &x, &labels, cfg, &mut attack_rng)?;
            if !value.is_finite() {
                return Err(NsrError::Training(format!(
                    "training diverged: non-finite loss at epoch {epoch}"
                )));
            }
            loss_sum += value * labels.len() as f64;
            gated += g;
            seen += labels.len();
            opt.step(model, &grads)?;
        }
        let val: Metrics = evaluate_clean(model, val_set)?;
        let row = EpochRow {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: val.accuracy,
            val_precision: val.macro_precision,
            gated_fraction: gated as f64 / seen as f64,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        if best_params.is_none() || val.accuracy > log.best_val_accuracy {
            log.best_val_accuracy = val.accuracy;
            log.best_epoch = epoch;
            best_params = Some(model.params.clone());
        }
        log.rows.push(row);
    }
    model.params = best_params.expect("at least one epoch ran");
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SIGNAL_LEN;
    use crate::nn::build_mlp;
    use crate::synth::{generate, SynthConfig};
    use crate::tensor::Dtype;

    fn toy_sets() -> (HeartbeatSet, HeartbeatSet) {
        let set = generate(&SynthConfig {
            per_class: 40,
            confusion: 0.0,
            noise: 0.02,
            ..SynthConfig::default()
        })
        .unwrap();
        crate::data::split_train_val(&set, 0.75, 5).unwrap()
    }

    fn toy_model(seed: u64) -> Model {
        let mut rng = RandStream::new(seed, 0);
        build_mlp(&[SIGNAL_LEN, 32, 5], true, Dtype::F32, &mut rng).unwrap()
    }

    #[test]
    fn adamax_first_step_hand_check() {
        // with zero state, t=1: m = 0.1g, u = |g|, correction 1/(1-0.9) = 10,
        // so the step is lr * g/(|g| + stab) ~= lr * sign(g)
        let mut m = toy_model(3);
        let name = m.params.keys().next().unwrap().clone();
        let before = m.params[&name].data()[0];
        let mut grads = ParamGrads::new();
        for (k, p) in &m.params {
            let mut g = Tensor::zeros(p.shape(), p.dtype());
            if *k == name {
                g.data_mut()[0] = 2.0;
            }
            grads.insert(k.clone(), g);
        }
        let mut opt = Adamax::new(0.001);
        opt.step(&mut m, &grads).unwrap();
        let after = m.params[&name].data()[0];
        let expect = before - 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((after - expect).abs() < 1e-12, "{after} vs {expect}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut m = toy_model(3);
        let name = m.params.keys().next().unwrap().clone();
        let mut grads = ParamGrads::new();
        let mut g = Tensor::zeros(m.params[&name].shape(), m.params[&name].dtype());
        g.data_mut()[0] = f64::NAN;
        grads.insert(name.clone(), g);
        let err = Adamax::new(0.001).step(&mut m, &grads).unwrap_err().to_string();
        assert!(err.contains(&name), "{err}");
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (tr, va) = toy_sets();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::new(LossConfig::new(LossKind::Ce)) };
        let mut m1 = toy_model(7);
        let mut m2 = toy_model(7);
        train(&mut m1, &tr, &va, &cfg).unwrap();
        train(&mut m2, &tr, &va, &cfg).unwrap();
        for (k, p) in &m1.params {
            assert_eq!(p.data(), m2.params[k].data(), "parameter {k} differs");
        }
    }

    #[test]
    fn beta_zero_ablations_coincide() {
        // with their regularizer weights at zero, both robust losses reduce
        // to the same gated margin objective and train identically
        let (tr, va) = toy_sets();
        let mut l1 = LossConfig::new(LossKind::Loss1);
        l1.beta1 = 0.0;
        let mut l2 = LossConfig::new(LossKind::Loss2);
        l2.beta2 = 0.0;
        let mut m1 = toy_model(11);
        let mut m2 = toy_model(11);
        train(&mut m1, &tr, &va, &TrainConfig { epochs: 2, ..TrainConfig::new(l1) }).unwrap();
        train(&mut m2, &tr, &va, &TrainConfig { epochs: 2, ..TrainConfig::new(l2) }).unwrap();
        for (k, p) in &m1.params {
            assert_eq!(p.data(), m2.params[k].data(), "parameter {k} differs");
        }
    }

    #[test]
    fn training_beats_chance_quickly() {
        let (tr, va) = toy_sets();
        let mut m = toy_model(13);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 16,
            lr: 0.005,
            ..TrainConfig::new(LossConfig::new(LossKind::Ce))
        };
        let log = train(&mut m, &tr, &va, &cfg).unwrap();
        assert!(log.best_val_accuracy > 0.6, "val accuracy {}", log.best_val_accuracy);
        assert_eq!(log.rows.len(), 15);
        let csv = log.to_csv();
        assert!(csv.lines().count() == 16);
    }

    #[test]
    fn adv_mode_trains_and_validates_config() {
        let (tr, va) = toy_sets();
        let mut cfg = TrainConfig::new(LossConfig::new(LossKind::Adv));
        cfg.epochs = 1;
        assert!(cfg.adv.is_some());
        let mut bad = cfg.clone();
        bad.adv = None;
        assert!(bad.validate().is_err());
        let mut m = toy_model(17);
        let log = train(&mut m, &tr, &va, &cfg).unwrap();
        assert_eq!(log.rows.len(), 1);
    }
}
