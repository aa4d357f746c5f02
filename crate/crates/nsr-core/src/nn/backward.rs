//! Frozen-mask differentiation: cotangent (reverse) and tangent (forward)
//! linear passes, parameter gradients, and the effective linear form.
//!
//! With the recorded ReLU masks and pooling argmax maps held constant the
//! network is an affine map of its input, so both passes are exact linear
//! algebra, not approximations. ReLU masks and argmax indices are treated as
//! constants of the forward pass everywhere.

use super::{FeatShape, LayerSpec, Model};
use crate::error::{NsrError, Result};
use crate::nn::forward::{batch_shape, ForwardTrace, MaskRecord};
use crate::tensor::{dot, matmul, transpose, Dtype, Tensor};
use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

/// Count of reverse-pass invocations, used to verify black-box attacks
/// never query gradients.
static BACKWARD_CALLS: AtomicU64 = AtomicU64::new(0);

pub fn backward_calls() -> u64 {
    BACKWARD_CALLS.load(Ordering::Relaxed)
}

pub fn reset_backward_calls() {
    BACKWARD_CALLS.store(0, Ordering::Relaxed);
}

pub type ParamGrads = BTreeMap<String, Tensor>;

/// Per-sample effective weights and biases for a set of classes:
/// `z_i = w_i . x + b_i` exactly within the recorded linear region.
#[derive(Debug, Clone)]
pub struct EffectiveLinear {
    pub classes: Vec<usize>,
    /// One `[N, input_dim]` tensor per entry of `classes`.
    pub w: Vec<Tensor>,
    /// `[N, classes.len()]` biases, `b_i = z_i - w_i . x`.
    pub b: Tensor,
}

impl EffectiveLinear {
    pub fn weight_for(&self, class: usize) -> Option<&Tensor> {
        self.classes.iter().position(|&c| c == class).map(|i| &self.w[i])
    }
}

fn check_masks(model: &Model, masks: &MaskRecord) -> Result<()> {
    if masks.relu.len() != model.relu_count() || masks.pool.len() != model.pool_count() {
        return Err(NsrError::State(format!(
            "mask record has {} relu / {} pool entries, model needs {} / {}",
            masks.relu.len(),
            masks.pool.len(),
            model.relu_count(),
            model.pool_count()
        )));
    }
    Ok(())
}

/// Pull a cotangent seed at the logits back to every layer input.
///
/// Returns `cots` with `cots[l]` the cotangent at the input of layer `l`
/// (so `cots[0]` is the input gradient) and `cots[layers.len()]` the seed.
pub fn backward_pass(model: &Model, masks: &MaskRecord, seed: &Tensor) -> Result<Vec<Tensor>> {
    BACKWARD_CALLS.fetch_add(1, Ordering::Relaxed);
    check_masks(model, masks)?;
    let n = masks.batch;
    if seed.shape() != [n, model.class_count] {
        return Err(NsrError::State(format!(
            "cotangent seed shape {:?} does not match batch {n} x {} logits",
            seed.shape(),
            model.class_count
        )));
    }
    let nlayers = model.layers.len();
    let mut cots: Vec<Option<Tensor>> = vec![None; nlayers + 1];
    cots[nlayers] = Some(
        seed.reshape(batch_shape(n, model.shapes[nlayers]))?.with_dtype(Dtype::F64),
    );
    let mut relu_i = masks.relu.len();
    let mut pool_i = masks.pool.len();
    let mut pending: HashMap<usize, Tensor> = HashMap::new();
    for idx in (0..nlayers).rev() {
        let cot_out = cots[idx + 1].clone().expect("filled in reverse order");
        let cot_in = match model.layers[idx] {
            LayerSpec::Dense { inp, out, .. } => {
                let w = &model.params[&super::weight_name(idx)];
                let flat = cot_out.reshape(vec![n, out])?;
                let wt = transpose(w)?.with_dtype(Dtype::F64);
                matmul(&flat, &wt)?.reshape(vec![n, inp])?
            }
            LayerSpec::Relu => {
                relu_i -= 1;
                let mask = &masks.relu[relu_i];
                if mask.shape() != cot_out.shape() {
                    return Err(NsrError::State(format!(
                        "relu mask shape {:?} does not match activations {:?}",
                        mask.shape(),
                        cot_out.shape()
                    )));
                }
                let mut y = cot_out.clone();
                for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                y
            }
            LayerSpec::Conv1d { in_ch, out_ch, k, stride, pad, .. } => {
                let in_len = match model.shapes[idx] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let kern = &model.params[&super::weight_name(idx)];
                let mut y = Tensor::zeros(&[n, in_ch, in_len], Dtype::F64);
                for s in 0..n {
                    for oc in 0..out_ch {
                        for ot in 0..out_len {
                            let g = cot_out.data()[(s * out_ch + oc) * out_len + ot];
                            if g == 0.0 {
                                continue;
                            }
                            for ic in 0..in_ch {
                                for kk in 0..k {
                                    let pos = ot * stride + kk;
                                    if pos < pad || pos - pad >= in_len {
                                        continue;
                                    }
                                    y.data_mut()[(s * in_ch + ic) * in_len + pos - pad] +=
                                        g * kern.data()[(oc * in_ch + ic) * k + kk];
                                }
                            }
                        }
                    }
                }
                y
            }
            LayerSpec::Maxpool1d { .. } => {
                pool_i -= 1;
                let arg = &masks.pool[pool_i];
                let (c, in_len) = match model.shapes[idx] {
                    FeatShape::ChanLen(c, l) => (c, l),
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let mut y = Tensor::zeros(&[n, c, in_len], Dtype::F64);
                for s in 0..n {
                    for ch in 0..c {
                        for ot in 0..out_len {
                            let src = arg[(s * c + ch) * out_len + ot];
                            y.data_mut()[(s * c + ch) * in_len + src] +=
                                cot_out.data()[(s * c + ch) * out_len + ot];
                        }
                    }
                }
                y
            }
            LayerSpec::ResidualBegin => {
                let mut y = cot_out.clone();
                if let Some(p) = pending.remove(&idx) {
                    y.add_assign(&p)?;
                }
                y
            }
            LayerSpec::ResidualEnd => {
                let begin = model
                    .brackets
                    .iter()
                    .find(|&&(_, e)| e == idx)
                    .map(|&(b, _)| b)
                    .expect("validated at build");
                pending
                    .entry(begin)
                    .and_modify(|p| p.add_assign(&cot_out).expect("same shape"))
                    .or_insert_with(|| cot_out.clone());
                cot_out.clone()
            }
            LayerSpec::Flatten => cot_out.reshape(batch_shape(n, model.shapes[idx]))?,
        };
        cots[idx] = Some(cot_in);
    }
    Ok(cots.into_iter().map(|c| c.unwrap()).collect())
}

/// Push a tangent at the input forward through the frozen linear graph.
/// Biases do not appear (the map is the Jacobian, not the affine form).
///
/// Returns `tans` with `tans[l]` the tangent at the input of layer `l`.
pub fn tangent_pass(model: &Model, masks: &MaskRecord, u: &Tensor) -> Result<Vec<Tensor>> {
    check_masks(model, masks)?;
    let n = masks.batch;
    let expect = batch_shape(n, model.shapes[0]);
    if u.shape() != expect.as_slice() {
        return Err(NsrError::State(format!(
            "tangent shape {:?} does not match input {:?}",
            u.shape(),
            expect
        )));
    }
    let nlayers = model.layers.len();
    let mut tans: Vec<Tensor> = Vec::with_capacity(nlayers + 1);
    tans.push(u.clone().with_dtype(Dtype::F64));
    let mut relu_i = 0;
    let mut pool_i = 0;
    let mut begin_stack = Vec::new();
    for (idx, layer) in model.layers.iter().enumerate() {
        let cur = tans.last().unwrap();
        let next = match *layer {
            LayerSpec::Dense { inp, .. } => {
                let w = model.params[&super::weight_name(idx)].clone().with_dtype(Dtype::F64);
                matmul(&cur.reshape(vec![n, inp])?, &w)?
            }
            LayerSpec::Relu => {
                let mask = &masks.relu[relu_i];
                relu_i += 1;
                let mut y = cur.clone();
                for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                    *v *= m;
                }
                y
            }
            LayerSpec::Conv1d { in_ch, out_ch, k, stride, pad, .. } => {
                let in_len = match model.shapes[idx] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let kern = &model.params[&super::weight_name(idx)];
                let mut y = Tensor::zeros(&[n, out_ch, out_len], Dtype::F64);
                for s in 0..n {
                    for oc in 0..out_ch {
                        for ot in 0..out_len {
                            let mut acc = 0.0;
                            for ic in 0..in_ch {
                                for kk in 0..k {
                                    let pos = ot * stride + kk;
                                    if pos < pad || pos - pad >= in_len {
                                        continue;
                                    }
                                    acc += cur.data()[(s * in_ch + ic) * in_len + pos - pad]
                                        * kern.data()[(oc * in_ch + ic) * k + kk];
                                }
                            }
                            y.data_mut()[(s * out_ch + oc) * out_len + ot] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::Maxpool1d { .. } => {
                let arg = &masks.pool[pool_i];
                pool_i += 1;
                let (c, in_len) = match model.shapes[idx] {
                    FeatShape::ChanLen(c, l) => (c, l),
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let mut y = Tensor::zeros(&[n, c, out_len], Dtype::F64);
                for s in 0..n {
                    for ch in 0..c {
                        for ot in 0..out_len {
                            let src = arg[(s * c + ch) * out_len + ot];
                            y.data_mut()[(s * c + ch) * out_len + ot] =
                                cur.data()[(s * c + ch) * in_len + src];
                        }
                    }
                }
                y
            }
            LayerSpec::ResidualBegin => {
                begin_stack.push(idx);
                cur.clone()
            }
            LayerSpec::ResidualEnd => {
                let begin = begin_stack.pop().expect("validated at build");
                cur.add(&tans[begin])?
            }
            LayerSpec::Flatten => cur.reshape(batch_shape(n, model.shapes[idx + 1]))?,
        };
        tans.push(next);
    }
    let last = tans.pop().unwrap().reshape(vec![n, model.class_count])?;
    tans.push(last);
    Ok(tans)
}

/// Parameter gradients from a (values-at-layer-inputs, cotangents) pairing.
///
/// With `in_vals` = forward activations this is ordinary backprop; with
/// `in_vals` = a tangent pass it yields the second-order terms of
/// w_y-dependent losses (`include_bias` must then be false, since the
/// effective weights do not depend on biases).
pub fn param_grads(
    model: &Model,
    in_vals: &[Tensor],
    cots: &[Tensor],
    include_bias: bool,
    acc: &mut ParamGrads,
) -> Result<()> {
    let n = match in_vals[0].shape() {
        [] => return Err(NsrError::Dimension("empty batch".into())),
        s => s[0],
    };
    for (idx, layer) in model.layers.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { inp, out, bias } => {
                let x_in = in_vals[idx].reshape(vec![n, inp])?.with_dtype(Dtype::F64);
                let cot_out = cots[idx + 1].reshape(vec![n, out])?;
                let gw = matmul(&transpose(&x_in)?, &cot_out)?;
                acc.entry(super::weight_name(idx))
                    .and_modify(|g| g.add_assign(&gw).expect("same shape"))
                    .or_insert(gw);
                if bias && include_bias {
                    let mut gb = Tensor::zeros(&[out], Dtype::F64);
                    for s in 0..n {
                        for (g, v) in gb.data_mut().iter_mut().zip(cot_out.row(s)) {
                            *g += v;
                        }
                    }
                    acc.entry(super::bias_name(idx))
                        .and_modify(|g| g.add_assign(&gb).expect("same shape"))
                        .or_insert(gb);
                }
            }
            LayerSpec::Conv1d { in_ch, out_ch, k, stride, pad, bias } => {
                let in_len = match model.shapes[idx] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let x_in = &in_vals[idx];
                let cot_out = &cots[idx + 1];
                let mut gw = Tensor::zeros(&[out_ch, in_ch, k], Dtype::F64);
                let mut gb = Tensor::zeros(&[out_ch], Dtype::F64);
                for s in 0..n {
                    for oc in 0..out_ch {
                        for ot in 0..out_len {
                            let g = cot_out.data()[(s * out_ch + oc) * out_len + ot];
                            if g == 0.0 {
                                continue;
                            }
                            gb.data_mut()[oc] += g;
                            for ic in 0..in_ch {
                                for kk in 0..k {
                                    let pos = ot * stride + kk;
                                    if pos < pad || pos - pad >= in_len {
                                        continue;
                                    }
                                    gw.data_mut()[(oc * in_ch + ic) * k + kk] +=
                                        g * x_in.data()[(s * in_ch + ic) * in_len + pos - pad];
                                }
                            }
                        }
                    }
                }
                acc.entry(super::weight_name(idx))
                    .and_modify(|g| g.add_assign(&gw).expect("same shape"))
                    .or_insert(gw);
                if bias && include_bias {
                    acc.entry(super::bias_name(idx))
                        .and_modify(|g| g.add_assign(&gb).expect("same shape"))
                        .or_insert(gb);
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn onehot_rows(n: usize, class_count: usize, classes: impl Fn(usize) -> usize) -> Tensor {
    let mut seed = Tensor::zeros(&[n, class_count], Dtype::F64);
    for s in 0..n {
        seed.data_mut()[s * class_count + classes(s)] = 1.0;
    }
    seed
}

/// Effective weight rows `w_{y_n}` for a per-sample class assignment,
/// computed in a single reverse pass.
pub fn effective_weight_for_labels(
    model: &Model,
    masks: &MaskRecord,
    labels: &[usize],
) -> Result<Tensor> {
    let n = masks.batch;
    if labels.len() != n {
        return Err(NsrError::State(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.class_count) {
        return Err(NsrError::Argument(format!(
            "label {bad} out of range for {} classes",
            model.class_count
        )));
    }
    let seed = onehot_rows(n, model.class_count, |s| labels[s]);
    let cots = backward_pass(model, masks, &seed)?;
    cots[0].reshape(vec![n, model.input_dim()])
}

/// Full effective linear form for the requested classes (all classes when
/// `classes` is empty): per-sample `w_i` rows and residual biases.
pub fn effective_linear(
    model: &Model,
    trace: &ForwardTrace,
    classes: &[usize],
) -> Result<EffectiveLinear> {
    let n = trace.batch();
    let classes: Vec<usize> = if classes.is_empty() {
        (0..model.class_count).collect()
    } else {
        classes.to_vec()
    };
    if let Some(&bad) = classes.iter().find(|&&c| c >= model.class_count) {
        return Err(NsrError::Argument(format!(
            "class {bad} out of range for {} classes",
            model.class_count
        )));
    }
    let x = trace.input().reshape(vec![n, model.input_dim()])?;
    let logits = trace.logits();
    let mut w = Vec::with_capacity(classes.len());
    let mut b = Tensor::zeros(&[n, classes.len()], Dtype::F64);
    for (ci, &class) in classes.iter().enumerate() {
        let seed = onehot_rows(n, model.class_count, |_| class);
        let cots = backward_pass(model, &trace.masks, &seed)?;
        let wc = cots[0].reshape(vec![n, model.input_dim()])?;
        for s in 0..n {
            let z = logits.at2(s, class);
            b.data_mut()[s * classes.len() + ci] = z - dot(wc.row(s), x.row(s));
        }
        w.push(wc);
    }
    Ok(EffectiveLinear { classes, w, b })
}
