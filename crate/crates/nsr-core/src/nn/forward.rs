//! Batched forward pass with ReLU/pooling mask recording.

use super::{FeatShape, LayerSpec, Model};
use crate::error::{NsrError, Result};
use crate::tensor::{conv1d, matmul, Dtype, Tensor};

/// ReLU on/off masks and pooling argmax maps for a batch, in layer order.
///
/// `relu[i]` has the pre-activation shape of the i-th ReLU layer with one row
/// per sample (1.0 = unit on). `pool[i][n*c*out + j]` is the absolute source
/// position inside the input row that won window `j`.
#[derive(Debug, Clone)]
pub struct MaskRecord {
    pub relu: Vec<Tensor>,
    pub pool: Vec<Vec<usize>>,
    pub batch: usize,
}

impl MaskRecord {
    /// Byte-comparable identity, used to detect mask flips between inputs.
    pub fn same_region(&self, other: &MaskRecord) -> bool {
        if self.batch != other.batch || self.relu.len() != other.relu.len() {
            return false;
        }
        self.relu
            .iter()
            .zip(&other.relu)
            .all(|(a, b)| a.data() == b.data())
            && self.pool == other.pool
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `acts[l]` is the input of layer `l`; `acts[layers.len()]` is the logits.
    pub acts: Vec<Tensor>,
    pub masks: MaskRecord,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.acts.last().unwrap()
    }

    pub fn input(&self) -> &Tensor {
        &self.acts[0]
    }

    pub fn batch(&self) -> usize {
        self.masks.batch
    }
}

fn round_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

pub(crate) fn batch_shape(n: usize, fs: FeatShape) -> Vec<usize> {
    match fs {
        FeatShape::Flat(d) => vec![n, d],
        FeatShape::ChanLen(c, l) => vec![n, c, l],
    }
}

/// Forward a batch, recording masks. `x` is `[N, d]` or `[N, ch, len]`
/// matching the model input shape.
pub fn forward(model: &Model, x: &Tensor) -> Result<ForwardTrace> {
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| NsrError::Dimension("empty input tensor".into()))?;
    let expect = batch_shape(n, model.shapes[0]);
    if x.shape() != expect.as_slice() {
        return Err(NsrError::Dimension(format!(
            "input batch shape {:?} does not match model input {:?}",
            x.shape(),
            expect
        )));
    }
    if !x.all_finite() {
        return Err(NsrError::Input("forward input contains non-finite values".into()));
    }
    let f32_mode = model.dtype == Dtype::F32;
    let mut acts: Vec<Tensor> = Vec::with_capacity(model.layers.len() + 1);
    acts.push(x.clone().with_dtype(model.dtype));
    let mut relu_masks = Vec::new();
    let mut pool_maps = Vec::new();
    let mut begin_stack: Vec<usize> = Vec::new();

    for (idx, layer) in model.layers.iter().enumerate() {
        let cur = acts.last().unwrap();
        let next = match *layer {
            LayerSpec::Dense { inp, out, bias } => {
                let flat = cur.reshape(vec![n, inp])?;
                let w = &model.params[&super::weight_name(idx)];
                let mut y = matmul(&flat, w)?;
                if bias {
                    let b = &model.params[&super::bias_name(idx)];
                    for i in 0..n {
                        for (v, bv) in y.row_mut(i).iter_mut().zip(b.data()) {
                            *v += bv;
                        }
                    }
                    if f32_mode {
                        round_f32(&mut y);
                    }
                }
                let _ = out;
                y
            }
            LayerSpec::Relu => {
                let mut mask = Tensor::zeros(cur.shape(), model.dtype);
                let mut y = cur.clone();
                for (m, v) in mask.data_mut().iter_mut().zip(y.data_mut()) {
                    if *v > 0.0 {
                        *m = 1.0;
                    } else {
                        *v = 0.0;
                    }
                }
                relu_masks.push(mask);
                y
            }
            LayerSpec::Conv1d { in_ch, stride, pad, bias, .. } => {
                let (out_ch, out_len) = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(c, l) => (c, l),
                    _ => unreachable!(),
                };
                let in_len = match model.shapes[idx] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let kern = &model.params[&super::weight_name(idx)];
                let mut y = Tensor::zeros(&[n, out_ch, out_len], model.dtype);
                let per_in = in_ch * in_len;
                let per_out = out_ch * out_len;
                for s in 0..n {
                    let xs = Tensor::new(
                        vec![in_ch, in_len],
                        cur.data()[s * per_in..(s + 1) * per_in].to_vec(),
                        model.dtype,
                    )?;
                    let ys = conv1d(&xs, kern, stride, pad)?;
                    y.data_mut()[s * per_out..(s + 1) * per_out].copy_from_slice(ys.data());
                }
                if bias {
                    let b = &model.params[&super::bias_name(idx)];
                    for s in 0..n {
                        for oc in 0..out_ch {
                            let bv = b.data()[oc];
                            let off = (s * out_ch + oc) * out_len;
                            for v in &mut y.data_mut()[off..off + out_len] {
                                *v += bv;
                            }
                        }
                    }
                    if f32_mode {
                        round_f32(&mut y);
                    }
                }
                y
            }
            LayerSpec::Maxpool1d { k, stride } => {
                let (c, in_len) = match model.shapes[idx] {
                    FeatShape::ChanLen(c, l) => (c, l),
                    _ => unreachable!(),
                };
                let out_len = match model.shapes[idx + 1] {
                    FeatShape::ChanLen(_, l) => l,
                    _ => unreachable!(),
                };
                let mut y = Tensor::zeros(&[n, c, out_len], model.dtype);
                let mut argmax = vec![0usize; n * c * out_len];
                for s in 0..n {
                    for ch in 0..c {
                        let row = &cur.data()[(s * c + ch) * in_len..(s * c + ch + 1) * in_len];
                        for ot in 0..out_len {
                            let start = ot * stride;
                            let mut best = start;
                            let mut bv = row[start];
                            for p in start + 1..(start + k).min(in_len) {
                                if row[p] > bv {
                                    bv = row[p];
                                    best = p;
                                }
                            }
                            y.data_mut()[(s * c + ch) * out_len + ot] = bv;
                            argmax[(s * c + ch) * out_len + ot] = best;
                        }
                    }
                }
                pool_maps.push(argmax);
                y
            }
            LayerSpec::ResidualBegin => {
                begin_stack.push(idx);
                cur.clone()
            }
            LayerSpec::ResidualEnd => {
                let begin = begin_stack.pop().expect("validated at build");
                let mut y = cur.add(&acts[begin])?;
                if f32_mode {
                    round_f32(&mut y);
                }
                y
            }
            LayerSpec::Flatten => cur.reshape(batch_shape(n, model.shapes[idx + 1]))?,
        };
        acts.push(next);
    }
    // logits as [N, class_count]
    let last = acts.pop().unwrap().reshape(vec![n, model.class_count])?;
    acts.push(last);
    Ok(ForwardTrace { acts, masks: MaskRecord { relu: relu_masks, pool: pool_maps, batch: n } })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::{build_mlp, weight_name};
    use crate::rng::RandStream;
    use std::collections::BTreeMap;

    #[test]
    fn identity_dense_passes_through() {
        let layers = vec![LayerSpec::Dense { inp: 3, out: 3, bias: false }];
        let mut params = BTreeMap::new();
        params.insert(
            weight_name(0),
            Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.], Dtype::F64).unwrap(),
        );
        let m = Model::build(layers, params, vec![3], 3, Dtype::F64).unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0], Dtype::F64).unwrap();
        let tr = forward(&m, &x).unwrap();
        assert_eq!(tr.logits().data(), x.data());
    }

    /// 2->2->1 net: W1 rows (1,0)/(0,-1), ReLU, W2=(2,3), x=(1,1) => z=2, masks (on, off).
    pub(crate) fn hand_net() -> Model {
        let layers = vec![
            LayerSpec::Dense { inp: 2, out: 2, bias: false },
            LayerSpec::Relu,
            LayerSpec::Dense { inp: 2, out: 1, bias: false },
        ];
        let mut params = BTreeMap::new();
        // column-major note: weight is [in, out]; columns are the unit weight rows
        params.insert(
            weight_name(0),
            Tensor::new(vec![2, 2], vec![1., 0., 0., -1.], Dtype::F64).unwrap(),
        );
        params.insert(weight_name(2), Tensor::new(vec![2, 1], vec![2., 3.], Dtype::F64).unwrap());
        Model::build(layers, params, vec![2], 1, Dtype::F64).unwrap()
    }

    #[test]
    fn hand_net_forward() {
        let m = hand_net();
        let x = Tensor::new(vec![1, 2], vec![1., 1.], Dtype::F64).unwrap();
        let tr = forward(&m, &x).unwrap();
        assert_eq!(tr.logits().data(), &[2.0]);
        assert_eq!(tr.masks.relu[0].data(), &[1.0, 0.0]);
    }

    #[test]
    fn zeroed_biasfree_mlp_gives_zero_logits() {
        let mut rng = RandStream::new(4, 0);
        let mut m = build_mlp(&[6, 4, 3], false, Dtype::F64, &mut rng).unwrap();
        for p in m.params.values_mut() {
            for v in p.data_mut() {
                *v = 0.0;
            }
        }
        let x = Tensor::zeros(&[2, 6], Dtype::F64);
        let tr = forward(&m, &x).unwrap();
        assert!(tr.logits().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn paper_mlp_emits_five_logits() {
        let mut rng = RandStream::new(4, 1);
        let m = build_mlp(&[187, 128, 128, 128, 32, 5], true, Dtype::F32, &mut rng).unwrap();
        let x = rng.uniform_tensor(0.0, 1.0, &[3, 187], Dtype::F32).unwrap();
        let tr = forward(&m, &x).unwrap();
        assert_eq!(tr.logits().shape(), &[3, 5]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = hand_net();
        let x = Tensor::new(vec![1, 2], vec![f64::NAN, 0.0], Dtype::F64).unwrap();
        assert!(matches!(forward(&m, &x), Err(NsrError::Input(_))));
    }
}
