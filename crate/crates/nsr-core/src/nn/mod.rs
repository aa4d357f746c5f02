//! Layer graph for piecewise-linear networks.
//!
//! Supported layers are dense, ReLU, 1-D convolution, 1-D max-pooling,
//! residual skip brackets and flatten. Within a fixed set of ReLU on/off
//! states and pooling argmax selections the whole network is an affine map
//! `z = Wᵀx + b`; the forward pass records those masks so that the effective
//! `W` and `b` can be pulled back exactly and differentiated with the masks
//! frozen.

mod backward;
pub(crate) mod forward;
mod io;

pub use backward::{
    backward_calls, backward_pass, effective_linear, effective_weight_for_labels, param_grads,
    reset_backward_calls, tangent_pass, EffectiveLinear, ParamGrads,
};
pub use forward::{forward, ForwardTrace, MaskRecord};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use io::crc32 as io_crc32;

use crate::error::{NsrError, Result};
use crate::rng::RandStream;
use crate::tensor::{window_out_len, Dtype, Tensor};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inp: usize, out: usize, bias: bool },
    Relu,
    Conv1d { in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, bias: bool },
    Maxpool1d { k: usize, stride: usize },
    ResidualBegin,
    ResidualEnd,
    Flatten,
}

/// Feature shape between layers: a flat vector or a [channels, length] map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatShape {
    Flat(usize),
    ChanLen(usize, usize),
}

impl FeatShape {
    pub fn numel(&self) -> usize {
        match *self {
            FeatShape::Flat(n) => n,
            FeatShape::ChanLen(c, l) => c * l,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, Tensor>,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub dtype: Dtype,
    /// Feature shape at the input of every layer plus the output; len = layers+1.
    pub(crate) shapes: Vec<FeatShape>,
    /// Matching (begin, end) residual bracket indices.
    pub(crate) brackets: Vec<(usize, usize)>,
}

pub(crate) fn weight_name(idx: usize) -> String {
    format!("layer{idx:03}.weight")
}

pub(crate) fn bias_name(idx: usize) -> String {
    format!("layer{idx:03}.bias")
}

impl Model {
    /// Validate layer composition and compute per-layer feature shapes.
    pub fn build(
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        input_shape: Vec<usize>,
        class_count: usize,
        dtype: Dtype,
    ) -> Result<Model> {
        let first = match input_shape.len() {
            1 => FeatShape::Flat(input_shape[0]),
            2 => FeatShape::ChanLen(input_shape[0], input_shape[1]),
            _ => {
                return Err(NsrError::Dimension(format!(
                    "input shape must be rank 1 or 2, got {input_shape:?}"
                )))
            }
        };
        let mut shapes = vec![first];
        let mut stack: Vec<(usize, FeatShape)> = Vec::new();
        let mut brackets = Vec::new();
        for (idx, layer) in layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = match *layer {
                LayerSpec::Dense { inp, out, .. } => {
                    if cur.numel() != inp {
                        return Err(NsrError::Dimension(format!(
                            "layer {idx}: dense expects {inp} inputs but receives {:?}",
                            cur
                        )));
                    }
                    FeatShape::Flat(out)
                }
                LayerSpec::Relu => cur,
                LayerSpec::Conv1d { in_ch, out_ch, k, stride, pad, .. } => match cur {
                    FeatShape::ChanLen(c, l) if c == in_ch => {
                        let ol = window_out_len(l, k, stride, pad).ok_or_else(|| {
                            NsrError::Dimension(format!(
                                "layer {idx}: conv1d output collapses (len {l}, k {k}, pad {pad})"
                            ))
                        })?;
                        FeatShape::ChanLen(out_ch, ol)
                    }
                    _ => {
                        return Err(NsrError::Dimension(format!(
                            "layer {idx}: conv1d expects [{in_ch}, len] input, got {cur:?}"
                        )))
                    }
                },
                LayerSpec::Maxpool1d { k, stride } => match cur {
                    FeatShape::ChanLen(c, l) => {
                        let ol = window_out_len(l, k, stride, 0).ok_or_else(|| {
                            NsrError::Dimension(format!(
                                "layer {idx}: maxpool output collapses (len {l}, k {k})"
                            ))
                        })?;
                        FeatShape::ChanLen(c, ol)
                    }
                    _ => {
                        return Err(NsrError::Dimension(format!(
                            "layer {idx}: maxpool1d needs [ch, len] input, got {cur:?}"
                        )))
                    }
                },
                LayerSpec::ResidualBegin => {
                    stack.push((idx, cur));
                    cur
                }
                LayerSpec::ResidualEnd => {
                    let (begin, saved) = stack.pop().ok_or_else(|| {
                        NsrError::Dimension(format!("layer {idx}: residual_end without begin"))
                    })?;
                    if saved != cur {
                        return Err(NsrError::Dimension(format!(
                            "layer {idx}: residual bracket is not shape-preserving ({saved:?} vs {cur:?})"
                        )));
                    }
                    brackets.push((begin, idx));
                    cur
                }
                LayerSpec::Flatten => FeatShape::Flat(cur.numel()),
            };
            shapes.push(next);
        }
        if let Some((idx, _)) = stack.pop() {
            return Err(NsrError::Dimension(format!("residual_begin at layer {idx} never closed")));
        }
        match *shapes.last().unwrap() {
            FeatShape::Flat(n) if n == class_count => {}
            other => {
                return Err(NsrError::Dimension(format!(
                    "final layer produces {other:?}, expected flat {class_count} logits"
                )))
            }
        }
        for (name, p) in &params {
            if !p.all_finite() {
                return Err(NsrError::Input(format!("parameter {name} contains non-finite values")));
            }
        }
        Ok(Model { layers, params, input_shape, class_count, dtype, shapes, brackets })
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Number of ReLU layers (mask slots).
    pub fn relu_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Relu)).count()
    }

    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, LayerSpec::Maxpool1d { .. })).count()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }

    /// Set every bias parameter to zero.
    pub fn zero_biases(&mut self) {
        for (name, p) in self.params.iter_mut() {
            if name.ends_with(".bias") {
                for v in p.data_mut() {
                    *v = 0.0;
                }
            }
        }
    }
}

fn glorot(rng: &mut RandStream, shape: &[usize], fan_in: usize, fan_out: usize, dtype: Dtype) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.uniform_tensor(-s, s, shape, dtype).expect("symmetric bounds are valid")
}

/// Plain MLP: dense layers of the given widths with ReLU after every dense
/// layer except the last two, e.g. (187,128,128,128,32,5) gives
/// (187-128)-RELU-(128-128)-RELU-(128-128)-RELU-(128-32)-(32-5).
pub fn build_mlp(widths: &[usize], bias: bool, dtype: Dtype, rng: &mut RandStream) -> Result<Model> {
    if widths.len() < 2 {
        return Err(NsrError::Argument(format!(
            "need at least input and output widths, got {widths:?}"
        )));
    }
    if let Some(w) = widths.iter().find(|&&w| w == 0) {
        return Err(NsrError::Argument(format!("non-positive width {w} in {widths:?}")));
    }
    let dense_count = widths.len() - 1;
    let relu_after = dense_count.saturating_sub(2);
    let mut layers = Vec::new();
    let mut params = BTreeMap::new();
    for d in 0..dense_count {
        let (inp, out) = (widths[d], widths[d + 1]);
        let idx = layers.len();
        layers.push(LayerSpec::Dense { inp, out, bias });
        params.insert(weight_name(idx), glorot(rng, &[inp, out], inp, out, dtype));
        if bias {
            params.insert(bias_name(idx), Tensor::zeros(&[out], dtype));
        }
        if d < relu_after {
            layers.push(LayerSpec::Relu);
        }
    }
    Model::build(layers, params, vec![widths[0]], *widths.last().unwrap(), dtype)
}

/// Residual 1-D CNN configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CnnConfig {
    pub blocks: usize,
    pub channels: usize,
    pub kernel: usize,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub input_len: usize,
    pub hidden: usize,
    pub class_count: usize,
    pub bias: bool,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            blocks: 5,
            channels: 32,
            kernel: 5,
            pool_kernel: 5,
            pool_stride: 2,
            input_len: 187,
            hidden: 32,
            class_count: 5,
            bias: true,
        }
    }
}

/// Residual conv template: conv stem, `blocks` x
/// {begin, conv, relu, conv, add, relu, pool}, flatten, dense, relu, dense.
pub fn build_cnn(cfg: &CnnConfig, dtype: Dtype, rng: &mut RandStream) -> Result<Model> {
    let ch = cfg.channels;
    let k = cfg.kernel;
    let pad = k / 2;
    let mut layers = Vec::new();
    let mut params = BTreeMap::new();
    let add_conv = |layers: &mut Vec<LayerSpec>,
                        params: &mut BTreeMap<String, Tensor>,
                        rng: &mut RandStream,
                        in_ch: usize| {
        let idx = layers.len();
        layers.push(LayerSpec::Conv1d { in_ch, out_ch: ch, k, stride: 1, pad, bias: cfg.bias });
        let fan_in = in_ch * k;
        params.insert(weight_name(idx), glorot(rng, &[ch, in_ch, k], fan_in, ch * k, dtype));
        if cfg.bias {
            params.insert(bias_name(idx), Tensor::zeros(&[ch], dtype));
        }
    };

    add_conv(&mut layers, &mut params, rng, 1);
    let mut len = cfg.input_len;
    for b in 0..cfg.blocks {
        layers.push(LayerSpec::ResidualBegin);
        add_conv(&mut layers, &mut params, rng, ch);
        layers.push(LayerSpec::Relu);
        add_conv(&mut layers, &mut params, rng, ch);
        layers.push(LayerSpec::ResidualEnd);
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Maxpool1d { k: cfg.pool_kernel, stride: cfg.pool_stride });
        len = window_out_len(len, cfg.pool_kernel, cfg.pool_stride, 0).ok_or_else(|| {
            NsrError::Dimension(format!(
                "spatial length collapses below 1 at residual block {b} (pool k {}, stride {})",
                cfg.pool_kernel, cfg.pool_stride
            ))
        })?;
    }
    layers.push(LayerSpec::Flatten);
    let flat = ch * len;
    let idx = layers.len();
    layers.push(LayerSpec::Dense { inp: flat, out: cfg.hidden, bias: cfg.bias });
    params.insert(weight_name(idx), glorot(rng, &[flat, cfg.hidden], flat, cfg.hidden, dtype));
    if cfg.bias {
        params.insert(bias_name(idx), Tensor::zeros(&[cfg.hidden], dtype));
    }
    layers.push(LayerSpec::Relu);
    let idx = layers.len();
    layers.push(LayerSpec::Dense { inp: cfg.hidden, out: cfg.class_count, bias: cfg.bias });
    params.insert(
        weight_name(idx),
        glorot(rng, &[cfg.hidden, cfg.class_count], cfg.hidden, cfg.class_count, dtype),
    );
    if cfg.bias {
        params.insert(bias_name(idx), Tensor::zeros(&[cfg.class_count], dtype));
    }
    Model::build(layers, params, vec![1, cfg.input_len], cfg.class_count, dtype)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_mlp_layer_counts() {
        let mut rng = RandStream::new(0, 0);
        let m = build_mlp(&[187, 128, 128, 128, 32, 5], true, Dtype::F64, &mut rng).unwrap();
        let dense = m.layers.iter().filter(|l| matches!(l, LayerSpec::Dense { .. })).count();
        assert_eq!(dense, 5);
        assert_eq!(m.relu_count(), 3);
        // relu follows the first three dense layers only
        assert!(matches!(m.layers[1], LayerSpec::Relu));
        assert!(matches!(m.layers[3], LayerSpec::Relu));
        assert!(matches!(m.layers[5], LayerSpec::Relu));
        assert!(matches!(m.layers[6], LayerSpec::Dense { .. }));
        assert!(matches!(m.layers[7], LayerSpec::Dense { .. }));
    }

    #[test]
    fn minimal_mlp_has_no_relu() {
        let mut rng = RandStream::new(0, 0);
        let m = build_mlp(&[2, 1], true, Dtype::F64, &mut rng).unwrap();
        assert_eq!(m.layers.len(), 1);
        assert_eq!(m.relu_count(), 0);
    }

    #[test]
    fn zero_width_rejected() {
        let mut rng = RandStream::new(0, 0);
        assert!(build_mlp(&[3, 0, 2], true, Dtype::F64, &mut rng).is_err());
    }

    #[test]
    fn default_cnn_shape_arithmetic() {
        let mut rng = RandStream::new(1, 0);
        let m = build_cnn(&CnnConfig::default(), Dtype::F64, &mut rng).unwrap();
        // pooled lengths: 187 -> 92 -> 44 -> 20 -> 8 -> 2
        assert_eq!(*m.shapes.last().unwrap(), FeatShape::Flat(5));
        assert!(m.layers.len() >= 28, "only {} ops", m.layers.len());
        assert_eq!(m.brackets.len(), 5);
    }

    #[test]
    fn zero_block_cnn_valid() {
        let mut rng = RandStream::new(1, 0);
        let cfg = CnnConfig { blocks: 0, ..CnnConfig::default() };
        let m = build_cnn(&cfg, Dtype::F64, &mut rng).unwrap();
        assert_eq!(*m.shapes.last().unwrap(), FeatShape::Flat(5));
    }

    #[test]
    fn collapsing_cnn_names_block() {
        let mut rng = RandStream::new(1, 0);
        let cfg = CnnConfig { blocks: 8, ..CnnConfig::default() };
        let err = build_cnn(&cfg, Dtype::F64, &mut rng).unwrap_err().to_string();
        assert!(err.contains("block"), "{err}");
    }
}
