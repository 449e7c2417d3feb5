//! Per-pixel material classifier.
//!
//! A small 1D residual network: an optional convolutional stem with residual
//! blocks over the feature vector, followed by dense layers and a softmax over
//! the material classes. Parameters live in one flat vector so the optimizer,
//! gradient checks and serialization all see the same layout.

mod adam;
mod centroid;
mod layers;
mod train;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::FeatureGrid;
use crate::exec::Executor;
use crate::{Error, Result};

pub use adam::AdamState;
pub use centroid::NearestCentroid;
pub use train::{
    inverse_frequency_weights, loss_and_gradients, train, Dataset, TrainConfig, TrainHistory,
};

fn default_channels() -> usize {
    8
}

fn default_kernel() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_len: usize,
    pub hidden_widths: Vec<usize>,
    /// Residual blocks after the convolutional stem; 0 builds a plain MLP.
    pub conv_blocks: usize,
    #[serde(default = "default_channels")]
    pub conv_channels: usize,
    /// Odd kernel width of every convolution.
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    pub classes: usize,
}

impl NetworkConfig {
    /// Four residual blocks of 8 channels and one hidden dense layer of 64.
    pub fn desk_default(input_len: usize, classes: usize) -> Self {
        NetworkConfig {
            input_len,
            hidden_widths: alloc::vec![64],
            conv_blocks: 4,
            conv_channels: 8,
            kernel_size: 3,
            classes,
        }
    }

    /// Stem, eight two-convolution residual blocks and the output layer:
    /// eighteen weighted layers.
    pub fn resnet18_preset(input_len: usize, classes: usize) -> Self {
        NetworkConfig {
            input_len,
            hidden_widths: Vec::new(),
            conv_blocks: 8,
            conv_channels: 16,
            kernel_size: 3,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::Classifier("input_len must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Classifier("classes must be >= 2".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Classifier("hidden widths must be >= 1".into()));
        }
        if self.conv_blocks > 0 && (self.conv_channels == 0 || self.kernel_size % 2 == 0) {
            return Err(Error::Classifier("convolutions need >= 1 channel and an odd kernel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Conv {
        in_ch: usize,
        out_ch: usize,
        len: usize,
        kernel: usize,
        w: Range<usize>,
        b: Range<usize>,
    },
    Relu,
    /// `relu(x + conv2(relu(conv1(x))))`
    Residual {
        ch: usize,
        len: usize,
        kernel: usize,
        w1: Range<usize>,
        b1: Range<usize>,
        w2: Range<usize>,
        b2: Range<usize>,
    },
    Dense {
        inp: usize,
        out: usize,
        w: Range<usize>,
        b: Range<usize>,
    },
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

fn build_ops(cfg: &NetworkConfig) -> (Vec<Op>, Vec<TensorInfo>, usize) {
    let mut ops = Vec::new();
    let mut tensors = Vec::new();
    let mut next = 0usize;
    let mut alloc_tensor = |name: String, shape: Vec<usize>, tensors: &mut Vec<TensorInfo>| {
        let size: usize = shape.iter().product();
        let range = next..next + size;
        next += size;
        tensors.push(TensorInfo {
            name,
            shape,
            range: range.clone(),
        });
        range
    };
    let len = cfg.input_len;
    let mut width = len;
    if cfg.conv_blocks > 0 {
        let (ch, k) = (cfg.conv_channels, cfg.kernel_size);
        let w = alloc_tensor("stem.weight".into(), alloc::vec![ch, 1, k], &mut tensors);
        let b = alloc_tensor("stem.bias".into(), alloc::vec![ch], &mut tensors);
        ops.push(Op::Conv {
            in_ch: 1,
            out_ch: ch,
            len,
            kernel: k,
            w,
            b,
        });
        ops.push(Op::Relu);
        for i in 0..cfg.conv_blocks {
            let w1 = alloc_tensor(format!("block{}.conv1.weight", i), alloc::vec![ch, ch, k], &mut tensors);
            let b1 = alloc_tensor(format!("block{}.conv1.bias", i), alloc::vec![ch], &mut tensors);
            let w2 = alloc_tensor(format!("block{}.conv2.weight", i), alloc::vec![ch, ch, k], &mut tensors);
            let b2 = alloc_tensor(format!("block{}.conv2.bias", i), alloc::vec![ch], &mut tensors);
            ops.push(Op::Residual {
                ch,
                len,
                kernel: k,
                w1,
                b1,
                w2,
                b2,
            });
        }
        width = ch * len;
    }
    let mut dims: Vec<usize> = cfg.hidden_widths.clone();
    dims.push(cfg.classes);
    let last = dims.len() - 1;
    for (i, &out) in dims.iter().enumerate() {
        let name = if i == last { String::from("output") } else { format!("dense{}", i) };
        let w = alloc_tensor(format!("{}.weight", name), alloc::vec![out, width], &mut tensors);
        let b = alloc_tensor(format!("{}.bias", name), alloc::vec![out], &mut tensors);
        ops.push(Op::Dense { inp: width, out, w, b });
        if i != last {
            ops.push(Op::Relu);
        }
        width = out;
    }
    (ops, tensors, next)
}

/// Normalized class probabilities for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxDistribution(pub Vec<f64>);

impl SoftmaxDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
        let sum: f64 = exps.iter().sum();
        SoftmaxDistribution(exps.into_iter().map(|e| e / sum).collect())
    }

    /// Highest-probability class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Intermediate activations kept for backpropagation.
pub(crate) struct Trace {
    /// Input of every op; the final entry is the logits.
    acts: Vec<Vec<f64>>,
    /// For residual ops, the inner activation `relu(conv1(x))`.
    inner: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    ops: Vec<Op>,
    tensors: Vec<TensorInfo>,
    params: Vec<f64>,
    /// Per-feature affine normalization applied before the first layer.
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    palette: Vec<String>,
}

impl Network {
    /// Fan-in scaled Gaussian weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Network::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &net.tensors {
            if t.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive std");
            for p in &mut net.params[t.range.clone()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(net)
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let (ops, tensors, count) = build_ops(&config);
        let palette = (0..config.classes).map(|c| format!("class_{}", c)).collect();
        Ok(Network {
            input_shift: alloc::vec![0.0; config.input_len],
            input_scale: alloc::vec![1.0; config.input_len],
            config,
            ops,
            tensors,
            params: alloc::vec![0.0; count],
            palette,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.tensors.iter().find(|t| t.name == name)?.range.clone();
        Some(&mut self.params[range])
    }

    pub fn palette(&self) -> &[String] {
        &self.palette
    }

    pub fn set_palette(&mut self, palette: Vec<String>) -> Result<()> {
        if palette.len() != self.config.classes {
            return Err(Error::LengthMismatch {
                expected: self.config.classes,
                found: palette.len(),
            });
        }
        self.palette = palette;
        Ok(())
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn set_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        for v in [&shift, &scale] {
            if v.len() != self.config.input_len {
                return Err(Error::LengthMismatch {
                    expected: self.config.input_len,
                    found: v.len(),
                });
            }
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    /// Replaces every parameter with its nearest `f32`, the precision of the
    /// model file.
    pub fn round_to_f32(&mut self) {
        for v in self
            .params
            .iter_mut()
            .chain(self.input_shift.iter_mut())
            .chain(self.input_scale.iter_mut())
        {
            *v = f64::from(*v as f32);
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.config.input_len {
            return Err(Error::LengthMismatch {
                expected: self.config.input_len,
                found: len,
            });
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(v, (s, k))| (v - s) * k)
            .collect()
    }

    pub(crate) fn run(&self, params: &[f64], x: &[f64], mut trace: Option<&mut Trace>) -> Vec<f64> {
        let mut a = self.normalize(x);
        for op in &self.ops {
            let out = match op {
                Op::Conv {
                    in_ch,
                    out_ch,
                    len,
                    kernel,
                    w,
                    b,
                } => layers::conv1d_forward(&params[w.clone()], &params[b.clone()], &a, *in_ch, *out_ch, *len, *kernel),
                Op::Relu => {
                    let mut y = a.clone();
                    layers::relu_in_place(&mut y);
                    y
                }
                Op::Residual {
                    ch,
                    len,
                    kernel,
                    w1,
                    b1,
                    w2,
                    b2,
                } => {
                    let mut h = layers::conv1d_forward(&params[w1.clone()], &params[b1.clone()], &a, *ch, *ch, *len, *kernel);
                    layers::relu_in_place(&mut h);
                    let mut y = layers::conv1d_forward(&params[w2.clone()], &params[b2.clone()], &h, *ch, *ch, *len, *kernel);
                    for (yi, xi) in y.iter_mut().zip(&a) {
                        *yi += xi;
                    }
                    layers::relu_in_place(&mut y);
                    if let Some(t) = trace.as_deref_mut() {
                        t.inner.push(Some(h));
                    }
                    y
                }
                Op::Dense { inp, out, w, b } => {
                    layers::dense_forward(&params[w.clone()], &params[b.clone()], &a, *inp, *out)
                }
            };
            if let Some(t) = trace.as_deref_mut() {
                if !matches!(op, Op::Residual { .. }) {
                    t.inner.push(None);
                }
                t.acts.push(core::mem::replace(&mut a, out));
            } else {
                a = out;
            }
        }
        if let Some(t) = trace {
            t.acts.push(a.clone());
        }
        a
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut t = Trace {
            acts: Vec::with_capacity(self.ops.len() + 1),
            inner: Vec::with_capacity(self.ops.len()),
        };
        self.run(&self.params, x, Some(&mut t));
        t
    }

    /// Accumulates parameter gradients of a scalar whose gradient with respect
    /// to the logits is `grad_logits`.
    pub(crate) fn backward(&self, trace: &Trace, grad_logits: &[f64], grads: &mut [f64]) {
        let params = &self.params;
        let mut g = grad_logits.to_vec();
        for (i, op) in self.ops.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let y = &trace.acts[i + 1];
            g = match op {
                Op::Conv {
                    in_ch,
                    out_ch,
                    len,
                    kernel,
                    w,
                    b,
                } => {
                    let (gw, gb) = split_two(grads, w, b);
                    layers::conv1d_backward(&params[w.clone()], x, &g, gw, gb, *in_ch, *out_ch, *len, *kernel)
                }
                Op::Relu => {
                    layers::relu_mask(&mut g, y);
                    g
                }
                Op::Residual {
                    ch,
                    len,
                    kernel,
                    w1,
                    b1,
                    w2,
                    b2,
                } => {
                    let h = trace.inner[i].as_ref().expect("residual trace");
                    layers::relu_mask(&mut g, y);
                    let (gw2, gb2) = split_two(grads, w2, b2);
                    let mut gh = layers::conv1d_backward(&params[w2.clone()], h, &g, gw2, gb2, *ch, *ch, *len, *kernel);
                    layers::relu_mask(&mut gh, h);
                    let (gw1, gb1) = split_two(grads, w1, b1);
                    let gx = layers::conv1d_backward(&params[w1.clone()], x, &gh, gw1, gb1, *ch, *ch, *len, *kernel);
                    for (gi, gxi) in g.iter_mut().zip(gx) {
                        *gi += gxi;
                    }
                    g
                }
                Op::Dense { inp, out, w, b } => {
                    let (gw, gb) = split_two(grads, w, b);
                    layers::dense_backward(&params[w.clone()], x, &g, gw, gb, *inp, *out)
                }
            };
        }
    }

    /// Logits for a raw feature vector.
    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_len(feature.len())?;
        Ok(self.run(&self.params, feature, None))
    }

    pub fn forward(&self, feature: &[f64]) -> Result<(Vec<f64>, SoftmaxDistribution)> {
        let logits = self.logits(feature)?;
        let dist = SoftmaxDistribution::from_logits(&logits);
        Ok((logits, dist))
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }
}

/// Disjoint mutable views of a weight range and the bias range that follows it.
fn split_two<'a>(grads: &'a mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grads[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

/// Per-pixel class probabilities, pixel-major: `data[p * classes + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub width: usize,
    pub height: usize,
    pub palette: Vec<String>,
    pub data: Vec<f32>,
}

impl ProbabilityGrid {
    pub fn classes(&self) -> usize {
        self.palette.len()
    }

    pub fn pixel(&self, p: usize) -> &[f32] {
        let c = self.classes();
        &self.data[p * c..(p + 1) * c]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width * self.height * self.classes();
        if self.data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: self.data.len(),
            });
        }
        Ok(())
    }

    /// Argmax per pixel with lowest-index tie-breaking.
    pub fn argmax_labels(&self) -> Vec<u8> {
        (0..self.width * self.height)
            .map(|p| {
                let v: Vec<f64> = self.pixel(p).iter().map(|&x| f64::from(x)).collect();
                argmax(&v) as u8
            })
            .collect()
    }
}

/// Runs the network on every pixel of a feature grid.
pub fn predict_tile<E: Executor>(model: &Network, grid: &FeatureGrid, exec: &E) -> Result<ProbabilityGrid> {
    model.check_len(grid.feature_len)?;
    grid.validate()?;
    let per_pixel = exec.map(grid.pixel_count(), |p| {
        let x: Vec<f64> = grid.feature(p).iter().map(|&v| f64::from(v)).collect();
        let logits = model.run(&model.params, &x, None);
        SoftmaxDistribution::from_logits(&logits).0
    });
    let mut data = Vec::with_capacity(grid.pixel_count() * model.classes());
    for dist in per_pixel {
        data.extend(dist.into_iter().map(|v| v as f32));
    }
    Ok(ProbabilityGrid {
        width: grid.width,
        height: grid.height,
        palette: model.palette.clone(),
        data,
    })
}
