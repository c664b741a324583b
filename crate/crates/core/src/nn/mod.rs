//! Network building blocks: the frozen feature encoder, the attention-based
//! style transformer (teacher and compressed student widths), and the
//! upsampling decoders.
//!
//! Weight structs own plain tensors; [`Conv2dWeights::bind`] copies them into
//! a graph once per forward build, either as trainable parameters or as
//! frozen constants. Every parameter is reachable through `visit`/`visit_mut`
//! under a stable dotted name, which the optimizer, checkpoints, and the
//! exporter all share.

pub mod decoder;
pub mod encoder;
pub mod model;
pub mod transformer;

pub use decoder::{DecoderSpec, DecoderWeights};
pub use encoder::Encoder;
pub use model::{Role, StyleModel};
pub use transformer::{SanetWeights, TransformerWeights};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ad::{Graph, PadMode, Tid};
use crate::elem::{c, Elem};

/// One convolution's parameters: weight (out, in, k, k) plus bias (out).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dWeights<F: Elem> {
    pub weight: ArrayD<F>,
    pub bias: ArrayD<F>,
}

/// Graph handles for one bound convolution.
#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub weight: Tid,
    pub bias: Tid,
}

impl<F: Elem> Conv2dWeights<F> {
    /// He-normal initialization: N(0, sqrt(2 / fan_in)), zero bias.
    pub fn he_init<R: Rng>(rng: &mut R, out_ch: usize, in_ch: usize, k: usize) -> Self {
        let std = (2.0 / (in_ch * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let weight = ArrayD::from_shape_fn(IxDyn(&[out_ch, in_ch, k, k]), |_| c::<F>(normal.sample(rng)));
        let bias = ArrayD::zeros(IxDyn(&[out_ch]));
        Conv2dWeights { weight, bias }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool, name: &str, reg: &mut Vec<(String, Tid)>) -> BoundConv {
        let (w, b) = if trainable {
            (g.param(self.weight.clone()), g.param(self.bias.clone()))
        } else {
            (g.constant(self.weight.clone()), g.constant(self.bias.clone()))
        };
        reg.push((format!("{name}.weight"), w));
        reg.push((format!("{name}.bias"), b));
        BoundConv { weight: w, bias: b }
    }

    pub fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        f(format!("{name}.weight"), &self.weight);
        f(format!("{name}.bias"), &self.bias);
    }

    pub fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        f(format!("{name}.weight"), &mut self.weight);
        f(format!("{name}.bias"), &mut self.bias);
    }
}

impl BoundConv {
    /// Same-size 3×3 convolution with reflected borders.
    pub fn apply3x3<F: Elem>(&self, g: &mut Graph<F>, x: Tid) -> Tid {
        g.conv2d(x, self.weight, Some(self.bias), 1, PadMode::Reflect)
    }

    /// Pointwise 1×1 convolution.
    pub fn apply1x1<F: Elem>(&self, g: &mut Graph<F>, x: Tid) -> Tid {
        g.conv2d(x, self.weight, Some(self.bias), 0, PadMode::Zero)
    }
}

/// Multiply–accumulate count of a stride-1 same-size convolution, doubled to
/// count multiplies and adds separately.
pub(crate) fn conv_flops(in_ch: usize, out_ch: usize, k: usize, h: usize, w: usize) -> u64 {
    2 * (in_ch * out_ch * k * k * h * w) as u64
}

/// Recomputes one attention matrix with plain nested loops, independent of
/// the graph engine. Used to cross-check the attention path.
pub fn dense_attention_oracle<F: Elem>(
    block: &SanetWeights<F>,
    content: &ndarray::Array3<F>,
    style: &ndarray::Array3<F>,
) -> ndarray::Array2<F> {
    let eps = 1e-5;
    let normalize = |x: &ndarray::Array3<F>| -> Vec<Vec<f64>> {
        let (ch, h, w) = x.dim();
        let mut rows = vec![vec![0.0; h * w]; ch];
        for (ci, row) in rows.iter_mut().enumerate() {
            let mut mean = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    mean += x[[ci, y, xx]].to_f64_();
                }
            }
            mean /= (h * w) as f64;
            let mut var = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    let d = x[[ci, y, xx]].to_f64_() - mean;
                    var += d * d;
                }
            }
            var /= (h * w) as f64;
            let denom = (var + eps).sqrt();
            for y in 0..h {
                for xx in 0..w {
                    row[y * w + xx] = (x[[ci, y, xx]].to_f64_() - mean) / denom;
                }
            }
        }
        rows
    };
    let project = |conv: &Conv2dWeights<F>, feat: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let (out_ch, in_ch) = (conv.out_channels(), conv.in_channels());
        let n = feat[0].len();
        let mut out = vec![vec![0.0; n]; out_ch];
        for (o, orow) in out.iter_mut().enumerate() {
            let b = conv.bias[o].to_f64_();
            for (p, dst) in orow.iter_mut().enumerate() {
                let mut acc = b;
                for (i, frow) in feat.iter().enumerate().take(in_ch) {
                    acc += conv.weight[[o, i, 0, 0]].to_f64_() * frow[p];
                }
                *dst = acc;
            }
        }
        out
    };

    let q = project(&block.f, &normalize(content));
    let k = project(&block.g, &normalize(style));
    let (n, m, d) = (q[0].len(), k[0].len(), q.len());
    let mut att = ndarray::Array2::zeros((n, m));
    for r in 0..n {
        let mut logits = vec![0.0; m];
        for (cidx, l) in logits.iter_mut().enumerate() {
            let mut acc = 0.0;
            for qk in 0..d {
                acc += q[qk][r] * k[qk][cidx];
            }
            *l = acc;
        }
        let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - maxv).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (cidx, e) in exps.iter().enumerate() {
            att[[r, cidx]] = c::<F>(e / denom);
        }
    }
    att
}
