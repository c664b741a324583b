//! Upsampling decoders that map the fused 512-channel feature back to RGB.
//!
//! Every layer is a 3×3 convolution with reflected borders followed by a
//! ReLU (except the last layer, which is linear) and, where marked, a 2×
//! nearest-neighbor upsample. Both presets contain three upsamples, so the
//! output is 8× the feature resolution — the stride of the tap the
//! transformer operates at.
//!
//! The teacher uses a nine-layer mirror of the encoder stages (3,505,219
//! parameters); the compressed student tapers straight down through four
//! layers (683,075 parameters, ~2.7% under the 702,400 budget).

use ndarray::ArrayD;
use rand::Rng;

use super::{conv_flops, BoundConv, Conv2dWeights};
use crate::ad::{Graph, Tid};
use crate::elem::Elem;

/// One decoder stage: a 3×3 convolution and whether a 2× upsample follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub upsample_after: bool,
}

/// Channel plan of a decoder, independent of any weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderSpec {
    pub layers: Vec<DecoderLayer>,
}

impl DecoderSpec {
    pub fn teacher() -> Self {
        let plan = [
            (512, 256, true),
            (256, 256, false),
            (256, 256, false),
            (256, 256, false),
            (256, 128, true),
            (128, 128, false),
            (128, 64, true),
            (64, 64, false),
            (64, 3, false),
        ];
        DecoderSpec { layers: plan.iter().map(|&(i, o, u)| DecoderLayer { in_ch: i, out_ch: o, upsample_after: u }).collect() }
    }

    pub fn student() -> Self {
        let plan = [(512, 128, true), (128, 64, true), (64, 32, true), (32, 3, false)];
        DecoderSpec { layers: plan.iter().map(|&(i, o, u)| DecoderLayer { in_ch: i, out_ch: o, upsample_after: u }).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.in_ch * l.out_ch * 9 + l.out_ch).sum()
    }

    pub fn upsample_factor(&self) -> usize {
        1 << self.layers.iter().filter(|l| l.upsample_after).count()
    }

    /// Doubled MACs of one pass starting from an (h, w) feature map.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (mut fh, mut fw) = (h, w);
        let mut total = 0;
        for l in &self.layers {
            total += conv_flops(l.in_ch, l.out_ch, 3, fh, fw);
            if l.upsample_after {
                fh *= 2;
                fw *= 2;
            }
        }
        total
    }
}

#[derive(Clone)]
pub struct DecoderWeights<F: Elem> {
    pub spec: DecoderSpec,
    pub convs: Vec<Conv2dWeights<F>>,
}

pub struct BoundDecoder {
    convs: Vec<BoundConv>,
    upsample_after: Vec<bool>,
}

impl<F: Elem> DecoderWeights<F> {
    pub fn init<R: Rng>(rng: &mut R, spec: DecoderSpec) -> Self {
        let convs = spec.layers.iter().map(|l| Conv2dWeights::he_init(rng, l.out_ch, l.in_ch, 3)).collect();
        DecoderWeights { spec, convs }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2dWeights::param_count).sum()
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool, prefix: &str, reg: &mut Vec<(String, Tid)>) -> BoundDecoder {
        let convs = self
            .convs
            .iter()
            .enumerate()
            .map(|(i, conv)| conv.bind(g, trainable, &format!("{prefix}conv{i}"), reg))
            .collect();
        BoundDecoder { convs, upsample_after: self.spec.layers.iter().map(|l| l.upsample_after).collect() }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit(&format!("{prefix}conv{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_mut(&format!("{prefix}conv{i}"), f);
        }
    }
}

impl BoundDecoder {
    /// Raw RGB output (no clamping) from a (512, h, w) fused feature.
    pub fn decode<F: Elem>(&self, g: &mut Graph<F>, feature: Tid) -> Tid {
        let last = self.convs.len() - 1;
        let mut x = feature;
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.apply3x3(g, x);
            if i != last {
                x = g.relu(x);
            }
            if self.upsample_after[i] {
                x = g.upsample_nearest2x(x);
            }
        }
        x
    }
}
