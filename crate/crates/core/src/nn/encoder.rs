//! Frozen multi-scale feature encoder.
//!
//! A VGG19-style trunk truncated after `conv5_1`: 3×3 convolutions with
//! reflected borders, ReLU activations, and 2×2 max pooling between stages.
//! The forward pass exposes the activations after each stage's first ReLU
//! (`conv1_1` … `conv5_1`), giving feature maps at strides 1/2/4/8/16 with
//! 64/128/256/512/512 channels.
//!
//! The encoder is never trained here; real weights come from a tensor
//! archive, and tests use a seeded He-initialized surrogate with the same
//! architecture.

use ndarray::{Array3, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{conv_flops, BoundConv, Conv2dWeights};
use crate::ad::{Graph, Tid};
use crate::elem::Elem;
use crate::error::{Error, Result};

/// (name, in_channels, out_channels) for each convolution, in forward order.
const LAYERS: [(&str, usize, usize); 13] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
];

/// Layers followed by a 2×2 max pool.
const POOL_AFTER: [&str; 4] = ["conv1_2", "conv2_2", "conv3_4", "conv4_4"];

/// Layers whose post-ReLU activation is returned as a pyramid level.
pub const TAPS: [&str; 5] = ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"];

/// Channel counts of the five taps.
pub const TAP_CHANNELS: [usize; 5] = [64, 128, 256, 512, 512];

/// Total downsampling factor of the trunk.
pub const STRIDE: usize = 16;

/// Minimum input side length so the deepest tap is at least 2×2 and can
/// still be reflect-padded.
pub const MIN_SIDE: usize = 32;

#[derive(Clone)]
pub struct Encoder<F: Elem> {
    convs: Vec<Conv2dWeights<F>>,
}

pub struct BoundEncoder {
    convs: Vec<BoundConv>,
}

impl<F: Elem> Encoder<F> {
    /// Seeded stand-in with the real architecture but random weights.
    pub fn surrogate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = LAYERS
            .iter()
            .map(|&(_, cin, cout)| Conv2dWeights::he_init(&mut rng, cout, cin, 3))
            .collect();
        Encoder { convs }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2dWeights::param_count).sum()
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        for (conv, &(name, _, _)) in self.convs.iter().zip(LAYERS.iter()) {
            conv.visit(&format!("{prefix}{name}"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        for (conv, &(name, _, _)) in self.convs.iter_mut().zip(LAYERS.iter()) {
            conv.visit_mut(&format!("{prefix}{name}"), f);
        }
    }

    /// Copies the weights into a graph as frozen constants.
    pub fn bind(&self, g: &mut Graph<F>, prefix: &str, reg: &mut Vec<(String, Tid)>) -> BoundEncoder {
        let convs = self
            .convs
            .iter()
            .zip(LAYERS.iter())
            .map(|(conv, &(name, _, _))| conv.bind(g, false, &format!("{prefix}{name}"), reg))
            .collect();
        BoundEncoder { convs }
    }

    /// Validates that an image is large enough and pools cleanly.
    pub fn check_input(img: &Array3<F>) -> Result<()> {
        let (ch, h, w) = img.dim();
        if ch != 3 || h < MIN_SIDE || w < MIN_SIDE || h % STRIDE != 0 || w % STRIDE != 0 {
            return Err(Error::InvalidInput(format!(
                "encoder input must be 3×H×W with H, W multiples of {STRIDE} and at least {MIN_SIDE}, got {ch}×{h}×{w}"
            )));
        }
        Ok(())
    }

    /// Forward-order walk for exporters: each layer's name and weights plus
    /// whether its activation is a tap and whether a pool follows it.
    pub fn layers(&self) -> impl Iterator<Item = (&'static str, &Conv2dWeights<F>, bool, bool)> {
        self.convs.iter().zip(LAYERS.iter()).map(|(conv, &(name, _, _))| {
            (name, conv, TAPS.contains(&name), POOL_AFTER.contains(&name))
        })
    }

    /// Doubled multiply–accumulate count of one forward pass at (h, w).
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (mut fh, mut fw) = (h, w);
        let mut total = 0;
        for &(name, cin, cout) in LAYERS.iter() {
            total += conv_flops(cin, cout, 3, fh, fw);
            if POOL_AFTER.contains(&name) {
                fh /= 2;
                fw /= 2;
            }
        }
        total
    }
}

impl BoundEncoder {
    /// Runs the trunk and returns the five tap activations, shallow → deep.
    pub fn encode<F: Elem>(&self, g: &mut Graph<F>, img: Tid) -> [Tid; 5] {
        let mut taps = Vec::with_capacity(5);
        let mut x = img;
        for (bound, &(name, _, _)) in self.convs.iter().zip(LAYERS.iter()) {
            let conv = bound.apply3x3(g, x);
            x = g.relu(conv);
            if TAPS.contains(&name) {
                taps.push(x);
            }
            if POOL_AFTER.contains(&name) {
                x = g.maxpool2x2(x);
            }
        }
        taps.try_into().expect("five taps")
    }
}
