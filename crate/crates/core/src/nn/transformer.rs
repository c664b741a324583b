//! Style-attention transformer.
//!
//! Each attention block matches content positions against style positions:
//! queries come from a 1×1 convolution of the normalized content feature,
//! keys from the normalized style feature, and values from the raw style
//! feature. Attention rows are softmax-normalized, so every content position
//! receives a convex combination of style values, which a final 1×1
//! convolution maps back to the trunk width.
//!
//! The transformer runs one block on each of the two deepest encoder taps,
//! adds the block outputs back onto the content features, merges the two
//! scales (nearest-upsampling the deeper one), and fuses them with a 3×3
//! convolution. The teacher keeps the trunk width of 512 inside the blocks;
//! the student halves it to 256, shrinking the transformer from 4,461,056 to
//! 3,410,944 parameters while leaving the fuse convolution untouched.

use ndarray::ArrayD;
use rand::Rng;

use super::{conv_flops, BoundConv, Conv2dWeights};
use crate::ad::{Graph, Tid};
use crate::elem::{c, Elem};

/// Trunk width at the attention taps.
pub const TRUNK_WIDTH: usize = 512;

/// Inner width of the teacher's attention blocks.
pub const TEACHER_WIDTH: usize = 512;

/// Inner width of the student's attention blocks.
pub const STUDENT_WIDTH: usize = 256;

const MVN_EPS: f64 = 1e-5;

/// One attention block: query/key/value projections plus the output map.
#[derive(Clone)]
pub struct SanetWeights<F: Elem> {
    pub f: Conv2dWeights<F>,
    pub g: Conv2dWeights<F>,
    pub h: Conv2dWeights<F>,
    pub out: Conv2dWeights<F>,
}

pub struct BoundSanet {
    f: BoundConv,
    g: BoundConv,
    h: BoundConv,
    out: BoundConv,
}

impl<F: Elem> SanetWeights<F> {
    pub fn init<R: Rng>(rng: &mut R, width: usize) -> Self {
        SanetWeights {
            f: Conv2dWeights::he_init(rng, width, TRUNK_WIDTH, 1),
            g: Conv2dWeights::he_init(rng, width, TRUNK_WIDTH, 1),
            h: Conv2dWeights::he_init(rng, width, TRUNK_WIDTH, 1),
            out: Conv2dWeights::he_init(rng, TRUNK_WIDTH, width, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.f.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.f.param_count() + self.g.param_count() + self.h.param_count() + self.out.param_count()
    }

    pub fn bind(&self, g: &mut Graph<F>, trainable: bool, name: &str, reg: &mut Vec<(String, Tid)>) -> BoundSanet {
        BoundSanet {
            f: self.f.bind(g, trainable, &format!("{name}.f"), reg),
            g: self.g.bind(g, trainable, &format!("{name}.g"), reg),
            h: self.h.bind(g, trainable, &format!("{name}.h"), reg),
            out: self.out.bind(g, trainable, &format!("{name}.out"), reg),
        }
    }

    pub fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        self.f.visit(&format!("{name}.f"), f);
        self.g.visit(&format!("{name}.g"), f);
        self.h.visit(&format!("{name}.h"), f);
        self.out.visit(&format!("{name}.out"), f);
    }

    pub fn visit_mut(&mut self, name: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.f.visit_mut(&format!("{name}.f"), f);
        self.g.visit_mut(&format!("{name}.g"), f);
        self.h.visit_mut(&format!("{name}.h"), f);
        self.out.visit_mut(&format!("{name}.out"), f);
    }

    /// Doubled MACs for content with n positions attending over m positions.
    pub fn flops(&self, n: usize, m: usize) -> u64 {
        let d = self.width();
        conv_flops(TRUNK_WIDTH, d, 1, n, 1) * 2  // query + key projections
            + conv_flops(TRUNK_WIDTH, d, 1, m, 1) // value projection
            + 2 * (n * m * d) as u64 * 2          // logits and aggregation
            + conv_flops(d, TRUNK_WIDTH, 1, n, 1) // output map
    }
}

impl BoundSanet {
    /// Returns (block output, attention matrix). The output still needs the
    /// residual connection; the attention matrix is (n, m) row-stochastic.
    pub fn forward_with_attention<F: Elem>(
        &self,
        g: &mut Graph<F>,
        content: Tid,
        style: Tid,
    ) -> (Tid, Tid) {
        let cshape = g.value(content).shape().to_vec();
        let sshape = g.value(style).shape().to_vec();
        let (d, n) = (self.f.out_dim(g), cshape[1] * cshape[2]);
        let m = sshape[1] * sshape[2];

        let cn = g.mean_variance_normalize(content, c::<F>(MVN_EPS));
        let sn = g.mean_variance_normalize(style, c::<F>(MVN_EPS));
        let q = self.f.apply1x1(g, cn);
        let k = self.g.apply1x1(g, sn);
        let v = self.h.apply1x1(g, style);

        let q2 = g.reshape(q, &[d, n]);
        let qt = g.transpose2(q2);
        let k2 = g.reshape(k, &[d, m]);
        let logits = g.matmul2(qt, k2);
        let att = g.softmax_rows(logits);

        let v2 = g.reshape(v, &[d, m]);
        let vt = g.transpose2(v2);
        let mixed = g.matmul2(att, vt);
        let mixed_t = g.transpose2(mixed);
        let mixed_map = g.reshape(mixed_t, &[d, cshape[1], cshape[2]]);
        (self.out.apply1x1(g, mixed_map), att)
    }

    pub fn forward<F: Elem>(&self, g: &mut Graph<F>, content: Tid, style: Tid) -> Tid {
        self.forward_with_attention(g, content, style).0
    }
}

impl BoundConv {
    fn out_dim<F: Elem>(&self, g: &Graph<F>) -> usize {
        g.value(self.weight).shape()[0]
    }
}

/// Both attention blocks plus the scale-fusion convolution.
#[derive(Clone)]
pub struct TransformerWeights<F: Elem> {
    pub sanet4: SanetWeights<F>,
    pub sanet5: SanetWeights<F>,
    pub combine: Conv2dWeights<F>,
}

pub struct BoundTransformer {
    sanet4: BoundSanet,
    sanet5: BoundSanet,
    combine: BoundConv,
}

impl<F: Elem> TransformerWeights<F> {
    pub fn init<R: Rng>(rng: &mut R, width: usize) -> Self {
        TransformerWeights {
            sanet4: SanetWeights::init(rng, width),
            sanet5: SanetWeights::init(rng, width),
            combine: Conv2dWeights::he_init(rng, TRUNK_WIDTH, TRUNK_WIDTH, 3),
        }
    }

    pub fn width(&self) -> usize {
        self.sanet4.width()
    }

    pub fn param_count(&self) -> usize {
        self.sanet4.param_count() + self.sanet5.param_count() + self.combine.param_count()
    }

    pub fn bind(
        &self,
        g: &mut Graph<F>,
        trainable: bool,
        prefix: &str,
        reg: &mut Vec<(String, Tid)>,
    ) -> BoundTransformer {
        BoundTransformer {
            sanet4: self.sanet4.bind(g, trainable, &format!("{prefix}sanet4"), reg),
            sanet5: self.sanet5.bind(g, trainable, &format!("{prefix}sanet5"), reg),
            combine: self.combine.bind(g, trainable, &format!("{prefix}combine"), reg),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        self.sanet4.visit(&format!("{prefix}sanet4"), f);
        self.sanet5.visit(&format!("{prefix}sanet5"), f);
        self.combine.visit(&format!("{prefix}combine"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.sanet4.visit_mut(&format!("{prefix}sanet4"), f);
        self.sanet5.visit_mut(&format!("{prefix}sanet5"), f);
        self.combine.visit_mut(&format!("{prefix}combine"), f);
    }

    /// Doubled MACs at tap-4 size (h4, w4); tap 5 is half that size.
    pub fn flops(&self, h4: usize, w4: usize) -> u64 {
        let (n4, n5) = (h4 * w4, (h4 / 2) * (w4 / 2));
        self.sanet4.flops(n4, n4) + self.sanet5.flops(n5, n5) + conv_flops(TRUNK_WIDTH, TRUNK_WIDTH, 3, h4, w4)
    }
}

impl BoundTransformer {
    /// Fused stylized feature at tap-4 resolution. `f4`/`f5` are the content
    /// taps, `s4`/`s5` the style taps; tap 4 must be exactly twice tap 5.
    pub fn forward<F: Elem>(&self, g: &mut Graph<F>, f4: Tid, f5: Tid, s4: Tid, s5: Tid) -> Tid {
        let a4 = self.sanet4.forward(g, f4, s4);
        let cs4 = g.add(f4, a4);
        let a5 = self.sanet5.forward(g, f5, s5);
        let cs5 = g.add(f5, a5);
        let up5 = g.upsample_nearest2x(cs5);
        let merged = g.add(cs4, up5);
        self.combine.apply3x3(g, merged)
    }
}
