//! Training objective: perceptual content/style terms, the three-part
//! distillation term (fused features, raw output, perceptual score), a depth
//! preservation term, and an occlusion-masked temporal term.
//!
//! Every loss builds onto a caller-owned graph and returns a scalar node, so
//! one backward pass covers any combination. All image-space terms except
//! the perceptual score consume the decoder's *raw* output; the perceptual
//! score clamps first, because the evaluator is only defined on [0,1] — and
//! clamping everywhere would zero gradients exactly where the decoder has
//! drifted out of range.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::ad::{Graph, PadMode, Tid};
use crate::elem::{c, Elem};
use crate::error::{Error, Result};
use crate::flip::{flip_score_graph, FlipParams};

/// Scale factors for the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub content: f64,
    pub style: f64,
    pub distill: f64,
    pub depth: f64,
    pub temporal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { content: 1.0, style: 3.0, distill: 1.0, depth: 1.0, temporal: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.content, self.style, self.distill, self.depth, self.temporal];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Mean squared error between two same-shape nodes.
pub fn mse<F: Elem>(g: &mut Graph<F>, a: Tid, b: Tid) -> Tid {
    let d = g.sub(a, b);
    let sq = g.mul(d, d);
    g.mean_all(sq)
}

/// Root-mean-square feature distance after per-channel normalization,
/// summed over the two deepest taps. Normalizing first makes the term
/// invariant to the affine statistics that the style terms control.
pub fn content_loss<F: Elem>(g: &mut Graph<F>, out: [Tid; 2], reference: [Tid; 2]) -> Tid {
    let eps = c::<F>(1e-5);
    let mut total = None;
    for (o, r) in out.into_iter().zip(reference) {
        let on = g.mean_variance_normalize(o, eps);
        let rn = g.mean_variance_normalize(r, eps);
        let d = g.sub(on, rn);
        let sq = g.mul(d, d);
        let ms = g.mean_all(sq);
        let rms = g.sqrt_guarded(ms);
        total = Some(match total {
            None => rms,
            Some(t) => g.add(t, rms),
        });
    }
    total.expect("two taps")
}

/// Per-channel spatial mean and standard deviation of a (C,H,W) node.
fn channel_stats<F: Elem>(g: &mut Graph<F>, x: Tid) -> (Tid, Tid) {
    let shape = g.value(x).shape().to_vec();
    let (h, w) = (shape[1], shape[2]);
    let mu = g.mean_spatial(x);
    let mu_b = g.broadcast_spatial(mu, h, w);
    let cen = g.sub(x, mu_b);
    let sq = g.mul(cen, cen);
    let var = g.mean_spatial(sq);
    let sd = g.sqrt_guarded(var);
    (mu, sd)
}

fn vec_norm<F: Elem>(g: &mut Graph<F>, x: Tid) -> Tid {
    let sq = g.mul(x, x);
    let s = g.sum_all(sq);
    g.sqrt_guarded(s)
}

/// Sum over layers of ‖Δmean‖₂ + ‖Δstd‖₂ between output and style taps.
pub fn style_loss<F: Elem>(g: &mut Graph<F>, out: &[Tid], style: &[Tid]) -> Tid {
    assert_eq!(out.len(), style.len(), "style_loss needs matching tap lists");
    assert!(!out.is_empty(), "style_loss needs at least one tap");
    let mut total = None;
    for (&o, &s) in out.iter().zip(style) {
        let (mu_o, sd_o) = channel_stats(g, o);
        let (mu_s, sd_s) = channel_stats(g, s);
        let dmu = g.sub(mu_o, mu_s);
        let dsd = g.sub(sd_o, sd_s);
        let nmu = vec_norm(g, dmu);
        let nsd = vec_norm(g, dsd);
        let layer = g.add(nmu, nsd);
        total = Some(match total {
            None => layer,
            Some(t) => g.add(t, layer),
        });
    }
    total.expect("nonempty tap list")
}

/// Perceptual distillation term: pooled image difference between the
/// teacher's and student's outputs, both clamped into the evaluator domain.
pub fn perceptual_distill_loss<F: Elem>(g: &mut Graph<F>, teacher_raw: Tid, student_raw: Tid, p: &FlipParams) -> Tid {
    let t = g.clamp(teacher_raw, F::zero(), F::one());
    let s = g.clamp(student_raw, F::zero(), F::one());
    flip_score_graph(g, t, s, p)
}

/// Differentiable single-channel depth proxy.
pub trait DepthPredictor<F: Elem> {
    /// Predicted depth map (1,H,W) for an RGB (3,H,W) node.
    fn predict(&self, g: &mut Graph<F>, img: Tid) -> Tid;

    fn name(&self) -> &'static str;
}

/// Stand-in predictor: Gaussian-blurred luminance. Deterministic and
/// differentiable, with the same interface a learned monocular predictor
/// would implement.
pub struct GaussianLumaDepth {
    sigma: f64,
}

impl GaussianLumaDepth {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma > 0.0, "blur sigma must be positive");
        GaussianLumaDepth { sigma }
    }
}

impl Default for GaussianLumaDepth {
    fn default() -> Self {
        GaussianLumaDepth::new(2.0)
    }
}

impl<F: Elem> DepthPredictor<F> for GaussianLumaDepth {
    fn predict(&self, g: &mut Graph<F>, img: Tid) -> Tid {
        let r = g.channels(img, 0, 1);
        let gr = g.channels(img, 1, 1);
        let b = g.channels(img, 2, 1);
        let rw = g.mul_scalar(r, c::<F>(0.2126));
        let gw = g.mul_scalar(gr, c::<F>(0.7152));
        let bw = g.mul_scalar(b, c::<F>(0.0722));
        let rg = g.add(rw, gw);
        let luma = g.add(rg, bw);

        let radius = (3.0 * self.sigma).ceil() as i64;
        let size = (2 * radius + 1) as usize;
        let mut kernel = ndarray::Array3::<F>::zeros((1, size, size));
        let mut sum = 0.0;
        for y in -radius..=radius {
            for x in -radius..=radius {
                let v = (-((x * x + y * y) as f64) / (2.0 * self.sigma * self.sigma)).exp();
                kernel[[0, (y + radius) as usize, (x + radius) as usize]] = c::<F>(v);
                sum += v;
            }
        }
        kernel.mapv_inplace(|v| v / c::<F>(sum));
        let k = g.constant(kernel.into_dyn());
        g.depthwise_conv2d(luma, k, radius as usize, PadMode::Replicate)
    }

    fn name(&self) -> &'static str {
        "gaussian-luma"
    }
}

/// Depth preservation: MSE between the predictor on the stylized output and
/// its (fixed) prediction on the content image. The content branch enters as
/// a constant so no gradient flows into it.
pub fn depth_loss<F: Elem>(
    g: &mut Graph<F>,
    predictor: &dyn DepthPredictor<F>,
    stylized_raw: Tid,
    content: &Array3<F>,
) -> Tid {
    let content_depth = {
        let mut cg: Graph<F> = Graph::new();
        let node = cg.constant(content.clone().into_dyn());
        let d = predictor.predict(&mut cg, node);
        cg.value(d).to_owned()
    };
    let target = g.constant(content_depth);
    let predicted = predictor.predict(g, stylized_raw);
    mse(g, predicted, target)
}

/// Occlusion-masked temporal term: mean absolute difference between the
/// current output and the previous output warped forward along `flow`, taken
/// over non-occluded pixels. `flow[0]` is the x displacement from frame t to
/// t+1 in pixels. An all-occluded mask yields exactly zero.
pub fn temporal_loss<F: Elem>(
    g: &mut Graph<F>,
    current: Tid,
    previous: Tid,
    flow: &Array3<F>,
    occluded: &Array2<bool>,
) -> Tid {
    let shape = g.value(current).shape().to_vec();
    assert_eq!(shape.len(), 3, "temporal_loss expects (C,H,W) outputs");
    let (ch, h, w) = (shape[0], shape[1], shape[2]);
    assert_eq!(flow.dim(), (2, h, w), "flow must be (2,H,W)");
    assert_eq!(occluded.dim(), (h, w), "occlusion mask must be (H,W)");

    let valid = occluded.iter().filter(|o| !**o).count();
    if valid == 0 {
        return g.scalar_const(F::zero());
    }

    // a pixel of the warped previous frame samples where the flow says the
    // current pixel came from
    let back_flow = flow.mapv(|v| -v);
    let warped = g.bilinear_warp(previous, &back_flow);

    let mut mask = Array3::<F>::zeros((ch, h, w));
    for y in 0..h {
        for x in 0..w {
            if !occluded[[y, x]] {
                for chan in 0..ch {
                    mask[[chan, y, x]] = F::one();
                }
            }
        }
    }
    let m = g.constant(mask.into_dyn());
    let d = g.sub(current, warped);
    let ad = g.abs(d);
    let masked = g.mul(ad, m);
    let s = g.sum_all(masked);
    g.mul_scalar(s, c::<F>(1.0 / (ch * valid) as f64))
}

/// The scalar loss terms of one training sample, pre-weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub content: Tid,
    pub style: Tid,
    pub distill_feature: Tid,
    pub distill_output: Tid,
    pub distill_perceptual: Tid,
    pub depth: Tid,
    pub temporal: Tid,
}

/// Unweighted sum of the three distillation parts.
pub fn distill_total<F: Elem>(g: &mut Graph<F>, t: &LossTerms) -> Tid {
    let feat_out = g.add(t.distill_feature, t.distill_output);
    g.add(feat_out, t.distill_perceptual)
}

/// Weighted sum of the five top-level components.
pub fn weighted_total<F: Elem>(
    g: &mut Graph<F>,
    w: &LossWeights,
    content: Tid,
    style: Tid,
    distill: Tid,
    depth: Tid,
    temporal: Tid,
) -> Tid {
    let mut total = g.mul_scalar(content, c::<F>(w.content));
    for (term, weight) in [
        (style, w.style),
        (distill, w.distill),
        (depth, w.depth),
        (temporal, w.temporal),
    ] {
        let scaled = g.mul_scalar(term, c::<F>(weight));
        total = g.add(total, scaled);
    }
    total
}

/// Full objective from per-sample terms.
pub fn total_loss<F: Elem>(g: &mut Graph<F>, w: &LossWeights, t: &LossTerms) -> Tid {
    let distill = distill_total(g, t);
    weighted_total(g, w, t.content, t.style, distill, t.depth, t.temporal)
}

/// Evaluated component values of one sample or step, as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub content: f64,
    pub style: f64,
    pub distill_feature: f64,
    pub distill_output: f64,
    pub distill_perceptual: f64,
    pub distill_total: f64,
    pub depth: f64,
    pub temporal: f64,
    pub total: f64,
}

impl LossReport {
    /// Reads every component off an evaluated graph.
    pub fn from_graph<F: Elem>(g: &Graph<F>, t: &LossTerms, total: Tid) -> LossReport {
        let feat = g.scalar(t.distill_feature).to_f64_();
        let out = g.scalar(t.distill_output).to_f64_();
        let pq = g.scalar(t.distill_perceptual).to_f64_();
        LossReport {
            content: g.scalar(t.content).to_f64_(),
            style: g.scalar(t.style).to_f64_(),
            distill_feature: feat,
            distill_output: out,
            distill_perceptual: pq,
            distill_total: feat + out + pq,
            depth: g.scalar(t.depth).to_f64_(),
            temporal: g.scalar(t.temporal).to_f64_(),
            total: g.scalar(total).to_f64_(),
        }
    }

    /// Recomputes the weighted sum from the reported components.
    pub fn recompute_total(&self, w: &LossWeights) -> f64 {
        w.content * self.content
            + w.style * self.style
            + w.distill * self.distill_total
            + w.depth * self.depth
            + w.temporal * self.temporal
    }

    pub fn is_finite(&self) -> bool {
        [
            self.content,
            self.style,
            self.distill_feature,
            self.distill_output,
            self.distill_perceptual,
            self.depth,
            self.temporal,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Column-wise mean, e.g. over the samples of one batch.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        assert!(!reports.is_empty(), "mean of zero reports");
        let n = reports.len() as f64;
        let mut acc = LossReport {
            content: 0.0,
            style: 0.0,
            distill_feature: 0.0,
            distill_output: 0.0,
            distill_perceptual: 0.0,
            distill_total: 0.0,
            depth: 0.0,
            temporal: 0.0,
            total: 0.0,
        };
        for r in reports {
            acc.content += r.content;
            acc.style += r.style;
            acc.distill_feature += r.distill_feature;
            acc.distill_output += r.distill_output;
            acc.distill_perceptual += r.distill_perceptual;
            acc.distill_total += r.distill_total;
            acc.depth += r.depth;
            acc.temporal += r.temporal;
            acc.total += r.total;
        }
        acc.content /= n;
        acc.style /= n;
        acc.distill_feature /= n;
        acc.distill_output /= n;
        acc.distill_perceptual /= n;
        acc.distill_total /= n;
        acc.depth /= n;
        acc.temporal /= n;
        acc.total /= n;
        acc
    }
}
