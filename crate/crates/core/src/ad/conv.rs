//! 2-D convolutions (stride 1) over (C,H,W) maps via im2col plus a matrix
//! product, with zero / reflect / replicate border handling and the matching
//! adjoints for the backward pass.

use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayD, ArrayView3, Axis, Ix3, Ix4, IxDyn};

use super::{Graph, Tid};
use crate::elem::Elem;

/// Border handling for spatial padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Pad with zeros.
    Zero,
    /// Mirror about the edge without repeating the border sample.
    Reflect,
    /// Clamp to the nearest edge sample.
    Replicate,
}

/// Maps a (possibly out-of-range) padded coordinate back to a source index,
/// or `None` where zero padding contributes nothing.
fn source_index(i: isize, n: usize, mode: PadMode) -> Option<usize> {
    let n = n as isize;
    let j = match mode {
        PadMode::Zero => {
            if i < 0 || i >= n {
                return None;
            }
            i
        }
        PadMode::Reflect => {
            if i < 0 {
                -i
            } else if i >= n {
                2 * n - 2 - i
            } else {
                i
            }
        }
        PadMode::Replicate => i.clamp(0, n - 1),
    };
    debug_assert!((0..n).contains(&j), "padding wider than the image");
    Some(j as usize)
}

fn index_map(n: usize, pad: usize, mode: PadMode) -> Vec<Option<usize>> {
    (-(pad as isize)..(n + pad) as isize).map(|i| source_index(i, n, mode)).collect()
}

fn pad3<F: Elem>(x: &ArrayView3<F>, pad: usize, mode: PadMode) -> Array3<F> {
    let (ch, h, w) = x.dim();
    if pad == 0 {
        return x.to_owned();
    }
    if mode == PadMode::Reflect {
        assert!(pad < h && pad < w, "reflect pad {pad} exceeds image {h}x{w}");
    }
    let rows = index_map(h, pad, mode);
    let cols = index_map(w, pad, mode);
    let mut out = Array3::<F>::zeros((ch, h + 2 * pad, w + 2 * pad));
    for c in 0..ch {
        for (i, r) in rows.iter().enumerate() {
            let Some(r) = r else { continue };
            for (j, s) in cols.iter().enumerate() {
                if let Some(s) = s {
                    out[[c, i, j]] = x[[c, *r, *s]];
                }
            }
        }
    }
    out
}

/// Adjoint of `pad3`: folds gradients at padded positions back onto the
/// source samples they were read from.
fn unpad_adjoint3<F: Elem>(g: &Array3<F>, h: usize, w: usize, pad: usize, mode: PadMode) -> Array3<F> {
    let ch = g.dim().0;
    if pad == 0 {
        return g.clone();
    }
    let rows = index_map(h, pad, mode);
    let cols = index_map(w, pad, mode);
    let mut out = Array3::<F>::zeros((ch, h, w));
    for c in 0..ch {
        for (i, r) in rows.iter().enumerate() {
            let Some(r) = r else { continue };
            for (j, s) in cols.iter().enumerate() {
                if let Some(s) = s {
                    out[[c, *r, *s]] = out[[c, *r, *s]] + g[[c, i, j]];
                }
            }
        }
    }
    out
}

/// Unrolls sliding kh x kw windows of a padded (C,Hp,Wp) map into a
/// (C*kh*kw, Ho*Wo) matrix.
fn im2col<F: Elem>(padded: &Array3<F>, kh: usize, kw: usize) -> Array2<F> {
    let (ch, hp, wp) = padded.dim();
    let (ho, wo) = (hp - kh + 1, wp - kw + 1);
    let mut cols = Array2::<F>::zeros((ch * kh * kw, ho * wo));
    for c in 0..ch {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let mut dst = cols.row_mut(row);
                let mut n = 0;
                for y in 0..ho {
                    for x in 0..wo {
                        dst[n] = padded[[c, y + ki, x + kj]];
                        n += 1;
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of `im2col`: scatter-adds column gradients back onto the padded map.
fn col2im<F: Elem>(dcols: &Array2<F>, ch: usize, hp: usize, wp: usize, kh: usize, kw: usize) -> Array3<F> {
    let (ho, wo) = (hp - kh + 1, wp - kw + 1);
    let mut out = Array3::<F>::zeros((ch, hp, wp));
    for c in 0..ch {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = dcols.row(row);
                let mut n = 0;
                for y in 0..ho {
                    for x in 0..wo {
                        out[[c, y + ki, x + kj]] = out[[c, y + ki, x + kj]] + src[n];
                        n += 1;
                    }
                }
            }
        }
    }
    out
}

impl<F: Elem> Graph<F> {
    /// Stride-1 convolution: input (C,H,W), weight (O,C,kh,kw), optional
    /// bias (O). Output is (O, H+2*pad-kh+1, W+2*pad-kw+1).
    pub fn conv2d(&mut self, input: Tid, weight: Tid, bias: Option<Tid>, pad: usize, mode: PadMode) -> Tid {
        let x = self.values[input.0].view().into_dimensionality::<Ix3>().expect("conv2d input (C,H,W)");
        let wgt = self.values[weight.0].view().into_dimensionality::<Ix4>().expect("conv2d weight (O,C,kh,kw)");
        let (ch, h, w) = x.dim();
        let (oc, wc, kh, kw) = wgt.dim();
        assert_eq!(ch, wc, "conv2d channel mismatch");
        assert!(h + 2 * pad >= kh && w + 2 * pad >= kw, "conv2d kernel larger than padded input");
        let (ho, wo) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);

        let padded = pad3(&x, pad, mode);
        let cols = Arc::new(im2col(&padded, kh, kw));
        let w2 = wgt.to_shape((oc, ch * kh * kw)).unwrap().to_owned();
        let mut out2 = w2.dot(cols.as_ref());
        if let Some(b) = bias {
            let bv = &self.values[b.0];
            assert_eq!(bv.shape(), [oc], "conv2d bias shape");
            for (o, mut row) in out2.rows_mut().into_iter().enumerate() {
                let bo = bv[[o]];
                row.mapv_inplace(|v| v + bo);
            }
        }
        let out = out2.into_shape_with_order((oc, ho, wo)).unwrap().into_dyn();

        let mut parents = vec![input, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let (ni, nw) = (self.needs_grad(input), self.needs_grad(weight));
        let nb = bias.map(|b| self.needs_grad(b)).unwrap_or(false);
        self.push_op(out, &parents, move |vals, g, store| {
            let g2 = g
                .as_standard_layout()
                .into_shape_with_order((oc, ho * wo))
                .unwrap()
                .to_owned();
            if nw {
                let dw = g2.dot(&cols.t());
                store.accumulate(weight, dw.into_shape_with_order(IxDyn(&[oc, ch, kh, kw])).unwrap());
            }
            if nb {
                let db = g2.sum_axis(Axis(1));
                store.accumulate(bias.unwrap(), db.into_dyn());
            }
            if ni {
                let w2 = vals[weight.0]
                    .as_standard_layout()
                    .into_shape_with_order((oc, ch * kh * kw))
                    .unwrap()
                    .to_owned();
                let dcols = w2.t().dot(&g2);
                let dpadded = col2im(&dcols, ch, h + 2 * pad, w + 2 * pad, kh, kw);
                let dx = unpad_adjoint3(&dpadded, h, w, pad, mode);
                store.accumulate(input, dx.into_dyn());
            }
        })
    }

    /// Depthwise stride-1 convolution: each channel of (C,H,W) is filtered by
    /// its own (kh,kw) kernel from a (C,kh,kw) stack.
    pub fn depthwise_conv2d(&mut self, input: Tid, kernels: Tid, pad: usize, mode: PadMode) -> Tid {
        let x = self.values[input.0].view().into_dimensionality::<Ix3>().expect("depthwise input (C,H,W)");
        let k = self.values[kernels.0].view().into_dimensionality::<Ix3>().expect("depthwise kernels (C,kh,kw)");
        let (ch, h, w) = x.dim();
        let (kc, kh, kw) = k.dim();
        assert_eq!(ch, kc, "depthwise kernel count must match channels");
        let (ho, wo) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);

        let padded = pad3(&x, pad, mode);
        let mut cols_per_ch = Vec::with_capacity(ch);
        let mut out = Array3::<F>::zeros((ch, ho, wo));
        for c in 0..ch {
            let pc = padded.index_axis(Axis(0), c).to_owned().insert_axis(Axis(0));
            let cols = im2col(&pc, kh, kw);
            let krow = k
                .index_axis(Axis(0), c)
                .to_shape((1, kh * kw))
                .unwrap()
                .to_owned();
            let o = krow.dot(&cols);
            out.index_axis_mut(Axis(0), c)
                .assign(&o.into_shape_with_order((ho, wo)).unwrap());
            cols_per_ch.push(cols);
        }
        let cols_per_ch = Arc::new(cols_per_ch);

        let (ni, nk) = (self.needs_grad(input), self.needs_grad(kernels));
        self.push_op(out.into_dyn(), &[input, kernels], move |vals, g, store| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            if nk {
                let mut dk = Array3::<F>::zeros((ch, kh, kw));
                for c in 0..ch {
                    let grow = g3
                        .index_axis(Axis(0), c)
                        .to_shape((1, ho * wo))
                        .unwrap()
                        .to_owned();
                    let d = grow.dot(&cols_per_ch[c].t());
                    dk.index_axis_mut(Axis(0), c)
                        .assign(&d.into_shape_with_order((kh, kw)).unwrap());
                }
                store.accumulate(kernels, dk.into_dyn());
            }
            if ni {
                let kv = vals[kernels.0].view().into_dimensionality::<Ix3>().unwrap();
                let mut dx = Array3::<F>::zeros((ch, h, w));
                for c in 0..ch {
                    let grow = g3
                        .index_axis(Axis(0), c)
                        .to_shape((1, ho * wo))
                        .unwrap()
                        .to_owned();
                    let krow = kv
                        .index_axis(Axis(0), c)
                        .to_shape((1, kh * kw))
                        .unwrap()
                        .to_owned();
                    let dcols = krow.t().dot(&grow);
                    let dpadded = col2im(&dcols, 1, h + 2 * pad, w + 2 * pad, kh, kw);
                    let dxc = unpad_adjoint3(&dpadded, h, w, pad, mode);
                    dx.index_axis_mut(Axis(0), c).assign(&dxc.index_axis(Axis(0), 0));
                }
                store.accumulate(input, dx.into_dyn());
            }
        })
    }
}

/// Eager convolution outside any graph (used by fixed filters and oracles).
pub fn conv2d_eager<F: Elem>(x: &ArrayD<F>, weight: &ArrayD<F>, bias: Option<&ArrayD<F>>, pad: usize, mode: PadMode) -> ArrayD<F> {
    let mut g: Graph<F> = Graph::new();
    let xi = g.constant(x.clone());
    let wi = g.constant(weight.clone());
    let bi = bias.map(|b| g.constant(b.clone()));
    let out = g.conv2d(xi, wi, bi, pad, mode);
    g.value(out).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::check_gradient;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};

    fn rand_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let x = rand_arr(&[2, 5, 5], 3);
        let mut w = ArrayD::zeros(IxDyn(&[2, 2, 3, 3]));
        w[[0, 0, 1, 1]] = 1.0;
        w[[1, 1, 1, 1]] = 1.0;
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Replicate] {
            let y = conv2d_eager(&x, &w, None, 1, mode);
            assert_eq!(y.shape(), x.shape());
            let diff = (&y - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-15, "{mode:?} identity failed: {diff}");
        }
    }

    #[test]
    fn matches_direct_convolution() {
        let x = rand_arr(&[3, 6, 7], 5);
        let w = rand_arr(&[4, 3, 3, 3], 6);
        let b = rand_arr(&[4], 7);
        let y = conv2d_eager(&x, &w, Some(&b), 1, PadMode::Zero);
        // direct nested-loop reference
        for o in 0..4 {
            for yy in 0..6usize {
                for xx in 0..7usize {
                    let mut acc = b[[o]];
                    for c in 0..3 {
                        for ki in 0..3usize {
                            for kj in 0..3usize {
                                let (sy, sx) = (yy as isize + ki as isize - 1, xx as isize + kj as isize - 1);
                                if sy >= 0 && sy < 6 && sx >= 0 && sx < 7 {
                                    acc += x[[c, sy as usize, sx as usize]] * w[[o, c, ki, kj]];
                                }
                            }
                        }
                    }
                    assert!((y[[o, yy, xx]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        let x = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
            .into_dyn()
            .into_shape_with_order(IxDyn(&[1, 3, 3]))
            .unwrap();
        let x3 = x.view().into_dimensionality::<Ix3>().unwrap();
        let p = pad3(&x3, 2, PadMode::Reflect);
        // row -2 mirrors to row 2, column -1 mirrors to column 1
        assert_eq!(p[[0, 0, 2]], x[[0, 2, 0]]);
        assert_eq!(p[[0, 2, 1]], x[[0, 0, 1]]);
        let r = pad3(&x3, 2, PadMode::Replicate);
        assert_eq!(r[[0, 0, 0]], x[[0, 0, 0]]);
        assert_eq!(r[[0, 6, 6]], x[[0, 2, 2]]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for mode in [PadMode::Zero, PadMode::Reflect, PadMode::Replicate] {
            // d/d input
            let x = rand_arr(&[2, 4, 4], 11);
            let err = check_gradient(
                &|g: &mut Graph<f64>, a: Tid| {
                    let w = g.constant(rand_arr(&[3, 2, 3, 3], 12));
                    let b = g.constant(rand_arr(&[3], 13));
                    let y = g.conv2d(a, w, Some(b), 1, mode);
                    let sq = g.mul(y, y);
                    g.mean_all(sq)
                },
                &x,
                1e-6,
            );
            assert!(err < 1e-6, "{mode:?} d/dinput fd mismatch {err}");

            // d/d weight and d/d bias
            let w0 = rand_arr(&[3, 2, 3, 3], 14);
            let err = check_gradient(
                &|g: &mut Graph<f64>, wt: Tid| {
                    let x = g.constant(rand_arr(&[2, 4, 4], 15));
                    let b = g.param(rand_arr(&[3], 16));
                    let y = g.conv2d(x, wt, Some(b), 1, mode);
                    let sq = g.mul(y, y);
                    g.mean_all(sq)
                },
                &w0,
                1e-6,
            );
            assert!(err < 1e-6, "{mode:?} d/dweight fd mismatch {err}");
        }
    }

    #[test]
    fn depthwise_matches_full_conv_with_block_diagonal_weight() {
        let x = rand_arr(&[3, 5, 5], 21);
        let k = rand_arr(&[3, 3, 3], 22);
        let mut w = ArrayD::zeros(IxDyn(&[3, 3, 3, 3]));
        for c in 0..3 {
            for ki in 0..3 {
                for kj in 0..3 {
                    w[[c, c, ki, kj]] = k[[c, ki, kj]];
                }
            }
        }
        let mut g: Graph<f64> = Graph::new();
        let xi = g.constant(x.clone());
        let ki_ = g.constant(k.clone());
        let wi = g.constant(w.clone());
        let yd = g.depthwise_conv2d(xi, ki_, 2, PadMode::Replicate);
        let yf = g.conv2d(xi, wi, None, 2, PadMode::Replicate);
        let diff = (g.value(yd) - g.value(yf)).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12, "depthwise != block-diagonal full conv: {diff}");
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let x = rand_arr(&[2, 4, 4], 31);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let k = g.constant(rand_arr(&[2, 3, 3], 32));
                let y = g.depthwise_conv2d(a, k, 1, PadMode::Replicate);
                let sq = g.mul(y, y);
                g.mean_all(sq)
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "depthwise d/dinput fd mismatch {err}");

        let k0 = rand_arr(&[2, 3, 3], 33);
        let err = check_gradient(
            &|g: &mut Graph<f64>, kt: Tid| {
                let x = g.constant(rand_arr(&[2, 4, 4], 34));
                let y = g.depthwise_conv2d(x, kt, 1, PadMode::Zero);
                let sq = g.mul(y, y);
                g.mean_all(sq)
            },
            &k0,
            1e-6,
        );
        assert!(err < 1e-6, "depthwise d/dkernel fd mismatch {err}");
    }
}
