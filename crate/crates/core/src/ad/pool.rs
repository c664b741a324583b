//! Spatial resampling ops: 2x2 max pooling and nearest-neighbour 2x upsampling.

use ndarray::{Array3, Ix3};

use super::{Graph, Tid};
use crate::elem::Elem;

impl<F: Elem> Graph<F> {
    /// Non-overlapping 2x2 max pool on (C,H,W); H and W must be even.
    /// The gradient routes to the first maximal element in scan order.
    pub fn maxpool2x2(&mut self, input: Tid) -> Tid {
        let x = self.values[input.0].view().into_dimensionality::<Ix3>().expect("maxpool input (C,H,W)");
        let (ch, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2x2 needs even H and W, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Array3::<F>::zeros((ch, ho, wo));
        let mut arg: Vec<(usize, usize)> = Vec::with_capacity(ch * ho * wo);
        for c in 0..ch {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut best = x[[c, 2 * y, 2 * xx]];
                    let mut at = (2 * y, 2 * xx);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = x[[c, 2 * y + dy, 2 * xx + dx]];
                            if v > best {
                                best = v;
                                at = (2 * y + dy, 2 * xx + dx);
                            }
                        }
                    }
                    out[[c, y, xx]] = best;
                    arg.push(at);
                }
            }
        }
        self.push_op(out.into_dyn(), &[input], move |_, g, store| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = Array3::<F>::zeros((ch, h, w));
            let mut n = 0;
            for c in 0..ch {
                for y in 0..ho {
                    for xx in 0..wo {
                        let (ay, ax) = arg[n];
                        dx[[c, ay, ax]] = dx[[c, ay, ax]] + g3[[c, y, xx]];
                        n += 1;
                    }
                }
            }
            store.accumulate(input, dx.into_dyn());
        })
    }

    /// Nearest-neighbour 2x upsample on (C,H,W): each sample becomes a 2x2
    /// block. The adjoint sums each block back onto its source.
    pub fn upsample_nearest2x(&mut self, input: Tid) -> Tid {
        let x = self.values[input.0].view().into_dimensionality::<Ix3>().expect("upsample input (C,H,W)");
        let (ch, h, w) = x.dim();
        let mut out = Array3::<F>::zeros((ch, 2 * h, 2 * w));
        for c in 0..ch {
            for y in 0..h {
                for xx in 0..w {
                    let v = x[[c, y, xx]];
                    out[[c, 2 * y, 2 * xx]] = v;
                    out[[c, 2 * y, 2 * xx + 1]] = v;
                    out[[c, 2 * y + 1, 2 * xx]] = v;
                    out[[c, 2 * y + 1, 2 * xx + 1]] = v;
                }
            }
        }
        self.push_op(out.into_dyn(), &[input], move |_, g, store| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = Array3::<F>::zeros((ch, h, w));
            for c in 0..ch {
                for y in 0..h {
                    for xx in 0..w {
                        dx[[c, y, xx]] = g3[[c, 2 * y, 2 * xx]]
                            + g3[[c, 2 * y, 2 * xx + 1]]
                            + g3[[c, 2 * y + 1, 2 * xx]]
                            + g3[[c, 2 * y + 1, 2 * xx + 1]];
                    }
                }
            }
            store.accumulate(input, dx.into_dyn());
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::check_gradient;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    fn rand_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn maxpool_selects_block_maxima() {
        let mut g: Graph<f64> = Graph::new();
        let mut x = ArrayD::zeros(IxDyn(&[1, 4, 4]));
        for (i, v) in x.iter_mut().enumerate() {
            *v = i as f64;
        }
        let a = g.constant(x);
        let y = g.maxpool2x2(a);
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).as_slice().unwrap(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let mut g: Graph<f64> = Graph::new();
        let x = rand_arr(&[2, 3, 3], 5);
        let a = g.constant(x.clone());
        let up = g.upsample_nearest2x(a);
        assert_eq!(g.value(up).shape(), &[2, 6, 6]);
        let down = g.maxpool2x2(up);
        let diff = (g.value(down) - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-15);
    }

    #[test]
    fn pool_and_upsample_gradients_match_finite_differences() {
        let x = rand_arr(&[2, 4, 4], 9);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let p = g.maxpool2x2(a);
                let sq = g.mul(p, p);
                g.mean_all(sq)
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "maxpool fd mismatch {err}");

        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let u = g.upsample_nearest2x(a);
                let k = g.constant(rand_arr(&[2, 8, 8], 10));
                let p = g.mul(u, k);
                g.sum_all(p)
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "upsample fd mismatch {err}");
    }
}
