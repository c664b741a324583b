//! Elementwise, reduction, linear-algebra and shape ops with their
//! vector-Jacobian products.

use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn};

use super::{Graph, Tid};
use crate::elem::{c, Elem};

impl<F: Elem> Graph<F> {
    fn assert_same_shape(&self, a: Tid, b: Tid) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "elementwise op on mismatched shapes"
        );
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = &self.values[a.0] + &self.values[b.0];
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |_, g, store| {
            if na {
                store.accumulate(a, g.clone());
            }
            if nb {
                store.accumulate(b, g.clone());
            }
        })
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = &self.values[a.0] - &self.values[b.0];
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |_, g, store| {
            if na {
                store.accumulate(a, g.clone());
            }
            if nb {
                store.accumulate(b, g.mapv(|x| -x));
            }
        })
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = &self.values[a.0] * &self.values[b.0];
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            if na {
                store.accumulate(a, g * &vals[b.0]);
            }
            if nb {
                store.accumulate(b, g * &vals[a.0]);
            }
        })
    }

    pub fn div(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = &self.values[a.0] / &self.values[b.0];
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            if na {
                store.accumulate(a, g / &vals[b.0]);
            }
            if nb {
                let num = &vals[a.0];
                let den = &vals[b.0];
                store.accumulate(b, g * &(-(num / &(den * den))));
            }
        })
    }

    pub fn neg(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0].mapv(|x| -x);
        self.push_op(v, &[a], move |_, g, store| {
            store.accumulate(a, g.mapv(|x| -x));
        })
    }

    pub fn add_scalar(&mut self, a: Tid, k: F) -> Tid {
        let v = self.values[a.0].mapv(|x| x + k);
        self.push_op(v, &[a], move |_, g, store| {
            store.accumulate(a, g.clone());
        })
    }

    pub fn mul_scalar(&mut self, a: Tid, k: F) -> Tid {
        let v = self.values[a.0].mapv(|x| x * k);
        self.push_op(v, &[a], move |_, g, store| {
            store.accumulate(a, g.mapv(|x| x * k));
        })
    }

    pub fn exp(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0].mapv(|x| x.exp());
        self.push_op(v, &[a], move |vals, g, store| {
            store.accumulate(a, g * &vals[a.0].mapv(|x| x.exp()));
        })
    }

    /// Natural log with the argument floored away from zero in the gradient.
    pub fn ln_guarded(&mut self, a: Tid) -> Tid {
        let guard = F::epsilon().sqrt();
        let v = self.values[a.0].mapv(|x| x.max(guard).ln());
        self.push_op(v, &[a], move |vals, g, store| {
            store.accumulate(a, g / &vals[a.0].mapv(|x| x.max(guard)));
        })
    }

    /// Square root; subgradient 0 where the input is 0 so identity cases do
    /// not produce non-finite gradients.
    pub fn sqrt_guarded(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0].mapv(|x| x.max(F::zero()).sqrt());
        self.push_op(v, &[a], move |vals, g, store| {
            let half = c::<F>(0.5);
            let d = vals[a.0].mapv(|x| {
                let s = x.max(F::zero()).sqrt();
                if s == F::zero() {
                    F::zero()
                } else {
                    half / s
                }
            });
            store.accumulate(a, g * &d);
        })
    }

    /// `x^p` for a fixed exponent, defined on x >= 0. The gradient floor
    /// keeps `p < 1` exponents finite at x = 0.
    pub fn powf_const(&mut self, a: Tid, p: F) -> Tid {
        let guard = F::epsilon().sqrt();
        let v = self.values[a.0].mapv(|x| x.max(F::zero()).powf(p));
        self.push_op(v, &[a], move |vals, g, store| {
            let d = vals[a.0].mapv(|x| p * x.max(guard).powf(p - F::one()));
            store.accumulate(a, g * &d);
        })
    }

    /// Elementwise `a^b` for a >= 0 with both arguments differentiable.
    pub fn pow_pair(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let guard = F::epsilon().sqrt();
        let v = ndarray::Zip::from(&self.values[a.0])
            .and(&self.values[b.0])
            .map_collect(|&x, &p| x.max(F::zero()).powf(p));
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            let base = &vals[a.0];
            let expo = &vals[b.0];
            if na {
                let d = ndarray::Zip::from(base)
                    .and(expo)
                    .map_collect(|&x, &p| p * x.max(guard).powf(p - F::one()));
                store.accumulate(a, g * &d);
            }
            if nb {
                let d = ndarray::Zip::from(base)
                    .and(expo)
                    .map_collect(|&x, &p| x.max(F::zero()).powf(p) * x.max(guard).ln());
                store.accumulate(b, g * &d);
            }
        })
    }

    /// Absolute value with subgradient 0 at the kink.
    pub fn abs(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0].mapv(|x| x.abs());
        self.push_op(v, &[a], move |vals, g, store| {
            let d = vals[a.0].mapv(|x| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            });
            store.accumulate(a, g * &d);
        })
    }

    pub fn relu(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0].mapv(|x| x.max(F::zero()));
        self.push_op(v, &[a], move |vals, g, store| {
            let d = vals[a.0].mapv(|x| if x > F::zero() { F::one() } else { F::zero() });
            store.accumulate(a, g * &d);
        })
    }

    /// Clamp with pass-through subgradient on the closed interval.
    pub fn clamp(&mut self, a: Tid, lo: F, hi: F) -> Tid {
        let v = self.values[a.0].mapv(|x| x.max(lo).min(hi));
        self.push_op(v, &[a], move |vals, g, store| {
            let d = vals[a.0].mapv(|x| if x >= lo && x <= hi { F::one() } else { F::zero() });
            store.accumulate(a, g * &d);
        })
    }

    /// Elementwise max; gradient routes to the winner (ties to `a`).
    pub fn max_elem(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = ndarray::Zip::from(&self.values[a.0])
            .and(&self.values[b.0])
            .map_collect(|&x, &y| x.max(y));
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            if na {
                let d = ndarray::Zip::from(&vals[a.0])
                    .and(&vals[b.0])
                    .map_collect(|&x, &y| if x >= y { F::one() } else { F::zero() });
                store.accumulate(a, g * &d);
            }
            if nb {
                let d = ndarray::Zip::from(&vals[a.0])
                    .and(&vals[b.0])
                    .map_collect(|&x, &y| if y > x { F::one() } else { F::zero() });
                store.accumulate(b, g * &d);
            }
        })
    }

    /// Elementwise min; gradient routes to the winner (ties to `a`).
    pub fn min_elem(&mut self, a: Tid, b: Tid) -> Tid {
        self.assert_same_shape(a, b);
        let v = ndarray::Zip::from(&self.values[a.0])
            .and(&self.values[b.0])
            .map_collect(|&x, &y| x.min(y));
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            if na {
                let d = ndarray::Zip::from(&vals[a.0])
                    .and(&vals[b.0])
                    .map_collect(|&x, &y| if x <= y { F::one() } else { F::zero() });
                store.accumulate(a, g * &d);
            }
            if nb {
                let d = ndarray::Zip::from(&vals[a.0])
                    .and(&vals[b.0])
                    .map_collect(|&x, &y| if y < x { F::one() } else { F::zero() });
                store.accumulate(b, g * &d);
            }
        })
    }

    pub fn sum_all(&mut self, a: Tid) -> Tid {
        let s: F = self.values[a.0].iter().copied().sum();
        let v = ArrayD::from_elem(IxDyn(&[1]), s);
        self.push_op(v, &[a], move |vals, g, store| {
            let go = g[[0]];
            store.accumulate(a, ArrayD::from_elem(vals[a.0].raw_dim(), go));
        })
    }

    pub fn mean_all(&mut self, a: Tid) -> Tid {
        let n = self.values[a.0].len();
        let s = self.sum_all(a);
        self.mul_scalar(s, F::one() / c::<F>(n as f64))
    }

    /// Per-channel spatial mean: (C,H,W) -> (C).
    pub fn mean_spatial(&mut self, a: Tid) -> Tid {
        let va = &self.values[a.0];
        assert_eq!(va.ndim(), 3, "mean_spatial expects (C,H,W)");
        let (ch, h, w) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let inv = F::one() / c::<F>((h * w) as f64);
        let mut out = ArrayD::zeros(IxDyn(&[ch]));
        for ci in 0..ch {
            let mut s = F::zero();
            for x in va.index_axis(Axis(0), ci).iter() {
                s = s + *x;
            }
            out[[ci]] = s * inv;
        }
        self.push_op(out, &[a], move |vals, g, store| {
            let mut d = ArrayD::zeros(vals[a.0].raw_dim());
            for ci in 0..ch {
                let gc = g[[ci]] * inv;
                d.index_axis_mut(Axis(0), ci).fill(gc);
            }
            store.accumulate(a, d);
        })
    }

    /// Broadcast per-channel values over space: (C) -> (C,H,W).
    pub fn broadcast_spatial(&mut self, a: Tid, h: usize, w: usize) -> Tid {
        let va = &self.values[a.0];
        assert_eq!(va.ndim(), 1, "broadcast_spatial expects (C)");
        let ch = va.shape()[0];
        let mut out = ArrayD::zeros(IxDyn(&[ch, h, w]));
        for ci in 0..ch {
            out.index_axis_mut(Axis(0), ci).fill(va[[ci]]);
        }
        self.push_op(out, &[a], move |_, g, store| {
            let mut d = ArrayD::zeros(IxDyn(&[ch]));
            for ci in 0..ch {
                let mut s = F::zero();
                for x in g.index_axis(Axis(0), ci).iter() {
                    s = s + *x;
                }
                d[[ci]] = s;
            }
            store.accumulate(a, d);
        })
    }

    /// 2-D matrix product: (m,k) x (k,n) -> (m,n).
    pub fn matmul2(&mut self, a: Tid, b: Tid) -> Tid {
        let va = self.values[a.0].view().into_dimensionality::<Ix2>().expect("matmul2 lhs 2-D");
        let vb = self.values[b.0].view().into_dimensionality::<Ix2>().expect("matmul2 rhs 2-D");
        assert_eq!(va.shape()[1], vb.shape()[0], "matmul2 inner dims");
        let v = va.dot(&vb).into_dyn();
        let (na, nb) = (self.needs_grad(a), self.needs_grad(b));
        self.push_op(v, &[a, b], move |vals, g, store| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            if na {
                let vb = vals[b.0].view().into_dimensionality::<Ix2>().unwrap();
                store.accumulate(a, g2.dot(&vb.t()).into_dyn());
            }
            if nb {
                let va = vals[a.0].view().into_dimensionality::<Ix2>().unwrap();
                store.accumulate(b, va.t().dot(&g2).into_dyn());
            }
        })
    }

    pub fn transpose2(&mut self, a: Tid) -> Tid {
        let v = self.values[a.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("transpose2 on 2-D")
            .t()
            .to_owned()
            .into_dyn();
        self.push_op(v, &[a], move |_, g, store| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            store.accumulate(a, g2.t().to_owned().into_dyn());
        })
    }

    /// Row-wise softmax on a (m,n) matrix.
    pub fn softmax_rows(&mut self, a: Tid) -> Tid {
        let va = self.values[a.0].view().into_dimensionality::<Ix2>().expect("softmax 2-D");
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let mut out = ndarray::Array2::<F>::zeros((m, n));
        for i in 0..m {
            let row = va.row(i);
            let mx = row.iter().copied().fold(F::neg_infinity(), |acc, x| acc.max(x));
            let mut denom = F::zero();
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[[i, j]] = e;
                denom = denom + e;
            }
            for j in 0..n {
                out[[i, j]] = out[[i, j]] / denom;
            }
        }
        let vdyn = out.into_dyn();
        let cached = vdyn.clone();
        self.push_op(vdyn, &[a], move |_, g, store| {
            let y = cached.view().into_dimensionality::<Ix2>().unwrap();
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            let mut d = ndarray::Array2::<F>::zeros((m, n));
            for i in 0..m {
                let mut dot = F::zero();
                for j in 0..n {
                    dot = dot + g2[[i, j]] * y[[i, j]];
                }
                for j in 0..n {
                    d[[i, j]] = y[[i, j]] * (g2[[i, j]] - dot);
                }
            }
            store.accumulate(a, d.into_dyn());
        })
    }

    /// Channel slice along axis 0: (C,..) -> (len,..).
    pub fn channels(&mut self, a: Tid, start: usize, len: usize) -> Tid {
        let va = &self.values[a.0];
        let v = va.slice_axis(Axis(0), ndarray::Slice::from(start..start + len)).to_owned();
        self.push_op(v, &[a], move |vals, g, store| {
            let mut d = ArrayD::zeros(vals[a.0].raw_dim());
            d.slice_axis_mut(Axis(0), ndarray::Slice::from(start..start + len)).assign(g);
            store.accumulate(a, d);
        })
    }

    /// Concatenate along axis 0.
    pub fn concat0(&mut self, parts: &[Tid]) -> Tid {
        let views: Vec<_> = parts.iter().map(|p| self.values[p.0].view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat0 shape agreement");
        let parts: Vec<Tid> = parts.to_vec();
        let sizes: Vec<usize> = parts.iter().map(|p| self.values[p.0].shape()[0]).collect();
        let needs: Vec<bool> = parts.iter().map(|p| self.needs_grad(*p)).collect();
        self.push_op(v, &parts.clone(), move |_, g, store| {
            let mut off = 0;
            for (i, p) in parts.iter().enumerate() {
                if needs[i] {
                    let slice =
                        g.slice_axis(Axis(0), ndarray::Slice::from(off..off + sizes[i])).to_owned();
                    store.accumulate(*p, slice);
                }
                off += sizes[i];
            }
        })
    }

    pub fn reshape(&mut self, a: Tid, shape: &[usize]) -> Tid {
        // transposed nodes carry reversed strides, so standardize the layout
        // before reinterpreting the buffer
        let v = self.values[a.0]
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape length mismatch");
        self.push_op(v, &[a], move |vals, g, store| {
            let back = g
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(vals[a.0].raw_dim())
                .unwrap();
            store.accumulate(a, back);
        })
    }

    /// Elementwise map with a caller-supplied derivative, for piecewise
    /// transfer functions that do not decompose into the primitive ops.
    pub(crate) fn unary_map(
        &mut self,
        a: Tid,
        mut f: impl FnMut(F) -> F,
        df: impl Fn(F) -> F + 'static,
    ) -> Tid {
        let v = self.values[a.0].mapv(&mut f);
        self.push_op(v, &[a], move |vals, g, store| {
            store.accumulate(a, g * &vals[a.0].mapv(&df));
        })
    }

    /// Mean-variance channelwise normalization of a (C,H,W) map.
    pub fn mean_variance_normalize(&mut self, a: Tid, eps: F) -> Tid {
        let shape = self.value(a).shape().to_vec();
        assert_eq!(shape.len(), 3, "mean_variance_normalize expects (C,H,W)");
        let (h, w) = (shape[1], shape[2]);
        let mu = self.mean_spatial(a);
        let mu_b = self.broadcast_spatial(mu, h, w);
        let centered = self.sub(a, mu_b);
        let sq = self.mul(centered, centered);
        let var = self.mean_spatial(sq);
        let var_eps = self.add_scalar(var, eps);
        let std = self.sqrt_guarded(var_eps);
        let std_b = self.broadcast_spatial(std, h, w);
        self.div(centered, std_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::check_gradient;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};

    fn rand_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(0.1..1.0))
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let x = rand_arr(&[3, 4], 7);
        for (name, f) in [
            ("exp", (|g: &mut Graph<f64>, a: Tid| {
                let e = g.exp(a);
                g.mean_all(e)
            }) as fn(&mut Graph<f64>, Tid) -> Tid),
            ("sqrt", |g, a| {
                let s = g.sqrt_guarded(a);
                g.mean_all(s)
            }),
            ("pow07", |g, a| {
                let p = g.powf_const(a, 0.7);
                g.mean_all(p)
            }),
            ("ln", |g, a| {
                let l = g.ln_guarded(a);
                g.mean_all(l)
            }),
            ("mvn", |g, a| {
                let n = g.mean_variance_normalize(a, 1e-8);
                let sq = g.mul(n, n);
                g.mean_all(sq)
            }),
        ] {
            let x = if name == "mvn" { rand_arr(&[2, 3, 4], 11) } else { x.clone() };
            let err = check_gradient(&f, &x, 1e-6);
            assert!(err < 1e-6, "{name}: fd mismatch {err}");
        }
    }

    #[test]
    fn matmul_and_softmax_gradients() {
        let x = rand_arr(&[3, 5], 13);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let sm = g.softmax_rows(a);
                let k = g.constant(rand_arr(&[3, 5], 14));
                let p = g.mul(sm, k);
                g.sum_all(p)
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "softmax fd mismatch {err}");

        let x = rand_arr(&[4, 3], 15);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let b = g.param(rand_arr(&[3, 2], 16));
                let m = g.matmul2(a, b);
                let sq = g.mul(m, m);
                let _ = b;
                g.mean_all(sq)
            },
            &x,
            1e-6,
        );
        assert!(err < 1e-6, "matmul fd mismatch {err}");
    }

    #[test]
    fn pow_pair_gradients() {
        let base = rand_arr(&[3, 3], 21);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let e = g.constant(rand_arr(&[3, 3], 22));
                let p = g.pow_pair(a, e);
                g.mean_all(p)
            },
            &base,
            1e-6,
        );
        assert!(err < 1e-6, "pow_pair base fd mismatch {err}");

        let expo = rand_arr(&[3, 3], 23);
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let b = g.constant(rand_arr(&[3, 3], 24));
                let p = g.pow_pair(b, a);
                g.mean_all(p)
            },
            &expo,
            1e-6,
        );
        assert!(err < 1e-6, "pow_pair exponent fd mismatch {err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(rand_arr(&[6, 9], 31) * 10.0);
        let sm = g.softmax_rows(a);
        let v = g.value(sm);
        for row in v.view().into_dimensionality::<Ix2>().unwrap().rows() {
            let s: f64 = row.sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mvn_normalizes_and_is_idempotent() {
        let mut g: Graph<f64> = Graph::new();
        let x = rand_arr(&[3, 8, 8], 41) * 5.0;
        let a = g.constant(x);
        let n1 = g.mean_variance_normalize(a, 1e-8);
        let n2 = g.mean_variance_normalize(n1, 1e-8);
        for ci in 0..3 {
            let ch = g.value(n1).index_axis(Axis(0), ci).to_owned();
            let mean: f64 = ch.iter().sum::<f64>() / ch.len() as f64;
            let var: f64 = ch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ch.len() as f64;
            assert!(mean.abs() < 1e-4);
            assert!((var.sqrt() - 1.0).abs() < 1e-4);
        }
        let diff = g.value(n2) - g.value(n1);
        let max = diff.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max < 1e-5, "mvn not idempotent: {max}");
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.constant(ArrayD::from_elem(IxDyn(&[1, 4, 4]), 3.25));
        let n = g.mean_variance_normalize(a, 1e-8);
        assert!(g.value(n).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut g: Graph<f64> = Graph::new();
        let x = rand_arr(&[3, 2, 2], 51);
        let a = g.param(x.clone());
        let c0 = g.channels(a, 0, 1);
        let c12 = g.channels(a, 1, 2);
        let back = g.concat0(&[c0, c12]);
        assert_eq!(g.value(back), &x);
        let s = g.sum_all(back);
        let grads = g.backward(s);
        assert!(grads.get(a).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn max_min_route_gradients_to_winner() {
        let mut g: Graph<f64> = Graph::new();
        let a = g.param(arr1(&[1.0, 5.0]).into_dyn());
        let b = g.param(arr1(&[2.0, 3.0]).into_dyn());
        let m = g.max_elem(a, b);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap().as_slice().unwrap(), &[0.0, 1.0]);
        assert_eq!(grads.get(b).unwrap().as_slice().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn transpose_matches_ndarray() {
        let mut g: Graph<f64> = Graph::new();
        let x = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let a = g.constant(x.clone().into_dyn());
        let t = g.transpose2(a);
        assert_eq!(g.value(t).view().into_dimensionality::<Ix2>().unwrap(), x.t());
    }
}
