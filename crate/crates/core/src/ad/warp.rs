//! Backward warping of an image by a dense flow field with bilinear
//! sampling and clamp-to-border semantics.

use ndarray::{Array3, ArrayD, Ix3};

use super::{Graph, Tid};
use crate::elem::{c, Elem};

/// Bilinear taps for one warped output sample: four (y,x,weight) corners.
fn taps<F: Elem>(sy: f64, sx: f64, h: usize, w: usize) -> [(usize, usize, F); 4] {
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = sy - y0 as f64;
    let fx = sx - x0 as f64;
    [
        (y0, x0, c::<F>((1.0 - fy) * (1.0 - fx))),
        (y0, x1, c::<F>((1.0 - fy) * fx)),
        (y1, x0, c::<F>(fy * (1.0 - fx))),
        (y1, x1, c::<F>(fy * fx)),
    ]
}

impl<F: Elem> Graph<F> {
    /// Samples `img` (C,H,W) at positions displaced by `flow` (2,H,W), where
    /// channel 0 is the x displacement and channel 1 the y displacement:
    /// `out[c,y,x] = img[c, y + flow[1,y,x], x + flow[0,y,x]]` with bilinear
    /// interpolation, sample positions clamped to the image rectangle.
    ///
    /// The flow is a fixed sampling grid, not a differentiable input.
    pub fn bilinear_warp(&mut self, img: Tid, flow: &Array3<F>) -> Tid {
        let x = self.values[img.0].view().into_dimensionality::<Ix3>().expect("warp input (C,H,W)");
        let (ch, h, w) = x.dim();
        assert_eq!(flow.dim(), (2, h, w), "flow must be (2,H,W) matching the image");

        let mut grid: Vec<[(usize, usize, F); 4]> = Vec::with_capacity(h * w);
        for y in 0..h {
            for xx in 0..w {
                let sx = xx as f64 + flow[[0, y, xx]].to_f64_();
                let sy = y as f64 + flow[[1, y, xx]].to_f64_();
                grid.push(taps(sy, sx, h, w));
            }
        }

        let mut out = Array3::<F>::zeros((ch, h, w));
        for cc in 0..ch {
            let mut n = 0;
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = F::zero();
                    for (ty, tx, wt) in grid[n] {
                        acc = acc + x[[cc, ty, tx]] * wt;
                    }
                    out[[cc, y, xx]] = acc;
                    n += 1;
                }
            }
        }

        self.push_op(out.into_dyn(), &[img], move |_, g, store| {
            let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
            let mut dx = Array3::<F>::zeros((ch, h, w));
            for cc in 0..ch {
                let mut n = 0;
                for y in 0..h {
                    for xx in 0..w {
                        let gv = g3[[cc, y, xx]];
                        for (ty, tx, wt) in grid[n] {
                            dx[[cc, ty, tx]] = dx[[cc, ty, tx]] + gv * wt;
                        }
                        n += 1;
                    }
                }
            }
            store.accumulate(img, dx.into_dyn());
        })
    }
}

/// Eager warp for code paths that never need gradients.
pub fn warp_eager<F: Elem>(img: &ArrayD<F>, flow: &Array3<F>) -> ArrayD<F> {
    let mut g: Graph<F> = Graph::new();
    let i = g.constant(img.clone());
    let out = g.bilinear_warp(i, flow);
    g.value(out).to_owned()
}
