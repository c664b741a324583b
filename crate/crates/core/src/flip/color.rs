//! Color-space stages of the perceptual metric: sRGB transfer functions and
//! the linear-RGB / XYZ / YCxCz / Lab family, as differentiable graph ops on
//! (3,H,W) tensors plus scalar helpers.
//!
//! Matrix constants follow the D65 sRGB primaries; the reference white is the
//! row sum of the forward matrix so white maps exactly onto (100,0,0) in
//! YCxCz and L*=100 in Lab.

use ndarray::{Array2, ArrayD, IxDyn};

use crate::ad::{Graph, Tid};
use crate::elem::{c, Elem};

pub const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4123865632529917, 0.35759149092062537, 0.18045049120356368],
    [0.21263682167732384, 0.7151829818412507, 0.07218019648142547],
    [0.019330620152483987, 0.11919716364020845, 0.9503725870054354],
];

pub const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2410032329763583, -1.5373989694887853, -0.4986158819963628],
    [-0.9692242522025163, 1.8759299836951757, 0.04155422634008469],
    [0.05563941985197541, -0.20401120612390994, 1.0571489771875333],
];

/// D65 white point: row sums of [`RGB_TO_XYZ`].
pub const WHITE_XYZ: [f64; 3] = [0.9504285453771808, 1.0, 1.0889003707981277];

/// Opponent-space mixing applied to white-normalized XYZ (or to f(XYZ/W) for
/// Lab): rows produce (Y/L, Cx/a, Cz/b) up to the (−16,0,0) offset.
const OPPONENT: [[f64; 3]; 3] =
    [[0.0, 116.0, 0.0], [500.0, -500.0, 0.0], [0.0, 200.0, -200.0]];

const LAB_THRESHOLD: f64 = 0.008856;
const LAB_SLOPE: f64 = 7.787;
const LAB_OFFSET: f64 = 16.0 / 116.0;

pub fn srgb_to_linear_scalar(x: f64) -> f64 {
    if x <= 0.04045 {
        x / 12.92
    } else if x >= 1.0 {
        // the closed form is an identity at 1 on paper but not in floats
        1.0
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb_scalar(x: f64) -> f64 {
    if x <= 0.0031308 {
        12.92 * x
    } else if x >= 1.0 {
        1.0
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

fn mat_mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

/// RGB→XYZ with white normalization folded in: rows i scaled by 1/W_i.
fn normalized_xyz_matrix() -> [[f64; 3]; 3] {
    let mut m = RGB_TO_XYZ;
    for (i, row) in m.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= WHITE_XYZ[i];
        }
    }
    m
}

impl<F: Elem> Graph<F> {
    /// Applies a fixed 3×3 matrix across the channel axis of a (3,H,W) map.
    fn mat3(&mut self, img: Tid, m: &[[f64; 3]; 3]) -> Tid {
        let shape = self.value(img).shape().to_vec();
        assert_eq!(shape[0], 3, "mat3 expects 3 channels");
        let (h, w) = (shape[1], shape[2]);
        let mk = self.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[3, 3]),
                m.iter().flatten().map(|&v| c::<F>(v)).collect(),
            )
            .unwrap(),
        );
        let flat = self.reshape(img, &[3, h * w]);
        let out = self.matmul2(mk, flat);
        self.reshape(out, &[3, h, w])
    }

    /// Adds a fixed per-channel offset to a (C,H,W) map.
    fn channel_offset(&mut self, img: Tid, offsets: &[f64]) -> Tid {
        let shape = self.value(img).shape().to_vec();
        let (h, w) = (shape[1], shape[2]);
        let off = self.constant(
            ArrayD::from_shape_vec(
                IxDyn(&[offsets.len()]),
                offsets.iter().map(|&v| c::<F>(v)).collect(),
            )
            .unwrap(),
        );
        let off_b = self.broadcast_spatial(off, h, w);
        self.add(img, off_b)
    }

    /// Piecewise sRGB electro-optical transfer function.
    pub fn srgb_to_linear_map(&mut self, img: Tid) -> Tid {
        self.unary_map(
            img,
            |x| {
                let xf = x.to_f64_();
                c::<F>(srgb_to_linear_scalar(xf))
            },
            |x| {
                let xf = x.to_f64_();
                let d = if xf <= 0.04045 {
                    1.0 / 12.92
                } else {
                    2.4 / 1.055 * ((xf + 0.055) / 1.055).powf(1.4)
                };
                c::<F>(d)
            },
        )
    }

    /// Inverse transfer function (linear to sRGB).
    pub fn linear_to_srgb_map(&mut self, img: Tid) -> Tid {
        self.unary_map(
            img,
            |x| c::<F>(linear_to_srgb_scalar(x.to_f64_())),
            |x| {
                let xf = x.to_f64_();
                let d = if xf <= 0.0031308 {
                    12.92
                } else {
                    1.055 / 2.4 * xf.max(0.0031308).powf(1.0 / 2.4 - 1.0)
                };
                c::<F>(d)
            },
        )
    }

    /// Linear RGB → YCxCz (black → (−16,0,0), white → (100,0,0)).
    pub fn linear_rgb_to_ycxcz(&mut self, img: Tid) -> Tid {
        let m = mat_mul3(&OPPONENT, &normalized_xyz_matrix());
        let mixed = self.mat3(img, &m);
        self.channel_offset(mixed, &[-16.0, 0.0, 0.0])
    }

    /// YCxCz → linear RGB (exact inverse of [`Graph::linear_rgb_to_ycxcz`]).
    pub fn ycxcz_to_linear_rgb(&mut self, img: Tid) -> Tid {
        // (Xn,Yn,Zn) from (y,cx,cz) after shifting y by +16
        let n_inv: [[f64; 3]; 3] = [
            [1.0 / 116.0, 1.0 / 500.0, 0.0],
            [1.0 / 116.0, 0.0, 0.0],
            [1.0 / 116.0, 0.0, -1.0 / 200.0],
        ];
        let mut denorm = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                denorm[i][j] = n_inv[i][j] * WHITE_XYZ[i];
            }
        }
        let m = mat_mul3(&XYZ_TO_RGB, &denorm);
        let shifted = self.channel_offset(img, &[16.0, 0.0, 0.0]);
        self.mat3(shifted, &m)
    }

    /// Linear RGB → CIELAB against the D65 white.
    pub fn linear_rgb_to_lab(&mut self, img: Tid) -> Tid {
        let n = normalized_xyz_matrix();
        let xyz_n = self.mat3(img, &n);
        let f = self.unary_map(
            xyz_n,
            |t| {
                let tf = t.to_f64_();
                c::<F>(if tf > LAB_THRESHOLD {
                    tf.cbrt()
                } else {
                    LAB_SLOPE * tf + LAB_OFFSET
                })
            },
            |t| {
                let tf = t.to_f64_();
                c::<F>(if tf > LAB_THRESHOLD {
                    (1.0 / 3.0) * tf.powf(-2.0 / 3.0)
                } else {
                    LAB_SLOPE
                })
            },
        );
        let mixed = self.mat3(f, &OPPONENT);
        self.channel_offset(mixed, &[-16.0, 0.0, 0.0])
    }

    /// Hunt adjustment: chroma scaled by lightness, (L, 0.01·L·a, 0.01·L·b).
    pub fn hunt_adjust(&mut self, lab: Tid) -> Tid {
        let shape = self.value(lab).shape().to_vec();
        assert_eq!(shape[0], 3, "hunt_adjust expects Lab");
        let l = self.channels(lab, 0, 1);
        let a = self.channels(lab, 1, 1);
        let b = self.channels(lab, 2, 1);
        let la = self.mul(l, a);
        let lb = self.mul(l, b);
        let a2 = self.mul_scalar(la, c::<F>(0.01));
        let b2 = self.mul_scalar(lb, c::<F>(0.01));
        self.concat0(&[l, a2, b2])
    }

    /// HyAB distance between two Hunt-adjusted Lab maps: |ΔL| + ‖Δab‖.
    pub fn hyab(&mut self, a: Tid, b: Tid) -> Tid {
        let d = self.sub(a, b);
        let dl = self.channels(d, 0, 1);
        let da = self.channels(d, 1, 1);
        let db = self.channels(d, 2, 1);
        let dl_abs = self.abs(dl);
        let da2 = self.mul(da, da);
        let db2 = self.mul(db, db);
        let ab2 = self.add(da2, db2);
        let chroma = self.sqrt_guarded(ab2);
        self.add(dl_abs, chroma)
    }
}

/// Scalar-pipeline Hunt-adjusted Lab for a single linear-RGB color, used to
/// derive the redistribution normalizer.
pub fn hunt_lab_of_linear_rgb(rgb: [f64; 3]) -> [f64; 3] {
    let n = normalized_xyz_matrix();
    let mut xyz_n = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            xyz_n[i] += n[i][j] * rgb[j];
        }
    }
    let f = xyz_n.map(|t| if t > LAB_THRESHOLD { t.cbrt() } else { LAB_SLOPE * t + LAB_OFFSET });
    let l = 116.0 * f[1] - 16.0;
    let a = 500.0 * (f[0] - f[1]);
    let b = 200.0 * (f[1] - f[2]);
    [l, 0.01 * l * a, 0.01 * l * b]
}

pub fn hyab_scalar(p: [f64; 3], q: [f64; 3]) -> f64 {
    (p[0] - q[0]).abs() + ((p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

/// HyAB distance between Hunt-adjusted pure green and pure blue — the
/// largest color error over the display gamut, used to normalize the
/// redistribution knee.
pub fn max_color_distance() -> f64 {
    hyab_scalar(hunt_lab_of_linear_rgb([0.0, 1.0, 0.0]), hunt_lab_of_linear_rgb([0.0, 0.0, 1.0]))
}

/// Eager per-pixel colorspace application for CLI use on (3,H,W) tensors.
pub fn map_image<F: Elem>(
    img: &ndarray::Array3<F>,
    f: impl Fn(f64) -> f64,
) -> ndarray::Array3<F> {
    img.mapv(|x| c::<F>(f(x.to_f64_())))
}

/// 256-entry LUT helper: evaluates a scalar transfer on a dense grid, used by
/// round-trip tests.
pub fn transfer_grid(n: usize, f: impl Fn(f64) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |(i, j)| {
        let x = i as f64 / (n - 1) as f64;
        if j == 0 {
            x
        } else {
            f(x)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn to_node<F: Elem>(g: &mut Graph<F>, img: &Array3<F>) -> Tid {
        g.constant(img.clone().into_dyn())
    }

    #[test]
    fn srgb_transfer_fixed_points_and_breakpoint() {
        assert_eq!(srgb_to_linear_scalar(0.0), 0.0);
        assert!((srgb_to_linear_scalar(1.0) - 1.0).abs() < 1e-12);
        assert_eq!(linear_to_srgb_scalar(0.0), 0.0);
        assert!((linear_to_srgb_scalar(1.0) - 1.0).abs() < 1e-12);
        assert!((linear_to_srgb_scalar(0.0031308) - 0.04045).abs() < 2e-5);
    }

    #[test]
    fn srgb_round_trip_within_1e6_on_grid() {
        let mut worst = 0.0f64;
        for i in 0..1024 {
            let x = i as f64 / 1023.0;
            let rt = linear_to_srgb_scalar(srgb_to_linear_scalar(x));
            worst = worst.max((rt - x).abs());
        }
        assert!(worst < 1e-6, "round trip error {worst}");
    }

    #[test]
    fn black_and_white_map_to_canonical_ycxcz() {
        let mut g: Graph<f64> = Graph::new();
        let black = to_node(&mut g, &Array3::zeros((3, 2, 2)));
        let white = to_node(&mut g, &Array3::from_elem((3, 2, 2), 1.0));
        let yb = g.linear_rgb_to_ycxcz(black);
        let yw = g.linear_rgb_to_ycxcz(white);
        for px in 0..4 {
            let (y, x) = (px / 2, px % 2);
            assert!((g.value(yb)[[0, y, x]] + 16.0).abs() < 1e-10);
            assert!(g.value(yb)[[1, y, x]].abs() < 1e-10);
            assert!(g.value(yb)[[2, y, x]].abs() < 1e-10);
            assert!((g.value(yw)[[0, y, x]] - 100.0).abs() < 1e-10);
            assert!(g.value(yw)[[1, y, x]].abs() < 1e-10);
            assert!(g.value(yw)[[2, y, x]].abs() < 1e-10);
        }
    }

    #[test]
    fn ycxcz_round_trip_is_identity() {
        let mut g: Graph<f64> = Graph::new();
        let img = Array3::from_shape_fn((3, 4, 4), |(ch, y, x)| {
            0.05 + 0.9 * ((ch * 31 + y * 7 + x) % 13) as f64 / 13.0
        });
        let a = to_node(&mut g, &img);
        let ycxcz = g.linear_rgb_to_ycxcz(a);
        let back = g.ycxcz_to_linear_rgb(ycxcz);
        let diff = (g.value(back) - &img.into_dyn()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-10, "round trip drift {diff}");
    }

    #[test]
    fn lab_of_white_is_l100_and_black_l0() {
        let mut g: Graph<f64> = Graph::new();
        let white = to_node(&mut g, &Array3::from_elem((3, 1, 1), 1.0));
        let black = to_node(&mut g, &Array3::zeros((3, 1, 1)));
        let lw = g.linear_rgb_to_lab(white);
        let lb = g.linear_rgb_to_lab(black);
        assert!((g.value(lw)[[0, 0, 0]] - 100.0).abs() < 1e-9);
        assert!(g.value(lw)[[1, 0, 0]].abs() < 1e-9);
        assert!(g.value(lw)[[2, 0, 0]].abs() < 1e-9);
        assert!(g.value(lb)[[0, 0, 0]].abs() < 1e-3); // 116·16/116 − 16 = 0 via linear branch
        assert!(g.value(lb)[[1, 0, 0]].abs() < 1e-9);
    }

    #[test]
    fn max_color_distance_is_stable() {
        // green-vs-blue HyAB after Hunt adjustment; pinned to guard the
        // normalizer against accidental constant drift
        let v = max_color_distance();
        assert!(v > 30.0 && v < 250.0, "implausible normalizer {v}");
        let again = max_color_distance();
        assert_eq!(v, again);
    }

    #[test]
    fn colorspace_graph_ops_are_differentiable() {
        use crate::ad::check_gradient;
        let img = ndarray::ArrayD::from_shape_fn(IxDyn(&[3, 3, 3]), |ix| {
            0.1 + 0.8 * ((ix[0] * 17 + ix[1] * 5 + ix[2]) % 11) as f64 / 11.0
        });
        let err = check_gradient(
            &|g: &mut Graph<f64>, a: Tid| {
                let lin = g.srgb_to_linear_map(a);
                let lab = g.linear_rgb_to_lab(lin);
                let hunt = g.hunt_adjust(lab);
                let sq = g.mul(hunt, hunt);
                g.mean_all(sq)
            },
            &img,
            1e-6,
        );
        assert!(err < 1e-5, "colorspace fd mismatch {err}");
    }
}
