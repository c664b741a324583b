//! Perceptual image-difference evaluator (FLIP, low-dynamic-range variant).
//!
//! Two parallel pipelines feed a per-pixel error in [0,1]: a color pipeline
//! (CSF prefiltering in YCxCz, Hunt-adjusted Lab, HyAB distance, nonlinear
//! redistribution) and a feature pipeline (edge/point detector amplitudes on
//! the achromatic channel). Every stage is built from differentiable graph
//! ops so the pooled score can serve directly as a training loss.
//!
//! Spatial filtering clamps to the image edge, so constant images are exact
//! fixed points of the prefilter.

pub mod color;
pub mod heatmap;
pub mod kernels;

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::ad::{Graph, PadMode, Tid};
use crate::elem::{c, Elem};
use crate::error::{Error, Result};

/// Metric configuration. Defaults reproduce the reference evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipParams {
    /// Pixels per degree of visual angle.
    pub ppd: f64,
    /// Color-error exponent.
    pub qc: f64,
    /// Feature-error exponent.
    pub qf: f64,
    /// Redistribution knee position as a fraction of the maximum color error.
    pub pc: f64,
    /// Redistribution output at the knee.
    pub pt: f64,
    /// Feature-filter width in degrees.
    pub w: f64,
}

impl Default for FlipParams {
    fn default() -> Self {
        FlipParams { ppd: 67.0, qc: 0.7, qf: 0.5, pc: 0.4, pt: 0.95, w: 0.082 }
    }
}

impl FlipParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ppd > 0.0
            && self.qc > 0.0
            && self.qc <= 1.0
            && self.qf > 0.0
            && self.qf <= 1.0
            && self.pc > 0.0
            && self.pc < 1.0
            && self.pt > 0.0
            && self.pt < 1.0
            && self.w > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("{self:?}")))
        }
    }
}

fn kernels_const<F: Elem>(g: &mut Graph<F>, k: &Array3<f64>) -> Tid {
    g.constant(k.mapv(|v| c::<F>(v)).into_dyn())
}

/// sRGB (3,H,W) node → YCxCz node.
pub fn srgb_to_ycxcz_graph<F: Elem>(g: &mut Graph<F>, img: Tid) -> Tid {
    let lin = g.srgb_to_linear_map(img);
    g.linear_rgb_to_ycxcz(lin)
}

/// CSF-prefiltered YCxCz → linear RGB clamped to the displayable volume.
fn prefiltered_rgb_graph<F: Elem>(g: &mut Graph<F>, ycxcz: Tid, ppd: f64) -> Tid {
    let k = kernels::csf_kernels(ppd);
    let r = kernels::csf_radius(ppd);
    let kc = kernels_const(g, &k);
    let filtered = g.depthwise_conv2d(ycxcz, kc, r, PadMode::Replicate);
    let rgb = g.ycxcz_to_linear_rgb(filtered);
    g.clamp(rgb, F::zero(), F::one())
}

/// Per-pixel redistributed color error from two prefiltered linear-RGB nodes.
fn color_error_from_rgb<F: Elem>(g: &mut Graph<F>, rgb_ref: Tid, rgb_test: Tid, p: &FlipParams) -> Tid {
    let lab_r = g.linear_rgb_to_lab(rgb_ref);
    let lab_t = g.linear_rgb_to_lab(rgb_test);
    let hunt_r = g.hunt_adjust(lab_r);
    let hunt_t = g.hunt_adjust(lab_t);
    let hyab = g.hyab(hunt_r, hunt_t);
    let powed = g.powf_const(hyab, c::<F>(p.qc));

    // Piecewise-linear redistribution: both segments are increasing lines
    // crossing at the knee, so the map is their pointwise minimum.
    let cmax = color::max_color_distance().powf(p.qc);
    let k1 = p.pt / (p.pc * cmax);
    let k2 = (1.0 - p.pt) / (cmax * (1.0 - p.pc));
    let b2 = p.pt - p.pc * cmax * k2;
    let line1 = g.mul_scalar(powed, c::<F>(k1));
    let scaled2 = g.mul_scalar(powed, c::<F>(k2));
    let line2 = g.add_scalar(scaled2, c::<F>(b2));
    g.min_elem(line1, line2)
}

/// Edge/point amplitude pair for one normalized achromatic channel.
fn feature_amplitudes<F: Elem>(g: &mut Graph<F>, y01: Tid, p: &FlipParams) -> (Tid, Tid) {
    let k = kernels::feature_kernels(p.ppd, p.w);
    let r = kernels::feature_radius(p.ppd, p.w);
    let kc = kernels_const(g, &k);
    let rep = g.concat0(&[y01, y01, y01, y01]);
    let resp = g.depthwise_conv2d(rep, kc, r, PadMode::Replicate);
    let ex = g.channels(resp, 0, 1);
    let ey = g.channels(resp, 1, 1);
    let px = g.channels(resp, 2, 1);
    let py = g.channels(resp, 3, 1);
    let ex2 = g.mul(ex, ex);
    let ey2 = g.mul(ey, ey);
    let e2 = g.add(ex2, ey2);
    let edge = g.sqrt_guarded(e2);
    let px2 = g.mul(px, px);
    let py2 = g.mul(py, py);
    let p2 = g.add(px2, py2);
    let point = g.sqrt_guarded(p2);
    (edge, point)
}

fn feature_error_from_y<F: Elem>(g: &mut Graph<F>, ry01: Tid, ty01: Tid, p: &FlipParams) -> Tid {
    let (er, pr) = feature_amplitudes(g, ry01, p);
    let (et, pt_) = feature_amplitudes(g, ty01, p);
    let de_raw = g.sub(er, et);
    let de = g.abs(de_raw);
    let dp_raw = g.sub(pr, pt_);
    let dp = g.abs(dp_raw);
    let m = g.max_elem(de, dp);
    let scaled = g.mul_scalar(m, c::<F>(1.0 / std::f64::consts::SQRT_2));
    g.powf_const(scaled, c::<F>(p.qf))
}

/// Full per-pixel metric between two sRGB (3,H,W) nodes already inside
/// [0,1]; returns a (1,H,W) node. Differentiable in both images.
pub fn flip_pair_graph<F: Elem>(g: &mut Graph<F>, reference: Tid, test: Tid, p: &FlipParams) -> Tid {
    let ycxcz_r = srgb_to_ycxcz_graph(g, reference);
    let ycxcz_t = srgb_to_ycxcz_graph(g, test);

    let rgb_r = prefiltered_rgb_graph(g, ycxcz_r, p.ppd);
    let rgb_t = prefiltered_rgb_graph(g, ycxcz_t, p.ppd);
    let de_c = color_error_from_rgb(g, rgb_r, rgb_t, p);

    // feature pipeline reads the unfiltered achromatic channel, rescaled to
    // [0,1] via (Y+16)/116
    let yr = g.channels(ycxcz_r, 0, 1);
    let yt = g.channels(ycxcz_t, 0, 1);
    let yr16 = g.add_scalar(yr, c::<F>(16.0));
    let yt16 = g.add_scalar(yt, c::<F>(16.0));
    let yr01 = g.mul_scalar(yr16, c::<F>(1.0 / 116.0));
    let yt01 = g.mul_scalar(yt16, c::<F>(1.0 / 116.0));
    let de_f = feature_error_from_y(g, yr01, yt01, p);

    // ΔE = ΔE_c^(1−ΔE_f)
    let neg_f = g.neg(de_f);
    let expo = g.add_scalar(neg_f, F::one());
    let de = g.pow_pair(de_c, expo);
    g.clamp(de, F::zero(), F::one())
}

/// Mean-pooled metric as a scalar graph node.
pub fn flip_score_graph<F: Elem>(g: &mut Graph<F>, reference: Tid, test: Tid, p: &FlipParams) -> Tid {
    let map = flip_pair_graph(g, reference, test, p);
    g.mean_all(map)
}

fn validate_srgb<F: Elem>(img: &Array3<F>) -> Result<()> {
    if img.dim().0 != 3 {
        return Err(Error::shape("3×H×W sRGB image", format!("{:?}", img.dim())));
    }
    for v in img.iter() {
        let x = v.to_f64_();
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidInput(format!("image value {x} outside [0,1]")));
        }
    }
    Ok(())
}

fn check_pair<F: Elem>(reference: &Array3<F>, test: &Array3<F>, p: &FlipParams) -> Result<()> {
    p.validate()?;
    validate_srgb(reference)?;
    validate_srgb(test)?;
    if reference.dim() != test.dim() {
        return Err(Error::shape(format!("{:?}", reference.dim()), format!("{:?}", test.dim())));
    }
    Ok(())
}

/// sRGB image → YCxCz image (eager).
pub fn srgb_to_ycxcz<F: Elem>(img: &Array3<F>) -> Result<Array3<F>> {
    validate_srgb(img)?;
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(img.clone().into_dyn());
    let out = srgb_to_ycxcz_graph(&mut g, a);
    Ok(to_a3(g.value(out)))
}

/// CSF-prefilters a YCxCz image and clamps it back to the displayable
/// volume, returned again as YCxCz.
pub fn csf_prefilter<F: Elem>(ycxcz: &Array3<F>, ppd: f64) -> Result<Array3<F>> {
    if ppd <= 0.0 {
        return Err(Error::InvalidParams(format!("ppd {ppd} must be positive")));
    }
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(ycxcz.clone().into_dyn());
    let rgb = prefiltered_rgb_graph(&mut g, a, ppd);
    let back = g.linear_rgb_to_ycxcz(rgb);
    Ok(to_a3(g.value(back)))
}

/// Redistributed color error between two prefiltered YCxCz images.
pub fn color_error<F: Elem>(refined: &Array3<F>, test: &Array3<F>, p: &FlipParams) -> Result<Array2<F>> {
    p.validate()?;
    if refined.dim() != test.dim() {
        return Err(Error::shape(format!("{:?}", refined.dim()), format!("{:?}", test.dim())));
    }
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(refined.clone().into_dyn());
    let b = g.constant(test.clone().into_dyn());
    let rgb_a0 = g.ycxcz_to_linear_rgb(a);
    let rgb_b0 = g.ycxcz_to_linear_rgb(b);
    let rgb_a = g.clamp(rgb_a0, F::zero(), F::one());
    let rgb_b = g.clamp(rgb_b0, F::zero(), F::one());
    let ce = color_error_from_rgb(&mut g, rgb_a, rgb_b, p);
    Ok(to_a2(g.value(ce)))
}

/// Feature error between two achromatic channels already rescaled to [0,1].
pub fn feature_error<F: Elem>(ref_y: &Array2<F>, test_y: &Array2<F>, p: &FlipParams) -> Result<Array2<F>> {
    p.validate()?;
    if ref_y.dim() != test_y.dim() {
        return Err(Error::shape(format!("{:?}", ref_y.dim()), format!("{:?}", test_y.dim())));
    }
    let (h, w) = ref_y.dim();
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(ref_y.clone().into_dyn().into_shape_with_order(IxDyn(&[1, h, w])).unwrap());
    let b = g.constant(test_y.clone().into_dyn().into_shape_with_order(IxDyn(&[1, h, w])).unwrap());
    let fe = feature_error_from_y(&mut g, a, b, p);
    Ok(to_a2(g.value(fe)))
}

/// Per-pixel metric between two sRGB images.
pub fn flip_map<F: Elem>(reference: &Array3<F>, test: &Array3<F>, p: &FlipParams) -> Result<Array2<F>> {
    check_pair(reference, test, p)?;
    let mut g: Graph<F> = Graph::new();
    let a = g.constant(reference.clone().into_dyn());
    let b = g.constant(test.clone().into_dyn());
    let map = flip_pair_graph(&mut g, a, b, p);
    Ok(to_a2(g.value(map)))
}

/// Mean-pooled metric between two sRGB images.
pub fn flip_score<F: Elem>(reference: &Array3<F>, test: &Array3<F>, p: &FlipParams) -> Result<F> {
    let map = flip_map(reference, test, p)?;
    let n = map.len();
    Ok(map.into_iter().sum::<F>() / c::<F>(n as f64))
}

fn to_a3<F: Elem>(v: &ArrayD<F>) -> Array3<F> {
    v.to_owned().into_dimensionality().expect("(3,H,W) node")
}

fn to_a2<F: Elem>(v: &ArrayD<F>) -> Array2<F> {
    v.index_axis(Axis(0), 0).to_owned().into_dimensionality().expect("(1,H,W) node")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::check_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(seed: u64, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..=1.0))
    }

    #[test]
    fn params_validation_rejects_out_of_range() {
        assert!(FlipParams::default().validate().is_ok());
        for bad in [
            FlipParams { ppd: 0.0, ..Default::default() },
            FlipParams { qc: 1.5, ..Default::default() },
            FlipParams { qf: 0.0, ..Default::default() },
            FlipParams { pc: 1.0, ..Default::default() },
            FlipParams { pt: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn black_and_white_srgb_map_to_canonical_ycxcz() {
        let black = srgb_to_ycxcz(&Array3::<f64>::zeros((3, 3, 3))).unwrap();
        let white = srgb_to_ycxcz(&Array3::<f64>::from_elem((3, 3, 3), 1.0)).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert!((black[[0, y, x]] + 16.0).abs() < 1e-9);
                assert!(black[[1, y, x]].abs() < 1e-9);
                assert!(black[[2, y, x]].abs() < 1e-9);
                assert!((white[[0, y, x]] - 100.0).abs() < 1e-9);
                assert!(white[[1, y, x]].abs() < 1e-9);
                assert!(white[[2, y, x]].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn srgb_to_ycxcz_rejects_out_of_range_and_is_deterministic() {
        let mut img = Array3::<f64>::zeros((3, 2, 2));
        img[[0, 0, 0]] = 1.5;
        assert!(srgb_to_ycxcz(&img).is_err());
        let img = rand_img(3, 4, 4);
        let a = srgb_to_ycxcz(&img).unwrap();
        let b = srgb_to_ycxcz(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csf_prefilter_fixes_constant_images() {
        let img = Array3::<f64>::from_elem((3, 8, 8), 0.42);
        let ycxcz = srgb_to_ycxcz(&img).unwrap();
        let filtered = csf_prefilter(&ycxcz, 67.0).unwrap();
        let diff = (&filtered - &ycxcz).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "constant image drifted {diff}");
    }

    #[test]
    fn identity_map_is_exactly_zero() {
        let img = rand_img(11, 6, 7);
        let map = flip_map(&img, &img, &FlipParams::default()).unwrap();
        assert!(map.iter().all(|v| *v == 0.0), "identity produced nonzero error");
        assert_eq!(flip_score(&img, &img, &FlipParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn symmetry_and_boundedness_hold() {
        let p = FlipParams::default();
        for seed in 0..8 {
            let a = rand_img(100 + seed, 6, 6);
            let b = rand_img(200 + seed, 6, 6);
            let ab = flip_map(&a, &b, &p).unwrap();
            let ba = flip_map(&b, &a, &p).unwrap();
            let sym = (&ab - &ba).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(sym < 1e-12, "asymmetry {sym}");
            assert!(ab.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn green_vs_blue_saturates_the_color_scale() {
        let mut green = Array3::<f64>::zeros((3, 5, 5));
        green.index_axis_mut(Axis(0), 1).fill(1.0);
        let mut blue = Array3::<f64>::zeros((3, 5, 5));
        blue.index_axis_mut(Axis(0), 2).fill(1.0);
        let map = flip_map(&green, &blue, &FlipParams::default()).unwrap();
        for v in map.iter() {
            assert!((v - 1.0).abs() < 1e-9, "expected saturation, got {v}");
        }
    }

    #[test]
    fn noise_amplitude_never_decreases_the_score() {
        let p = FlipParams::default();
        let reference = rand_img(42, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let noise = Array3::<f64>::from_shape_fn((3, 8, 8), |_| rng.gen_range(-1.0..1.0));
        let mut prev = 0.0;
        for amp in [0.02, 0.06, 0.15] {
            let test = (&reference + &(&noise * amp)).mapv(|v: f64| v.clamp(0.0, 1.0));
            let s = flip_score(&reference, &test, &p).unwrap();
            assert!(s >= prev, "score decreased: {s} < {prev} at amp {amp}");
            prev = s;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let p = FlipParams::default();
        let reference = rand_img(7, 5, 5).mapv(|v| 0.05 + 0.9 * v);
        let test0 = rand_img(8, 5, 5).mapv(|v| 0.05 + 0.9 * v).into_dyn();
        let rc = reference.into_dyn();
        let err = check_gradient(
            &|g: &mut Graph<f64>, t: Tid| {
                let r = g.constant(rc.clone());
                flip_score_graph(g, r, t, &p)
            },
            &test0,
            1e-6,
        );
        assert!(err < 1e-3, "flip fd mismatch {err}");
    }

    #[test]
    fn staged_ops_compose_to_the_full_map() {
        let p = FlipParams::default();
        let a = rand_img(21, 6, 6);
        let b = rand_img(22, 6, 6);
        let ya = srgb_to_ycxcz(&a).unwrap();
        let yb = srgb_to_ycxcz(&b).unwrap();
        let fa = csf_prefilter(&ya, p.ppd).unwrap();
        let fb = csf_prefilter(&yb, p.ppd).unwrap();
        let ce = color_error(&fa, &fb, &p).unwrap();
        let ray = ya.index_axis(Axis(0), 0).mapv(|v| (v + 16.0) / 116.0);
        let tby = yb.index_axis(Axis(0), 0).mapv(|v| (v + 16.0) / 116.0);
        let fe = feature_error(&ray, &tby, &p).unwrap();
        let expected = flip_map(&a, &b, &p).unwrap();
        let composed = ndarray::Zip::from(&ce)
            .and(&fe)
            .map_collect(|&cc, &ff| cc.max(0.0).powf(1.0 - ff).clamp(0.0, 1.0));
        let diff = (&expected - &composed).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-9, "staged composition drifted {diff}");
    }

    #[test]
    fn identical_inputs_give_zero_color_and_feature_error() {
        let p = FlipParams::default();
        let img = rand_img(31, 5, 5);
        let y = srgb_to_ycxcz(&img).unwrap();
        let f = csf_prefilter(&y, p.ppd).unwrap();
        let ce = color_error(&f, &f, &p).unwrap();
        assert!(ce.iter().all(|v| *v == 0.0));
        let ynorm = y.index_axis(Axis(0), 0).mapv(|v| (v + 16.0) / 116.0);
        let fe = feature_error(&ynorm, &ynorm, &p).unwrap();
        assert!(fe.iter().all(|v| *v == 0.0));
        assert!(ce.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
