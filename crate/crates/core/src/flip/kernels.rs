//! Spatial filters of the perceptual metric: per-channel contrast-sensitivity
//! kernels and the edge/point feature-detection kernels. All kernels are pure
//! functions of the pixels-per-degree viewing parameter.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};

/// (a1, b1, a2, b2) of the Gaussian-sum CSF per opponent channel.
const CSF_A: (f64, f64, f64, f64) = (1.0, 0.0047, 0.0, 1.0e-5);
const CSF_RG: (f64, f64, f64, f64) = (1.0, 0.0053, 0.0, 1.0e-5);
const CSF_BY: (f64, f64, f64, f64) = (34.1, 0.04, 13.5, 0.025);

/// Largest b parameter over all channels; sets a common kernel radius so the
/// three channels share one filter footprint.
const CSF_B_MAX: f64 = 0.04;

pub fn csf_radius(ppd: f64) -> usize {
    (3.0 * (CSF_B_MAX / (2.0 * PI * PI)).sqrt() * ppd).ceil() as usize
}

fn csf_kernel_for(params: (f64, f64, f64, f64), ppd: f64, radius: usize) -> Array2<f64> {
    let (a1, b1, a2, b2) = params;
    let dx = 1.0 / ppd;
    let n = 2 * radius + 1;
    let mut k = Array2::<f64>::zeros((n, n));
    for yi in 0..n {
        for xi in 0..n {
            let x = (xi as f64 - radius as f64) * dx;
            let y = (yi as f64 - radius as f64) * dx;
            let z = x * x + y * y;
            k[[yi, xi]] = a1 * (PI / b1).sqrt() * (-PI * PI * z / b1).exp()
                + a2 * (PI / b2).sqrt() * (-PI * PI * z / b2).exp();
        }
    }
    let s: f64 = k.sum();
    k.mapv_inplace(|v| v / s);
    k
}

/// Stack of unit-sum CSF kernels in YCxCz channel order (achromatic,
/// red-green, blue-yellow), each (2r+1)×(2r+1) with the shared radius.
pub fn csf_kernels(ppd: f64) -> Array3<f64> {
    let r = csf_radius(ppd);
    let n = 2 * r + 1;
    let mut out = Array3::<f64>::zeros((3, n, n));
    for (i, params) in [CSF_A, CSF_RG, CSF_BY].into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&csf_kernel_for(params, ppd, r));
    }
    out
}

/// Feature-detector standard deviation in pixels for a filter of width `w`
/// degrees at the given ppd.
pub fn feature_sd(ppd: f64, w: f64) -> f64 {
    0.5 * w * ppd
}

pub fn feature_radius(ppd: f64, w: f64) -> usize {
    (3.0 * feature_sd(ppd, w)).ceil() as usize
}

/// Normalizes positive weights to sum +1 and negative weights to sum −1, so
/// responses to unit steps are bounded by construction.
fn normalize_pos_neg(k: &mut Array2<f64>) {
    let pos: f64 = k.iter().filter(|v| **v > 0.0).sum();
    let neg: f64 = -k.iter().filter(|v| **v < 0.0).sum::<f64>();
    k.mapv_inplace(|v| if v > 0.0 { v / pos } else if v < 0.0 { v / neg } else { 0.0 });
}

enum FeatureKind {
    Edge,
    Point,
}

fn feature_kernel(kind: FeatureKind, ppd: f64, w: f64) -> Array2<f64> {
    let sd = feature_sd(ppd, w);
    let r = feature_radius(ppd, w) as isize;
    let n = (2 * r + 1) as usize;
    let mut k = Array2::<f64>::zeros((n, n));
    for yi in 0..n {
        for xi in 0..n {
            let x = (xi as isize - r) as f64;
            let y = (yi as isize - r) as f64;
            let g = (-(x * x + y * y) / (2.0 * sd * sd)).exp();
            k[[yi, xi]] = match kind {
                FeatureKind::Edge => -x * g,
                FeatureKind::Point => (x * x / (sd * sd) - 1.0) * g,
            };
        }
    }
    normalize_pos_neg(&mut k);
    k
}

/// The four feature kernels, stacked as (edge_x, edge_y, point_x, point_y).
/// The y-oriented kernels are transposes of the x-oriented ones.
pub fn feature_kernels(ppd: f64, w: f64) -> Array3<f64> {
    let ex = feature_kernel(FeatureKind::Edge, ppd, w);
    let px = feature_kernel(FeatureKind::Point, ppd, w);
    let n = ex.dim().0;
    let mut out = Array3::<f64>::zeros((4, n, n));
    out.index_axis_mut(ndarray::Axis(0), 0).assign(&ex);
    out.index_axis_mut(ndarray::Axis(0), 1).assign(&ex.t());
    out.index_axis_mut(ndarray::Axis(0), 2).assign(&px);
    out.index_axis_mut(ndarray::Axis(0), 3).assign(&px.t());
    out
}
