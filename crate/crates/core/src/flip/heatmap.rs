//! Error-map visualization.
//!
//! Maps a per-pixel error in [0,1] through a magma-style gradient (dark
//! purple → magenta → orange → pale yellow) so low errors read as dark and
//! high errors as bright. The gradient linearly interpolates five fixed
//! sRGB anchors; the exact stops are documented in the README.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::elem::{c, Elem};
use crate::error::Result;
use crate::imageio;

/// Gradient stops as (position, sRGB color in [0,1]).
const ANCHORS: [(f64, [f64; 3]); 5] = [
    (0.00, [0.001, 0.000, 0.014]),
    (0.25, [0.251, 0.063, 0.405]),
    (0.50, [0.716, 0.215, 0.475]),
    (0.75, [0.987, 0.536, 0.382]),
    (1.00, [0.987, 0.991, 0.750]),
];

/// Interpolated gradient color for a scalar in [0,1] (clamped outside).
pub fn colorize_value(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    for pair in ANCHORS.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let a = (t - t0) / (t1 - t0);
            return [
                c0[0] + a * (c1[0] - c0[0]),
                c0[1] + a * (c1[1] - c0[1]),
                c0[2] + a * (c1[2] - c0[2]),
            ];
        }
    }
    ANCHORS[ANCHORS.len() - 1].1
}

/// Renders an error map as an sRGB (3,H,W) image.
pub fn colorize<F: Elem>(map: &Array2<F>) -> Array3<F> {
    let (h, w) = map.dim();
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let rgb = colorize_value(map[[y, x]].to_f64_());
            for ch in 0..3 {
                out[[ch, y, x]] = c::<F>(rgb[ch]);
            }
        }
    }
    out
}

/// Renders and writes an error map as a PNG.
pub fn save_heatmap<F: Elem>(map: &Array2<F>, path: &Path) -> Result<()> {
    imageio::save_image(&colorize(map), path)
}
