//! Image file I/O and resampling on (3,H,W) float tensors in [0,1].

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::elem::{c, Elem};
use crate::error::{Error, Result};

/// Loads a PNG/JPEG as a (3,H,W) tensor with values in [0,1].
pub fn load_image<F: Elem>(path: &Path) -> Result<Array3<F>> {
    let img = image::open(path)
        .map_err(|e| Error::bad_file(path, format!("decode failed: {e}")))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<F>::zeros((3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[[ch, y as usize, x as usize]] = c::<F>(px.0[ch] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Saves a (3,H,W) tensor as an 8-bit RGB PNG; values are clamped to [0,1].
pub fn save_image<F: Elem>(img: &Array3<F>, path: &Path) -> Result<()> {
    let (ch, h, w) = img.dim();
    if ch != 3 {
        return Err(Error::shape("3×H×W image", format!("{ch}×{h}×{w}")));
    }
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|cc| {
                (img[[cc, y, x]].to_f64_().clamp(0.0, 1.0) * 255.0).round() as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path).map_err(|e| Error::bad_file(path, format!("encode failed: {e}")))?;
    Ok(())
}

/// Loads an 8-bit mask PNG: luminance > 127 maps to `true`.
pub fn load_mask(path: &Path) -> Result<Array2<bool>> {
    let img = image::open(path)
        .map_err(|e| Error::bad_file(path, format!("decode failed: {e}")))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| img.get_pixel(x as u32, y as u32).0[0] > 127))
}

/// Saves a boolean mask as an 8-bit PNG (true → 255).
pub fn save_mask(mask: &ndarray::ArrayView2<bool>, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([if mask[[y, x]] { 255 } else { 0 }]));
        }
    }
    buf.save(path).map_err(|e| Error::bad_file(path, format!("encode failed: {e}")))?;
    Ok(())
}

fn sample_coords(dst: usize, src: usize) -> Vec<(usize, usize, f64)> {
    // half-pixel-centre mapping: src_pos = (dst + 0.5) * scale - 0.5
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let p = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, p - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a (C,H,W) tensor to (C,out_h,out_w).
pub fn resize_bilinear<F: Elem>(img: &Array3<F>, out_h: usize, out_w: usize) -> Array3<F> {
    let (chn, h, w) = img.dim();
    let ys = sample_coords(out_h, h);
    let xs = sample_coords(out_w, w);
    let mut out = Array3::<F>::zeros((chn, out_h, out_w));
    for cc in 0..chn {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v00 = img[[cc, y0, x0]].to_f64_();
                let v01 = img[[cc, y0, x1]].to_f64_();
                let v10 = img[[cc, y1, x0]].to_f64_();
                let v11 = img[[cc, y1, x1]].to_f64_();
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out[[cc, oy, ox]] = c::<F>(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

/// Nearest-neighbour resize for boolean masks.
pub fn resize_mask_nearest(mask: &Array2<bool>, out_h: usize, out_w: usize) -> Array2<bool> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let sy = (((y as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).round() as isize)
            .clamp(0, h as isize - 1) as usize;
        let sx = (((x as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).round() as isize)
            .clamp(0, w as isize - 1) as usize;
        mask[[sy, sx]]
    })
}
