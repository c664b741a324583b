//! Offline stylization and the color-space contract for engine-side use.
//!
//! Video stylization is strictly per-frame: the network is feed-forward and
//! temporal stability comes from how it was trained, so frame k's output
//! depends on frame k alone. Exported graphs consume sRGB in [0,1]; render
//! pipelines working in linear radiance convert with the functions here.

use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::flip::color::{linear_to_srgb_scalar, srgb_to_linear_scalar};
use crate::imageio::{load_image, save_image};
use crate::nn::StyleModel;

/// Piecewise sRGB decode (gamma 2.4 segment above 0.04045, linear below).
/// Inputs are clamped to [0,1] first.
pub fn srgb_to_linear<F: Elem>(img: &Array3<F>) -> Array3<F> {
    img.mapv(|v| F::from_f64_(srgb_to_linear_scalar(v.to_f64_().clamp(0.0, 1.0))))
}

/// Piecewise sRGB encode, the exact inverse of [`srgb_to_linear`] on [0,1].
pub fn linear_to_srgb<F: Elem>(img: &Array3<F>) -> Array3<F> {
    img.mapv(|v| F::from_f64_(linear_to_srgb_scalar(v.to_f64_().clamp(0.0, 1.0))))
}

/// Sorted paths of a directory's files with one extension, case-insensitive.
pub(crate) fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::bad_file(dir, e.to_string()))? {
        let path = entry.map_err(|e| Error::bad_file(dir, e.to_string()))?.path();
        if path.is_file() && path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("{} contains no .{ext} files", dir.display())));
    }
    Ok(files)
}

/// Sorted PNG frame paths of a directory.
fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_files(dir, "png")
}

/// Stylizes every PNG frame of a directory with one style image, writing
/// outputs under the same file names. Frames must share one size that the
/// encoder accepts. Returns the written paths in frame order.
pub fn stylize_video<F: Elem>(
    frames_dir: &Path,
    style_path: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let model: StyleModel<F> = StyleModel::load(checkpoint)?;
    let style: Array3<F> =
        load_image(style_path).map_err(|e| Error::InvalidInput(format!("unreadable style image: {e}")))?;
    let frames = frame_paths(frames_dir)?;

    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(frames.len());
    let mut size: Option<(usize, usize, usize)> = None;
    for path in &frames {
        let frame: Array3<F> = load_image(path)?;
        match size {
            None => size = Some(frame.dim()),
            Some(expected) if expected != frame.dim() => {
                return Err(Error::InvalidInput(format!(
                    "mixed frame sizes: {} is {:?}, earlier frames are {:?}",
                    path.display(),
                    frame.dim(),
                    expected
                )))
            }
            Some(_) => {}
        }
        let stylized = model.stylize(&frame, &style)?;
        let out_path = out_dir.join(path.file_name().expect("frame paths have file names"));
        save_image(&stylized, &out_path)?;
        written.push(out_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Role;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn color_round_trip_is_tight_and_fixed_points_exact() {
        let grid = Array3::<f64>::from_shape_fn((1, 1, 1024), |(_, _, i)| i as f64 / 1023.0);
        let back = linear_to_srgb(&srgb_to_linear(&grid));
        let worst = grid.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-6, "round trip drifts by {worst}");
        assert_eq!(srgb_to_linear(&Array3::from_elem((1, 1, 1), 0.0))[[0, 0, 0]], 0.0);
        assert_eq!(srgb_to_linear(&Array3::from_elem((1, 1, 1), 1.0))[[0, 0, 0]], 1.0);
        assert_eq!(linear_to_srgb(&Array3::from_elem((1, 1, 1), 0.0))[[0, 0, 0]], 0.0);
        assert_eq!(linear_to_srgb(&Array3::from_elem((1, 1, 1), 1.0))[[0, 0, 0]], 1.0);
    }

    #[test]
    fn transfer_breakpoints_join_smoothly() {
        let lo = Array3::<f64>::from_elem((1, 1, 1), 0.0031308);
        assert!((linear_to_srgb(&lo)[[0, 0, 0]] - 0.04045).abs() < 1e-6);
        let hi = Array3::<f64>::from_elem((1, 1, 1), 0.04045);
        assert!((srgb_to_linear(&hi)[[0, 0, 0]] - 0.0031308).abs() < 1e-6);
        // out-of-range inputs clamp instead of erroring
        let wild = Array3::<f64>::from_elem((1, 1, 1), 3.0);
        assert_eq!(srgb_to_linear(&wild)[[0, 0, 0]], 1.0);
    }

    fn write_frames(dir: &Path, count: usize, side: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        std::fs::create_dir_all(dir).unwrap();
        for i in 0..count {
            let img = Array3::<f32>::from_shape_fn((3, side, side), |_| rng.gen_range(0.0..1.0));
            save_image(&img, &dir.join(format!("frame_{:04}.png", i + 1))).unwrap();
        }
    }

    #[test]
    fn video_stylization_is_per_frame_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames");
        write_frames(&frames, 3, 32);
        let style_path = dir.path().join("style.png");
        let style = Array3::<f32>::from_shape_fn((3, 32, 32), |(c, y, _)| if c == 0 { y as f32 / 32.0 } else { 0.4 });
        save_image(&style, &style_path).unwrap();
        let model: StyleModel<f32> = StyleModel::surrogate(Role::Student, 40);
        let ckpt = dir.path().join("student.pqta");
        model.save(&ckpt, 0, "test").unwrap();

        let out_a = dir.path().join("out_a");
        let written = stylize_video::<f32>(&frames, &style_path, &ckpt, &out_a).unwrap();
        assert_eq!(written.len(), 3);
        assert!(written.iter().all(|p| p.exists()));
        assert_eq!(written[0].file_name().unwrap(), "frame_0001.png");

        // per-frame oracle: frame k alone gives the same bytes
        let style_loaded: Array3<f32> = load_image(&style_path).unwrap();
        let frame2: Array3<f32> = load_image(&frames.join("frame_0002.png")).unwrap();
        let single = model.stylize(&frame2, &style_loaded).unwrap();
        let single_path = dir.path().join("single.png");
        save_image(&single, &single_path).unwrap();
        assert_eq!(std::fs::read(&single_path).unwrap(), std::fs::read(&written[1]).unwrap());

        // repeat invocation is bit-identical
        let out_b = dir.path().join("out_b");
        let again = stylize_video::<f32>(&frames, &style_path, &ckpt, &out_b).unwrap();
        for (a, b) in written.iter().zip(&again) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn mixed_sizes_and_unreadable_styles_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("frames");
        write_frames(&frames, 2, 32);
        let odd = Array3::<f32>::from_elem((3, 48, 48), 0.5);
        save_image(&odd, &frames.join("frame_0003.png")).unwrap();
        let style_path = dir.path().join("style.png");
        save_image(&Array3::<f32>::from_elem((3, 32, 32), 0.2), &style_path).unwrap();
        let model: StyleModel<f32> = StyleModel::surrogate(Role::Student, 41);
        let ckpt = dir.path().join("student.pqta");
        model.save(&ckpt, 0, "test").unwrap();

        let err = stylize_video::<f32>(&frames, &style_path, &ckpt, &dir.path().join("out")).unwrap_err();
        assert!(err.to_string().contains("mixed frame sizes"), "{err}");

        std::fs::remove_file(frames.join("frame_0003.png")).unwrap();
        let missing_style = dir.path().join("nope.png");
        assert!(stylize_video::<f32>(&frames, &missing_style, &ckpt, &dir.path().join("out")).is_err());
    }
}
