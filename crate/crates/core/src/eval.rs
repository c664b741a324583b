//! Temporal-consistency metrics for stylized sequences.
//!
//! Three per-pair metrics over consecutive frames, each deterministic given
//! its inputs:
//!
//! - **warping error**: occlusion-masked mean squared difference between
//!   frame t and frame t−1 warped forward along the flow. Zero for a static
//!   sequence, and insensitive to motion the flow explains.
//! - **consecutive perceptual error**: mean squared difference of
//!   channel-normalized encoder activations, averaged over the five taps.
//!   Normalizing each channel to zero mean and unit variance first makes the
//!   number comparable across encoders whose activation scales differ.
//! - **flip**: the perceptual metric between the two frames, pooled to its
//!   mean. Unlike the other two this ignores the flow entirely, so it counts
//!   legitimate motion as change — useful as an upper envelope.
//!
//! Warping and perceptual errors are reported ×10; raw values on typical
//! frames sit in the third decimal, and one significant digit earlier reads
//! better in tables. Flip is already in [0,1] and stays unscaled.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::ad::Graph;
use crate::data::load_flow;
use crate::elem::{c, Elem};
use crate::error::{Error, Result};
use crate::flip::heatmap::save_heatmap;
use crate::flip::{flip_map, FlipParams};
use crate::imageio::{load_image, load_mask};
use crate::inference::sorted_files;
use crate::nn::Encoder;

/// Display scale of the warping and perceptual columns.
pub const DISPLAY_SCALE: f64 = 10.0;

const MVN_EPS: f64 = 1e-5;

/// Occlusion-masked warping error between one frame and its predecessor,
/// ×10. `flow[0]` is the x displacement from t−1 to t in pixels; occluded
/// pixels are excluded from the mean, and an all-occluded mask gives zero.
pub fn warping_error<F: Elem>(
    current: &Array3<F>,
    previous: &Array3<F>,
    flow: &Array3<F>,
    occluded: &Array2<bool>,
) -> f64 {
    let (ch, h, w) = current.dim();
    assert_eq!(previous.dim(), (ch, h, w), "frame sizes differ");
    assert_eq!(flow.dim(), (2, h, w), "flow must be (2,H,W)");
    assert_eq!(occluded.dim(), (h, w), "occlusion mask must be (H,W)");

    let valid = occluded.iter().filter(|o| !**o).count();
    if valid == 0 {
        return 0.0;
    }

    // same convention as the temporal training term: the warped previous
    // frame samples where the flow says each current pixel came from
    let mut g: Graph<F> = Graph::new();
    let prev = g.constant(previous.clone().into_dyn());
    let back_flow = flow.mapv(|v| -v);
    let warped = g.bilinear_warp(prev, &back_flow);
    let warped = g.value(warped);

    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !occluded[[y, x]] {
                for chan in 0..ch {
                    let d = current[[chan, y, x]].to_f64_() - warped[[chan, y, x]].to_f64_();
                    sum += d * d;
                }
            }
        }
    }
    DISPLAY_SCALE * sum / (ch * valid) as f64
}

/// Mean squared difference of channel-normalized encoder activations over
/// the five taps, ×10. Symmetric in its two frames and zero when they match.
pub fn consecutive_perceptual_error<F: Elem>(
    encoder: &Encoder<F>,
    current: &Array3<F>,
    previous: &Array3<F>,
) -> Result<f64> {
    Encoder::check_input(current)?;
    Encoder::check_input(previous)?;
    if current.dim() != previous.dim() {
        return Err(Error::shape(format!("{:?}", current.dim()), format!("{:?}", previous.dim())));
    }
    let mut g: Graph<F> = Graph::new();
    let mut reg = Vec::new();
    let bound = encoder.bind(&mut g, "encoder.", &mut reg);
    let cur = g.constant(current.clone().into_dyn());
    let prev = g.constant(previous.clone().into_dyn());
    let cur_taps = bound.encode(&mut g, cur);
    let prev_taps = bound.encode(&mut g, prev);

    let mut total = 0.0;
    for (a, b) in cur_taps.into_iter().zip(prev_taps) {
        let an = g.mean_variance_normalize(a, c::<F>(MVN_EPS));
        let bn = g.mean_variance_normalize(b, c::<F>(MVN_EPS));
        let diff = g.sub(an, bn);
        let sq = g.mul(diff, diff);
        let m = g.mean_all(sq);
        total += g.scalar(m).to_f64_();
    }
    Ok(DISPLAY_SCALE * total / 5.0)
}

/// One consecutive pair's metrics. `index` is the 1-based pair number, so
/// pair k compares frame k+1 against frame k.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub warping_x10: f64,
    pub perceptual_x10: f64,
    pub flip: f64,
}

/// Per-pair metric series plus their means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_warping_x10: f64,
    pub mean_perceptual_x10: f64,
    pub mean_flip: f64,
}

impl EvalReport {
    /// Aggregates are plain means of the per-pair series.
    pub fn from_rows(rows: Vec<EvalRow>) -> Result<EvalReport> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("evaluation needs at least one frame pair".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Ok(EvalReport {
            mean_warping_x10: mean(|r| r.warping_x10),
            mean_perceptual_x10: mean(|r| r.perceptual_x10),
            mean_flip: mean(|r| r.flip),
            rows,
        })
    }

    /// Tab-separated table: one row per pair, then a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("pair\twarping_x10\tperceptual_x10\tflip\n");
        for r in &self.rows {
            out.push_str(&format!("{:04}\t{:.6}\t{:.6}\t{:.6}\n", r.index, r.warping_x10, r.perceptual_x10, r.flip));
        }
        out.push_str(&format!(
            "mean\t{:.6}\t{:.6}\t{:.6}\n",
            self.mean_warping_x10, self.mean_perceptual_x10, self.mean_flip
        ));
        out
    }
}

/// Evaluates a frame sequence against its flows and occlusion masks. Both
/// auxiliary slices pair frame k with frame k+1, so their length must be one
/// less than the frame count.
pub fn evaluate_sequence<F: Elem>(
    encoder: &Encoder<F>,
    frames: &[Array3<F>],
    flows: &[Array3<F>],
    occlusions: &[Array2<bool>],
    p: &FlipParams,
) -> Result<EvalReport> {
    let (report, _) = evaluate_sequence_with_maps(encoder, frames, flows, occlusions, p)?;
    Ok(report)
}

fn evaluate_sequence_with_maps<F: Elem>(
    encoder: &Encoder<F>,
    frames: &[Array3<F>],
    flows: &[Array3<F>],
    occlusions: &[Array2<bool>],
    p: &FlipParams,
) -> Result<(EvalReport, Vec<Array2<F>>)> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 frames, got {}", frames.len())));
    }
    for (what, got) in [("flows", flows.len()), ("occlusion masks", occlusions.len())] {
        if got != frames.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "{} frames need {} {what}, got {got}",
                frames.len(),
                frames.len() - 1
            )));
        }
    }

    let mut rows = Vec::new();
    let mut maps = Vec::new();
    for k in 0..frames.len() - 1 {
        let (prev, curr) = (&frames[k], &frames[k + 1]);
        let map = flip_map(prev, curr, p)?;
        let flip = map.iter().map(|v| v.to_f64_()).sum::<f64>() / map.len() as f64;
        rows.push(EvalRow {
            index: k + 1,
            warping_x10: warping_error(curr, prev, &flows[k], &occlusions[k]),
            perceptual_x10: consecutive_perceptual_error(encoder, curr, prev)?,
            flip,
        });
        maps.push(map);
    }
    Ok((EvalReport::from_rows(rows)?, maps))
}

/// Directory form of [`evaluate_sequence`]: `frames` holds the PNG sequence,
/// `flows` one .flo per consecutive pair, and `occlusions` (optional) one
/// mask PNG per pair — without masks every pixel counts. When `heatmap_dir`
/// is given, each pair's flip map is written there as `pair_XXXX.png`.
pub fn evaluate_dirs<F: Elem>(
    encoder: &Encoder<F>,
    frames_dir: &Path,
    flows_dir: &Path,
    occlusions_dir: Option<&Path>,
    p: &FlipParams,
    heatmap_dir: Option<&Path>,
) -> Result<EvalReport> {
    let frames: Vec<Array3<F>> =
        sorted_files(frames_dir, "png")?.iter().map(|f| load_image(f)).collect::<Result<_>>()?;
    let flows: Vec<Array3<F>> =
        sorted_files(flows_dir, "flo")?.iter().map(|f| load_flow(f)).collect::<Result<_>>()?;
    let occlusions: Vec<Array2<bool>> = match occlusions_dir {
        Some(dir) => sorted_files(dir, "png")?.iter().map(|f| load_mask(f)).collect::<Result<_>>()?,
        None => frames
            .iter()
            .skip(1)
            .map(|f| Array2::from_elem((f.dim().1, f.dim().2), false))
            .collect(),
    };

    let (report, maps) = evaluate_sequence_with_maps(encoder, &frames, &flows, &occlusions, p)?;
    if let Some(dir) = heatmap_dir {
        std::fs::create_dir_all(dir)?;
        for (row, map) in report.rows.iter().zip(maps.iter()) {
            save_heatmap(map, &dir.join(format!("pair_{:04}.png", row.index)))?;
        }
    }
    Ok(report)
}

/// Written paths of one report: the TSV and any heatmaps.
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub tsv_path: PathBuf,
    pub heatmaps: Vec<PathBuf>,
}

/// Evaluates a directory sequence and writes the TSV (plus heatmaps when
/// `heatmap_dir` is given).
pub fn make_report<F: Elem>(
    encoder: &Encoder<F>,
    frames_dir: &Path,
    flows_dir: &Path,
    occlusions_dir: Option<&Path>,
    p: &FlipParams,
    out_tsv: &Path,
    heatmap_dir: Option<&Path>,
) -> Result<(EvalReport, ReportFiles)> {
    let report = evaluate_dirs(encoder, frames_dir, flows_dir, occlusions_dir, p, heatmap_dir)?;
    crate::archive::write_atomic(out_tsv, report.to_tsv().as_bytes())?;
    let heatmaps = report
        .rows
        .iter()
        .filter_map(|r| heatmap_dir.map(|d| d.join(format!("pair_{:04}.png", r.index))))
        .collect();
    Ok((report, ReportFiles { tsv_path: out_tsv.to_path_buf(), heatmaps }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64, h: usize, w: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..1.0))
    }

    fn zero_flow(h: usize, w: usize) -> Array3<f64> {
        Array3::zeros((2, h, w))
    }

    fn no_occlusion(h: usize, w: usize) -> Array2<bool> {
        Array2::from_elem((h, w), false)
    }

    #[test]
    fn static_sequence_scores_zero_on_every_metric() {
        let enc: Encoder<f64> = Encoder::surrogate(3);
        let frame = image(1, 32, 32);
        let frames = vec![frame.clone(), frame.clone(), frame];
        let flows = vec![zero_flow(32, 32); 2];
        let occ = vec![no_occlusion(32, 32); 2];
        let p = FlipParams::default();
        let report = evaluate_sequence(&enc, &frames, &flows, &occ, &p).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.warping_x10, 0.0);
            assert!(r.perceptual_x10.abs() < 1e-12, "perceptual {}", r.perceptual_x10);
            assert!(r.flip.abs() < 1e-9, "flip {}", r.flip);
        }
        assert_eq!(report.mean_warping_x10, 0.0);
    }

    #[test]
    fn integer_shift_with_matching_flow_is_free() {
        // frame 2 is frame 1 moved right by 2px; flow says so; the two
        // columns that entered from outside are occluded
        let (h, w) = (16, 16);
        let prev = image(7, h, w);
        let mut curr = Array3::<f64>::zeros((3, h, w));
        for ch in 0..3 {
            for y in 0..h {
                for x in 2..w {
                    curr[[ch, y, x]] = prev[[ch, y, x - 2]];
                }
            }
        }
        let mut flow = zero_flow(h, w);
        for y in 0..h {
            for x in 0..w {
                flow[[0, y, x]] = 2.0;
            }
        }
        let mut occ = no_occlusion(h, w);
        for y in 0..h {
            occ[[y, 0]] = true;
            occ[[y, 1]] = true;
        }
        let err = warping_error(&curr, &prev, &flow, &occ);
        assert!(err <= 1e-6, "integer shift not free: {err}");

        // the same pair against a zero flow must be clearly worse
        let unexplained = warping_error(&curr, &prev, &zero_flow(h, w), &occ);
        assert!(unexplained > 1e-3, "motion not detected: {unexplained}");
    }

    #[test]
    fn warping_error_is_ten_times_the_masked_mse() {
        let (h, w) = (8, 8);
        let prev = Array3::<f64>::zeros((3, h, w));
        let curr = Array3::<f64>::from_elem((3, h, w), 0.25);
        let err = warping_error(&curr, &prev, &zero_flow(h, w), &no_occlusion(h, w));
        let expected = 10.0 * 0.25 * 0.25;
        assert!((err - expected).abs() < 1e-12, "got {err}, want {expected}");

        let all_occluded = Array2::from_elem((h, w), true);
        assert_eq!(warping_error(&curr, &prev, &zero_flow(h, w), &all_occluded), 0.0);
    }

    #[test]
    fn perceptual_error_is_symmetric_and_monotone_in_noise() {
        let enc: Encoder<f64> = Encoder::surrogate(11);
        let base = image(20, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Array3::<f64>::from_shape_fn((3, 32, 32), |_| rng.gen_range(-1.0..1.0));

        let ab = consecutive_perceptual_error(&enc, &base, &base.clone()).unwrap();
        assert!(ab.abs() < 1e-12);

        let mut last = 0.0;
        for eps in [0.01, 0.02, 0.04] {
            let noisy = &base + &(&noise * eps);
            let fwd = consecutive_perceptual_error(&enc, &noisy, &base).unwrap();
            let bwd = consecutive_perceptual_error(&enc, &base, &noisy).unwrap();
            assert!((fwd - bwd).abs() < 1e-12, "not symmetric: {fwd} vs {bwd}");
            assert!(fwd > last, "noise {eps} did not increase the error ({fwd} <= {last})");
            last = fwd;
        }
    }

    #[test]
    fn report_means_match_their_columns_and_survive_a_static_tail() {
        let enc: Encoder<f64> = Encoder::surrogate(5);
        let mut frames = vec![image(1, 32, 32), image(2, 32, 32), image(3, 32, 32)];
        let mut flows = vec![zero_flow(32, 32); 2];
        let mut occ = vec![no_occlusion(32, 32); 2];
        let p = FlipParams::default();
        let report = evaluate_sequence(&enc, &frames, &flows, &occ, &p).unwrap();

        let n = report.rows.len() as f64;
        let wmean = report.rows.iter().map(|r| r.warping_x10).sum::<f64>() / n;
        assert!((report.mean_warping_x10 - wmean).abs() < 1e-6);

        // duplicating the final frame adds one all-zero row, nothing else
        frames.push(frames.last().unwrap().clone());
        flows.push(zero_flow(32, 32));
        occ.push(no_occlusion(32, 32));
        let longer = evaluate_sequence(&enc, &frames, &flows, &occ, &p).unwrap();
        assert_eq!(longer.rows.len(), 3);
        for (a, b) in report.rows.iter().zip(longer.rows.iter()) {
            assert_eq!(a.warping_x10, b.warping_x10);
            assert_eq!(a.flip, b.flip);
        }
        let tail = longer.rows.last().unwrap();
        assert!(tail.warping_x10 == 0.0 && tail.flip < 1e-9);
        let expected_mean = report.mean_flip * n / (n + 1.0);
        assert!((longer.mean_flip - expected_mean).abs() < 1e-12);

        let tsv = longer.to_tsv();
        assert!(tsv.starts_with("pair\twarping_x10\tperceptual_x10\tflip\n"));
        assert_eq!(tsv.lines().count(), 1 + 3 + 1);
        assert!(tsv.lines().last().unwrap().starts_with("mean\t"));
    }

    #[test]
    fn count_mismatches_are_rejected() {
        let enc: Encoder<f64> = Encoder::surrogate(5);
        let frames = vec![image(1, 32, 32), image(2, 32, 32)];
        let p = FlipParams::default();
        let err = evaluate_sequence(&enc, &frames, &[], &[no_occlusion(32, 32)], &p).unwrap_err();
        assert!(err.to_string().contains("flows"), "{err}");
        let err =
            evaluate_sequence(&enc, &frames, &[zero_flow(32, 32)], &[], &p).unwrap_err();
        assert!(err.to_string().contains("occlusion"), "{err}");
        let err = evaluate_sequence(&enc, &frames[..1], &[], &[], &p).unwrap_err();
        assert!(err.to_string().contains("at least 2"), "{err}");
    }

    #[test]
    fn fixture_scene_evaluates_end_to_end_with_heatmaps() {
        let root = std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/video_fixture"));
        let enc: Encoder<f32> = Encoder::surrogate(0);
        let dir = tempfile::tempdir().unwrap();
        let heat = dir.path().join("heat");
        let tsv = dir.path().join("report.tsv");
        let (report, files) = make_report(
            &enc,
            &root.join("final/scene_a"),
            &root.join("flow/scene_a"),
            Some(&root.join("occlusions/scene_a")),
            &FlipParams::default(),
            &tsv,
            Some(&heat),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert!(r.warping_x10.is_finite() && r.warping_x10 >= 0.0);
            assert!(r.perceptual_x10.is_finite() && r.perceptual_x10 >= 0.0);
            assert!((0.0..=1.0).contains(&r.flip), "flip out of range: {}", r.flip);
        }
        assert!(files.tsv_path.exists());
        assert_eq!(files.heatmaps.len(), 3);
        assert!(files.heatmaps.iter().all(|p| p.exists()));
        let written = std::fs::read_to_string(&tsv).unwrap();
        assert_eq!(written, report.to_tsv());
    }
}
