//! Dataset ingestion: Sintel-style video trees (clean/final passes with
//! ground-truth flow and occlusions) and flat style-image collections, plus
//! seeded batch assembly.
//!
//! Expected video layout, one folder per scene:
//!
//! ```text
//! root/clean/<scene>/frame_0001.png …
//! root/final/<scene>/frame_0001.png …
//! root/flow/<scene>/frame_0001.flo        (forward flow frame t → t+1)
//! root/occlusions/<scene>/frame_0001.png  (white = occluded in frame t+1)
//! ```
//!
//! Flow and occlusions are stored once per scene and shared by both passes.
//! A consecutive-frame pair is indexed by its first frame: pair t uses
//! `frame_t`, `frame_{t+1}`, `flow/frame_t.flo`, `occlusions/frame_t.png`.

pub mod flo;

pub use flo::{load_flow, write_flow};

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::elem::{c, Elem};
use crate::error::{Error, Result};
use crate::imageio::{load_image, load_mask, resize_bilinear, resize_mask_nearest};

/// Render pass of the video dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    Clean,
    Final,
}

impl PassKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            PassKind::Clean => "clean",
            PassKind::Final => "final",
        }
    }
}

impl fmt::Display for PassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// One indexed consecutive-frame pair (paths only; nothing loaded yet).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRef {
    pub pass: PassKind,
    pub scene: String,
    /// Zero-based index of the pair within its scene and pass.
    pub index: usize,
    pub frame_prev: PathBuf,
    pub frame_curr: PathBuf,
    pub flow: PathBuf,
    pub occlusion: PathBuf,
}

/// A loaded consecutive-frame pair with its ground truth.
pub struct FramePair<F: Elem> {
    pub pass: PassKind,
    pub scene: String,
    pub index: usize,
    pub frame_prev: Array3<F>,
    pub frame_curr: Array3<F>,
    /// Forward flow from `frame_prev` to `frame_curr`, in pixels.
    pub flow: Array3<F>,
    /// True where a pixel of `frame_curr` has no visible source in
    /// `frame_prev`.
    pub occlusion: Array2<bool>,
}

impl PairRef {
    /// Loads images, flow, and mask, and checks that all sizes agree.
    pub fn load<F: Elem>(&self) -> Result<FramePair<F>> {
        let frame_prev = load_image::<F>(&self.frame_prev)?;
        let frame_curr = load_image::<F>(&self.frame_curr)?;
        let flow = load_flow::<F>(&self.flow)?;
        let occlusion = load_mask(&self.occlusion)?;
        let (_, h, w) = frame_prev.dim();
        if frame_curr.dim() != (3, h, w) || flow.dim() != (2, h, w) || occlusion.dim() != (h, w) {
            return Err(Error::Dataset(format!(
                "size mismatch in pair {}/{}/{}: frames {:?}/{:?}, flow {:?}, occlusion {:?}",
                self.pass,
                self.scene,
                self.index,
                frame_prev.dim(),
                frame_curr.dim(),
                flow.dim(),
                occlusion.dim()
            )));
        }
        Ok(FramePair {
            pass: self.pass,
            scene: self.scene.clone(),
            index: self.index,
            frame_prev,
            frame_curr,
            flow,
            occlusion,
        })
    }
}

/// Deterministic index of every usable pair under a dataset root.
#[derive(Debug, Clone)]
pub struct VideoIndex {
    pub pairs: Vec<PairRef>,
}

/// Deterministic index of decodable style images.
#[derive(Debug, Clone)]
pub struct StyleIndex {
    pub images: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let rd = std::fs::read_dir(dir).map_err(|e| Error::Dataset(format!("read {}: {e}", dir.display())))?;
    for entry in rd {
        out.push(entry.map_err(|e| Error::Dataset(format!("read {}: {e}", dir.display())))?.path());
    }
    out.sort();
    Ok(out)
}

/// Indexes all consecutive pairs of both passes under `root`, ordered by
/// (pass, scene, frame index). Scenes with fewer than two frames are skipped
/// with a warning; an index with no pairs at all is an error.
pub fn scan_video_dataset(root: &Path) -> Result<VideoIndex> {
    for sub in ["clean", "final", "flow", "occlusions"] {
        if !root.join(sub).is_dir() {
            return Err(Error::Dataset(format!("missing {sub}/ under {}", root.display())));
        }
    }

    let mut pairs = Vec::new();
    for pass in [PassKind::Clean, PassKind::Final] {
        let pass_dir = root.join(pass.dir_name());
        for scene_dir in sorted_entries(&pass_dir)? {
            if !scene_dir.is_dir() {
                continue;
            }
            let scene = scene_dir.file_name().unwrap().to_string_lossy().into_owned();
            let frames: Vec<PathBuf> = sorted_entries(&scene_dir)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            if frames.len() < 2 {
                log::warn!("scene {pass}/{scene} has {} frame(s), skipping", frames.len());
                continue;
            }
            for (index, window) in frames.windows(2).enumerate() {
                let stem = window[0].file_stem().unwrap().to_string_lossy().into_owned();
                let flow = root.join("flow").join(&scene).join(format!("{stem}.flo"));
                let occlusion = root.join("occlusions").join(&scene).join(format!("{stem}.png"));
                for (what, p) in [("flow", &flow), ("occlusion", &occlusion)] {
                    if !p.is_file() {
                        return Err(Error::Dataset(format!(
                            "pair {pass}/{scene}/{index}: missing {what} file {}",
                            p.display()
                        )));
                    }
                }
                pairs.push(PairRef {
                    pass,
                    scene: scene.clone(),
                    index,
                    frame_prev: window[0].clone(),
                    frame_curr: window[1].clone(),
                    flow,
                    occlusion,
                });
            }
        }
    }

    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no usable frame pairs under {}", root.display())));
    }
    Ok(VideoIndex { pairs })
}

/// Indexes decodable images anywhere under `root`, in lexicographic path
/// order. Files without an image extension or with undecodable headers are
/// skipped with a warning; an empty index is an error.
pub fn scan_style_dataset(root: &Path) -> Result<StyleIndex> {
    let mut images = Vec::new();
    let walker = walkdir::WalkDir::new(root).sort_by_file_name();
    for entry in walker {
        let entry = entry.map_err(|e| Error::Dataset(format!("walk {}: {e}", root.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.into_path();
        let ext_ok = path
            .extension()
            .map(|e| {
                let e = e.to_string_lossy().to_lowercase();
                e == "png" || e == "jpg" || e == "jpeg"
            })
            .unwrap_or(false);
        if !ext_ok {
            log::warn!("skipping non-image file {}", path.display());
            continue;
        }
        let decodable = image::ImageReader::open(&path)
            .ok()
            .and_then(|r| r.with_guessed_format().ok())
            .and_then(|r| r.into_dimensions().ok())
            .is_some();
        if !decodable {
            log::warn!("skipping undecodable image {}", path.display());
            continue;
        }
        images.push(path);
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no style images under {}", root.display())));
    }
    Ok(StyleIndex { images })
}

/// One training sample: a frame pair plus a style image, all at (size,size).
pub struct TrainSample<F: Elem> {
    pub pair: FramePair<F>,
    pub style: Array3<F>,
}

pub type TrainBatch<F> = Vec<TrainSample<F>>;

/// Resizes the shorter side to `size` (bilinear) and center-crops; returns
/// the resize factors so flow vectors can be rescaled to match.
fn fit_content<F: Elem>(img: &Array3<F>, size: usize) -> (Array3<F>, f64, f64, usize, usize) {
    let (_, h, w) = img.dim();
    let scale = size as f64 / h.min(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).max(size);
    let nw = ((w as f64 * scale).round() as usize).max(size);
    let resized = resize_bilinear(img, nh, nw);
    let (oy, ox) = ((nh - size) / 2, (nw - size) / 2);
    let cropped = resized.slice(ndarray::s![.., oy..oy + size, ox..ox + size]).to_owned();
    (cropped, nh as f64 / h as f64, nw as f64 / w as f64, oy, ox)
}

impl<F: Elem> FramePair<F> {
    /// Shorter-side resize plus center crop of frames, flow, and mask.
    /// Flow vectors are rescaled by the per-axis resize factors.
    pub fn resized_to(&self, size: usize) -> FramePair<F> {
        let (frame_prev, sy, sx, oy, ox) = fit_content(&self.frame_prev, size);
        let (frame_curr, _, _, _, _) = fit_content(&self.frame_curr, size);

        let (_, h, w) = self.flow.dim();
        let nh = (h as f64 * sy).round() as usize;
        let nw = (w as f64 * sx).round() as usize;
        let mut flow = resize_bilinear(&self.flow, nh, nw);
        for v in flow.index_axis_mut(ndarray::Axis(0), 0).iter_mut() {
            *v = *v * c::<F>(sx);
        }
        for v in flow.index_axis_mut(ndarray::Axis(0), 1).iter_mut() {
            *v = *v * c::<F>(sy);
        }
        let flow = flow.slice(ndarray::s![.., oy..oy + size, ox..ox + size]).to_owned();

        let occ_full = resize_mask_nearest(&self.occlusion, nh, nw);
        let occlusion = occ_full.slice(ndarray::s![oy..oy + size, ox..ox + size]).to_owned();

        FramePair {
            pass: self.pass,
            scene: self.scene.clone(),
            index: self.index,
            frame_prev,
            frame_curr,
            flow,
            occlusion,
        }
    }
}

impl VideoIndex {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Uniform draw; consumes exactly one value from the generator.
    pub fn sample_ref<R: Rng>(&self, rng: &mut R) -> &PairRef {
        &self.pairs[rng.gen_range(0..self.pairs.len())]
    }
}

impl StyleIndex {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn sample_ref<R: Rng>(&self, rng: &mut R) -> &Path {
        &self.images[rng.gen_range(0..self.images.len())]
    }
}

/// Draws `batch` independent (pair, style) samples, resized to `size`. Each
/// sample consumes one pair draw then one style draw, so a given generator
/// state always produces the same batch.
pub fn sample_batch<F: Elem, R: Rng>(
    video: &VideoIndex,
    styles: &StyleIndex,
    rng: &mut R,
    batch: usize,
    size: usize,
) -> Result<TrainBatch<F>> {
    if batch == 0 || size == 0 {
        return Err(Error::InvalidParams(format!("batch {batch} and size {size} must be positive")));
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let pair_ref = video.sample_ref(rng).clone();
        let style_path = styles.sample_ref(rng).to_path_buf();
        let pair = pair_ref.load::<F>()?.resized_to(size);
        let style_full = load_image::<F>(&style_path)?;
        let style = resize_bilinear(&style_full, size, size);
        out.push(TrainSample { pair, style });
    }
    Ok(out)
}
