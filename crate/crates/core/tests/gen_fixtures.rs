//! Regenerates the committed data fixtures. Not part of the normal test
//! run; invoke explicitly after changing the fixture design:
//!
//! ```text
//! cargo test -p pqdast --test gen_fixtures -- --ignored
//! ```
//!
//! The video fixture is two scenes of toroidally shifting quantized noise,
//! rendered at 64×64 in two passes (the final pass is the inverted clean
//! pass). Because every shift is an integer number of pixels, the committed
//! constant flow fields are exact, and the occlusion masks are precisely the
//! strips that wrap around the border.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use pqdast::data::write_flow;
use pqdast::imageio::{save_image, save_mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 64;
const FRAMES: usize = 4;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn quantized_base(seed: u64) -> Array3<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // six gray levels per channel keep the patterns blocky and compressible
    Array3::from_shape_fn((3, SIZE, SIZE), |_| rng.gen_range(0..6u8) * 51)
}

fn shifted(base: &Array3<u8>, t: usize, dx: usize, dy: usize, invert: bool) -> Array3<f64> {
    Array3::from_shape_fn((3, SIZE, SIZE), |(ch, y, x)| {
        let sy = (y + SIZE - (t * dy) % SIZE) % SIZE;
        let sx = (x + SIZE - (t * dx) % SIZE) % SIZE;
        let v = base[[ch, sy, sx]];
        let v = if invert { 255 - v } else { v };
        v as f64 / 255.0
    })
}

fn write_scene(video_root: &Path, scene: &str, seed: u64, dx: usize, dy: usize) {
    let base = quantized_base(seed);
    for (pass, invert) in [("clean", false), ("final", true)] {
        let dir = video_root.join(pass).join(scene);
        fs::create_dir_all(&dir).unwrap();
        for t in 0..FRAMES {
            let img = shifted(&base, t, dx, dy, invert);
            save_image(&img, &dir.join(format!("frame_{:04}.png", t + 1))).unwrap();
        }
    }

    let flow_dir = video_root.join("flow").join(scene);
    let occ_dir = video_root.join("occlusions").join(scene);
    fs::create_dir_all(&flow_dir).unwrap();
    fs::create_dir_all(&occ_dir).unwrap();
    for t in 0..FRAMES - 1 {
        let mut flow = Array3::<f32>::zeros((2, SIZE, SIZE));
        flow.index_axis_mut(ndarray::Axis(0), 0).fill(dx as f32);
        flow.index_axis_mut(ndarray::Axis(0), 1).fill(dy as f32);
        write_flow(&flow, &flow_dir.join(format!("frame_{:04}.flo", t + 1))).unwrap();

        // pixels of frame t+1 whose source x−dx / y−dy fell off the image
        let occ = Array2::from_shape_fn((SIZE, SIZE), |(y, x)| x < dx || y < dy);
        save_mask(&occ.view(), &occ_dir.join(format!("frame_{:04}.png", t + 1))).unwrap();
    }
}

#[test]
#[ignore = "regenerates committed fixtures"]
fn regenerate_video_fixture() {
    let video_root = root().join("video_fixture");
    write_scene(&video_root, "scene_a", 101, 2, 0);
    write_scene(&video_root, "scene_b", 202, 0, 1);
    println!("video fixture written to {}", video_root.display());
}

#[test]
#[ignore = "regenerates committed fixtures"]
fn regenerate_style_fixture() {
    let styles = root().join("styles");
    fs::create_dir_all(styles.join("nested")).unwrap();

    let stripe_palette = [[0.9, 0.2, 0.3], [0.1, 0.8, 0.6]];
    let stripes =
        Array3::from_shape_fn((3, 48, 48), |(ch, y, _)| stripe_palette[(y / 6) % 2][ch]);
    save_image(&stripes, &styles.join("a_stripes.png")).unwrap();

    let checker_palette = [[0.95, 0.65, 0.05], [0.1, 0.15, 0.5]];
    let checker =
        Array3::from_shape_fn((3, 48, 48), |(ch, y, x)| checker_palette[(y / 8 + x / 8) % 2][ch]);
    save_image(&checker, &styles.join("b_checker.png")).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let centers: Vec<(f64, f64, [f64; 3])> = (0..5)
        .map(|_| (rng.gen_range(4.0..44.0), rng.gen_range(4.0..44.0), [rng.gen(), rng.gen(), rng.gen()]))
        .collect();
    let blobs = Array3::from_shape_fn((3, 48, 48), |(ch, y, x)| {
        let mut acc: f64 = 0.08;
        for (cy, cx, color) in &centers {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            acc += color[ch] * (-d2 / 60.0).exp();
        }
        acc.min(1.0)
    });
    save_image(&blobs, &styles.join("nested/c_blobs.png")).unwrap();

    fs::write(styles.join("readme.txt"), "style fixture, regenerated by gen_fixtures\n").unwrap();
    fs::write(styles.join("broken.png"), b"not actually a png").unwrap();
    println!("style fixture written to {}", styles.display());
}
