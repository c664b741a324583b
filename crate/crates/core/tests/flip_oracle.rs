//! Compares the evaluator against the committed golden corpus produced by
//! `tests/oracles/flip_reference.py` (independent float64 implementation).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use pqdast::elem::Elem;
use pqdast::flip::{flip_map, flip_score, FlipParams};
use pqdast::imageio::load_image;

const POOLED_TOL: f64 = 2e-3;
const PIXEL_TOL: f64 = 1e-3;

struct Golden {
    map: Array2<f64>,
    pooled: f64,
}

fn read_golden(path: &Path) -> Golden {
    let bytes = fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
    let h = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let pooled = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
    assert_eq!(bytes.len(), 16 + h * w * 8, "golden size mismatch in {}", path.display());
    let vals: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Golden { map: Array2::from_shape_vec((h, w), vals).unwrap(), pooled }
}

fn corpus() -> Vec<(String, PathBuf, PathBuf, Golden)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/flip");
    let mut stems: Vec<String> = fs::read_dir(&dir)
        .expect("golden corpus directory")
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.strip_suffix(".golden").map(str::to_owned)
        })
        .collect();
    stems.sort();
    assert!(stems.len() >= 5, "corpus too small: {} pairs", stems.len());
    stems
        .into_iter()
        .map(|stem| {
            let golden = read_golden(&dir.join(format!("{stem}.golden")));
            let r = dir.join(format!("{stem}_ref.png"));
            let t = dir.join(format!("{stem}_test.png"));
            (stem, r, t, golden)
        })
        .collect()
}

fn check_corpus<F: Elem>(label: &str) {
    let params = FlipParams::default();
    for (stem, ref_path, test_path, golden) in corpus() {
        let reference = load_image::<F>(&ref_path).unwrap();
        let test = load_image::<F>(&test_path).unwrap();
        let map = flip_map(&reference, &test, &params).unwrap();
        assert_eq!(map.dim(), golden.map.dim(), "{label}/{stem}: map shape");

        let mut worst = 0.0f64;
        for (got, want) in map.iter().zip(golden.map.iter()) {
            worst = worst.max((got.to_f64_() - want).abs());
        }
        assert!(worst <= PIXEL_TOL, "{label}/{stem}: per-pixel deviation {worst:.3e} > {PIXEL_TOL:.0e}");

        let pooled = flip_score(&reference, &test, &params).unwrap().to_f64_();
        let dp = (pooled - golden.pooled).abs();
        assert!(dp <= POOLED_TOL, "{label}/{stem}: pooled deviation {dp:.3e} > {POOLED_TOL:.0e}");
    }
}

#[test]
fn f64_matches_reference_corpus() {
    check_corpus::<f64>("f64");
}

#[test]
fn f32_matches_reference_corpus() {
    check_corpus::<f32>("f32");
}
