use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use pqdast::eval::make_report;
use pqdast::flip::{flip_map, FlipParams};
use pqdast::imageio::{load_image, save_image};
use pqdast::inference::{linear_to_srgb, srgb_to_linear, stylize_video};
use pqdast::nn::{Encoder, StyleModel};
use pqdast::onnx::export_checkpoint;
use pqdast::train::{run_training, TrainConfig};

#[derive(Parser)]
#[command(name = "pqdast", version, about = "Perceptual-quality-distilled arbitrary style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perceptual difference between two images (0 = identical).
    Flip {
        /// Reference image (PNG or JPEG).
        #[arg(long)]
        reference: PathBuf,
        /// Test image, same size as the reference.
        #[arg(long)]
        test: PathBuf,
        /// Viewing condition in pixels per degree.
        #[arg(long, default_value_t = 67.0)]
        ppd: f64,
        /// Also write the per-pixel error map as a color-coded PNG.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Stylize one image or a directory of frames with one style image.
    Stylize {
        /// Content image, or a directory of PNG frames.
        #[arg(long)]
        content: PathBuf,
        /// Style image.
        #[arg(long)]
        style: PathBuf,
        /// Model checkpoint (.pqta).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; files keep their input names.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a checkpoint as a self-contained ONNX graph.
    Export {
        /// Model checkpoint (.pqta).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output .onnx path; a .meta.json sidecar lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Static input size (both sides); must be a multiple of 16.
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Re-encode an image between sRGB and linear radiance.
    ConvertColorspace {
        /// Target encoding of the output file.
        #[arg(long, value_enum)]
        to: Colorspace,
        /// Input image.
        #[arg(long)]
        input: PathBuf,
        /// Output PNG.
        #[arg(long)]
        output: PathBuf,
    },
    /// Temporal-consistency report over a stylized frame sequence.
    Evaluate {
        /// Directory of PNG frames in playback order.
        #[arg(long)]
        frames: PathBuf,
        /// Directory of .flo forward flows, one per consecutive pair.
        #[arg(long)]
        flows: PathBuf,
        /// Directory of occlusion mask PNGs, one per pair (white = occluded).
        #[arg(long)]
        occlusions: Option<PathBuf>,
        /// Where to write the TSV report.
        #[arg(long)]
        out: PathBuf,
        /// Also write one flip heatmap PNG per pair into this directory.
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        /// Checkpoint whose encoder scores the perceptual column; a seeded
        /// surrogate encoder is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Viewing condition for the flip column.
        #[arg(long, default_value_t = 67.0)]
        ppd: f64,
    },
    /// Train a teacher, or distill a student from one.
    Train {
        /// Config file of key=value lines; see the README for the keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides applied after the file, e.g. `steps=2000 lr=5e-5`.
        #[arg(value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Colorspace {
    Srgb,
    Linear,
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Flip { reference, test, ppd, heatmap } => cmd_flip(&reference, &test, ppd, heatmap.as_deref()),
        Command::Stylize { content, style, checkpoint, out } => cmd_stylize(&content, &style, &checkpoint, &out),
        Command::Export { checkpoint, out, size } => cmd_export(&checkpoint, &out, size),
        Command::ConvertColorspace { to, input, output } => cmd_convert(to, &input, &output),
        Command::Evaluate { frames, flows, occlusions, out, heatmaps, checkpoint, ppd } => cmd_evaluate(
            &frames,
            &flows,
            occlusions.as_deref(),
            &out,
            heatmaps.as_deref(),
            checkpoint.as_deref(),
            ppd,
        ),
        Command::Train { config, overrides } => cmd_train(config.as_deref(), &overrides),
    }
}

fn cmd_flip(reference: &Path, test: &Path, ppd: f64, heatmap: Option<&Path>) -> anyhow::Result<()> {
    let p = FlipParams { ppd, ..FlipParams::default() };
    let a: ndarray::Array3<f64> = load_image(reference).with_context(|| format!("reading {}", reference.display()))?;
    let b: ndarray::Array3<f64> = load_image(test).with_context(|| format!("reading {}", test.display()))?;
    let map = flip_map(&a, &b, &p)?;
    let score = map.iter().sum::<f64>() / map.len() as f64;
    if let Some(path) = heatmap {
        pqdast::flip::heatmap::save_heatmap(&map, path)?;
    }
    println!("{score:.4}");
    Ok(())
}

fn cmd_stylize(content: &Path, style: &Path, checkpoint: &Path, out: &Path) -> anyhow::Result<()> {
    if content.is_dir() {
        let written = stylize_video::<f32>(content, style, checkpoint, out)?;
        println!("stylized {} frames into {}", written.len(), out.display());
        return Ok(());
    }
    let model: StyleModel<f32> = StyleModel::load(checkpoint)?;
    let content_img = load_image(content).with_context(|| format!("reading {}", content.display()))?;
    let style_img = load_image(style).with_context(|| format!("reading {}", style.display()))?;
    let stylized = model.stylize(&content_img, &style_img)?;
    std::fs::create_dir_all(out)?;
    let name = content.file_name().context("content path has no file name")?;
    let target = out.join(name);
    save_image(&stylized, &target)?;
    println!("stylized {} into {}", content.display(), target.display());
    Ok(())
}

fn cmd_export(checkpoint: &Path, out: &Path, size: usize) -> anyhow::Result<()> {
    let bundle = export_checkpoint(checkpoint, out, size, size)?;
    println!("wrote {} and {}", bundle.onnx_path.display(), bundle.meta_path.display());
    Ok(())
}

fn cmd_convert(to: Colorspace, input: &Path, output: &Path) -> anyhow::Result<()> {
    let img: ndarray::Array3<f64> = load_image(input).with_context(|| format!("reading {}", input.display()))?;
    let converted = match to {
        Colorspace::Linear => srgb_to_linear(&img),
        Colorspace::Srgb => linear_to_srgb(&img),
    };
    save_image(&converted, output)?;
    println!("wrote {}", output.display());
    Ok(())
}

fn cmd_evaluate(
    frames: &Path,
    flows: &Path,
    occlusions: Option<&Path>,
    out: &Path,
    heatmaps: Option<&Path>,
    checkpoint: Option<&Path>,
    ppd: f64,
) -> anyhow::Result<()> {
    let encoder: Encoder<f32> = match checkpoint {
        Some(path) => StyleModel::<f32>::load(path)?.encoder,
        None => Encoder::surrogate(0),
    };
    let p = FlipParams { ppd, ..FlipParams::default() };
    let (report, files) = make_report(&encoder, frames, flows, occlusions, &p, out, heatmaps)?;
    print!("{}", report.to_tsv());
    println!("wrote {}", files.tsv_path.display());
    if !files.heatmaps.is_empty() {
        println!("wrote {} heatmaps", files.heatmaps.len());
    }
    Ok(())
}

fn cmd_train(config: Option<&Path>, overrides: &[String]) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    for kv in overrides {
        let Some((key, value)) = kv.split_once('=') else {
            bail!("override {kv:?} is not of the form key=value");
        };
        cfg.apply(key.trim(), value.trim())?;
    }
    let outcome = run_training::<f32>(cfg)?;
    if let Some(last) = outcome.reports.last() {
        println!("ran {} steps, final total loss {:.6}", outcome.reports.len(), last.total);
    }
    println!("state:  {}", outcome.state_path.display());
    println!("model:  {}", outcome.model_path.display());
    println!("log:    {}", outcome.log_path.display());
    Ok(())
}
