//! Training configuration: paper defaults, `key = value` config files, and
//! CLI-style overrides through the same parser.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flip::FlipParams;
use crate::losses::LossWeights;
use crate::nn::encoder::{MIN_SIDE, STRIDE};

/// Which network the loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Train a teacher-width model on content + style (+ optional depth and
    /// temporal terms). No distillation.
    Teacher,
    /// Distill a student-width model from a frozen teacher checkpoint.
    Distill,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Teacher => "teacher",
            TrainMode::Distill => "distill",
        }
    }

    pub fn parse(s: &str) -> Result<TrainMode> {
        match s {
            "teacher" => Ok(TrainMode::Teacher),
            "distill" => Ok(TrainMode::Distill),
            other => Err(Error::InvalidParams(format!("unknown training mode {other:?} (teacher | distill)"))),
        }
    }
}

/// Everything one run needs. Field defaults are the published protocol;
/// fixture-scale runs override steps, batch and crop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub steps: u64,
    pub lr: f64,
    pub batch_size: usize,
    /// Square crop side for content frames; styles are resized to match.
    pub crop: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub flip: FlipParams,
    pub video_root: PathBuf,
    pub styles_root: PathBuf,
    pub out_dir: PathBuf,
    /// Frozen teacher for distillation; required in distill mode.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Archive supplying pretrained `encoder.*` weights. Without it the
    /// encoder is a seeded surrogate (distill mode inherits the teacher's).
    pub encoder_checkpoint: Option<PathBuf>,
    /// Training state to continue from; overrides seed and fresh init.
    pub resume_from: Option<PathBuf>,
    /// Steps between periodic state snapshots; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub disable_pq_distill: bool,
    pub disable_depth: bool,
    pub disable_temporal: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Distill,
            steps: 160_000,
            lr: 1e-4,
            batch_size: 6,
            crop: 256,
            seed: 0,
            weights: LossWeights::default(),
            flip: FlipParams::default(),
            video_root: PathBuf::new(),
            styles_root: PathBuf::new(),
            out_dir: PathBuf::new(),
            teacher_checkpoint: None,
            encoder_checkpoint: None,
            resume_from: None,
            checkpoint_every: 1000,
            disable_pq_distill: false,
            disable_depth: false,
            disable_temporal: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::InvalidParams(format!("{key}: expected true/false, got {value:?}"))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting. Both the config-file parser and
    /// CLI overrides funnel through here, so they accept the same keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = TrainMode::parse(value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "crop" => self.crop = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "video_root" => self.video_root = PathBuf::from(value),
            "styles_root" => self.styles_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "teacher_checkpoint" => self.teacher_checkpoint = Some(PathBuf::from(value)),
            "encoder_checkpoint" => self.encoder_checkpoint = Some(PathBuf::from(value)),
            "resume_from" => self.resume_from = Some(PathBuf::from(value)),
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "disable_pq_distill" => self.disable_pq_distill = parse_bool(key, value)?,
            "disable_depth" => self.disable_depth = parse_bool(key, value)?,
            "disable_temporal" => self.disable_temporal = parse_bool(key, value)?,
            "weight_content" => self.weights.content = parse_num(key, value)?,
            "weight_style" => self.weights.style = parse_num(key, value)?,
            "weight_distill" => self.weights.distill = parse_num(key, value)?,
            "weight_depth" => self.weights.depth = parse_num(key, value)?,
            "weight_temporal" => self.weights.temporal = parse_num(key, value)?,
            "flip_ppd" => self.flip.ppd = parse_num(key, value)?,
            other => return Err(Error::InvalidParams(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file of `key = value` lines. `#` starts a comment;
    /// blank lines are skipped; unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::bad_file(path, e.to_string()))?;
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::bad_file(path, format!("line {}: expected key = value", lineno + 1)))?;
            cfg.apply(key.trim(), value.trim())
                .map_err(|e| Error::bad_file(path, format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParams("steps must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidParams(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be positive".into()));
        }
        if self.crop < MIN_SIDE || self.crop % STRIDE != 0 {
            return Err(Error::InvalidParams(format!(
                "crop must be a multiple of {STRIDE} and at least {MIN_SIDE}, got {}",
                self.crop
            )));
        }
        self.weights.validate()?;
        self.flip.validate()?;
        for (name, path) in [
            ("video_root", &self.video_root),
            ("styles_root", &self.styles_root),
            ("out_dir", &self.out_dir),
        ] {
            if path.as_os_str().is_empty() {
                return Err(Error::InvalidParams(format!("{name} is not set")));
            }
        }
        if self.mode == TrainMode::Distill && self.teacher_checkpoint.is_none() {
            return Err(Error::InvalidParams("distill mode requires teacher_checkpoint".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> TrainConfig {
        let mut cfg = TrainConfig::default();
        cfg.video_root = "v".into();
        cfg.styles_root = "s".into();
        cfg.out_dir = "o".into();
        cfg.teacher_checkpoint = Some("t.pqta".into());
        cfg
    }

    #[test]
    fn defaults_follow_the_published_protocol() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.mode, TrainMode::Distill);
        assert_eq!(cfg.steps, 160_000);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.batch_size, 6);
        assert_eq!(cfg.crop, 256);
        assert_eq!(
            (cfg.weights.content, cfg.weights.style, cfg.weights.distill, cfg.weights.depth, cfg.weights.temporal),
            (1.0, 3.0, 1.0, 1.0, 10.0)
        );
    }

    #[test]
    fn config_file_round_trip_with_comments_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(
            &path,
            "# fixture run\nmode = distill\nsteps = 200   # smoke\nbatch_size = 2\ncrop = 64\n\nvideo_root = /data/v\nstyles_root = /data/s\nout_dir = /tmp/run\nteacher_checkpoint = /data/t.pqta\nweight_temporal = 5.5\ndisable_depth = true\n",
        )
        .unwrap();
        let mut cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.steps, 200);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.crop, 64);
        assert_eq!(cfg.weights.temporal, 5.5);
        assert!(cfg.disable_depth);
        assert!(cfg.validate().is_ok());
        // CLI overrides reuse the same setter
        cfg.apply("steps", "10").unwrap();
        assert_eq!(cfg.steps, 10);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply("stepz", "5").is_err());
        assert!(cfg.apply("steps", "many").is_err());
        assert!(cfg.apply("disable_depth", "yep").is_err());
        assert!(cfg.apply("mode", "both").is_err());
    }

    #[test]
    fn validation_catches_bad_configs() {
        assert!(valid().validate().is_ok());

        let mut c = valid();
        c.steps = 0;
        assert!(c.validate().is_err());

        let mut c = valid();
        c.lr = 0.0;
        assert!(c.validate().is_err());

        let mut c = valid();
        c.crop = 40; // not a stride multiple
        assert!(c.validate().is_err());

        let mut c = valid();
        c.teacher_checkpoint = None;
        assert!(c.validate().is_err());

        let mut c = valid();
        c.mode = TrainMode::Teacher;
        c.teacher_checkpoint = None;
        assert!(c.validate().is_ok(), "teacher mode needs no teacher checkpoint");

        let mut c = valid();
        c.out_dir = PathBuf::new();
        assert!(c.validate().is_err());
    }
}
