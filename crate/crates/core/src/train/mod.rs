//! Distillation training loop and the teacher-pretraining variant.
//!
//! Each step draws a batch with a seed derived from (run seed, step index),
//! builds one graph per sample holding the frozen teacher, the student on the
//! current and previous frames, and every loss term, then applies one
//! adaptive-moment update to the student's transformer and decoder from the
//! batch-averaged gradients. Deriving the sampler seed per step — instead of
//! streaming one generator across steps — is what makes checkpoints exactly
//! resumable: step s reads the same data whether or not the run was
//! interrupted at s−1.

mod adam;
mod config;

pub use adam::Adam;
pub use config::{TrainConfig, TrainMode};

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ad::{Graph, Tid};
use crate::archive::TensorArchive;
use crate::data::{sample_batch, scan_style_dataset, scan_video_dataset, StyleIndex, TrainSample, VideoIndex};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::losses::{
    content_loss, depth_loss, mse, perceptual_distill_loss, style_loss, temporal_loss, total_loss,
    DepthPredictor, GaussianLumaDepth, LossReport, LossTerms,
};
use crate::nn::{Role, StyleModel};

/// Decorrelated per-step sampler seed (splitmix-style finalizer), so any
/// single step is reproducible without replaying the ones before it.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hex digest of the serialized config, stamped into checkpoints.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to continue a run exactly: completed-step counter, the
/// run seed (per-step sampler seeds derive from it), the model, and the
/// optimizer moments.
pub struct TrainState<F: Elem> {
    pub step: u64,
    pub seed: u64,
    pub model: StyleModel<F>,
    pub opt: Adam<F>,
}

impl<F: Elem> TrainState<F> {
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut ar: TensorArchive<F> = TensorArchive::new();
        self.model.fill_archive(&mut ar, self.step, config_hash);
        ar.meta.insert("kind".into(), Value::from("train_state"));
        ar.meta.insert("seed".into(), Value::from(self.seed));
        let (t, m, v) = self.opt.snapshot();
        ar.meta.insert("adam_t".into(), Value::from(t));
        for (name, tensor) in m {
            ar.insert(format!("adam.m.{name}"), tensor.clone());
        }
        for (name, tensor) in v {
            ar.insert(format!("adam.v.{name}"), tensor.clone());
        }
        ar.save(path)
    }

    /// Loads a state saved by [`save`](TrainState::save). The optimizer's
    /// learning rate is not stored; the caller re-applies the config's.
    pub fn load(path: &Path, lr: f64) -> Result<Self> {
        let mut ar: TensorArchive<F> = TensorArchive::load(path)?;
        let kind = ar.meta_str("kind")?;
        if kind != "train_state" {
            return Err(Error::bad_file(path, format!("expected a train_state archive, found kind {kind:?}")));
        }
        let step = ar.meta_u64("step")?;
        let seed = ar.meta_u64("seed")?;
        let adam_t = ar.meta_u64("adam_t")?;
        let model = StyleModel::from_archive(&mut ar).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::bad_file(path, msg),
            other => other,
        })?;

        let mut head_names = std::collections::BTreeSet::new();
        model.visit_heads(&mut |name, _| {
            head_names.insert(name);
        });
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let names: Vec<String> = ar.names().map(str::to_string).collect();
        for name in names {
            let (map, param) = if let Some(p) = name.strip_prefix("adam.m.") {
                (&mut m, p.to_string())
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (&mut v, p.to_string())
            } else {
                return Err(Error::bad_file(path, format!("unexpected tensor {name:?} in train state")));
            };
            if !head_names.contains(&param) {
                return Err(Error::bad_file(path, format!("optimizer moment for unknown parameter {param:?}")));
            }
            map.insert(param, ar.take(&name)?);
        }
        Ok(TrainState { step, seed, model, opt: Adam::restore(lr, adam_t, m, v) })
    }
}

/// Result of one optimizer step.
pub struct StepOutcome<F: Elem> {
    pub step: u64,
    /// Batch-mean loss columns.
    pub report: LossReport,
    pub wall_ms: f64,
    /// Batch-averaged gradients for every head parameter that received one.
    pub grads: BTreeMap<String, ArrayD<F>>,
}

/// Owns the datasets, the optional frozen teacher, and the mutable training
/// state; tests drive it step by step, `run_training` drives it to the end.
pub struct Trainer<F: Elem> {
    pub cfg: TrainConfig,
    video: VideoIndex,
    styles: StyleIndex,
    teacher: Option<StyleModel<F>>,
    pub state: TrainState<F>,
    depth: Box<dyn DepthPredictor<F>>,
    config_hash: String,
}

/// Bitwise equality of every named weight, encoder included.
pub fn weights_equal<F: Elem>(a: &StyleModel<F>, b: &StyleModel<F>) -> bool {
    let mut av = Vec::new();
    a.visit(&mut |name, t| av.push((name, t)));
    let mut bv = Vec::new();
    b.visit(&mut |name, t| bv.push((name, t)));
    av.len() == bv.len() && av.iter().zip(&bv).all(|((an, at), (bn, bt))| an == bn && at == bt)
}

fn encoders_match<F: Elem>(a: &StyleModel<F>, b: &StyleModel<F>) -> bool {
    let mut av = Vec::new();
    a.encoder.visit("encoder.", &mut |name, t| av.push((name, t)));
    let mut bv = Vec::new();
    b.encoder.visit("encoder.", &mut |name, t| bv.push((name, t)));
    av == bv
}

impl<F: Elem> Trainer<F> {
    pub fn new(cfg: TrainConfig, depth: Box<dyn DepthPredictor<F>>) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == TrainMode::Distill && cfg.encoder_checkpoint.is_some() {
            return Err(Error::InvalidParams(
                "distill mode inherits the teacher's encoder; encoder_checkpoint only applies to teacher mode".into(),
            ));
        }
        let video = scan_video_dataset(&cfg.video_root)?;
        let styles = scan_style_dataset(&cfg.styles_root)?;

        let teacher = match cfg.mode {
            TrainMode::Distill => {
                let path = cfg.teacher_checkpoint.as_ref().expect("validated");
                let teacher: StyleModel<F> = StyleModel::load(path)?;
                if teacher.role() != Role::Teacher {
                    return Err(Error::InvalidParams(format!(
                        "{} is a {} checkpoint; distillation needs a teacher",
                        path.display(),
                        teacher.role().as_str()
                    )));
                }
                Some(teacher)
            }
            TrainMode::Teacher => None,
        };
        let trainee_role = match cfg.mode {
            TrainMode::Distill => Role::Student,
            TrainMode::Teacher => Role::Teacher,
        };

        let state = match &cfg.resume_from {
            Some(path) => {
                let state = TrainState::<F>::load(path, cfg.lr)?;
                if state.model.role() != trainee_role {
                    return Err(Error::InvalidParams(format!(
                        "resume state holds a {} model but {} mode trains a {}",
                        state.model.role().as_str(),
                        cfg.mode.as_str(),
                        trainee_role.as_str()
                    )));
                }
                state
            }
            None => {
                let mut model = StyleModel::surrogate(trainee_role, cfg.seed);
                if let Some(teacher) = &teacher {
                    model.encoder = teacher.encoder.clone();
                } else if let Some(path) = &cfg.encoder_checkpoint {
                    load_encoder_weights(&mut model, path)?;
                }
                TrainState { step: 0, seed: cfg.seed, model, opt: Adam::new(cfg.lr) }
            }
        };

        // Every loss tap runs through one bound encoder, so a teacher whose
        // encoder drifted from the student's would silently change what the
        // distillation targets mean. Refuse instead.
        if let Some(teacher) = &teacher {
            if !encoders_match(teacher, &state.model) {
                return Err(Error::InvalidParams(
                    "teacher and student checkpoints carry different encoder weights".into(),
                ));
            }
        }

        let config_hash = config_hash(&cfg);
        Ok(Trainer { cfg, video, styles, teacher, state, depth, config_hash })
    }

    pub fn teacher(&self) -> Option<&StyleModel<F>> {
        self.teacher.as_ref()
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        self.state.save(path, &self.config_hash)
    }

    /// Runs one full optimizer step: sample, per-sample graphs, averaged
    /// gradients, moment update.
    pub fn step(&mut self) -> Result<StepOutcome<F>> {
        let t0 = Instant::now();
        let step = self.state.step + 1;
        let sampler_seed = step_seed(self.state.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(sampler_seed);
        let batch = sample_batch(&self.video, &self.styles, &mut rng, self.cfg.batch_size, self.cfg.crop)?;

        let mut grad_acc: BTreeMap<String, ArrayD<F>> = BTreeMap::new();
        let mut reports = Vec::with_capacity(batch.len());
        for (item, sample) in batch.iter().enumerate() {
            let (report, grads) = self.sample_grads(sample)?;
            if !report.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at step {step}, batch item {item} ({:?} {} pair {}, sampler seed {sampler_seed}): {report:?}",
                    sample.pair.pass, sample.pair.scene, sample.pair.index
                )));
            }
            reports.push(report);
            for (name, grad) in grads {
                match grad_acc.entry(name) {
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        e.get_mut().zip_mut_with(&grad, |a, &b| *a = *a + b);
                    }
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(grad);
                    }
                }
            }
        }
        let scale = F::one() / F::from_f64_(batch.len() as f64);
        for grad in grad_acc.values_mut() {
            grad.mapv_inplace(|v| v * scale);
        }

        let TrainState { model, opt, .. } = &mut self.state;
        opt.begin_step();
        model.visit_heads_mut(&mut |name, tensor| {
            if let Some(grad) = grad_acc.get(&name) {
                opt.apply(&name, tensor, grad);
            }
        });
        self.state.step = step;

        Ok(StepOutcome {
            step,
            report: LossReport::mean(&reports),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            grads: grad_acc,
        })
    }

    /// Builds the loss graph for one sample and returns its report plus the
    /// gradients of every trainable head parameter.
    fn sample_grads(&self, sample: &TrainSample<F>) -> Result<(LossReport, BTreeMap<String, ArrayD<F>>)> {
        let cfg = &self.cfg;
        let mut g: Graph<F> = Graph::new();
        let mut reg: Vec<(String, Tid)> = Vec::new();

        let student = self.state.model.bind(&mut g, true, &mut reg);
        let teacher_heads = self.teacher.as_ref().map(|t| {
            (
                t.transformer.bind(&mut g, false, "teacher.transformer.", &mut reg),
                t.decoder.bind(&mut g, false, "teacher.decoder.", &mut reg),
            )
        });

        let ct = g.constant(sample.pair.frame_curr.clone().into_dyn());
        let st = g.constant(sample.style.clone().into_dyn());
        let ctaps = student.encoder.encode(&mut g, ct);
        let staps = student.encoder.encode(&mut g, st);

        let fused_s = student.transformer.forward(&mut g, ctaps[3], ctaps[4], staps[3], staps[4]);
        let s_raw = student.decoder.decode(&mut g, fused_s);
        let otaps = student.encoder.encode(&mut g, s_raw);

        let content = content_loss(&mut g, [otaps[3], otaps[4]], [ctaps[3], ctaps[4]]);
        let style = style_loss(&mut g, &otaps, &staps);

        let (distill_feature, distill_output, distill_perceptual) = match &teacher_heads {
            Some((t_transformer, t_decoder)) => {
                let fused_t = t_transformer.forward(&mut g, ctaps[3], ctaps[4], staps[3], staps[4]);
                let t_raw = t_decoder.decode(&mut g, fused_t);
                let feature = mse(&mut g, fused_s, fused_t);
                let output = mse(&mut g, s_raw, t_raw);
                let perceptual = if cfg.disable_pq_distill {
                    g.scalar_const(F::zero())
                } else {
                    perceptual_distill_loss(&mut g, t_raw, s_raw, &cfg.flip)
                };
                (feature, output, perceptual)
            }
            None => {
                let z = g.scalar_const(F::zero());
                (z, z, z)
            }
        };

        let depth = if cfg.disable_depth {
            g.scalar_const(F::zero())
        } else {
            depth_loss(&mut g, self.depth.as_ref(), s_raw, &sample.pair.frame_curr)
        };

        let temporal = if cfg.disable_temporal {
            g.scalar_const(F::zero())
        } else {
            let pv = g.constant(sample.pair.frame_prev.clone().into_dyn());
            let ptaps = student.encoder.encode(&mut g, pv);
            let fused_p = student.transformer.forward(&mut g, ptaps[3], ptaps[4], staps[3], staps[4]);
            let p_raw = student.decoder.decode(&mut g, fused_p);
            temporal_loss(&mut g, s_raw, p_raw, &sample.pair.flow, &sample.pair.occlusion)
        };

        let terms = LossTerms { content, style, distill_feature, distill_output, distill_perceptual, depth, temporal };
        let total = total_loss(&mut g, &cfg.weights, &terms);
        let report = LossReport::from_graph(&g, &terms, total);

        let mut grads = g.backward(total);
        let mut out = BTreeMap::new();
        for (name, tid) in reg {
            if name.starts_with("transformer.") || name.starts_with("decoder.") {
                if let Some(grad) = grads.take(tid) {
                    out.insert(name, grad);
                }
            }
        }
        Ok((report, out))
    }
}

fn load_encoder_weights<F: Elem>(model: &mut StyleModel<F>, path: &Path) -> Result<()> {
    let mut ar: TensorArchive<F> = TensorArchive::load(path)?;
    let mut problems = Vec::new();
    model.encoder.visit_mut("encoder.", &mut |name, tensor| match ar.remove(&name) {
        Some(t) if t.shape() == tensor.shape() => *tensor = t,
        Some(t) => problems.push(format!("{name}: stored shape {:?}, expected {:?}", t.shape(), tensor.shape())),
        None => problems.push(format!("{name}: missing")),
    });
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::bad_file(path, format!("not a usable encoder archive: {}", problems.join("; "))))
    }
}

/// Paths produced by a finished run, plus the per-step loss columns.
pub struct TrainOutcome {
    pub reports: Vec<LossReport>,
    pub state_path: PathBuf,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
}

const LOG_HEADER: &str =
    "step\tcontent\tstyle\tdistill_feature\tdistill_output\tdistill_perceptual\tdistill_total\tdepth\ttemporal\ttotal\twall_ms";

fn log_line(r: &LossReport, step: u64, wall_ms: f64) -> String {
    format!(
        "{step}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{wall_ms:.1}",
        r.content,
        r.style,
        r.distill_feature,
        r.distill_output,
        r.distill_perceptual,
        r.distill_total,
        r.depth,
        r.temporal,
        r.total
    )
}

/// Runs the loop to `cfg.steps` with the stub depth predictor.
pub fn run_training<F: Elem>(cfg: TrainConfig) -> Result<TrainOutcome> {
    run_training_with::<F>(cfg, Box::new(GaussianLumaDepth::default()))
}

/// Runs the loop with a caller-supplied depth predictor. Writes one TSV log
/// line per step, periodic state snapshots, and a final state + inference
/// checkpoint pair.
pub fn run_training_with<F: Elem>(cfg: TrainConfig, depth: Box<dyn DepthPredictor<F>>) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg, depth)?;
    std::fs::create_dir_all(&trainer.cfg.out_dir)?;
    let log_path = trainer.cfg.out_dir.join("train_log.tsv");
    let fresh = !log_path.exists();
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    if fresh {
        writeln!(log, "{LOG_HEADER}")?;
    }

    let mut reports = Vec::new();
    while trainer.state.step < trainer.cfg.steps {
        let out = trainer.step()?;
        writeln!(log, "{}", log_line(&out.report, out.step, out.wall_ms))?;
        reports.push(out.report);
        if trainer.cfg.checkpoint_every > 0 && out.step % trainer.cfg.checkpoint_every == 0 {
            let path = trainer.cfg.out_dir.join(format!("state_step{:07}.pqta", out.step));
            trainer.save_state(&path)?;
        }
    }
    log.flush()?;

    let state_path = trainer.cfg.out_dir.join("state_final.pqta");
    trainer.save_state(&state_path)?;
    let model_path = trainer.cfg.out_dir.join(format!("{}_final.pqta", trainer.state.model.role().as_str()));
    trainer.state.model.save(&model_path, trainer.state.step, trainer.config_hash())?;

    Ok(TrainOutcome { reports, state_path, model_path, log_path })
}
