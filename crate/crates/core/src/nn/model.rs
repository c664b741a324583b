//! Full stylization model: frozen encoder plus trainable transformer and
//! decoder ("heads"), in teacher or compressed student widths.

use std::path::Path;

use ndarray::{Array3, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::decoder::{BoundDecoder, DecoderSpec, DecoderWeights};
use super::encoder::{BoundEncoder, Encoder};
use super::transformer::{BoundTransformer, TransformerWeights, STUDENT_WIDTH, TEACHER_WIDTH};
use crate::ad::{Graph, Tid};
use crate::archive::TensorArchive;
use crate::elem::Elem;
use crate::error::{Error, Result};

/// Which side of the distillation pair a model implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

impl Role {
    pub fn attention_width(self) -> usize {
        match self {
            Role::Teacher => TEACHER_WIDTH,
            Role::Student => STUDENT_WIDTH,
        }
    }

    pub fn decoder_spec(self) -> DecoderSpec {
        match self {
            Role::Teacher => DecoderSpec::teacher(),
            Role::Student => DecoderSpec::student(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "teacher" => Ok(Role::Teacher),
            "student" => Ok(Role::Student),
            other => Err(Error::InvalidParams(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Clone)]
pub struct StyleModel<F: Elem> {
    role: Role,
    pub encoder: Encoder<F>,
    pub transformer: TransformerWeights<F>,
    pub decoder: DecoderWeights<F>,
}

pub struct BoundModel {
    pub encoder: BoundEncoder,
    pub transformer: BoundTransformer,
    pub decoder: BoundDecoder,
}

impl<F: Elem> StyleModel<F> {
    /// Fully random model for tests and smoke training.
    pub fn surrogate(role: Role, seed: u64) -> Self {
        let encoder = Encoder::surrogate(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let transformer = TransformerWeights::init(&mut rng, role.attention_width());
        let decoder = DecoderWeights::init(&mut rng, role.decoder_spec());
        StyleModel { role, encoder, transformer, decoder }
    }

    /// Assembles a model from parts, checking that widths match the role.
    pub fn from_parts(
        role: Role,
        encoder: Encoder<F>,
        transformer: TransformerWeights<F>,
        decoder: DecoderWeights<F>,
    ) -> Result<Self> {
        if transformer.width() != role.attention_width() {
            return Err(Error::InvalidParams(format!(
                "{} transformer width {} != {}",
                role.as_str(),
                transformer.width(),
                role.attention_width()
            )));
        }
        if decoder.spec != role.decoder_spec() {
            return Err(Error::InvalidParams(format!("decoder layout does not match the {} preset", role.as_str())));
        }
        Ok(StyleModel { role, encoder, transformer, decoder })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Walks every parameter, heads and encoder alike.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        self.encoder.visit("encoder.", f);
        self.transformer.visit("transformer.", f);
        self.decoder.visit("decoder.", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.encoder.visit_mut("encoder.", f);
        self.transformer.visit_mut("transformer.", f);
        self.decoder.visit_mut("decoder.", f);
    }

    /// Walks only the trainable heads.
    pub fn visit_heads<'a>(&'a self, f: &mut dyn FnMut(String, &'a ArrayD<F>)) {
        self.transformer.visit("transformer.", f);
        self.decoder.visit("decoder.", f);
    }

    pub fn visit_heads_mut(&mut self, f: &mut dyn FnMut(String, &mut ArrayD<F>)) {
        self.transformer.visit_mut("transformer.", f);
        self.decoder.visit_mut("decoder.", f);
    }

    /// Binds the whole model into a graph. The encoder is always frozen;
    /// `trainable_heads` controls the transformer and decoder. Pushes every
    /// bound tensor into `reg` under its dotted name.
    pub fn bind(&self, g: &mut Graph<F>, trainable_heads: bool, reg: &mut Vec<(String, Tid)>) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(g, "encoder.", reg),
            transformer: self.transformer.bind(g, trainable_heads, "transformer.", reg),
            decoder: self.decoder.bind(g, trainable_heads, "decoder.", reg),
        }
    }

    /// Stylizes one content image with one style image; both must satisfy
    /// the encoder size contract. Output is clamped to [0,1].
    pub fn stylize(&self, content: &Array3<F>, style: &Array3<F>) -> Result<Array3<F>> {
        Encoder::check_input(content)?;
        Encoder::check_input(style)?;
        let mut g: Graph<F> = Graph::new();
        let mut reg = Vec::new();
        let bound = self.bind(&mut g, false, &mut reg);
        let ct = g.constant(content.clone().into_dyn());
        let st = g.constant(style.clone().into_dyn());
        let raw = bound.stylize_raw(&mut g, ct, st);
        let clamped = g.clamp(raw, F::zero(), F::one());
        Ok(g.value(clamped).to_owned().into_dimensionality().expect("rgb image"))
    }

    /// Doubled MAC estimate of one stylization at content size (h, w) with a
    /// style image of the same size.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        let (h4, w4) = (h / 8, w / 8);
        2 * self.encoder.flops(h, w) + self.transformer.flops(h4, w4) + self.decoder.spec.flops(h4, w4)
    }

    /// Writes a self-contained checkpoint: every weight, encoder included,
    /// plus role and provenance metadata. Anything loadable by [`load`] needs
    /// nothing but the file.
    ///
    /// [`load`]: StyleModel::load
    pub fn save(&self, path: &Path, step: u64, config_hash: &str) -> Result<()> {
        let mut ar: TensorArchive<F> = TensorArchive::new();
        self.fill_archive(&mut ar, step, config_hash);
        ar.save(path)
    }

    /// Inserts all weights and checkpoint metadata into `ar`.
    pub fn fill_archive(&self, ar: &mut TensorArchive<F>, step: u64, config_hash: &str) {
        ar.meta.insert("kind".into(), Value::from("model"));
        ar.meta.insert("role".into(), Value::from(self.role.as_str()));
        ar.meta.insert("step".into(), Value::from(step));
        ar.meta.insert("config_hash".into(), Value::from(config_hash));
        ar.meta.insert("attention_width".into(), Value::from(self.transformer.width() as u64));
        let layers: Vec<Value> = self
            .decoder
            .spec
            .layers
            .iter()
            .map(|l| Value::from(vec![l.in_ch as u64, l.out_ch as u64, l.upsample_after as u64]))
            .collect();
        ar.meta.insert("decoder_layers".into(), Value::Array(layers));
        self.visit(&mut |name, tensor| ar.insert(name, tensor.clone()));
    }

    /// Loads a model from a checkpoint or from a training state (whose extra
    /// optimizer tensors are ignored).
    pub fn load(path: &Path) -> Result<Self> {
        let mut ar: TensorArchive<F> = TensorArchive::load(path)?;
        Self::from_archive(&mut ar).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::bad_file(path, msg),
            other => other,
        })
    }

    /// Consumes the model tensors out of an archive, validating that they
    /// cover the role's layout exactly.
    pub fn from_archive(ar: &mut TensorArchive<F>) -> Result<Self> {
        let role = Role::parse(ar.meta_str("role")?)?;
        let mut model = StyleModel::surrogate(role, 0);
        let mut problems = Vec::new();
        model.visit_mut(&mut |name, tensor| match ar.remove(&name) {
            Some(t) if t.shape() == tensor.shape() => *tensor = t,
            Some(t) => problems.push(format!("{name}: stored shape {:?}, expected {:?}", t.shape(), tensor.shape())),
            None => problems.push(format!("{name}: missing")),
        });
        for name in ar.names() {
            if ["encoder.", "transformer.", "decoder."].iter().any(|p| name.starts_with(p)) {
                problems.push(format!("{name}: not part of the {} layout", role.as_str()));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidInput(format!(
                "checkpoint does not match the {} layout: {}",
                role.as_str(),
                problems.join("; ")
            )));
        }
        Ok(model)
    }
}

impl BoundModel {
    /// Raw (unclamped) stylized image node.
    pub fn stylize_raw<F: Elem>(&self, g: &mut Graph<F>, content: Tid, style: Tid) -> Tid {
        let ctaps = self.encoder.encode(g, content);
        let staps = self.encoder.encode(g, style);
        let fused = self.transformer.forward(g, ctaps[3], ctaps[4], staps[3], staps[4]);
        self.decoder.decode(g, fused)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn img(seed: u64, h: usize, w: usize) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn teacher_and_student_stylize_to_content_shape() {
        for role in [Role::Teacher, Role::Student] {
            let model: StyleModel<f32> = StyleModel::surrogate(role, 77);
            let out = model.stylize(&img(1, 32, 48), &img(2, 32, 32)).unwrap();
            assert_eq!(out.dim(), (3, 32, 48));
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn stylize_rejects_bad_sizes() {
        let model: StyleModel<f32> = StyleModel::surrogate(Role::Student, 1);
        assert!(model.stylize(&img(1, 24, 32), &img(2, 32, 32)).is_err());
        assert!(model.stylize(&img(1, 32, 32), &img(2, 32, 20)).is_err());
        assert!(model.stylize(&img(1, 16, 16), &img(2, 32, 32)).is_err());
    }

    #[test]
    fn from_parts_enforces_role_widths() {
        let m: StyleModel<f32> = StyleModel::surrogate(Role::Teacher, 3);
        let StyleModel { encoder, transformer, decoder, .. } = m;
        // teacher parts labeled as student must be rejected
        assert!(StyleModel::from_parts(Role::Student, encoder, transformer, decoder).is_err());
    }

    #[test]
    fn visit_heads_covers_exactly_the_trainable_tensors() {
        let model: StyleModel<f32> = StyleModel::surrogate(Role::Student, 5);
        let mut all = Vec::new();
        model.visit(&mut |n, _| all.push(n));
        let mut heads = Vec::new();
        model.visit_heads(&mut |n, _| heads.push(n));
        assert!(heads.iter().all(|n| n.starts_with("transformer.") || n.starts_with("decoder.")));
        assert!(all.len() > heads.len());
        let head_params: usize = model.transformer.param_count() + model.decoder.param_count();
        assert_eq!(head_params, 3_410_944 + 683_075);
        assert!(model.flops(64, 64) > 0);
    }

    #[test]
    fn stylize_is_deterministic() {
        let model: StyleModel<f32> = StyleModel::surrogate(Role::Student, 9);
        let a = model.stylize(&img(1, 32, 32), &img(2, 32, 32)).unwrap();
        let b = model.stylize(&img(1, 32, 32), &img(2, 32, 32)).unwrap();
        assert_eq!(a, b);
    }
}
