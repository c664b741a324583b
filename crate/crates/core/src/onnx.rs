//! ONNX export of a stylization checkpoint.
//!
//! The exported graph is the whole image-pair → image function: both encoder
//! passes, the attention transformer, the decoder, and the final clamp, with
//! every weight baked in as an initializer. Shapes are static — engines that
//! consume these files (and the parity test here) want fully-typed graphs, so
//! the export size is fixed at call time rather than left symbolic.
//!
//! The wire format is written by hand. ONNX is protobuf, but this module
//! needs exactly one schema in one direction, which is a few dozen lines of
//! varint plumbing — not worth a protobuf compiler and its build-time
//! codegen. Field numbers below come from the onnx.proto3 that every ONNX
//! release ships; the opset is pinned to 13.
//!
//! Operator choices mirror the in-process graph exactly:
//! - 3×3 convolutions become `Pad(mode=reflect)` + `Conv` with zero pads;
//! - 2× nearest upsampling becomes `Resize` with scales [1,1,2,2], nearest
//!   mode `floor`, coordinate transform `asymmetric` (output pixel (y, x)
//!   reads input (y/2, x/2), same as the training-side op);
//! - mean–variance normalization is decomposed into ReduceMean/Sub/Mul/
//!   Add/Sqrt/Div, matching the training-side formula (x − μ) / √(σ² + ε);
//! - attention is Reshape/Transpose/MatMul/Softmax on 2-D matrices.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nn::encoder::{MIN_SIDE, STRIDE};
use crate::nn::transformer::SanetWeights;
use crate::nn::{Conv2dWeights, StyleModel};

/// Opset every exported graph declares.
pub const OPSET: i64 = 13;

const IR_VERSION: i64 = 7;
const MVN_EPS: f32 = 1e-5;

/// Data type codes from TensorProto.DataType.
const DT_FLOAT: i64 = 1;
const DT_INT64: i64 = 7;

// ---------------------------------------------------------------------------
// protobuf wire encoding

fn varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

fn tag(buf: &mut Vec<u8>, field: u32, wire: u8) {
    varint(buf, ((field as u64) << 3) | wire as u64);
}

/// int64 fields use the two's-complement varint encoding, so negative values
/// (Softmax's axis=-1) take the full ten bytes.
fn field_i64(buf: &mut Vec<u8>, field: u32, v: i64) {
    tag(buf, field, 0);
    varint(buf, v as u64);
}

fn field_bytes(buf: &mut Vec<u8>, field: u32, data: &[u8]) {
    tag(buf, field, 2);
    varint(buf, data.len() as u64);
    buf.extend_from_slice(data);
}

fn field_str(buf: &mut Vec<u8>, field: u32, s: &str) {
    field_bytes(buf, field, s.as_bytes());
}

fn packed_i64s(buf: &mut Vec<u8>, field: u32, values: &[i64]) {
    let mut payload = Vec::new();
    for &v in values {
        varint(&mut payload, v as u64);
    }
    field_bytes(buf, field, &payload);
}

// ---------------------------------------------------------------------------
// the handful of ONNX messages we emit

/// AttributeProto. The `type` field (20) is mandatory since IR v4.
mod attr {
    use super::*;

    const TYPE_INT: u64 = 2;
    const TYPE_STRING: u64 = 3;
    const TYPE_INTS: u64 = 7;

    fn typed(name: &str, ty: u64, payload: impl FnOnce(&mut Vec<u8>)) -> Vec<u8> {
        let mut buf = Vec::new();
        field_str(&mut buf, 1, name);
        payload(&mut buf);
        tag(&mut buf, 20, 0);
        varint(&mut buf, ty);
        buf
    }

    pub fn i(name: &str, v: i64) -> Vec<u8> {
        typed(name, TYPE_INT, |b| field_i64(b, 3, v))
    }

    pub fn s(name: &str, v: &str) -> Vec<u8> {
        typed(name, TYPE_STRING, |b| field_bytes(b, 4, v.as_bytes()))
    }

    pub fn ints(name: &str, v: &[i64]) -> Vec<u8> {
        typed(name, TYPE_INTS, |b| packed_i64s(b, 8, v))
    }
}

struct Node {
    op: &'static str,
    name: String,
    inputs: Vec<String>,
    outputs: Vec<String>,
    attrs: Vec<Vec<u8>>,
}

impl Node {
    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for input in &self.inputs {
            field_str(&mut buf, 1, input);
        }
        for output in &self.outputs {
            field_str(&mut buf, 2, output);
        }
        field_str(&mut buf, 3, &self.name);
        field_str(&mut buf, 4, self.op);
        for a in &self.attrs {
            field_bytes(&mut buf, 5, a);
        }
        buf
    }
}

enum InitData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

struct Init {
    name: String,
    dims: Vec<i64>,
    data: InitData,
}

impl Init {
    /// TensorProto with the payload in raw_data (little-endian), the compact
    /// form every runtime reads first.
    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        packed_i64s(&mut buf, 1, &self.dims);
        let (dtype, raw) = match &self.data {
            InitData::F32(v) => {
                let mut raw = Vec::with_capacity(v.len() * 4);
                for x in v {
                    raw.extend_from_slice(&x.to_le_bytes());
                }
                (DT_FLOAT, raw)
            }
            InitData::I64(v) => {
                let mut raw = Vec::with_capacity(v.len() * 8);
                for x in v {
                    raw.extend_from_slice(&x.to_le_bytes());
                }
                (DT_INT64, raw)
            }
        };
        field_i64(&mut buf, 2, dtype);
        field_str(&mut buf, 8, &self.name);
        field_bytes(&mut buf, 9, &raw);
        buf
    }
}

/// ValueInfoProto for a float tensor with fully static dims.
fn value_info(name: &str, dims: &[i64]) -> Vec<u8> {
    let mut shape = Vec::new();
    for &d in dims {
        let mut dim = Vec::new();
        field_i64(&mut dim, 1, d);
        field_bytes(&mut shape, 1, &dim);
    }
    let mut tensor_type = Vec::new();
    field_i64(&mut tensor_type, 1, DT_FLOAT);
    field_bytes(&mut tensor_type, 2, &shape);
    let mut ty = Vec::new();
    field_bytes(&mut ty, 1, &tensor_type);
    let mut buf = Vec::new();
    field_str(&mut buf, 1, name);
    field_bytes(&mut buf, 2, &ty);
    buf
}

// ---------------------------------------------------------------------------
// graph builder

struct GraphBuilder {
    nodes: Vec<Node>,
    inits: Vec<Init>,
    counter: usize,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder { nodes: Vec::new(), inits: Vec::new(), counter: 0 }
    }

    fn fresh(&mut self, hint: &str) -> String {
        self.counter += 1;
        format!("{hint}_{}", self.counter)
    }

    /// Appends a single-output node and returns the output name.
    fn emit(&mut self, op: &'static str, inputs: &[&str], attrs: Vec<Vec<u8>>) -> String {
        let name = self.fresh(op);
        let out = format!("{name}_out");
        self.nodes.push(Node {
            op,
            name,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: vec![out.clone()],
            attrs,
        });
        out
    }

    /// Like [`emit`](Self::emit) but with a caller-chosen output name, for
    /// the graph output.
    fn emit_named(&mut self, op: &'static str, inputs: &[&str], attrs: Vec<Vec<u8>>, out: &str) {
        let name = self.fresh(op);
        self.nodes.push(Node {
            op,
            name,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: vec![out.to_string()],
            attrs,
        });
    }

    fn init_f32(&mut self, name: String, dims: Vec<i64>, data: Vec<f32>) -> String {
        self.inits.push(Init { name: name.clone(), dims, data: InitData::F32(data) });
        name
    }

    fn init_i64(&mut self, name: String, dims: Vec<i64>, data: Vec<i64>) -> String {
        self.inits.push(Init { name: name.clone(), dims, data: InitData::I64(data) });
        name
    }

    fn scalar_f32(&mut self, hint: &str, v: f32) -> String {
        let name = self.fresh(hint);
        self.init_f32(name, vec![], vec![v])
    }

    fn shape_i64(&mut self, hint: &str, dims: &[i64]) -> String {
        let name = self.fresh(hint);
        self.init_i64(name, vec![dims.len() as i64], dims.to_vec())
    }

    /// Registers one convolution's weight and bias under dotted names.
    fn conv_weights<F: Elem>(&mut self, name: &str, conv: &Conv2dWeights<F>) -> Result<(String, String)> {
        let k = conv.kernel();
        if k != 1 && k != 3 {
            return Err(Error::Export(format!("{name}: no ONNX lowering for {k}x{k} kernels")));
        }
        let wdims = conv.weight.shape().iter().map(|&d| d as i64).collect();
        let wdata = conv.weight.iter().map(|v| v.to_f64_() as f32).collect();
        let w = self.init_f32(format!("{name}.weight"), wdims, wdata);
        let bdata = conv.bias.iter().map(|v| v.to_f64_() as f32).collect();
        let b = self.init_f32(format!("{name}.bias"), vec![conv.out_channels() as i64], bdata);
        Ok((w, b))
    }

    /// Reflect-padded 3×3 convolution; `pads` is the shared pad vector.
    fn conv3x3(&mut self, x: &str, w: &str, b: &str, pads: &str) -> String {
        let padded = self.emit("Pad", &[x, pads], vec![attr::s("mode", "reflect")]);
        self.emit("Conv", &[&padded, w, b], vec![attr::ints("kernel_shape", &[3, 3])])
    }

    fn conv1x1(&mut self, x: &str, w: &str, b: &str) -> String {
        self.emit("Conv", &[x, w, b], vec![attr::ints("kernel_shape", &[1, 1])])
    }

    fn upsample2x(&mut self, x: &str, scales: &str) -> String {
        self.emit(
            "Resize",
            &[x, "", scales],
            vec![
                attr::s("mode", "nearest"),
                attr::s("nearest_mode", "floor"),
                attr::s("coordinate_transformation_mode", "asymmetric"),
            ],
        )
    }

    /// (x − μ) / √(σ² + ε) over the spatial axes, channel by channel.
    fn mvn(&mut self, x: &str, eps: &str) -> String {
        let axes = attr::ints("axes", &[2, 3]);
        let keep = attr::i("keepdims", 1);
        let mu = self.emit("ReduceMean", &[x], vec![axes.clone(), keep.clone()]);
        let centered = self.emit("Sub", &[x, &mu], vec![]);
        let sq = self.emit("Mul", &[&centered, &centered], vec![]);
        let var = self.emit("ReduceMean", &[&sq], vec![axes, keep]);
        let var_eps = self.emit("Add", &[&var, eps], vec![]);
        let sd = self.emit("Sqrt", &[&var_eps], vec![]);
        self.emit("Div", &[&centered, &sd], vec![])
    }

    /// One attention block plus its residual. `(h, w)` is the content tap
    /// size, `(hs, ws)` the style tap size.
    #[allow(clippy::too_many_arguments)]
    fn sanet<F: Elem>(
        &mut self,
        block: &SanetWeights<F>,
        name: &str,
        content: &str,
        style: &str,
        eps: &str,
        (h, w): (i64, i64),
        (hs, ws): (i64, i64),
    ) -> Result<String> {
        let d = block.width() as i64;
        let (n, m) = (h * w, hs * ws);
        let (fw, fb) = self.conv_weights(&format!("{name}.f"), &block.f)?;
        let (gw, gb) = self.conv_weights(&format!("{name}.g"), &block.g)?;
        let (hw, hb) = self.conv_weights(&format!("{name}.h"), &block.h)?;
        let (ow, ob) = self.conv_weights(&format!("{name}.out"), &block.out)?;

        let cn = self.mvn(content, eps);
        let sn = self.mvn(style, eps);
        let q = self.conv1x1(&cn, &fw, &fb);
        let k = self.conv1x1(&sn, &gw, &gb);
        let v = self.conv1x1(style, &hw, &hb);

        let flip = vec![attr::ints("perm", &[1, 0])];
        let q_shape = self.shape_i64("shape", &[d, n]);
        let kv_shape = self.shape_i64("shape", &[d, m]);
        let q2 = self.emit("Reshape", &[&q, &q_shape], vec![]);
        let qt = self.emit("Transpose", &[&q2], flip.clone());
        let k2 = self.emit("Reshape", &[&k, &kv_shape], vec![]);
        let logits = self.emit("MatMul", &[&qt, &k2], vec![]);
        let att = self.emit("Softmax", &[&logits], vec![attr::i("axis", -1)]);

        let v2 = self.emit("Reshape", &[&v, &kv_shape], vec![]);
        let vt = self.emit("Transpose", &[&v2], flip.clone());
        let mixed = self.emit("MatMul", &[&att, &vt], vec![]);
        let mixed_t = self.emit("Transpose", &[&mixed], flip);
        let map_shape = self.shape_i64("shape", &[1, d, h, w]);
        let mixed_map = self.emit("Reshape", &[&mixed_t, &map_shape], vec![]);
        let out = self.conv1x1(&mixed_map, &ow, &ob);
        Ok(self.emit("Add", &[content, &out], vec![]))
    }
}

// ---------------------------------------------------------------------------
// whole-model export

/// Tensor contract of one exported input or output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub colorspace: String,
    pub range: [f64; 2],
}

impl TensorSpec {
    fn image(name: &str, h: usize, w: usize) -> Self {
        TensorSpec {
            name: name.to_string(),
            shape: vec![1, 3, h, w],
            dtype: "float32".into(),
            colorspace: "sRGB".into(),
            range: [0.0, 1.0],
        }
    }

    fn contract(&self) -> String {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        format!(
            "{} {}, {}-encoded, values in [{}, {}]",
            dims.join("x"),
            self.dtype,
            self.colorspace,
            self.range[0],
            self.range[1]
        )
    }
}

/// Everything a consumer needs to run the exported file; also written as a
/// JSON sidecar next to the .onnx.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportMeta {
    pub format: String,
    pub opset: i64,
    pub role: String,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
}

/// Paths written by one export.
#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub onnx_path: PathBuf,
    pub meta_path: PathBuf,
    pub meta: ExportMeta,
}

/// Loads a checkpoint and exports it at the given output size.
pub fn export_checkpoint(checkpoint: &Path, out: &Path, height: usize, width: usize) -> Result<ExportBundle> {
    let model: StyleModel<f32> = StyleModel::load(checkpoint)?;
    export_model(&model, out, height, width)
}

/// Serializes `model` as a self-contained ONNX graph with static
/// `height`×`width` inputs, plus a JSON sidecar describing the contract.
pub fn export_model<F: Elem>(model: &StyleModel<F>, out: &Path, height: usize, width: usize) -> Result<ExportBundle> {
    for (axis, v) in [("height", height), ("width", width)] {
        if v < MIN_SIDE || v % STRIDE != 0 {
            return Err(Error::InvalidParams(format!(
                "export {axis} must be a multiple of {STRIDE} and at least {MIN_SIDE}, got {v}"
            )));
        }
    }
    let meta = ExportMeta {
        format: "onnx".into(),
        opset: OPSET,
        role: model.role().as_str().into(),
        inputs: vec![TensorSpec::image("content", height, width), TensorSpec::image("style", height, width)],
        outputs: vec![TensorSpec::image("stylized", height, width)],
    };
    let bytes = encode_model(model, &meta, height, width)?;
    write_atomic(out, &bytes)?;
    let meta_path = sidecar_path(out);
    write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(ExportBundle { onnx_path: out.to_path_buf(), meta_path, meta })
}

/// `model.onnx` → `model.meta.json`, next to the model file.
pub fn sidecar_path(onnx: &Path) -> PathBuf {
    onnx.with_extension("meta.json")
}

fn encode_model<F: Elem>(model: &StyleModel<F>, meta: &ExportMeta, height: usize, width: usize) -> Result<Vec<u8>> {
    let mut b = GraphBuilder::new();
    let pads = b.shape_i64("reflect1", &[0, 0, 1, 1, 0, 0, 1, 1]);
    let scales = b.init_f32("upsample2x_scales".into(), vec![4], vec![1.0, 1.0, 2.0, 2.0]);
    let eps = b.scalar_f32("mvn_eps", MVN_EPS);

    // both encoder passes share one set of weight initializers
    let mut enc_weights = Vec::new();
    for (name, conv, _, _) in model.encoder.layers() {
        enc_weights.push(b.conv_weights(&format!("encoder.{name}"), conv)?);
    }
    let encode_trunk = |b: &mut GraphBuilder, image: &str| {
        let mut taps = Vec::new();
        let mut x = image.to_string();
        for ((_, _, tapped, pooled), (w, bias)) in model.encoder.layers().zip(enc_weights.iter()) {
            let conv = b.conv3x3(&x, w, bias, &pads);
            x = b.emit("Relu", &[&conv], vec![]);
            if tapped {
                taps.push(x.clone());
            }
            if pooled {
                x = b.emit(
                    "MaxPool",
                    &[&x],
                    vec![attr::ints("kernel_shape", &[2, 2]), attr::ints("strides", &[2, 2])],
                );
            }
        }
        taps
    };
    let ctaps = encode_trunk(&mut b, "content");
    let staps = encode_trunk(&mut b, "style");

    let (h4, w4) = ((height / 8) as i64, (width / 8) as i64);
    let (h5, w5) = (h4 / 2, w4 / 2);
    let cs4 = b.sanet(&model.transformer.sanet4, "transformer.sanet4", &ctaps[3], &staps[3], &eps, (h4, w4), (h4, w4))?;
    let cs5 = b.sanet(&model.transformer.sanet5, "transformer.sanet5", &ctaps[4], &staps[4], &eps, (h5, w5), (h5, w5))?;
    let up5 = b.upsample2x(&cs5, &scales);
    let merged = b.emit("Add", &[&cs4, &up5], vec![]);
    let (cw, cb) = b.conv_weights("transformer.combine", &model.transformer.combine)?;
    let mut x = b.conv3x3(&merged, &cw, &cb, &pads);

    let last = model.decoder.convs.len() - 1;
    for (i, conv) in model.decoder.convs.iter().enumerate() {
        let (w, bias) = b.conv_weights(&format!("decoder.conv{i}"), conv)?;
        x = b.conv3x3(&x, &w, &bias, &pads);
        if i != last {
            x = b.emit("Relu", &[&x], vec![]);
        }
        if model.decoder.spec.layers[i].upsample_after {
            x = b.upsample2x(&x, &scales);
        }
    }
    let clip_min = b.scalar_f32("clip_min", 0.0);
    let clip_max = b.scalar_f32("clip_max", 1.0);
    b.emit_named("Clip", &[&x, &clip_min, &clip_max], vec![], "stylized");

    let hw = [1, 3, height as i64, width as i64];
    let mut graph = Vec::new();
    for node in &b.nodes {
        field_bytes(&mut graph, 1, &node.encode());
    }
    field_str(&mut graph, 2, "stylize");
    for init in &b.inits {
        field_bytes(&mut graph, 5, &init.encode());
    }
    field_bytes(&mut graph, 11, &value_info("content", &hw));
    field_bytes(&mut graph, 11, &value_info("style", &hw));
    field_bytes(&mut graph, 12, &value_info("stylized", &hw));

    let mut opset = Vec::new();
    field_i64(&mut opset, 2, OPSET);

    let mut buf = Vec::new();
    field_i64(&mut buf, 1, IR_VERSION);
    field_str(&mut buf, 2, "pqdast");
    field_str(&mut buf, 6, "arbitrary style transfer: stylized = decode(attend(encode(content), encode(style)))");
    field_bytes(&mut buf, 7, &graph);
    field_bytes(&mut buf, 8, &opset);
    for spec in meta.inputs.iter().chain(meta.outputs.iter()) {
        let mut entry = Vec::new();
        field_str(&mut entry, 1, &format!("tensor.{}", spec.name));
        field_str(&mut entry, 2, &spec.contract());
        field_bytes(&mut buf, 14, &entry);
    }
    Ok(buf)
}
