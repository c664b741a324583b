//! Named-tensor container used for model checkpoints and training state.
//!
//! The format is deliberately dumb: a magic tag, a schema version, a JSON
//! metadata blob, then a flat list of named tensors in little-endian order.
//! Everything a checkpoint needs travels in one file, so inference and export
//! never depend on the training configuration that produced it.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PQTA"                      4-byte magic
//! u32  schema version         currently 1
//! u64  metadata byte length
//! ...  metadata               UTF-8 JSON object
//! u32  tensor count
//! per tensor:
//!   u16  name length, then the UTF-8 name
//!   u8   dtype (1 = f32, 2 = f64)
//!   u8   rank, then rank × u64 dimensions
//!   ...  row-major element data
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::ArrayD;
use serde_json::{Map, Value};

use crate::elem::Elem;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PQTA";
pub const SCHEMA_VERSION: u32 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

fn dtype_code<F: Elem>() -> u8 {
    match F::BYTES {
        4 => DTYPE_F32,
        8 => DTYPE_F64,
        other => unreachable!("unsupported element width {other}"),
    }
}

/// An ordered map of named tensors plus a free-form JSON metadata object.
pub struct TensorArchive<F: Elem> {
    pub meta: Map<String, Value>,
    tensors: BTreeMap<String, ArrayD<F>>,
}

impl<F: Elem> TensorArchive<F> {
    pub fn new() -> Self {
        TensorArchive { meta: Map::new(), tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<F>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ArrayD<F>> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// String metadata field, or an error naming what's missing.
    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidInput(format!("archive metadata lacks string field {key:?}")))
    }

    /// Unsigned metadata field, or an error naming what's missing.
    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidInput(format!("archive metadata lacks integer field {key:?}")))
    }

    /// Removes and returns a tensor, or errors with the archive's path-free
    /// context so callers can decorate it.
    pub fn take(&mut self, name: &str) -> Result<ArrayD<F>> {
        self.remove(name).ok_or_else(|| Error::InvalidInput(format!("archive has no tensor named {name:?}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&Value::Object(self.meta.clone()))?;
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let name_bytes = name.as_bytes();
            assert!(name_bytes.len() <= u16::MAX as usize, "tensor name too long");
            buf.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.push(dtype_code::<F>());
            buf.push(tensor.ndim() as u8);
            for &d in tensor.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in tensor.as_standard_layout().iter() {
                v.to_le(&mut buf);
            }
        }
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path).map_err(|e| Error::bad_file(path, e.to_string()))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data).map_err(|e| Error::bad_file(path, e.to_string()))?;
        Self::from_bytes(&data).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::bad_file(path, msg),
            other => other,
        })
    }

    fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut cur = Cursor { data, pos: 0 };
        if cur.bytes(4)? != MAGIC {
            return Err(Error::InvalidInput("not a tensor archive (bad magic)".into()));
        }
        let version = u32::from_le_bytes(cur.bytes(4)?.try_into().unwrap());
        if version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, got: version });
        }
        let meta_len = u64::from_le_bytes(cur.bytes(8)?.try_into().unwrap()) as usize;
        let meta: Value = serde_json::from_slice(cur.bytes(meta_len)?)
            .map_err(|e| Error::InvalidInput(format!("corrupt metadata: {e}")))?;
        let meta = match meta {
            Value::Object(map) => map,
            _ => return Err(Error::InvalidInput("metadata must be a JSON object".into())),
        };
        let count = u32::from_le_bytes(cur.bytes(4)?.try_into().unwrap());
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(cur.bytes(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.bytes(name_len)?)
                .map_err(|_| Error::InvalidInput("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = cur.bytes(1)?[0];
            if dtype != dtype_code::<F>() {
                return Err(Error::InvalidInput(format!(
                    "tensor {name:?} stored with dtype code {dtype}, expected {}",
                    dtype_code::<F>()
                )));
            }
            let rank = cur.bytes(1)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(cur.bytes(8)?.try_into().unwrap()) as usize);
            }
            let n: usize = dims.iter().product();
            let raw = cur.bytes(n * F::BYTES)?;
            let values: Vec<F> = raw.chunks_exact(F::BYTES).map(F::from_le).collect();
            let tensor = ArrayD::from_shape_vec(dims, values)
                .map_err(|e| Error::InvalidInput(format!("tensor {name:?}: {e}")))?;
            if tensors.insert(name.clone(), tensor).is_some() {
                return Err(Error::InvalidInput(format!("duplicate tensor name {name:?}")));
            }
        }
        if cur.pos != data.len() {
            return Err(Error::InvalidInput(format!("{} trailing bytes after last tensor", data.len() - cur.pos)));
        }
        Ok(TensorArchive { meta, tensors })
    }
}

impl<F: Elem> Default for TensorArchive<F> {
    fn default() -> Self {
        Self::new()
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::InvalidInput(format!(
                "truncated archive: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.data.len()
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

/// Write-temp-then-rename so a crash never leaves a half-written file under
/// the final name.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::bad_file(&tmp, e.to_string()))?;
        f.write_all(data).map_err(|e| Error::bad_file(&tmp, e.to_string()))?;
        f.sync_all().map_err(|e| Error::bad_file(&tmp, e.to_string()))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::bad_file(path, e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn sample_archive() -> TensorArchive<f32> {
        let mut a = TensorArchive::new();
        a.meta.insert("kind".into(), Value::String("test".into()));
        a.meta.insert("step".into(), Value::from(7u64));
        a.insert("w.alpha", ArrayD::from_shape_fn(IxDyn(&[2, 3]), |ix| (ix[0] * 3 + ix[1]) as f32 * 0.25));
        a.insert("w.beta", ArrayD::from_shape_fn(IxDyn(&[4]), |ix| -(ix[0] as f32)));
        a.insert("scalar", ArrayD::from_elem(IxDyn(&[]), 3.5f32));
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pqta");
        let a = sample_archive();
        a.save(&path).unwrap();
        let b: TensorArchive<f32> = TensorArchive::load(&path).unwrap();
        assert_eq!(b.meta_str("kind").unwrap(), "test");
        assert_eq!(b.meta_u64("step").unwrap(), 7);
        assert_eq!(b.len(), 3);
        for name in a.names() {
            assert_eq!(a.get(name).unwrap(), b.get(name).unwrap(), "{name}");
        }
    }

    #[test]
    fn f64_round_trip_and_dtype_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pqta");
        let mut a: TensorArchive<f64> = TensorArchive::new();
        a.insert("x", ArrayD::from_elem(IxDyn(&[2, 2]), std::f64::consts::PI));
        a.save(&path).unwrap();
        let b: TensorArchive<f64> = TensorArchive::load(&path).unwrap();
        assert_eq!(b.get("x").unwrap()[[0, 0]], std::f64::consts::PI);
        // loading as the wrong element type must fail, not reinterpret
        assert!(TensorArchive::<f32>::load(&path).is_err());
    }

    #[test]
    fn non_standard_layout_tensors_serialize_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pqta");
        let base = ndarray::Array2::from_shape_fn((3, 4), |(i, j)| (i * 10 + j) as f32);
        let mut a: TensorArchive<f32> = TensorArchive::new();
        a.insert("t", base.t().to_owned().into_dyn());
        a.save(&path).unwrap();
        let b: TensorArchive<f32> = TensorArchive::load(&path).unwrap();
        assert_eq!(b.get("t").unwrap(), a.get("t").unwrap());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pqta");
        sample_archive().save(&path).unwrap();
        let good = fs::read(&path).unwrap();

        // bad magic
        let mut bad = good.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(TensorArchive::<f32>::load(&path).is_err());

        // truncation anywhere in the tensor section
        let cut = good.len() - 5;
        fs::write(&path, &good[..cut]).unwrap();
        assert!(TensorArchive::<f32>::load(&path).is_err());

        // trailing garbage
        let mut long = good.clone();
        long.extend_from_slice(&[0u8; 3]);
        fs::write(&path, &long).unwrap();
        assert!(TensorArchive::<f32>::load(&path).is_err());
    }

    #[test]
    fn future_schema_version_is_rejected_with_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pqta");
        sample_archive().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match TensorArchive::<f32>::load(&path) {
            Err(Error::SchemaVersion { expected, got }) => {
                assert_eq!((expected, got), (SCHEMA_VERSION, 99));
            }
            Err(other) => panic!("expected schema-version error, got {other:?}"),
            Ok(_) => panic!("expected schema-version error, loaded fine"),
        }
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("a.pqta");
        sample_archive().save(&path).unwrap();
        assert!(path.exists());
        let entries: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }
}
