//! Checkpoint files.
//!
//! Layout: the 8 magic bytes `RORCKPT1`, a little-endian `u64` header length, a
//! UTF-8 JSON header mapping each parameter name to `{shape, dtype, offset}`
//! (offset in bytes from the start of the payload), then the raw little-endian
//! payloads in header order. Free-form run metadata lives under the reserved
//! `__metadata__` key.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::params::ParamStore;
use super::scalar::{DType, Scalar};
use super::tensor::Tensor;
use super::NumericsError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RORCKPT1";
const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub metadata: Value,
}

fn err(msg: impl Into<String>) -> NumericsError {
    NumericsError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    params: &ParamStore<T>,
    metadata: &Value,
    dtype: DType,
) -> Result<(), NumericsError> {
    let mut header = Map::new();
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        if name == METADATA_KEY {
            return Err(err(format!("reserved parameter name {name}")));
        }
        let entry = Entry {
            shape: t.shape().to_vec(),
            dtype,
            offset,
        };
        header.insert(name.to_string(), serde_json::to_value(entry).map_err(|e| err(e.to_string()))?);
        offset += (t.len() * dtype.size()) as u64;
    }
    header.insert(METADATA_KEY.to_string(), metadata.clone());
    let header = serde_json::to_vec(&Value::Object(header)).map_err(|e| err(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in params.iter() {
        for &x in t.data() {
            match dtype {
                DType::F64 => w.write_all(&x.as_f64().to_le_bytes())?,
                DType::F32 => w.write_all(&(x.as_f64() as f32).to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<Checkpoint<T>, NumericsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(err("bad magic bytes"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Map<String, Value> =
        serde_json::from_slice(&header).map_err(|e| err(format!("header: {e}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;

    let mut params = ParamStore::new();
    let mut metadata = Value::Null;
    for (name, value) in header {
        if name == METADATA_KEY {
            metadata = value;
            continue;
        }
        let entry: Entry =
            serde_json::from_value(value).map_err(|e| err(format!("entry {name}: {e}")))?;
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * entry.dtype.size();
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| err(format!("payload for {name} out of range")))?;
        let data: Vec<T> = match entry.dtype {
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
        };
        params.insert(name, Tensor::new(&entry.shape, data)?);
    }
    Ok(Checkpoint { params, metadata })
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ParamStore<T>,
    metadata: &Value,
    dtype: DType,
) -> Result<(), NumericsError> {
    let file = File::create(path)?;
    write_checkpoint(BufWriter::new(file), params, metadata, dtype)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, NumericsError> {
    let file = File::open(path)?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("b", Tensor::from_f64(&[3], &[0.1, -2.5, 1e-300]).unwrap());
        p.insert("a.w", Tensor::from_f64(&[2, 2], &[1.0 / 3.0, f64::MIN_POSITIVE, -0.0, 7.0]).unwrap());
        p
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let params = sample();
        let meta = serde_json::json!({"variant": "full"});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params, &meta, DType::F64).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back: Checkpoint<f64> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.metadata, meta);
        for (name, t) in params.iter() {
            let b = back.params.get(name).unwrap();
            assert_eq!(t.shape(), b.shape());
            for (x, y) in t.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn f32_storage_rounds_to_single_precision() {
        let params = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &params, &Value::Null, DType::F32).unwrap();
        let back: Checkpoint<f64> = read_checkpoint(buf.as_slice()).unwrap();
        let a = back.params.get("a.w").unwrap().data()[0];
        assert_eq!(a, (1.0f64 / 3.0) as f32 as f64);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_checkpoint::<f64, _>(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample(), &Value::Null, DType::F64).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(read_checkpoint::<f64, _>(buf.as_slice()).is_err());
    }
}
