//! Binary checkpoint codec.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "CICDCKP1"
//! version    u32      1
//! meta_len   u64
//! meta       meta_len bytes of UTF-8 JSON {"config": {...}, "vocab": [...]}
//! n_params   u32
//! n_params × {
//!     name_len u32, name (UTF-8),
//!     rank     u32, dims (rank × u64),
//!     values   product(dims) × f64
//! }
//! ```
//!
//! Parameters appear in layout order, but the decoder matches them by name.
//! Nothing may follow the last parameter.

use std::collections::HashMap;
use std::path::Path;

use cicd_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::Vocab;
use crate::error::CheckpointError;
use crate::model::{Init, Model, ParamSource};

pub const MAGIC: &[u8; 8] = b"CICDCKP1";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    config: ModelConfig,
    vocab: Vec<String>,
}

/// Serialises a model.
pub fn encode(model: &Model) -> Vec<u8> {
    let meta = serde_json::to_vec(&Meta {
        config: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
    })
    .expect("config serialises");
    let mut out = Vec::with_capacity(meta.len() + 8 * model.params.num_elements() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    /// A length that must fit in the remaining input at `unit` bytes each.
    fn len(&mut self, raw: u64, unit: usize, what: &'static str) -> Result<usize, CheckpointError> {
        match usize::try_from(raw).ok().and_then(|n| n.checked_mul(unit)) {
            Some(bytes) if bytes <= self.buf.len() => Ok(raw as usize),
            _ => Err(CheckpointError::Truncated(what)),
        }
    }
}

/// Tensors read from a checkpoint, handed out by name during layout.
struct Stored(HashMap<String, Tensor>);

impl ParamSource for Stored {
    type Error = CheckpointError;

    fn tensor(&mut self, name: &str, shape: &[usize], _init: Init) -> Result<Tensor, CheckpointError> {
        let t = self
            .0
            .remove(name)
            .ok_or_else(|| CheckpointError::MissingParam(name.to_string()))?;
        if t.shape() != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t)
    }
}

/// Parses a checkpoint, checking every parameter against the layout its
/// configuration implies.
pub fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { buf: bytes };
    if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let raw = r.u64("metadata length")?;
    let meta_len = r.len(raw, 1, "metadata")?;
    let meta: Meta = serde_json::from_slice(r.take(meta_len, "metadata")?).map_err(|e| CheckpointError::Meta(e.to_string()))?;
    let config = meta.config;
    config.validate().map_err(|e| CheckpointError::Meta(e.to_string()))?;
    let vocab = Vocab::from_tokens(meta.vocab, config.min_freq).map_err(CheckpointError::Meta)?;
    if vocab.len() != config.vocab_size {
        return Err(CheckpointError::Meta(format!(
            "vocab_size {} differs from the {} stored tokens",
            config.vocab_size,
            vocab.len()
        )));
    }

    let n_params = r.u32("parameter count")?;
    let mut stored = HashMap::new();
    for _ in 0..n_params {
        let raw = r.u32("parameter name length")? as u64;
        let name_len = r.len(raw, 1, "parameter name")?;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| CheckpointError::Meta("parameter name is not UTF-8".into()))?
            .to_string();
        let raw = r.u32("parameter rank")? as u64;
        let rank = r.len(raw, 8, "parameter shape")?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let raw = r.u64("parameter shape")?;
            shape.push(usize::try_from(raw).map_err(|_| CheckpointError::Truncated("parameter values"))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(CheckpointError::Truncated("parameter values"))?;
        let count = r.len(count as u64, 8, "parameter values")?;
        let values = r
            .take(count * 8, "parameter values")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if stored.contains_key(&name) {
            return Err(CheckpointError::Meta(format!("parameter `{name}` appears twice")));
        }
        stored.insert(name, Tensor::new(shape, values)?);
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::TrailingBytes(r.buf.len()));
    }

    let mut source = Stored(stored);
    let model = Model::build(config, vocab, &mut source)?;
    if let Some(extra) = source.0.keys().min() {
        return Err(CheckpointError::UnexpectedParam(extra.clone()));
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut c = ModelConfig::synthetic();
        c.d = 4;
        c.d_h = 2;
        let vocab = Vocab::from_tokens(["<pad>", "<unk>", "<bos>", "x"].map(String::from).to_vec(), 1).unwrap();
        Model::new(c, vocab).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.vocab, m.vocab);
        for ((_, na, a), (_, nb, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert_eq!(
                a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        assert_eq!(encode(&back), encode(&m));
    }

    #[test]
    fn header_errors() {
        let bytes = encode(&model());
        assert!(matches!(decode(b"nope"), Err(CheckpointError::BadMagic)));
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(decode(&v), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        let mut v = bytes.clone();
        v.push(0);
        assert!(matches!(decode(&v), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn every_prefix_fails_cleanly() {
        let bytes = encode(&model());
        for cut in 0..bytes.len() {
            assert!(decode(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let m = model();
        let mut other = m.clone();
        other.config.d = 5;
        let wrong = Model::new(other.config.clone(), m.vocab.clone()).unwrap();
        // metadata says d = 4 but tensors were laid out for d = 5
        let mut bytes = encode(&m);
        let tail_at = 8 + 4 + 8 + u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let wrong_bytes = encode(&wrong);
        let wrong_tail_at = 8 + 4 + 8 + u64::from_le_bytes(wrong_bytes[12..20].try_into().unwrap()) as usize;
        bytes.truncate(tail_at);
        bytes.extend_from_slice(&wrong_bytes[wrong_tail_at..]);
        match decode(&bytes) {
            Err(CheckpointError::ShapeMismatch { name, expected, found }) => {
                assert_eq!(name, "embedding");
                assert_eq!(expected, vec![4, 4]);
                assert_eq!(found, vec![4, 5]);
            }
            other => panic!("{other:?}"),
        }
    }
}
