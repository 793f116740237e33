//! Binary tensor files: magic, little-endian header length, JSON header, raw data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::PolicyParams;
use super::tensor::Tensor;
use super::PolicyError;
use crate::Scalar;

pub const MAGIC: &[u8; 8] = b"IPP3DN1\0";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    /// Offset into the data section, in bytes.
    byte_offset: usize,
}

fn format_err(m: impl Into<String>) -> PolicyError {
    PolicyError::Format(m.into())
}

/// Serializes named tensors into the checkpoint byte layout.
pub fn encode<T: Scalar>(tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut offset = 0;
    let entries: Vec<Entry> = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: T::DTYPE.to_string(),
                byte_offset: offset,
            };
            offset += t.len() * T::BYTES;
            e
        })
        .collect();
    let header = serde_json::to_vec(&entries).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

/// Parses the checkpoint byte layout; every tensor must be stored as `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>, PolicyError> {
    let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| format_err("bad magic bytes"))?;
    if rest.len() < 4 {
        return Err(format_err("truncated header length"));
    }
    let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    let rest = &rest[4..];
    if rest.len() < hlen {
        return Err(format_err("truncated header"));
    }
    let entries: Vec<Entry> =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| format_err(format!("header: {e}")))?;
    let data = &rest[hlen..];
    let mut expected = 0;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if e.dtype != T::DTYPE {
            return Err(format_err(format!("tensor {} has dtype {}, expected {}", e.name, e.dtype, T::DTYPE)));
        }
        if !matches!(e.shape.len(), 1 | 2) {
            return Err(format_err(format!("tensor {} has unsupported rank {}", e.name, e.shape.len())));
        }
        let n: usize = e.shape.iter().product();
        if e.byte_offset != expected || e.byte_offset + n * T::BYTES > data.len() {
            return Err(format_err(format!("tensor {} lies outside the data section", e.name)));
        }
        let vals = data[e.byte_offset..e.byte_offset + n * T::BYTES].chunks_exact(T::BYTES).map(T::read_le).collect();
        expected += n * T::BYTES;
        out.push((e.name, Tensor::from_vec(&e.shape, vals)));
    }
    if expected != data.len() {
        return Err(format_err("trailing bytes after tensor data"));
    }
    Ok(out)
}

pub fn save_tensors<T: Scalar>(path: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<(), PolicyError> {
    fs::write(path, encode(tensors))?;
    Ok(())
}

pub fn load_tensors<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>, PolicyError> {
    decode(&fs::read(path)?)
}

pub fn save_params<T: Scalar>(params: &PolicyParams<T>, path: &Path) -> Result<(), PolicyError> {
    let named: Vec<(&str, &Tensor<T>)> =
        params.names().iter().map(String::as_str).zip(params.tensors()).collect();
    save_tensors(path, &named)
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<PolicyParams<T>, PolicyError> {
    PolicyParams::from_named(load_tensors(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnpolicy::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> PolicyParams<f64> {
        let cfg = NetConfig { hidden: 8, heads: 2, encoder_layers: 1, ff_width: 16 };
        PolicyParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&p, &path).unwrap();
        let q: PolicyParams<f64> = load_params(&path).unwrap();
        assert_eq!(p.names(), q.names());
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(q.config(), p.config());
    }

    #[test]
    fn layout_on_disk() {
        let p = params();
        let bytes = encode(&[("embed.w", p.get("embed.w").unwrap())]);
        assert_eq!(&bytes[..8], b"IPP3DN1\0");
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + hlen]).unwrap();
        assert_eq!(header[0]["name"], "embed.w");
        assert_eq!(header[0]["dtype"], "f64");
        assert_eq!(header[0]["byte_offset"], 0);
        assert_eq!(bytes.len(), 12 + hlen + 6 * 8 * 8);
        let first = f64::from_le_bytes(bytes[12 + hlen..20 + hlen].try_into().unwrap());
        assert_eq!(first, p.get("embed.w").unwrap().data()[0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = params();
        let named: Vec<(&str, &Tensor<f64>)> = p.names().iter().map(String::as_str).zip(p.tensors()).collect();
        let bytes = encode(&named);
        let err = |b: &[u8]| matches!(decode::<f64>(b), Err(PolicyError::Format(_)));
        assert!(err(&bytes[..bytes.len() - 3]));
        assert!(err(&bytes[..10]));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(err(&bad));
        assert!(err(&[bytes.clone(), vec![0]].concat()));
        // f64 data read as f32 is a dtype mismatch
        assert!(matches!(decode::<f32>(&bytes), Err(PolicyError::Format(_))));
        // shapes that do not form a network
        let wrong = encode(&named[1..]);
        let parsed = decode::<f64>(&wrong).unwrap();
        assert!(matches!(PolicyParams::from_named(parsed), Err(PolicyError::Format(_))));
    }
}
