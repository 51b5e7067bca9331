//! Rank-3 little-endian `float32` NPY files.
//!
//! Writes version 1.0 files; reads versions 1 to 3 as long as the payload is
//! `<f4`, C-ordered and three-dimensional.

use std::fs;
use std::io::Write;
use std::path::Path;

use partdisc_core::FeatureMap;

use crate::error::{AppError, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

pub fn encode(map: &FeatureMap<f32>) -> Vec<u8> {
    let (h, w, c) = map.shape();
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({h}, {w}, {c}), }}");
    // magic + version + length field + header + newline, padded to 64 bytes
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + map.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureMap<f32>> {
    let bad = |m: &str| AppError::format(path, m);
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(bad("not an NPY file"));
    }
    let (header_len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(bad("truncated NPY header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(bad(&format!("unsupported NPY version {v}"))),
    };
    let end = start + header_len;
    if bytes.len() < end {
        return Err(bad("truncated NPY header"));
    }
    let header = std::str::from_utf8(&bytes[start..end]).map_err(|_| bad("NPY header is not text"))?;
    let descr = dict_value(header, "descr").ok_or_else(|| bad("NPY header lacks 'descr'"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    if descr != "<f4" {
        return Err(bad(&format!("dtype {descr} is not little-endian float32")));
    }
    let fortran = dict_value(header, "fortran_order").ok_or_else(|| bad("NPY header lacks 'fortran_order'"))?;
    if fortran != "False" {
        return Err(bad("Fortran-ordered arrays are not supported"));
    }
    let shape = dict_value(header, "shape").ok_or_else(|| bad("NPY header lacks 'shape'"))?;
    let dims: Vec<usize> = shape
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(&format!("bad shape entry {s:?}"))))
        .collect::<Result<_>>()?;
    let [h, w, c] = dims[..] else {
        return Err(bad(&format!("non-rank-3 tensor (shape {shape})")));
    };
    let payload = &bytes[end..];
    let n = h * w * c;
    if payload.len() != n * 4 {
        return Err(bad(&format!(
            "payload has {} bytes, shape needs {}",
            payload.len(),
            n * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(h, w, c, data).map_err(|e| bad(&e.to_string()))
}

/// Raw text of `key`'s value in a Python dict literal.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let quoted = [format!("'{key}'"), format!("\"{key}\"")];
    let at = quoted.iter().find_map(|q| header.find(q.as_str()).map(|i| i + q.len()))?;
    let rest = header[at..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find([',', '}']).unwrap_or(rest.len())
    };
    Some(rest[..end].trim())
}

pub fn load_feature_map(path: &Path) -> Result<FeatureMap<f32>> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

pub fn save_feature_map(path: &Path, map: &FeatureMap<f32>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&encode(map)).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(header: &str) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = FeatureMap::new(2, 2, 3, (0..12).map(|i| i as f32 * 0.1 - 0.3).collect()).unwrap();
        let bytes = encode(&m);
        assert_eq!((bytes.len() - 48) % 64, 0);
        let back = decode(&bytes, Path::new("x.npy")).unwrap();
        let bits = |m: &FeatureMap<f32>| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.shape(), (2, 2, 3));
    }

    #[test]
    fn zeros_file() {
        let m = FeatureMap::<f32>::zeros(14, 14, 512).unwrap();
        let back = decode(&encode(&m), Path::new("z.npy")).unwrap();
        assert_eq!(back.shape(), (14, 14, 512));
        assert!(back.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_rank_two() {
        let mut b = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }\n");
        b.extend_from_slice(&[0u8; 16]);
        let err = decode(&b, Path::new("r2.npy")).unwrap_err().to_string();
        assert!(err.contains("non-rank-3 tensor"), "{err}");
    }

    #[test]
    fn rejects_other_dtypes() {
        let mut b = header_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }\n");
        b.extend_from_slice(&[0u8; 8]);
        assert!(decode(&b, Path::new("f8.npy")).is_err());
        assert!(decode(b"garbage", Path::new("g.npy")).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let m = FeatureMap::<f32>::zeros(2, 2, 2).unwrap();
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 4], Path::new("t.npy")).is_err());
    }
}
