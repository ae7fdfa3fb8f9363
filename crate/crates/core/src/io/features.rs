//! Binary feature files: magic `FEAT`, format version, L, D as
//! little-endian u32, then L*D little-endian f32 frames row-major.
//! Total size is always `16 + 4*L*D` bytes.

use super::IoError;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_feature_file(path: &Path, feats: &Tensor<f32>) -> Result<(), IoError> {
    assert_eq!(feats.rank(), 2, "feature tensor must be [L x D]");
    let (l, d) = (feats.rows(), feats.cols());
    let mut buf = Vec::with_capacity(16 + 4 * l * d);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in feats.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<Tensor<f32>, IoError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 {
        return Err(IoError::Truncated {
            path: p,
            expected: 16,
            actual: bytes.len(),
        });
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic { path: p, offset: 0 });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(IoError::BadVersion { path: p, version });
    }
    let l = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if l == 0 || d == 0 {
        return Err(IoError::BadDims { path: p, l, d });
    }
    let expected = 16 + 4 * (l as usize) * (d as usize);
    if bytes.len() != expected {
        return Err(IoError::Truncated {
            path: p,
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::new(vec![l as usize, d as usize], data).expect("validated dims"))
}

/// Reads just the header, returning (L, D) without the payload.
pub fn read_feature_dims(path: &Path) -> Result<(usize, usize), IoError> {
    use std::io::Read;
    let p = path.display().to_string();
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 16];
    let n = f.read(&mut head)?;
    if n < 16 {
        return Err(IoError::Truncated {
            path: p,
            expected: 16,
            actual: n,
        });
    }
    if &head[0..4] != FEATURE_MAGIC {
        return Err(IoError::BadMagic { path: p, offset: 0 });
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(IoError::BadVersion { path: p, version });
    }
    let l = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
    Ok((l, d))
}
