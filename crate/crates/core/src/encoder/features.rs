//! `MVFT` feature dumps: `"MVFT" | version | count | record*`, where a
//! record is `id_len | id | T | D | f32 payload` (little-endian).

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{put_f32s, put_u32, Cursor, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"MVFT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    /// `F_V` as `[T, D]`.
    pub features: Tensor,
}

pub fn features_to_bytes(records: &[FeatureRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION);
    put_u32(&mut out, records.len() as u32);
    for r in records {
        put_u32(&mut out, r.id.len() as u32);
        out.extend_from_slice(r.id.as_bytes());
        put_u32(&mut out, r.features.shape()[0] as u32);
        put_u32(&mut out, r.features.shape()[1] as u32);
        put_f32s(&mut out, r.features.data());
    }
    out
}

pub fn features_from_bytes(bytes: &[u8]) -> Result<Vec<FeatureRecord>> {
    let mut c = Cursor::new(bytes, "feature");
    c.expect_magic(FEATURE_MAGIC)?;
    let version = c.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::ConfigMismatch(format!("unsupported feature version {version}")));
    }
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = c.string()?;
        let t = c.u32()? as usize;
        let d = c.u32()? as usize;
        let data = c.f32s(t * d)?;
        out.push(FeatureRecord {
            id,
            features: Tensor::new(vec![t, d], data)?,
        });
    }
    if !c.at_end() {
        return Err(Error::ConfigMismatch("trailing bytes in feature file".into()));
    }
    Ok(out)
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    std::fs::write(path, features_to_bytes(records)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let recs = vec![
            FeatureRecord {
                id: "m1/3".into(),
                features: Tensor::from_fn(&[2, 3], |i| i as f64 - 1.5),
            },
            FeatureRecord {
                id: "m2/0".into(),
                features: Tensor::from_fn(&[2, 3], |i| i as f64 * 0.25),
            },
        ];
        let bytes = features_to_bytes(&recs);
        assert_eq!(&bytes[..4], b"MVFT");
        assert_eq!(features_from_bytes(&bytes).unwrap(), recs);
        assert!(features_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
