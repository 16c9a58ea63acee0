use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 4] = b"GUEF";
pub const BANK_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Ordered set of `(id, f32 vector)` records of a common dimension.
///
/// On disk (little-endian):
///
/// ```text
/// "GUEF" | u32 version = 1 | u32 N | u32 D
/// N × D f32, row-major
/// N × (u16 byte length, UTF-8 id)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
}

impl FeatureBank {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::shape(
                "FeatureBank::new",
                format!("{} values for {} records of dim {dim}", data.len(), ids.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature bank record {:?}, coordinate {}",
                ids[pos / dim.max(1)],
                pos % dim.max(1)
            )));
        }
        check_unique(&ids)?;
        if let Some(id) = ids.iter().find(|id| id.len() > u16::MAX as usize) {
            return Err(Error::invalid(format!("id of {} bytes exceeds the u16 length prefix", id.len())));
        }
        Ok(FeatureBank { dim, ids, data })
    }

    /// Narrows an `f64` matrix to `f32` storage.
    pub fn from_matrix(ids: Vec<String>, m: &Matrix) -> Result<Self> {
        if ids.len() != m.rows() {
            return Err(Error::shape("FeatureBank::from_matrix", format!("{} ids for {} rows", ids.len(), m.rows())));
        }
        let data = m.data().iter().map(|&v| v as f32).collect();
        FeatureBank::new(m.cols(), ids, data)
    }

    /// Widens the vectors to an `f64` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec_unchecked(self.len(), self.dim, self.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id_positions(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Records whose id is in `ids`, in the order of `ids`. Unknown ids are
    /// an error.
    pub fn select(&self, ids: &[String]) -> Result<FeatureBank> {
        let pos = self.id_positions();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = pos.get(id.as_str()).ok_or_else(|| Error::Data(format!("id {id:?} not in feature bank")))?;
            data.extend_from_slice(self.vector(i));
        }
        FeatureBank::new(self.dim, ids.to_vec(), data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes: usize = self.ids.iter().map(|id| 2 + id.len()).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + id_bytes);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected \"GUEF\"")));
        }
        let version = r.u32("version")?;
        if version != BANK_VERSION {
            let hint = if version == crate::container::CONTAINER_VERSION {
                " (this is a tensor container, not a feature bank)"
            } else {
                ""
            };
            return Err(Error::Format(format!("unsupported feature bank version {version}{hint}")));
        }
        let n = r.u32("record count")? as usize;
        let dim = r.u32("dimension")? as usize;
        let payload = n
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("header {n}x{dim} overflows")))?;
        let floats = r.take(payload, "vector payload")?;
        let data: Vec<f32> = floats.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut ids = Vec::with_capacity(n);
        for i in 0..n {
            let len = r.u16("id length")? as usize;
            let raw = r.take(len, "id bytes")?;
            let id = std::str::from_utf8(raw).map_err(|_| Error::Format(format!("id {i} is not valid UTF-8")))?;
            ids.push(id.to_owned());
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after {n} records of dim {dim}; header does not match payload",
                r.remaining()
            )));
        }
        FeatureBank::new(dim, ids, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        FeatureBank::from_bytes(&bytes).map_err(|e| annotate(e, &path.display().to_string()))
    }
}

fn annotate(e: Error, path: &str) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{path}: {msg}")),
        other => other,
    }
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate id {id:?}")));
        }
    }
    Ok(())
}

/// Bounds-checked little-endian cursor.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated while reading {what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureBank {
        FeatureBank::new(3, vec!["a".into(), "bb".into()], vec![1.0, -2.5, 3.25, 0.0, 1e-30, -7.0]).unwrap()
    }

    #[test]
    fn layout_of_two_by_three_bank() {
        let bytes = small().to_bytes();
        // header + 6 floats + (2 + 1) + (2 + 2) id bytes
        assert_eq!(bytes.len(), 16 + 24 + 3 + 4);
        assert_eq!(&bytes[..4], b"GUEF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[40..43], &[1, 0, b'a']);
        assert_eq!(&bytes[43..], &[2, 0, b'b', b'b']);
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.guef");
        let bank = small();
        bank.save(&path).unwrap();
        assert_eq!(FeatureBank::load(&path).unwrap(), bank);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = small().to_bytes();
        bytes[0] = b'X';
        let err = FeatureBank::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = small().to_bytes();
        for cut in [3, 10, 20, bytes.len() - 1] {
            let err = FeatureBank::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{cut}: {err}");
        }
    }

    #[test]
    fn header_dim_mismatch_rejected() {
        let mut bytes = small().to_bytes();
        // claim D = 2: payload shrinks and the leftover bytes no longer parse
        bytes[12..16].copy_from_slice(&2u32.to_le_bytes());
        assert!(FeatureBank::from_bytes(&bytes).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = small().to_bytes();
        bytes.push(0);
        let err = FeatureBank::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = small().to_bytes();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(FeatureBank::from_bytes(&bytes).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(FeatureBank::new(1, vec!["x".into(), "x".into()], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureBank::new(1, vec!["x".into()], vec![f32::INFINITY]).is_err());
        let m = Matrix::new(1, 1, vec![1e300]).unwrap();
        assert!(FeatureBank::from_matrix(vec!["x".into()], &m).is_err());
    }

    #[test]
    fn select_reorders() {
        let bank = small();
        let s = bank.select(&["bb".into(), "a".into()]).unwrap();
        assert_eq!(s.vector(0), bank.vector(1));
        assert!(bank.select(&["zz".into()]).is_err());
    }
}
