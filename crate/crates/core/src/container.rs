//! Named-section tensor container sharing the feature-bank framing.
//!
//! ```text
//! "GUEF" | u32 version = 2 | u32 kind | u32 section count
//! per section:
//!   u16 name length | UTF-8 name | u8 tag
//!   tag 0 (tensor): u32 rows | u32 cols | rows × cols f64, row-major
//!   tag 1 (text):   u32 byte length | UTF-8 bytes
//! ```
//!
//! All integers and floats are little-endian. Tensors are stored at full
//! `f64` precision so that checkpoints reload bit-exactly.

use std::fs;
use std::path::Path;

use crate::datastore::{ByteReader, MAGIC};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const CONTAINER_VERSION: u32 = 2;

const TAG_TENSOR: u8 = 0;
const TAG_TEXT: u8 = 1;

/// What a container holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Checkpoint,
    Pca,
}

impl ContainerKind {
    fn code(self) -> u32 {
        match self {
            ContainerKind::Checkpoint => 1,
            ContainerKind::Pca => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(ContainerKind::Checkpoint),
            2 => Ok(ContainerKind::Pca),
            other => Err(Error::Format(format!("unknown container kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Tensor(Matrix),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    kind: ContainerKind,
    sections: Vec<(String, Section)>,
}

impl TensorContainer {
    pub fn new(kind: ContainerKind) -> Self {
        TensorContainer { kind, sections: Vec::new() }
    }

    pub fn kind(&self) -> ContainerKind {
        self.kind
    }

    pub fn section_names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn push_tensor(&mut self, name: &str, m: &Matrix) {
        self.sections.push((name.to_owned(), Section::Tensor(m.clone())));
    }

    pub fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.push_tensor(name, &Matrix::row_vector(v.to_vec()));
    }

    pub fn push_scalar(&mut self, name: &str, v: f64) {
        self.push_tensor(name, &Matrix::row_vector(vec![v]));
    }

    pub fn push_text(&mut self, name: &str, text: &str) {
        self.sections.push((name.to_owned(), Section::Text(text.to_owned())));
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("missing section {name:?}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        match self.section(name)? {
            Section::Tensor(m) => Ok(m),
            Section::Text(_) => Err(Error::Format(format!("section {name:?} is text"))),
        }
    }

    /// Tensor section with a required shape.
    pub fn tensor_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let m = self.tensor(name)?;
        if m.shape() != (rows, cols) {
            return Err(Error::Format(format!(
                "section {name:?} is {}x{}, expected {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m.clone())
    }

    pub fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        Ok(self.tensor_shaped(name, 1, len)?.into_data())
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.tensor_shaped(name, 1, 1)?.get(0, 0))
    }

    /// Scalar section holding a non-negative integer.
    pub fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Format(format!("section {name:?} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.section(name)? {
            Section::Text(t) => Ok(t),
            Section::Tensor(_) => Err(Error::Format(format!("section {name:?} is a tensor"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match section {
                Section::Tensor(m) => {
                    out.push(TAG_TENSOR);
                    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
                    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
                    for v in m.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::Text(t) => {
                    out.push(TAG_TEXT);
                    out.extend_from_slice(&(t.len() as u32).to_le_bytes());
                    out.extend_from_slice(t.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic, expected \"GUEF\"".into()));
        }
        let version = r.u32("version")?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "version {version} is not a tensor container (expected {CONTAINER_VERSION})"
            )));
        }
        let kind = ContainerKind::from_code(r.u32("kind")?)?;
        let n = r.u32("section count")? as usize;
        let mut sections = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let len = r.u16("section name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "section name")?)
                .map_err(|_| Error::Format("section name is not UTF-8".into()))?
                .to_owned();
            let section = match r.u8("section tag")? {
                TAG_TENSOR => {
                    let rows = r.u32("rows")? as usize;
                    let cols = r.u32("cols")? as usize;
                    let count = rows
                        .checked_mul(cols)
                        .filter(|c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
                        .ok_or_else(|| Error::Format(format!("truncated tensor {name:?} ({rows}x{cols})")))?;
                    let mut data = Vec::with_capacity(count);
                    for _ in 0..count {
                        data.push(r.f64("tensor data")?);
                    }
                    Section::Tensor(Matrix::new(rows, cols, data)?)
                }
                TAG_TEXT => {
                    let len = r.u32("text length")? as usize;
                    let text = std::str::from_utf8(r.take(len, "text")?)
                        .map_err(|_| Error::Format(format!("section {name:?} is not UTF-8")))?;
                    Section::Text(text.to_owned())
                }
                tag => return Err(Error::Format(format!("unknown section tag {tag}"))),
            };
            sections.push((name, section));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes after {n} sections", r.remaining())));
        }
        Ok(TensorContainer { kind, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a container and checks its kind.
    pub fn load(path: impl AsRef<Path>, expected: ContainerKind) -> Result<Self> {
        let path = path.as_ref();
        let c = TensorContainer::from_bytes(&fs::read(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if c.kind != expected {
            return Err(Error::Format(format!("{}: holds a {:?}, expected a {expected:?}", path.display(), c.kind)));
        }
        Ok(c)
    }
}
