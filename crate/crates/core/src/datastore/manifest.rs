use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 3] = ["id", "class", "vertical"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(rename = "class")]
    pub class_label: String,
    pub vertical: String,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, class_label: impl Into<String>, vertical: impl Into<String>) -> Self {
        ManifestEntry { id: id.into(), class_label: class_label.into(), vertical: vertical.into() }
    }
}

/// Per-record class and vertical labels, stored as `id,class,vertical` CSV.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty() && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'/' | b'-'))
}

fn is_valid_label(label: &str) -> bool {
    !label.is_empty() && !label.contains([',', '"', '\n', '\r'])
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (line, e) in entries.iter().enumerate() {
            if !is_valid_id(&e.id) {
                return Err(Error::Data(format!("entry {line}: id {:?} must match [A-Za-z0-9_./-]+", e.id)));
            }
            if !is_valid_label(&e.class_label) || !is_valid_label(&e.vertical) {
                return Err(Error::Data(format!(
                    "entry {line}: class and vertical must be non-empty and free of commas, quotes and newlines"
                )));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate id {:?}", e.id)));
            }
        }
        Ok(DatasetManifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// Distinct class labels in sorted order.
    pub fn classes(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> = self.entries.iter().map(|e| e.class_label.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Entries whose id is in `ids`, keeping manifest order.
    pub fn subset(&self, ids: &[String]) -> DatasetManifest {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        DatasetManifest { entries: self.entries.iter().filter(|e| keep.contains(e.id.as_str())).cloned().collect() }
    }

    pub fn read_from<R: io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).quoting(false).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
            return Err(Error::Format(format!(
                "manifest header must be `id,class,vertical`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let entries = rdr.deserialize::<ManifestEntry>().collect::<std::result::Result<Vec<_>, _>>()?;
        DatasetManifest::new(entries)
    }

    pub fn write_to<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Never).from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            w.write_record([&e.id, &e.class_label, &e.vertical])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)?;
        DatasetManifest::read_from(io::BufReader::new(f)).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(f))
    }
}

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassStats {
    pub counts: BTreeMap<String, usize>,
    pub n_min: usize,
    pub n_max: usize,
}

impl ClassStats {
    /// Builds stats from explicit counts. Fails on empty input or zero counts.
    pub fn from_counts(counts: BTreeMap<String, usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid("class statistics need at least one class"));
        }
        if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
            return Err(Error::invalid(format!("class {c:?} has zero samples")));
        }
        let n_min = *counts.values().min().unwrap();
        let n_max = *counts.values().max().unwrap();
        Ok(ClassStats { counts, n_min, n_max })
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

pub fn class_stats(manifest: &DatasetManifest) -> Result<ClassStats> {
    if manifest.is_empty() {
        return Err(Error::invalid("class statistics of an empty manifest"));
    }
    let mut counts = BTreeMap::new();
    for e in manifest.entries() {
        *counts.entry(e.class_label.clone()).or_insert(0) += 1;
    }
    ClassStats::from_counts(counts)
}

/// Drops every class with fewer than `min_samples` entries. Order is kept.
pub fn filter_min_samples(manifest: &DatasetManifest, min_samples: usize) -> DatasetManifest {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in manifest.entries() {
        *counts.entry(e.class_label.as_str()).or_insert(0) += 1;
    }
    DatasetManifest {
        entries: manifest.entries().iter().filter(|e| counts[e.class_label.as_str()] >= min_samples).cloned().collect(),
    }
}
