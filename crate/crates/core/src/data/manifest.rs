//! JSON-lines dataset manifest, one record per sample.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stu::AttributeValue;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub shape: u32,
    pub illum: u32,
    pub material: u32,
    pub view: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Paths are relative to the manifest's directory.
    pub image: String,
    pub mask: String,
    pub attributes: BTreeMap<String, f64>,
    pub meta: SampleMeta,
}

impl ManifestRecord {
    pub fn attribute(&self, name: &str) -> Result<AttributeValue> {
        let v = self
            .attributes
            .get(name)
            .ok_or_else(|| Error::Manifest(format!("{} has no `{name}` rating", self.image)))?;
        AttributeValue::new(*v).map_err(|e| Error::Manifest(format!("{}: {e}", self.image)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Attribute under edit.
    pub attribute: String,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn from_jsonl(text: &str, attribute: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            rec.attribute(attribute)?;
            records.push(rec);
        }
        Ok(DatasetManifest { attribute: attribute.to_string(), records })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses `path` and checks that every referenced file exists.
    pub fn load(path: &Path, attribute: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::from_jsonl(&text, attribute)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for r in &m.records {
            for f in [&r.image, &r.mask] {
                if !base.join(f).is_file() {
                    return Err(Error::Manifest(format!("referenced file {f} does not exist")));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}
