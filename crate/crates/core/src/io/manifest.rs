//! Utterance manifest: JSON-lines with id, feature-file path, frame count.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut out = String::new();
    for entry in &manifest.entries {
        out.push_str(&serde_json::to_string(entry).expect("manifest entries serialize"));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let p = path.display().to_string();
    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: p.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        if !seen.insert(entry.id.clone()) {
            return Err(CorpusError::Parse {
                path: p,
                line: i + 1,
                msg: format!("duplicate utterance id {:?}", entry.id),
            });
        }
        entries.push(entry);
    }
    Ok(Manifest { entries })
}
