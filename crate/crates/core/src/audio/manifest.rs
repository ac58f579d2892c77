//! Line-delimited JSON manifests describing simulated mixtures.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Target speaker plus background noise.
    Noise,
    /// Target speaker plus one interfering speaker.
    Mix,
    /// Target, interfering speaker and background noise.
    Nmix,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Noise, Condition::Mix, Condition::Nmix];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Noise => "noise",
            Condition::Mix => "mix",
            Condition::Nmix => "nmix",
        }
    }

    pub fn has_noise(self) -> bool {
        matches!(self, Condition::Noise | Condition::Nmix)
    }

    pub fn has_interferer(self) -> bool {
        matches!(self, Condition::Mix | Condition::Nmix)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Condition::Noise),
            "mix" => Ok(Condition::Mix),
            "nmix" => Ok(Condition::Nmix),
            other => Err(Error::UnknownCondition(other.to_string())),
        }
    }
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub noisy: String,
    pub clean: String,
    pub enroll: String,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer: Option<String>,
    /// Keys this version does not know about, kept verbatim for rewrite.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl MixtureRecord {
    pub fn new(noisy: impl Into<String>, clean: impl Into<String>, enroll: impl Into<String>, condition: Condition) -> Self {
        Self {
            id: None,
            noisy: noisy.into(),
            clean: clean.into(),
            enroll: enroll.into(),
            condition,
            snr_db: None,
            seed: None,
            interferer: None,
            extra: Map::new(),
        }
    }

    /// Stable identifier: the explicit `id` key, else the noisy file's stem.
    pub fn record_id(&self) -> String {
        if let Some(id) = &self.id {
            return id.clone();
        }
        Path::new(&self.noisy)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.noisy.clone())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<MixtureRecord>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Manifest {
    pub fn new(records: Vec<MixtureRecord>, root: impl Into<PathBuf>) -> Self {
        Self { records, root: root.into() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn subset<'a>(&self, keep: impl IntoIterator<Item = &'a MixtureRecord>) -> Manifest {
        Manifest { records: keep.into_iter().cloned().collect(), root: self.root.clone() }
    }

    /// Copy with every audio path resolved, so it can be saved anywhere.
    pub fn with_resolved_paths(&self) -> Manifest {
        let fix = |p: &str| self.resolve(p).to_string_lossy().into_owned();
        let records = self
            .records
            .iter()
            .map(|r| MixtureRecord { noisy: fix(&r.noisy), clean: fix(&r.clean), enroll: fix(&r.enroll), ..r.clone() })
            .collect();
        Manifest { records, root: PathBuf::new() }
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let manifest_err = |message: String| Error::Manifest { path: path.into(), line: line_no, message };
        let value: Value = serde_json::from_str(&line).map_err(|e| manifest_err(e.to_string()))?;
        if let Some(tag) = value.get("condition").and_then(Value::as_str) {
            if let Err(e) = tag.parse::<Condition>() {
                return Err(manifest_err(e.to_string()));
            }
        }
        let record: MixtureRecord = serde_json::from_value(value).map_err(|e| manifest_err(e.to_string()))?;
        records.push(record);
    }
    Ok(Manifest { records, root })
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in &manifest.records {
        let line = serde_json::to_string(record)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
