//! Dataset manifest: every reverberant file traced to its clean source and RIR.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub id: usize,
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub receiver: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirRecord {
    pub id: String,
    pub split: Split,
    pub room: usize,
    pub t60: f64,
    /// Relative to the output directory.
    pub path: String,
    pub measured_t60: Option<f64>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub split: Split,
    /// File name inside the split's corpus directory.
    pub clean: String,
    pub clean_sha256: String,
    /// Relative to the output directory.
    pub reverb: String,
    pub reverb_sha256: String,
    pub room: usize,
    pub rir: String,
    pub t60: f64,
    /// Gain applied after convolution to keep the peak below full scale.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// `ExperimentConfig::dataset_hash` of the preparing configuration.
    pub dataset_config_hash: String,
    pub sample_rate: u32,
    pub rooms: Vec<RoomRecord>,
    pub rirs: Vec<RirRecord>,
    pub utterances: Vec<UtteranceRecord>,
    /// SHA-256 of this manifest serialized with an empty `content_hash`.
    pub content_hash: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.content_hash = String::new();
        sha256_hex(serde_json::to_string(&copy).expect("manifest serializes").as_bytes())
    }

    pub fn seal(mut self) -> Self {
        self.content_hash = self.compute_hash();
        self
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|source| HarnessError::Json { path: path.clone(), source })?;
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(HarnessError::Data(format!("{} not found; run `prepare` first", path.display())));
        }
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Self = serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.clone(), source })?;
        if m.compute_hash() != m.content_hash {
            return Err(HarnessError::Data(format!("{}: content hash mismatch", path.display())));
        }
        Ok(m)
    }
}

/// Label used for a T60 in file names, model ids and tables.
pub fn t60_label(t60: f64) -> String {
    format!("{t60}")
}
