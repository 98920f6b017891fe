//! Experiment configuration (TOML). Every field has a default; relative
//! paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use dereverb_core::dsp::AnalysisConfig;
use dereverb_core::nn::{Activation, FusionArch, HddaeArch, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub rooms: Vec<RoomSection>,
    pub conditions: ConditionSection,
    pub analysis: AnalysisSection,
    pub hddae: HddaeSection,
    pub fusion: FusionSection,
    pub train: TrainSection,
    pub fusion_train: TrainSection,
    pub synth: SynthSection,
    /// Models built by `train --model all` and scored by `evaluate`.
    pub roster: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSection {
    pub dims: [f64; 3],
    /// Fixed positions; drawn from the seed when absent.
    #[serde(default)]
    pub source: Option<[f64; 3]>,
    #[serde(default)]
    pub receiver: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSection {
    pub train_t60: Vec<f64>,
    pub test_t60: Vec<f64>,
    pub rirs_per_train_t60: usize,
    pub rirs_per_test_t60: usize,
    pub wall_margin: f64,
    pub min_separation: f64,
    /// Cutoff of the high-pass applied to every generated RIR; 0 disables it.
    pub rir_high_pass_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub context_radius: usize,
    pub log_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HddaeSection {
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub conv_channels: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    pub fc_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    pub validation_fraction: f64,
    pub patience: usize,
}

/// Pseudo-speech corpus written by `gen-testdata`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub seconds: f64,
    pub peak: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            out_dir: PathBuf::from("out"),
            corpus: CorpusSection::default(),
            rooms: vec![
                RoomSection { dims: [4.0, 4.0, 4.0], source: None, receiver: None },
                RoomSection { dims: [6.0, 6.0, 4.0], source: None, receiver: None },
                RoomSection { dims: [10.0, 10.0, 8.0], source: None, receiver: None },
            ],
            conditions: ConditionSection::default(),
            analysis: AnalysisSection::default(),
            hddae: HddaeSection::default(),
            fusion: FusionSection::default(),
            train: TrainSection::default(),
            fusion_train: TrainSection::default(),
            synth: SynthSection::default(),
            roster: ["HDDAE_A(3)", "HDDAE_T60(3)", "HDDAE_A(6)", "IDEA_A(6)"].map(String::from).to_vec(),
        }
    }
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { train_dir: PathBuf::from("corpus/train"), test_dir: PathBuf::from("corpus/test"), sample_rate: 16_000 }
    }
}

impl Default for ConditionSection {
    fn default() -> Self {
        Self {
            train_t60: vec![0.3, 0.6, 0.9],
            test_t60: vec![0.3, 0.4, 0.6, 0.7, 0.9, 1.0],
            rirs_per_train_t60: 3,
            rirs_per_test_t60: 1,
            wall_margin: 0.5,
            min_separation: 1.0,
            rir_high_pass_hz: 100.0,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        Self { frame_len: a.frame_len, hop: a.hop, fft_size: a.fft_size, context_radius: a.context_radius, log_floor: a.log_floor }
    }
}

impl Default for HddaeSection {
    fn default() -> Self {
        Self { hidden_dim: 2048 }
    }
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { conv_channels: 32, kernel: 11, conv_layers: 2, fc_hidden: 2048 }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            minibatch_size: t.minibatch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            shuffle: t.shuffle,
            validation_fraction: t.validation_fraction,
            patience: t.patience,
        }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { train_utterances: 20, test_utterances: 5, seconds: 2.0, peak: dereverb_core::synth::DEFAULT_PEAK }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            minibatch_size: self.minibatch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
            shuffle: self.shuffle,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parses `path`, resolves relative paths against its directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.out_dir, &mut self.corpus.train_dir, &mut self.corpus.test_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        let c = &self.conditions;
        if c.train_t60.is_empty() || c.test_t60.is_empty() {
            return bad("T60 sets must be non-empty");
        }
        if c.train_t60.iter().chain(&c.test_t60).any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("T60 values must be positive");
        }
        if !(c.rir_high_pass_hz >= 0.0 && c.rir_high_pass_hz < self.corpus.sample_rate as f64 / 2.0) {
            return bad("rir_high_pass_hz must lie in [0, fs/2)");
        }
        if c.rirs_per_train_t60 == 0 || c.rirs_per_test_t60 == 0 {
            return bad("at least one RIR per T60 is needed");
        }
        if self.rooms.is_empty() {
            return bad("at least one room is needed");
        }
        if self.corpus.train_dir == self.corpus.test_dir {
            return bad("train and test corpus directories must differ");
        }
        if self.hddae.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        self.analysis().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.fusion_arch(1).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for t in [&self.train, &self.fusion_train] {
            t.to_core(0).validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn analysis(&self) -> AnalysisConfig {
        let a = &self.analysis;
        AnalysisConfig { frame_len: a.frame_len, hop: a.hop, fft_size: a.fft_size, context_radius: a.context_radius, log_floor: a.log_floor }
    }

    pub fn hddae_arch(&self, hidden_layers: usize) -> HddaeArch {
        let a = self.analysis();
        HddaeArch { input_dim: a.spliced_dim(), hidden_dim: self.hddae.hidden_dim, output_dim: a.bins(), hidden_layers, activation: Activation::Relu }
    }

    pub fn fusion_arch(&self, channels: usize) -> FusionArch {
        let f = &self.fusion;
        FusionArch {
            channels,
            bins: self.analysis().bins(),
            conv_channels: f.conv_channels,
            kernel: f.kernel,
            conv_layers: f.conv_layers,
            fc_hidden: f.fc_hidden,
            activation: Activation::Relu,
        }
    }

    /// SHA-256 over the canonical JSON form with every filesystem location
    /// removed, so the same experiment hashes identically wherever it runs.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.corpus.train_dir = PathBuf::new();
        c.corpus.test_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    /// Hash of the sections that define the reverberant dataset (seed,
    /// sample rate, rooms, conditions, analysis). Training settings and the
    /// roster can change without invalidating a prepared dataset.
    pub fn dataset_hash(&self) -> String {
        let key = serde_json::json!({
            "seed": self.seed,
            "sample_rate": self.corpus.sample_rate,
            "rooms": self.rooms,
            "conditions": self.conditions,
            "analysis": self.analysis,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    /// Hash of everything an HDDAE's training depends on: the dataset, the
    /// network width and the training settings.
    pub fn hddae_training_hash(&self) -> String {
        let key = serde_json::json!({ "dataset": self.dataset_hash(), "hddae": self.hddae, "train": self.train });
        sha256_hex(key.to_string().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
