#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use dereverb_harness::config::{AnalysisSection, ExperimentConfig};

/// Small but complete experiment: every stage runs in seconds.
pub fn tiny_config(root: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig { out_dir: root.join("out"), ..Default::default() };
    c.corpus.train_dir = root.join("corpus/train");
    c.corpus.test_dir = root.join("corpus/test");
    c.analysis = AnalysisSection { frame_len: 64, hop: 32, fft_size: 64, context_radius: 1, log_floor: 1e-12 };
    c.conditions.rirs_per_train_t60 = 2;
    c.hddae.hidden_dim = 16;
    c.fusion.conv_channels = 2;
    c.fusion.kernel = 3;
    c.fusion.fc_hidden = 16;
    for t in [&mut c.train, &mut c.fusion_train] {
        t.epochs = 3;
        t.learning_rate = 1e-3;
        t.patience = 2;
    }
    c.synth.train_utterances = 3;
    c.synth.test_utterances = 2;
    c.synth.seconds = 1.0;
    c
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) {
    std::fs::write(path, cfg.to_toml()).unwrap();
}

/// A corpus generated and prepared once per test binary.
pub struct Prepared {
    _dir: tempfile::TempDir,
    pub cfg: ExperimentConfig,
    pub config_path: PathBuf,
}

pub fn prepared() -> &'static Prepared {
    static P: OnceLock<Prepared> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let config_path = dir.path().join("tiny.toml");
        write_config(&cfg, &config_path);
        dereverb_harness::prepare::gen_testdata(&cfg).unwrap();
        dereverb_harness::prepare::prepare(&cfg).unwrap();
        Prepared { _dir: dir, cfg, config_path }
    })
}

pub fn run(args: &[&str]) -> i32 {
    dereverb_harness::cli::run(std::iter::once("dereverb").chain(args.iter().copied()))
}

/// Serialises tests that write into the shared model directory.
pub fn models_lock() -> std::sync::MutexGuard<'static, ()> {
    static M: std::sync::Mutex<()> = std::sync::Mutex::new(());
    M.lock().unwrap_or_else(|e| e.into_inner())
}
