//! Experiment harness for the dereverberation toolkit: WAV and config IO,
//! dataset preparation, training runs, evaluation tables and the CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod manifest;
pub mod models;
pub mod prepare;
pub mod spectrogram;
pub mod wav;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};

/// Mixes a base seed with a tag and an index (FNV-1a followed by a
/// SplitMix64 finalizer).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
