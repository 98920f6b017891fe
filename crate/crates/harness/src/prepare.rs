//! `gen-testdata` and `prepare`: corpus synthesis, RIR generation,
//! reverberation, feature caching and the dataset manifest.

use std::path::{Path, PathBuf};

use dereverb_core::dsp::{lps_of, AnalysisConfig, Waveform};
use dereverb_core::nn::FeatureNormalizer;
use dereverb_core::rir::{convolve, generate_rir, measure_t60, RirConfig, RoomSpec};
use dereverb_core::synth::pseudo_speech;

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{io_err, CoreContext, HarnessError, Result};
use crate::features::{save_normalizer, FeatureSet};
use crate::manifest::{t60_label, DatasetManifest, RirRecord, RoomRecord, Split, UtteranceRecord};
use crate::wav::{read_wav_at, write_pcm16, write_rir};
use crate::derive_seed;

/// Reverberant utterances peaking above this are scaled down to it.
pub const MAX_PEAK: f64 = 0.99;

/// Condition key covering every training T60.
pub const ALL: &str = "all";

pub fn features_path(out_dir: &Path, condition: &str) -> PathBuf {
    out_dir.join("features").join(format!("train_{condition}.lps"))
}

pub fn normalizer_path(out_dir: &Path, condition: &str) -> PathBuf {
    out_dir.join("features").join(format!("norm_{condition}.norm"))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(io_err(p))
}

/// Writes the synthetic pseudo-speech corpus into the configured corpus
/// directories. Returns the number of files written.
pub fn gen_testdata(cfg: &ExperimentConfig) -> Result<usize> {
    let fs = cfg.corpus.sample_rate;
    let len = (cfg.synth.seconds * fs as f64).round() as usize;
    if len == 0 {
        return Err(HarnessError::Config("synth.seconds too small".into()));
    }
    let mut n = 0;
    for (split, dir, count) in [
        (Split::Train, &cfg.corpus.train_dir, cfg.synth.train_utterances),
        (Split::Test, &cfg.corpus.test_dir, cfg.synth.test_utterances),
    ] {
        create_dir(dir)?;
        for i in 0..count {
            let w = pseudo_speech(len, fs, derive_seed(cfg.seed, split.name(), i as u64), cfg.synth.peak);
            write_pcm16(&dir.join(format!("{}_{i:03}.wav", split.name())), &w)?;
            n += 1;
        }
    }
    log::info!("wrote {n} pseudo-speech utterances");
    Ok(n)
}

/// Sorted `*.wav` files of a corpus directory.
pub fn list_corpus(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Data(format!("{}: no WAV files", dir.display())));
    }
    Ok(files)
}

fn file_sha(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(io_err(path))?))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Source and receiver placement of every configured room.
pub fn place_rooms(cfg: &ExperimentConfig) -> Result<Vec<RoomSpec>> {
    cfg.rooms
        .iter()
        .enumerate()
        .map(|(r, sec)| {
            let drawn = RoomSpec::random(sec.dims, derive_seed(cfg.seed, "room", r as u64), cfg.conditions.wall_margin, cfg.conditions.min_separation)
                .context(format!("room {r}"))?;
            let room = RoomSpec { dims: sec.dims, source: sec.source.unwrap_or(drawn.source), receiver: sec.receiver.unwrap_or(drawn.receiver) };
            room.validate().context(format!("room {r}"))?;
            Ok(room)
        })
        .collect()
}

struct PlannedRir {
    id: String,
    split: Split,
    t60_index: usize,
    room_id: usize,
    variant: usize,
    room: RoomSpec,
    t60: f64,
}

/// Room and position variant of RIR slot `j` for utterance `utt` at the
/// `t60_index`-th T60 of its split. Training utterances rotate through the
/// rooms, so every training T60 covers all rooms even with one RIR per
/// utterance; every test utterance of a T60 shares the same RIRs. Once a slot
/// wraps past the last room, the positions in the reused room are redrawn.
fn rir_slot(split: Split, utt: usize, t60_index: usize, j: usize, rooms: usize) -> (usize, usize) {
    let offset = if split == Split::Train { utt } else { 0 };
    ((offset + t60_index + j) % rooms, j / rooms)
}

fn rir_id(split: Split, t60: f64, room: usize, variant: usize) -> String {
    let base = format!("{}_t{}_room{room}", split.name(), t60_label(t60));
    if variant == 0 {
        base
    } else {
        format!("{base}v{variant}")
    }
}

/// Every distinct RIR the utterances of both splits will use.
fn plan_rirs(cfg: &ExperimentConfig, rooms: &[RoomSpec], n_train: usize) -> Result<Vec<PlannedRir>> {
    let c = &cfg.conditions;
    let n = rooms.len();
    let mut out = Vec::new();
    for (split, t60s, per, utts) in [(Split::Train, &c.train_t60, c.rirs_per_train_t60, n_train), (Split::Test, &c.test_t60, c.rirs_per_test_t60, 1)] {
        for (t60_index, &t60) in t60s.iter().enumerate() {
            let mut slots: Vec<(usize, usize)> = (0..utts).flat_map(|u| (0..per).map(move |j| rir_slot(split, u, t60_index, j, n))).collect();
            slots.sort_unstable();
            slots.dedup();
            for (room_id, variant) in slots {
                let id = rir_id(split, t60, room_id, variant);
                let room = if variant == 0 {
                    rooms[room_id]
                } else {
                    let seed = derive_seed(cfg.seed, &id, room_id as u64);
                    RoomSpec::random(rooms[room_id].dims, seed, c.wall_margin, c.min_separation).context(id.clone())?
                };
                out.push(PlannedRir { id, split, t60_index, room_id, variant, room, t60 });
            }
        }
    }
    Ok(out)
}

/// Expected `(train, test)` reverberant file counts for a corpus size.
pub fn expected_counts(cfg: &ExperimentConfig, n_train: usize, n_test: usize) -> (usize, usize) {
    let c = &cfg.conditions;
    (n_train * c.train_t60.len() * c.rirs_per_train_t60, n_test * c.test_t60.len() * c.rirs_per_test_t60)
}

/// Builds the whole reverberant dataset under `cfg.out_dir`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let out = &cfg.out_dir;
    let fs = cfg.corpus.sample_rate;
    let analysis = cfg.analysis();
    let train_files = list_corpus(&cfg.corpus.train_dir)?;
    let test_files = list_corpus(&cfg.corpus.test_dir)?;
    for d in ["rirs", "reverb/train", "reverb/test", "features"] {
        create_dir(&out.join(d))?;
    }

    let rooms = place_rooms(cfg)?;
    let plan = plan_rirs(cfg, &rooms, train_files.len())?;
    let mut rirs = Vec::with_capacity(plan.len());
    let mut responses = Vec::with_capacity(plan.len());
    for p in &plan {
        let fc = cfg.conditions.rir_high_pass_hz;
        let rir_cfg = RirConfig { high_pass_hz: (fc > 0.0).then_some(fc), ..RirConfig::new(p.t60, fs) };
        let h = generate_rir(&p.room, &rir_cfg).context(p.id.clone())?.normalized();
        let measured = measure_t60(&h).ok();
        log::info!("{}: room {} target {} s measured {:?}", p.id, p.room_id, p.t60, measured);
        let rel = format!("rirs/{}.wav", p.id);
        write_rir(&out.join(&rel), &h)?;
        rirs.push(RirRecord {
            id: p.id.clone(),
            split: p.split,
            room: p.room_id,
            t60: p.t60,
            sha256: file_sha(&out.join(&rel))?,
            path: rel,
            measured_t60: measured,
        });
        responses.push(h);
    }

    let mut utterances = Vec::new();
    let mut per_condition: Vec<(f64, FeatureSet)> = cfg.conditions.train_t60.iter().map(|&t| (t, FeatureSet::default())).collect();
    let c = &cfg.conditions;
    for (split, files, t60s, per) in [(Split::Train, &train_files, &c.train_t60, c.rirs_per_train_t60), (Split::Test, &test_files, &c.test_t60, c.rirs_per_test_t60)] {
        for (utt, path) in files.iter().enumerate() {
            let clean = read_wav_at(path, fs)?;
            clean.validate().context(path.display().to_string())?;
            let clean_sha = file_sha(path)?;
            let clean_lps = if split == Split::Train { Some(lps_of(&clean, &analysis).context(path.display().to_string())?) } else { None };
            for (t60_index, j) in (0..t60s.len()).flat_map(|t| (0..per).map(move |j| (t, j))) {
                let (room_id, variant) = rir_slot(split, utt, t60_index, j, rooms.len());
                let k = plan
                    .iter()
                    .position(|p| p.split == split && p.t60_index == t60_index && p.room_id == room_id && p.variant == variant)
                    .expect("planned RIR");
                let (p, rec, h) = (&plan[k], &rirs[k], &responses[k]);
                let id = format!("{}_{}", stem(path), p.id.trim_start_matches(&format!("{}_", split.name())));
                let rel = format!("reverb/{}/{id}.wav", split.name());
                let reverb = convolve(&clean, h).context(id.clone())?;
                let peak = reverb.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let gain = if peak > MAX_PEAK { MAX_PEAK / peak } else { 1.0 };
                write_pcm16(&out.join(&rel), &reverb.scaled(gain))?;
                if let Some(clean_lps) = &clean_lps {
                    let stored = read_wav_at(&out.join(&rel), fs)?;
                    let set = &mut per_condition.iter_mut().find(|(t, _)| *t == p.t60).expect("train T60").1;
                    set.push(lps_of(&stored, &analysis).context(id.clone())?.into_matrix(), clean_lps.as_matrix().clone());
                }
                utterances.push(UtteranceRecord {
                    id,
                    split,
                    clean: file_name(path),
                    clean_sha256: clean_sha.clone(),
                    reverb_sha256: file_sha(&out.join(&rel))?,
                    reverb: rel,
                    room: rec.room,
                    rir: rec.id.clone(),
                    t60: p.t60,
                    gain,
                });
            }
        }
    }

    let mut all = FeatureSet::default();
    for (t60, set) in &per_condition {
        let label = t60_label(*t60);
        set.save(&features_path(out, &label))?;
        write_normalizer(out, &label, set, &analysis)?;
        all.extend(set);
    }
    write_normalizer(out, ALL, &all, &analysis)?;

    let manifest = DatasetManifest {
        dataset_config_hash: cfg.dataset_hash(),
        sample_rate: fs,
        rooms: rooms
            .iter()
            .enumerate()
            .map(|(id, r)| RoomRecord { id, dims: r.dims, source: r.source, receiver: r.receiver })
            .collect(),
        rirs,
        utterances,
        content_hash: String::new(),
    }
    .seal();
    let (want_train, want_test) = expected_counts(cfg, train_files.len(), test_files.len());
    let (got_train, got_test) = (manifest.records(Split::Train).count(), manifest.records(Split::Test).count());
    if (got_train, got_test) != (want_train, want_test) {
        return Err(HarnessError::Data(format!("dataset has {got_train}+{got_test} files, expected {want_train}+{want_test}")));
    }
    manifest.save(out)?;
    log::info!("prepared {got_train} train and {got_test} test utterances, manifest {}", manifest.content_hash);
    Ok(manifest)
}

fn write_normalizer(out: &Path, label: &str, set: &FeatureSet, analysis: &AnalysisConfig) -> Result<()> {
    let (x, y) = set.training_pairs(analysis.context_radius)?;
    let n = FeatureNormalizer::fit(&x, &y).context(format!("normalizer {label}"))?;
    save_normalizer(&normalizer_path(out, label), &n)
}

/// Loads a manifest and checks it was produced by this configuration.
pub fn load_manifest(cfg: &ExperimentConfig) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(&cfg.out_dir)?;
    if m.dataset_config_hash != cfg.dataset_hash() {
        return Err(HarnessError::Data(format!(
            "{}: dataset was prepared with a different configuration; rerun `prepare`",
            cfg.out_dir.display()
        )));
    }
    Ok(m)
}

/// Reads the clean source of a manifest record.
pub fn read_clean(cfg: &ExperimentConfig, rec: &UtteranceRecord) -> Result<Waveform> {
    let dir = match rec.split {
        Split::Train => &cfg.corpus.train_dir,
        Split::Test => &cfg.corpus.test_dir,
    };
    read_wav_at(&dir.join(&rec.clean), cfg.corpus.sample_rate)
}

pub fn read_reverb(cfg: &ExperimentConfig, rec: &UtteranceRecord) -> Result<Waveform> {
    read_wav_at(&cfg.out_dir.join(&rec.reverb), cfg.corpus.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_train_t60_covers_every_room() {
        for per in [1, 2, 3] {
            for t in 0..3 {
                let mut seen: Vec<usize> = (0..20).flat_map(|u| (0..per).map(move |j| rir_slot(Split::Train, u, t, j, 3).0)).collect();
                seen.sort_unstable();
                seen.dedup();
                assert_eq!(seen, [0, 1, 2], "per {per} t {t}");
            }
        }
        // three slots give each utterance all three rooms, positions unchanged
        let mut rooms: Vec<(usize, usize)> = (0..3).map(|j| rir_slot(Split::Train, 7, 1, j, 3)).collect();
        rooms.sort_unstable();
        assert_eq!(rooms, [(0, 0), (1, 0), (2, 0)]);
        assert_eq!(rir_slot(Split::Train, 0, 0, 4, 3), (1, 1));
    }

    #[test]
    fn test_utterances_share_their_rirs() {
        for t in 0..6 {
            let first = rir_slot(Split::Test, 0, t, 0, 3);
            assert!((1..5).all(|u| rir_slot(Split::Test, u, t, 0, 3) == first));
            assert_eq!(first, (t % 3, 0));
        }
    }

    #[test]
    fn rir_ids_name_room_and_variant() {
        assert_eq!(rir_id(Split::Train, 0.3, 2, 0), "train_t0.3_room2");
        assert_eq!(rir_id(Split::Test, 1.0, 0, 1), "test_t1_room0v1");
    }
}
