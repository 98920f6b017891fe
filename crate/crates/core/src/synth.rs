//! Seeded pseudo-speech: voiced syllables (glottal pulse trains through three
//! formant resonators), fricative bursts and pauses. Used as a stand-in for a
//! speech corpus in tests and the desk-scale harness.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::math;

/// Target absolute peak of generated utterances.
pub const DEFAULT_PEAK: f64 = 0.3;

/// Level of the white recording-noise floor relative to the peak. Keeps
/// pauses out of the LPS floor, as in any real recording.
pub const NOISE_FLOOR_DB: f64 = -60.0;

/// Two-pole resonator with unit gain at its centre frequency (approximately).
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bandwidth: f64, fs: f64) -> Self {
        let r = math::exp(-math::PI * bandwidth / fs);
        let theta = math::TAU * freq / fs;
        Self { a1: 2.0 * r * math::cos(theta), a2: -r * r, gain: 1.0 - r, y1: 0.0, y2: 0.0 }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Raised-cosine attack and release over a segment of `len` samples.
fn envelope(i: usize, len: usize, attack: usize, release: usize) -> f64 {
    let ramp = |k: usize, n: usize| 0.5 - 0.5 * math::cos(math::PI * k as f64 / n.max(1) as f64);
    if i < attack {
        ramp(i, attack)
    } else if i + release >= len {
        ramp(len - i, release)
    } else {
        1.0
    }
}

fn voiced(out: &mut [f64], rng: &mut ChaCha8Rng, fs: f64, f0_base: f64) {
    let len = out.len();
    let f0_start = f0_base * rng.gen_range(0.85..1.15);
    let f0_end = f0_start * rng.gen_range(0.75..1.2);
    let formants = [
        (rng.gen_range(300.0..900.0), 90.0),
        (rng.gen_range(900.0..2400.0), 130.0),
        (rng.gen_range(2400.0..3400.0), 220.0),
    ];
    let weights = [1.0, 0.6, 0.3];
    let mut res: Vec<Resonator> = formants.iter().map(|&(f, bw)| Resonator::new(f, bw, fs)).collect();
    let amp = rng.gen_range(0.5..1.0);
    let (attack, release) = ((0.02 * fs) as usize, (0.04 * fs) as usize);
    let mut phase = rng.gen_range(0.0..1.0);
    let mut lp = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
        phase += f0 / fs;
        // one pulse per period, smoothed by a one-pole low-pass (glottal tilt)
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        lp = 0.7 * lp + pulse + 0.01 * rng.gen_range(-1.0..1.0);
        let v: f64 = res.iter_mut().zip(weights).map(|(r, w)| w * r.step(lp)).sum();
        *o += amp * envelope(i, len, attack, release) * v;
    }
}

fn fricative(out: &mut [f64], rng: &mut ChaCha8Rng, fs: f64) {
    let len = out.len();
    let centre = rng.gen_range(2500.0..(0.4 * fs).min(6000.0));
    let mut res = Resonator::new(centre, 900.0, fs);
    let amp = rng.gen_range(0.05..0.2);
    let (attack, release) = ((0.01 * fs) as usize, (0.02 * fs) as usize);
    let mut prev = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let w: f64 = rng.gen_range(-1.0..1.0);
        let hp = w - prev;
        prev = w;
        *o += amp * envelope(i, len, attack, release) * res.step(hp) * 4.0;
    }
}

/// `len` samples of pseudo-speech with absolute peak `peak`.
pub fn pseudo_speech(len: usize, sample_rate: u32, seed: u64, peak: f64) -> Waveform {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0_base = rng.gen_range(95.0..230.0);
    let mut out = vec![0.0; len];
    let ms = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| (rng.gen_range(lo..hi) * fs / 1000.0) as usize;
    // short leading pause
    let mut pos = ms(30.0, 120.0, &mut rng);
    while pos < len {
        let roll: f64 = rng.gen_range(0.0..1.0);
        let seg = if roll < 0.2 {
            ms(60.0, 220.0, &mut rng)
        } else if roll < 0.8 {
            let n = ms(120.0, 320.0, &mut rng).min(len - pos);
            voiced(&mut out[pos..pos + n], &mut rng, fs, f0_base);
            n
        } else {
            let n = ms(50.0, 140.0, &mut rng).min(len - pos);
            fricative(&mut out[pos..pos + n], &mut rng, fs);
            n
        };
        pos += seg.max(1);
    }
    // DC blocker, as in any recording chain
    let mut prev = (0.0, 0.0);
    for v in out.iter_mut() {
        let y = *v - prev.0 + 0.995 * prev.1;
        prev = (*v, y);
        *v = y;
    }
    let level = |x: &[f64]| x.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
    // uniform noise with RMS NOISE_FLOOR_DB below the speech peak
    let floor = level(&out) * math::powf(10.0, NOISE_FLOOR_DB / 20.0) * math::sqrt(3.0);
    out.iter_mut().for_each(|v| *v += floor * rng.gen_range(-1.0..1.0));
    let max = level(&out);
    if max > 0.0 {
        out.iter_mut().for_each(|v| *v *= peak / max);
    }
    Waveform::new(out, sample_rate)
}

/// Stationary noise with a speech-like spectral tilt, scaled to `rms`.
pub fn speech_shaped_noise(len: usize, sample_rate: u32, seed: u64, rms: f64) -> Waveform {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut res = [Resonator::new(500.0, 400.0, fs), Resonator::new(1500.0, 800.0, fs)];
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w = rng.gen_range(-1.0..1.0);
            res[0].step(w) + 0.5 * res[1].step(w) + 0.02 * w
        })
        .collect();
    let cur = math::sqrt(out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64);
    if cur > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / cur);
    }
    Waveform::new(out, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::stoi;

    #[test]
    fn deterministic_and_peak_normalized() {
        let a = pseudo_speech(16000, 16000, 4, DEFAULT_PEAK);
        assert_eq!(a, pseudo_speech(16000, 16000, 4, DEFAULT_PEAK));
        assert_ne!(a, pseudo_speech(16000, 16000, 5, DEFAULT_PEAK));
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - DEFAULT_PEAK).abs() < 1e-12);
        assert!(a.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn has_pauses_and_activity() {
        let a = pseudo_speech(48000, 16000, 9, DEFAULT_PEAK);
        let frames: Vec<f64> = a.samples().chunks(320).map(|f| f.iter().map(|v| v * v).sum::<f64>()).collect();
        let max = frames.iter().copied().fold(0.0, f64::max);
        let quiet = frames.iter().filter(|e| **e < max * 1e-4).count();
        assert!(quiet > 5 && quiet < frames.len() / 2, "{quiet} quiet of {}", frames.len());
    }

    #[test]
    fn unrelated_noise_is_unintelligible() {
        for seed in 0..3 {
            let x = pseudo_speech(48000, 16000, seed, DEFAULT_PEAK);
            let n = speech_shaped_noise(48000, 16000, seed + 77, x.rms());
            let d = stoi(&x, &n).unwrap();
            assert!(d < 0.3, "seed {seed}: {d}");
        }
    }
}
