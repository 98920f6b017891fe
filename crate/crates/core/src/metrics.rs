//! Objective quality measures: STOI, speech distortion index and
//! log-spectral distance, plus delay compensation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::dsp::{lps_of, AnalysisConfig, Waveform};
use crate::fft::Fft;
use crate::math;
use crate::rir::fft_convolve;
use crate::{Error, Result};

fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::SampleRateMismatch(a.sample_rate(), b.sample_rate()));
    }
    Ok(())
}

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    check_rates(a, b)?;
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(alloc::format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Lag (in samples, positive when `processed` lags `clean`) maximizing the
/// cross-correlation within +-0.5 s.
pub fn best_lag(clean: &Waveform, processed: &Waveform) -> Result<isize> {
    check_rates(clean, processed)?;
    if clean.is_empty() || processed.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let (c, p) = (clean.samples(), processed.samples());
    let reversed: Vec<f64> = c.iter().rev().copied().collect();
    // corr[j] = sum_n p[n] c[n - lag] with lag = j - (len_c - 1)
    let corr = fft_convolve(p, &reversed, p.len() + c.len() - 1);
    let max_lag = (clean.sample_rate() / 2) as isize;
    let lo = (-max_lag).max(1 - c.len() as isize);
    let hi = max_lag.min(p.len() as isize - 1);
    let mut best = (f64::NEG_INFINITY, 0isize);
    for lag in lo..=hi {
        let v = corr[(lag + c.len() as isize - 1) as usize];
        if v > best.0 || (v == best.0 && lag.unsigned_abs() < best.1.unsigned_abs()) {
            best = (v, lag);
        }
    }
    Ok(best.1)
}

/// Compensates the delay between the two signals and trims both to their
/// common support.
pub fn align_trim(clean: &Waveform, processed: &Waveform) -> Result<(Waveform, Waveform)> {
    let lag = best_lag(clean, processed)?;
    let (c0, p0) = if lag >= 0 { (0, lag as usize) } else { ((-lag) as usize, 0) };
    let n = (clean.len() - c0.min(clean.len())).min(processed.len() - p0.min(processed.len()));
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    let fs = clean.sample_rate();
    Ok((
        Waveform::new(clean.samples()[c0..c0 + n].to_vec(), fs),
        Waveform::new(processed.samples()[p0..p0 + n].to_vec(), fs),
    ))
}

/// Frames closer than this to the loudest clean frame count as speech.
pub const SDI_ACTIVE_RANGE_DB: f64 = 35.0;

/// `sum (p - s)^2 / sum s^2` over speech-active 32 ms frames of the clean
/// signal (non-overlapping, the tail frame included).
pub fn sdi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    check_lengths(clean, processed)?;
    let frame = (math::round(clean.sample_rate() as f64 * 0.032) as usize).max(1);
    let energies: Vec<f64> = clean.samples().chunks(frame).map(|f| f.iter().map(|v| v * v).sum()).collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let threshold = peak * math::powf(10.0, -SDI_ACTIVE_RANGE_DB / 10.0);
    let (mut num, mut den) = (0.0, 0.0);
    for ((c, p), e) in clean.samples().chunks(frame).zip(processed.samples().chunks(frame)).zip(&energies) {
        if *e >= threshold {
            num += c.iter().zip(p).map(|(a, b)| (b - a) * (b - a)).sum::<f64>();
            den += e;
        }
    }
    Ok(num / den)
}

/// Mean over frames of the RMS (over bins) difference of the floored power
/// spectra in dB.
pub fn lsd(clean: &Waveform, processed: &Waveform, cfg: &AnalysisConfig) -> Result<f64> {
    check_lengths(clean, processed)?;
    let (a, b) = (lps_of(clean, cfg)?, lps_of(processed, cfg)?);
    let db = 10.0 / math::LN_10;
    let (a, b) = (a.as_matrix(), b.as_matrix());
    let total: f64 = a
        .row_iter()
        .zip(b.row_iter())
        .map(|(ra, rb)| {
            let ms = ra.iter().zip(rb).map(|(x, y)| (db * (x - y)) * (db * (x - y))).sum::<f64>() / ra.len() as f64;
            math::sqrt(ms)
        })
        .sum();
    Ok(total / a.rows() as f64)
}

pub mod stoi_params {
    pub const FS: u32 = 10_000;
    pub const FRAME: usize = 256;
    pub const HOP: usize = 128;
    pub const NFFT: usize = 512;
    pub const BANDS: usize = 15;
    pub const MIN_FREQ: f64 = 150.0;
    /// Frames per intermediate-intelligibility segment (384 ms).
    pub const SEGMENT: usize = 30;
    pub const BETA_DB: f64 = -15.0;
    pub const DYN_RANGE_DB: f64 = 40.0;
}

use stoi_params as sp;

const EPS: f64 = f64::EPSILON;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest reduced up/down factor accepted by `resample`.
const MAX_RESAMPLE_FACTOR: u64 = 1000;

/// Kaiser-windowed sinc anti-aliasing filter (60 dB rejection), unit DC gain.
fn resample_filter(up: u64, down: u64) -> Vec<f64> {
    let rejection_db = 60.0;
    let cutoff = 1.0 / (2.0 * up.max(down) as f64);
    let roll_off = cutoff / 10.0;
    let half = math::ceil((rejection_db - 8.0) / (28.714 * roll_off)) as usize;
    let beta = 0.1102 * (rejection_db - 8.7);
    let n = 2 * half + 1;
    let i0b = math::bessel_i0(beta);
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - half as f64;
            let r = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
            let w = math::bessel_i0(beta * math::sqrt((1.0 - r * r).max(0.0))) / i0b;
            w * math::sinc(2.0 * cutoff * t)
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Rational-rate polyphase resampling with a zero-phase filter; the output
/// has `ceil(len * to / from)` samples and starts at the first input sample.
pub fn resample(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == 0 || to == 0 {
        return Err(Error::UnsupportedSampleRate(from.min(to)));
    }
    let g = gcd(from as u64, to as u64);
    let (up, down) = (to as u64 / g, from as u64 / g);
    if up == 1 && down == 1 {
        return Ok(x.to_vec());
    }
    if up.max(down) > MAX_RESAMPLE_FACTOR {
        return Err(Error::UnsupportedSampleRate(from));
    }
    let h = resample_filter(up, down);
    let half = (h.len() - 1) / 2;
    let (up, down) = (up as usize, down as usize);
    let n_out = (x.len() * up).div_ceil(down);
    let gain = up as f64;
    Ok((0..n_out)
        .map(|m| {
            // taps h[m*down + half - k*up] for every k keeping the index in range
            let centre = m * down + half;
            let k_hi = (centre / up).min(x.len().saturating_sub(1));
            let k_lo = (centre + 1).saturating_sub(h.len()).div_ceil(up);
            let mut acc = 0.0;
            if k_lo <= k_hi {
                for k in k_lo..=k_hi {
                    acc += x[k] * h[centre - k * up];
                }
            }
            gain * acc
        })
        .collect())
}

/// Symmetric Hann of length `n` without its zero end points.
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5 - 0.5 * math::cos(math::TAU * i as f64 / (n + 1) as f64)).collect()
}

/// Frame starts `0, hop, ...` strictly below `len - frame`.
fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(sp::FRAME);
    let windowed = |s: &[f64], start: usize| -> Vec<f64> { s[start..start + sp::FRAME].iter().zip(&w).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), sp::FRAME, sp::HOP).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| 20.0 * math::log10(math::sqrt(windowed(x, s).iter().map(|v| v * v).sum::<f64>()) + EPS))
        .collect();
    let peak = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts.iter().zip(&energies).filter(|(_, e)| peak - sp::DYN_RANGE_DB - **e < 0.0).map(|(s, _)| *s).collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let out_len = (kept.len() - 1) * sp::HOP + sp::FRAME;
    let (mut xs, mut ys) = (vec![0.0; out_len], vec![0.0; out_len]);
    for (i, &s) in kept.iter().enumerate() {
        let o = i * sp::HOP;
        for (d, v) in xs[o..o + sp::FRAME].iter_mut().zip(windowed(x, s)) {
            *d += v;
        }
        for (d, v) in ys[o..o + sp::FRAME].iter_mut().zip(windowed(y, s)) {
            *d += v;
        }
    }
    (xs, ys)
}

/// Band-by-bin ranges `[lo, hi)` of the one-third octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = sp::NFFT / 2 + 1;
    let freq = |k: usize| k as f64 * sp::FS as f64 / sp::NFFT as f64;
    let nearest = |f: f64| (0..bins).min_by(|&a, &b| (freq(a) - f).abs().total_cmp(&(freq(b) - f).abs())).expect("bins");
    (0..sp::BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = sp::MIN_FREQ * math::powf(2.0, (2.0 * k - 1.0) / 6.0);
            let hi = sp::MIN_FREQ * math::powf(2.0, (2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `bands x frames`, row-major.
fn band_envelopes(s: &[f64], bands: &[(usize, usize)]) -> (Vec<f64>, usize) {
    let w = hann_inner(sp::FRAME);
    let fft = Fft::new(sp::NFFT).expect("power of two");
    let starts: Vec<usize> = frame_starts(s.len(), sp::FRAME, sp::HOP).collect();
    let frames = starts.len();
    let mut env = vec![0.0; bands.len() * frames];
    let mut buf = vec![0.0; sp::NFFT];
    let mut spec: Vec<Complex64> = Vec::new();
    for (j, &st) in starts.iter().enumerate() {
        for (i, slot) in buf.iter_mut().take(sp::FRAME).enumerate() {
            *slot = s[st + i] * w[i];
        }
        fft.forward_real(&buf, &mut spec);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            env[b * frames + j] = math::sqrt(spec[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>());
        }
    }
    (env, frames)
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|a| a * a).sum())
}

/// Short-time objective intelligibility of `processed` against `clean`.
/// Both are resampled to 10 kHz and frames more than 40 dB below the loudest
/// clean frame are dropped from both.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    check_lengths(clean, processed)?;
    clean.validate()?;
    processed.validate()?;
    let fs = clean.sample_rate();
    let x = resample(clean.samples(), fs, sp::FS)?;
    let y = resample(processed.samples(), fs, sp::FS)?;
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let (xe, frames) = band_envelopes(&x, &bands);
    let (ye, _) = band_envelopes(&y, &bands);
    if frames < sp::SEGMENT {
        return Err(Error::TooShort("fewer than 30 frames remain after silence removal"));
    }
    let clip = 1.0 + math::powf(10.0, -sp::BETA_DB / 20.0);
    let n = sp::SEGMENT;
    let segments = frames - n + 1;
    let mut total = 0.0;
    let (mut xs, mut ys) = (vec![0.0; n], vec![0.0; n]);
    for m in 0..segments {
        for b in 0..bands.len() {
            xs.copy_from_slice(&xe[b * frames + m..b * frames + m + n]);
            ys.copy_from_slice(&ye[b * frames + m..b * frames + m + n]);
            let scale = norm(&xs) / (norm(&ys) + EPS);
            for (yv, xv) in ys.iter_mut().zip(&xs) {
                *yv = (*yv * scale).min(xv * clip);
            }
            let (mx, my) = (xs.iter().sum::<f64>() / n as f64, ys.iter().sum::<f64>() / n as f64);
            xs.iter_mut().for_each(|v| *v -= mx);
            ys.iter_mut().for_each(|v| *v -= my);
            let (nx, ny) = (norm(&xs) + EPS, norm(&ys) + EPS);
            total += xs.iter().zip(&ys).map(|(a, b)| (a / nx) * (b / ny)).sum::<f64>();
        }
    }
    Ok(total / (segments * bands.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Scores {
    pub stoi: f64,
    pub sdi: f64,
    pub lsd: f64,
}

/// Aligns `processed` to `clean` and scores it.
pub fn score(clean: &Waveform, processed: &Waveform, cfg: &AnalysisConfig) -> Result<Scores> {
    let (c, p) = align_trim(clean, processed)?;
    Ok(Scores { stoi: stoi(&c, &p)?, sdi: sdi(&c, &p)?, lsd: lsd(&c, &p, cfg)? })
}

/// Scores equal-length signals that already share a time origin, such as a
/// reverberant file and its clean source (the convolution starts at lag 0).
pub fn score_direct(clean: &Waveform, processed: &Waveform, cfg: &AnalysisConfig) -> Result<Scores> {
    if clean.len() != processed.len() {
        return Err(Error::ShapeMismatch(alloc::format!("{} vs {} samples", clean.len(), processed.len())));
    }
    Ok(Scores { stoi: stoi(clean, processed)?, sdi: sdi(clean, processed)?, lsd: lsd(clean, processed, cfg)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredUtterance {
    pub id: String,
    pub condition: String,
    pub scores: Scores,
}

/// Per-utterance scores with arithmetic-mean aggregates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub utterances: Vec<ScoredUtterance>,
}

impl MetricReport {
    pub fn push(&mut self, id: impl Into<String>, condition: impl Into<String>, scores: Scores) {
        self.utterances.push(ScoredUtterance { id: id.into(), condition: condition.into(), scores });
    }

    fn mean_of<'a>(rows: impl Iterator<Item = &'a ScoredUtterance>) -> Option<Scores> {
        let mut acc = Scores::default();
        let mut n = 0usize;
        for r in rows {
            acc.stoi += r.scores.stoi;
            acc.sdi += r.scores.sdi;
            acc.lsd += r.scores.lsd;
            n += 1;
        }
        (n > 0).then(|| Scores { stoi: acc.stoi / n as f64, sdi: acc.sdi / n as f64, lsd: acc.lsd / n as f64 })
    }

    pub fn mean(&self) -> Option<Scores> {
        Self::mean_of(self.utterances.iter())
    }

    pub fn mean_for(&self, condition: &str) -> Option<Scores> {
        Self::mean_of(self.utterances.iter().filter(|u| u.condition == condition))
    }

    /// Distinct conditions in first-seen order.
    pub fn conditions(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for u in &self.utterances {
            if !out.contains(&u.condition.as_str()) {
                out.push(&u.condition);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: u32 = 16_000;

    /// 64-bit LCG shared with the Python reference script.
    struct Lcg(u64);

    impl Lcg {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (self.0 >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
    }

    /// Harmonic tone under a 3 Hz syllable envelope plus a little noise.
    fn speech(n: usize, seed: u64) -> Vec<f64> {
        let mut r = Lcg(seed);
        let f0 = 120.0 + 40.0 * (seed % 3) as f64;
        (0..n)
            .map(|i| {
                let t = i as f64 / FS as f64;
                let env = math::sin(math::TAU * 3.0 * t).max(0.0);
                let v: f64 = (1..=10).map(|h| math::sin(math::TAU * f0 * h as f64 * t) / h as f64).sum();
                env * env * v + 0.05 * r.next()
            })
            .collect()
    }

    fn degraded(x: &[f64], seed: u64) -> Vec<f64> {
        let mut r = Lcg(seed + 100);
        (0..x.len()).map(|i| x[i] + if i >= 400 { 0.6 * x[i - 400] } else { 0.0 } + 0.2 * r.next()).collect()
    }

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, FS)
    }

    #[test]
    fn resampler_matches_reference() {
        let r = resample(&speech(1000, 5), FS, 10_000).unwrap();
        assert_eq!(r.len(), 625);
        let expect = [(0, 0.003251766199879927), (1, -0.0012970073493368936), (313, 0.24654792769202433), (624, 0.023702185544314823)];
        for (i, v) in expect {
            assert!((r[i] - v).abs() < 1e-9, "sample {i}: {} vs {v}", r[i]);
        }
        assert!((r.iter().sum::<f64>() - 5.604705302608976).abs() < 1e-8);
    }

    #[test]
    fn resampler_keeps_dc_and_identity() {
        let r = resample(&vec![1.0; 4000], FS, 10_000).unwrap();
        assert!(r[500..2000].iter().all(|v| (v - 1.0).abs() < 1e-3));
        assert_eq!(resample(&[1.0, 2.0], 10_000, 10_000).unwrap(), vec![1.0, 2.0]);
        assert!(resample(&[1.0], 0, 10_000).is_err());
    }

    #[test]
    fn stoi_matches_reference_values() {
        let reference = [(1, 0.7294783665878253), (2, 0.7832569729051951), (3, 0.665147356629237)];
        for (seed, value) in reference {
            let x = speech(3 * FS as usize, seed);
            let y = degraded(&x, seed);
            let d = stoi(&wave(x), &wave(y)).unwrap();
            assert!((d - value).abs() < 1e-6, "seed {seed}: {d} vs {value}");
        }
    }

    #[test]
    fn stoi_of_self_and_negation_is_one() {
        for seed in 1..=3 {
            let x = speech(3 * FS as usize, seed);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            assert!((stoi(&wave(x.clone()), &wave(x.clone())).unwrap() - 1.0).abs() < 1e-6);
            assert!((stoi(&wave(x), &wave(neg)).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn stoi_ignores_gain() {
        let x = speech(3 * FS as usize, 2);
        let y = degraded(&x, 2);
        let base = stoi(&wave(x.clone()), &wave(y.clone())).unwrap();
        for a in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = y.iter().map(|v| a * v).collect();
            assert!((stoi(&wave(x.clone()), &wave(scaled)).unwrap() - base).abs() < 1e-6);
        }
    }

    #[test]
    fn stoi_rejects_short_input() {
        let x = speech(FS as usize / 4, 1);
        assert!(matches!(stoi(&wave(x.clone()), &wave(x)), Err(Error::TooShort(_))));
    }

    #[test]
    fn sdi_closed_forms() {
        let s = wave(speech(8000, 4));
        assert_eq!(sdi(&s, &s).unwrap(), 0.0);
        assert!((sdi(&s, &wave(vec![0.0; 8000])).unwrap() - 1.0).abs() < 1e-12);
        for a in [2.0, 0.5, -1.0] {
            assert!((sdi(&s, &s.scaled(a)).unwrap() - (a - 1.0) * (a - 1.0)).abs() < 1e-12);
        }
        assert_eq!(sdi(&wave(vec![0.0; 100]), &s), Err(Error::ShapeMismatch("lengths 100 and 8000".into())));
        assert_eq!(sdi(&wave(vec![0.0; 100]), &wave(vec![1.0; 100])), Err(Error::ZeroEnergy));
    }

    #[test]
    fn sdi_skips_silent_frames() {
        // second half silent in the clean signal: errors there do not count
        let mut c = speech(4096, 6);
        c[2048..].iter_mut().for_each(|v| *v = 0.0);
        let mut p = c.clone();
        p[2048..].iter_mut().for_each(|v| *v = 1.0);
        assert_eq!(sdi(&wave(c), &wave(p)).unwrap(), 0.0);
    }

    #[test]
    fn lsd_closed_forms() {
        let cfg = AnalysisConfig::default();
        let x = wave(speech(8000, 7));
        assert_eq!(lsd(&x, &x, &cfg).unwrap(), 0.0);
        for a in [10.0, 0.1, 3.0] {
            let d = lsd(&x, &x.scaled(a), &cfg).unwrap();
            assert!((d - (20.0 * math::log10(a)).abs()).abs() < 1e-9, "{a}: {d}");
        }
    }

    #[test]
    fn lsd_matches_brute_force_spectra() {
        let cfg = AnalysisConfig { frame_len: 64, hop: 32, fft_size: 64, ..AnalysisConfig::default() };
        let mut r = Lcg(11);
        let a: Vec<f64> = (0..500).map(|_| r.next()).collect();
        let b: Vec<f64> = (0..500).map(|_| r.next()).collect();
        let got = lsd(&wave(a.clone()), &wave(b.clone()), &cfg).unwrap();
        let w: Vec<f64> = (0..64).map(|n| 0.5 - 0.5 * math::cos(math::TAU * n as f64 / 64.0)).collect();
        let power = |s: &[f64], start: usize, k: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, wn) in w.iter().enumerate() {
                let v = s.get(start + n).copied().unwrap_or(0.0) * wn;
                let ph = -math::TAU * (k * n) as f64 / 64.0;
                re += v * math::cos(ph);
                im += v * math::sin(ph);
            }
            (re * re + im * im).max(cfg.log_floor)
        };
        let frames = (500 - 64) / 32 + 1;
        let mut total = 0.0;
        for f in 0..frames {
            let ms: f64 = (0..33).map(|k| (10.0 * math::log10(power(&a, f * 32, k) / power(&b, f * 32, k))).powi(2)).sum::<f64>() / 33.0;
            total += ms.sqrt();
        }
        assert!((got - total / frames as f64).abs() < 1e-9);
    }

    #[test]
    fn align_recovers_constructed_delay() {
        let x = speech(8000, 8);
        assert_eq!(best_lag(&wave(x.clone()), &wave(x.clone())).unwrap(), 0);
        let (c, p) = align_trim(&wave(x.clone()), &wave(x.clone())).unwrap();
        assert_eq!((c.samples(), p.samples()), (x.as_slice(), x.as_slice()));

        let mut delayed = vec![0.0; 100];
        delayed.extend_from_slice(&x[..7900]);
        assert_eq!(best_lag(&wave(x.clone()), &wave(delayed.clone())).unwrap(), 100);
        let (c, p) = align_trim(&wave(x.clone()), &wave(delayed)).unwrap();
        assert_eq!(c.len(), 7900);
        assert_eq!(c.samples(), p.samples());

        let (c, p) = align_trim(&wave(x[100..].to_vec()), &wave(x.clone())).unwrap();
        assert_eq!(c.samples(), p.samples());
    }

    #[test]
    fn align_survives_unrelated_noise() {
        let mut r = Lcg(3);
        let a: Vec<f64> = (0..4000).map(|_| r.next()).collect();
        let b: Vec<f64> = (0..3000).map(|_| r.next()).collect();
        let (c, p) = align_trim(&wave(a), &wave(b)).unwrap();
        assert_eq!(c.len(), p.len());
        assert!(!c.is_empty());
    }

    #[test]
    fn direct_scoring_skips_the_lag_search() {
        let x = wave(speech(16000, 4));
        let s = score_direct(&x, &x, &AnalysisConfig::default()).unwrap();
        assert!((s.stoi - 1.0).abs() < 1e-6 && s.sdi == 0.0 && s.lsd == 0.0);
        let mut shifted = vec![0.0; 37];
        shifted.extend_from_slice(&x.samples()[..15963]);
        let shifted = wave(shifted);
        assert!(score_direct(&x, &shifted, &AnalysisConfig::default()).unwrap().sdi > 0.1);
        assert!(score(&x, &shifted, &AnalysisConfig::default()).unwrap().sdi < 1e-20);
        let short = wave(x.samples()[..1000].to_vec());
        assert!(matches!(score_direct(&x, &short, &AnalysisConfig::default()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn report_means() {
        let mut rep = MetricReport::default();
        rep.push("a", "0.3", Scores { stoi: 0.5, sdi: 1.0, lsd: 2.0 });
        rep.push("b", "0.6", Scores { stoi: 0.7, sdi: 3.0, lsd: 4.0 });
        rep.push("c", "0.3", Scores { stoi: 0.9, sdi: 2.0, lsd: 6.0 });
        assert_eq!(rep.conditions(), ["0.3", "0.6"]);
        assert_eq!(rep.mean_for("0.3").unwrap(), Scores { stoi: 0.7, sdi: 1.5, lsd: 4.0 });
        let m = rep.mean().unwrap();
        assert!((m.stoi - 0.7).abs() < 1e-12 && m.sdi == 2.0 && m.lsd == 4.0);
        assert!(rep.mean_for("0.9").is_none());
    }
}
