//! Front and back end of the spectral-mapping pipeline: framing, STFT/ISTFT,
//! log-power features, context splicing and spectral restoration.
//!
//! Analysis uses a periodic Hann window; synthesis is weighted overlap-add with
//! the same window, normalized by the summed squared window.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::fft::Fft;
use crate::math;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Summed squared window values below this are clamped during synthesis. Only
/// the outermost few samples of a signal ever fall below it.
const WINDOW_NORM_FLOOR: f64 = 1e-3;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    #[inline]
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    #[inline]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(self.samples.iter().map(|v| v * gain).collect(), self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        math::sqrt(self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64)
    }

    /// Fails on empty input, a zero sample rate or any non-finite sample.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyWaveform);
        }
        if self.sample_rate == 0 {
            return Err(Error::UnsupportedSampleRate(0));
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(())
    }
}

/// Framing and feature parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    /// Number of neighbouring frames spliced on each side.
    pub context_radius: usize,
    /// Power floor applied before taking the log.
    pub log_floor: f64,
}

impl Default for AnalysisConfig {
    /// 32 ms frames with a 16 ms shift at 16 kHz, five context frames each side.
    fn default() -> Self {
        Self { frame_len: 512, hop: 256, fft_size: 512, context_radius: 5, log_floor: 1e-12 }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::InvalidConfig("need 0 < hop <= frame_len"));
        }
        if self.fft_size < self.frame_len {
            return Err(Error::InvalidConfig("fft_size must be >= frame_len"));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidConfig("fft_size must be a power of two"));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::InvalidConfig("log_floor must be positive"));
        }
        Ok(())
    }

    /// One-sided bin count, `fft_size / 2 + 1`.
    #[inline]
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Width of a spliced feature row, `bins * (2M + 1)`.
    #[inline]
    pub fn spliced_dim(&self) -> usize {
        self.bins() * (2 * self.context_radius + 1)
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * math::cos(math::TAU * i as f64 / n as f64)).collect()
}

/// Frames x bins complex STFT.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    sample_rate: u32,
    config: AnalysisConfig,
}

impl ComplexSpectrogram {
    pub fn new(
        frames: usize,
        data: Vec<Complex64>,
        sample_rate: u32,
        config: AnalysisConfig,
    ) -> Result<Self> {
        config.validate()?;
        let bins = config.bins();
        if data.len() != frames * bins {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {frames} frames x {bins} bins",
                data.len()
            )));
        }
        Ok(Self { frames, bins, data, sample_rate, config })
    }

    pub fn zeros(frames: usize, sample_rate: u32, config: AnalysisConfig) -> Result<Self> {
        let n = frames * config.bins();
        Self::new(frames, vec![Complex64::new(0.0, 0.0); n], sample_rate, config)
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    #[inline]
    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.bins..(i + 1) * self.bins]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn check_consistent(&self) -> Result<()> {
        if self.bins != self.config.bins() || self.data.len() != self.frames * self.bins {
            return Err(Error::ShapeMismatch(format!(
                "spectrogram {}x{} inconsistent with fft_size {}",
                self.frames, self.bins, self.config.fft_size
            )));
        }
        Ok(())
    }
}

/// Log-power spectrogram, frames x bins, natural log.
#[derive(Debug, Clone, PartialEq)]
pub struct LpsMatrix(Matrix);

impl LpsMatrix {
    pub fn new(values: Matrix) -> Self {
        Self(values)
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn bins(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Context-spliced LPS, frames x `bins * (2M + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplicedLps {
    values: Matrix,
    context_radius: usize,
}

impl SplicedLps {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn context_radius(&self) -> usize {
        self.context_radius
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn into_matrix(self) -> Matrix {
        self.values
    }

    /// The unspliced centre frame of every row.
    pub fn center_frames(&self) -> LpsMatrix {
        let bins = self.dim() / (2 * self.context_radius + 1);
        let offset = self.context_radius * bins;
        let mut out = Matrix::zeros(self.frames(), bins);
        for i in 0..self.frames() {
            out.row_mut(i).copy_from_slice(&self.values.row(i)[offset..offset + bins]);
        }
        LpsMatrix(out)
    }
}

/// Short-time Fourier transform with a periodic Hann analysis window.
///
/// Produces `floor((len - frame_len) / hop) + 1` frames; a signal shorter than
/// one frame is zero-padded to a single frame.
pub fn stft(w: &Waveform, cfg: &AnalysisConfig) -> Result<ComplexSpectrogram> {
    w.validate()?;
    cfg.validate()?;
    let fft = Fft::new(cfg.fft_size)?;
    let window = hann_periodic(cfg.frame_len);
    let frames = cfg.frame_count(w.len());
    let bins = cfg.bins();
    let mut data = Vec::with_capacity(frames * bins);
    let mut frame = vec![0.0; cfg.frame_len];
    let mut spec = Vec::with_capacity(cfg.fft_size);
    for i in 0..frames {
        let start = i * cfg.hop;
        for (t, slot) in frame.iter_mut().enumerate() {
            *slot = w.samples().get(start + t).copied().unwrap_or(0.0) * window[t];
        }
        fft.forward_real(&frame, &mut spec);
        data.extend_from_slice(&spec);
    }
    ComplexSpectrogram::new(frames, data, w.sample_rate(), *cfg)
}

/// Weighted overlap-add synthesis, truncated or zero-padded to `target_len`.
pub fn istft(spec: &ComplexSpectrogram, target_len: usize) -> Result<Waveform> {
    spec.check_consistent()?;
    let cfg = spec.config();
    let fft = Fft::new(cfg.fft_size)?;
    let window = hann_periodic(cfg.frame_len);
    let span = (spec.frames().max(1) - 1) * cfg.hop + cfg.frame_len;
    let mut out = vec![0.0; span];
    let mut norm = vec![0.0; span];
    let mut buf = Vec::with_capacity(cfg.fft_size);
    for i in 0..spec.frames() {
        fft.inverse_real(spec.frame(i), &mut buf);
        let start = i * cfg.hop;
        for t in 0..cfg.frame_len {
            out[start + t] += buf[t] * window[t];
            norm[start + t] += window[t] * window[t];
        }
    }
    for (v, n) in out.iter_mut().zip(&norm) {
        *v /= n.max(WINDOW_NORM_FLOOR);
    }
    out.resize(target_len, 0.0);
    Ok(Waveform::new(out, spec.sample_rate()))
}

/// `ln(max(|X|^2, log_floor))` per time-frequency cell.
pub fn lps(spec: &ComplexSpectrogram, cfg: &AnalysisConfig) -> Result<LpsMatrix> {
    spec.check_consistent()?;
    cfg.validate()?;
    let values = spec.as_slice().iter().map(|c| math::ln(c.norm_sqr().max(cfg.log_floor))).collect();
    Ok(LpsMatrix(Matrix::from_vec(spec.frames(), spec.bins(), values)?))
}

/// Concatenates each frame with its `radius` neighbours on both sides,
/// replicating the first/last frame past the edges.
pub fn splice(lps: &LpsMatrix, radius: usize) -> SplicedLps {
    let frames = lps.frames();
    let bins = lps.bins();
    let width = 2 * radius + 1;
    let mut values = Matrix::zeros(frames, bins * width);
    for i in 0..frames {
        let row = values.row_mut(i);
        for (slot, offset) in (0..width).enumerate() {
            let src = (i + offset).saturating_sub(radius).min(frames.saturating_sub(1));
            row[slot * bins..(slot + 1) * bins].copy_from_slice(lps.0.row(src));
        }
    }
    SplicedLps { values, context_radius: radius }
}

/// Rebuilds a complex spectrogram with magnitude `exp(lps / 2)` and the phase
/// of `phase_src`.
pub fn restore_spectrum(est: &LpsMatrix, phase_src: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if est.frames() != phase_src.frames() || est.bins() != phase_src.bins() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {}x{} vs phase source {}x{}",
            est.frames(),
            est.bins(),
            phase_src.frames(),
            phase_src.bins()
        )));
    }
    let data = est
        .0
        .as_slice()
        .iter()
        .zip(phase_src.as_slice())
        .map(|(&l, &z)| {
            let mag = math::exp(l / 2.0);
            let r = z.norm();
            if r > 0.0 {
                z * (mag / r)
            } else {
                Complex64::new(mag, 0.0)
            }
        })
        .collect();
    ComplexSpectrogram::new(phase_src.frames(), data, phase_src.sample_rate(), *phase_src.config())
}

/// Full spectral-mapping chain: STFT, LPS, splicing, the model, restoration
/// with the input phase and ISTFT. The output has the input's length.
pub fn dereverb_pipeline<F>(y: &Waveform, cfg: &AnalysisConfig, model_fn: F) -> Result<Waveform>
where
    F: FnOnce(&SplicedLps) -> Result<LpsMatrix>,
{
    let spec = stft(y, cfg)?;
    let features = lps(&spec, cfg)?;
    let spliced = splice(&features, cfg.context_radius);
    let estimate = model_fn(&spliced)?;
    if estimate.frames() != spec.frames() || estimate.bins() != spec.bins() {
        return Err(Error::ShapeMismatch(format!(
            "model produced {}x{}, expected {}x{}",
            estimate.frames(),
            estimate.bins(),
            spec.frames(),
            spec.bins()
        )));
    }
    let restored = restore_spectrum(&estimate, &spec)?;
    istft(&restored, y.len())
}

/// LPS features of a waveform (STFT followed by `lps`).
pub fn lps_of(w: &Waveform, cfg: &AnalysisConfig) -> Result<LpsMatrix> {
    lps(&stft(w, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16_000)
    }

    fn rel_interior_error(a: &[f64], b: &[f64], edge: usize) -> f64 {
        let num: f64 = a[edge..a.len() - edge].iter().zip(&b[edge..b.len() - edge]).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = a[edge..a.len() - edge].iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }

    #[test]
    fn silence_gives_zero_spectrogram() {
        let spec = stft(&Waveform::zeros(16_000, 16_000), &AnalysisConfig::default()).unwrap();
        assert_eq!((spec.frames(), spec.bins()), (61, 257));
        assert!(spec.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn short_signal_is_padded_to_one_frame() {
        let spec = stft(&noise(100, 1), &AnalysisConfig::default()).unwrap();
        assert_eq!(spec.frames(), 1);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let cfg = AnalysisConfig::default();
        assert_eq!(stft(&Waveform::new(vec![], 16_000), &cfg), Err(Error::EmptyWaveform));
        let w = Waveform::new(vec![0.0, f64::NAN, 1.0], 16_000);
        assert_eq!(stft(&w, &cfg), Err(Error::NonFiniteSample(1)));
    }

    #[test]
    fn config_validation() {
        let bad = [
            AnalysisConfig { hop: 0, ..Default::default() },
            AnalysisConfig { hop: 600, ..Default::default() },
            AnalysisConfig { fft_size: 256, ..Default::default() },
            AnalysisConfig { fft_size: 768, frame_len: 768, hop: 384, ..Default::default() },
            AnalysisConfig { log_floor: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn round_trip_interior() {
        let cfg = AnalysisConfig::default();
        let w = noise(16_000, 9);
        let back = istft(&stft(&w, &cfg).unwrap(), w.len()).unwrap();
        assert!(rel_interior_error(w.samples(), back.samples(), cfg.frame_len) < 1e-6);
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let cfg = AnalysisConfig::default();
        let spec = ComplexSpectrogram::zeros(20, 16_000, cfg).unwrap();
        let w = istft(&spec, 4000).unwrap();
        assert_eq!(w.len(), 4000);
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubled_magnitude_doubles_signal() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::new(
            (0..16_000).map(|n| 0.5 * (core::f64::consts::TAU * 440.0 * n as f64 / 16_000.0).sin()).collect(),
            16_000,
        );
        let mut spec = stft(&w, &cfg).unwrap();
        for c in spec.as_mut_slice() {
            *c *= 2.0;
        }
        let back = istft(&spec, w.len()).unwrap();
        let doubled = w.scaled(2.0);
        assert!(rel_interior_error(doubled.samples(), back.samples(), cfg.frame_len) < 1e-3);
    }

    #[test]
    fn istft_rejects_inconsistent_spectrogram() {
        let mut spec = ComplexSpectrogram::zeros(3, 16_000, AnalysisConfig::default()).unwrap();
        spec.bins = 10;
        assert!(matches!(istft(&spec, 100), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn lps_floor_and_unit_values() {
        let cfg = AnalysisConfig::default();
        let mut spec = ComplexSpectrogram::zeros(2, 16_000, cfg).unwrap();
        spec.as_mut_slice()[1] = Complex64::new(1.0, 0.0);
        spec.as_mut_slice()[2] = Complex64::new(0.0, core::f64::consts::E);
        let l = lps(&spec, &cfg).unwrap();
        assert!((l.as_matrix().get(0, 0) - (-27.631021115928547)).abs() < 1e-12);
        assert_eq!(l.as_matrix().get(0, 1), 0.0);
        assert!((l.as_matrix().get(0, 2) - 2.0).abs() < 1e-15);
        assert!(l.as_matrix().as_slice().iter().all(|&v| v >= 1e-12f64.ln()));
    }

    #[test]
    fn splice_single_frame_replicates() {
        let row: Vec<f64> = (0..257).map(|v| v as f64).collect();
        let l = LpsMatrix::new(Matrix::from_rows(std::slice::from_ref(&row)).unwrap());
        let s = splice(&l, 5);
        assert_eq!((s.frames(), s.dim()), (1, 2827));
        for k in 0..11 {
            assert_eq!(&s.as_matrix().row(0)[k * 257..(k + 1) * 257], &row[..]);
        }
    }

    #[test]
    fn splice_zero_radius_is_identity() {
        let l = LpsMatrix::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap());
        assert_eq!(splice(&l, 0).as_matrix(), l.as_matrix());
    }

    #[test]
    fn splice_edge_replication_enumerated() {
        let (r0, r1, r2) = ([1.0, 2.0], [3.0, 4.0], [5.0, 6.0]);
        let l = LpsMatrix::new(Matrix::from_rows(&[r0, r1, r2]).unwrap());
        let s = splice(&l, 1);
        let want = Matrix::from_rows(&[
            [r0, r0, r1].concat(),
            [r0, r1, r2].concat(),
            [r1, r2, r2].concat(),
        ])
        .unwrap();
        assert_eq!(s.as_matrix(), &want);
        assert_eq!(s.center_frames().as_matrix(), l.as_matrix());
    }

    #[test]
    fn restore_unit_magnitude_is_exact() {
        let cfg = AnalysisConfig::default();
        let mut spec = ComplexSpectrogram::zeros(1, 16_000, cfg).unwrap();
        let units = [
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(0.6, 0.8),
        ];
        for (i, c) in spec.as_mut_slice().iter_mut().enumerate() {
            *c = units[i % units.len()];
        }
        let est = LpsMatrix::new(Matrix::zeros(1, 257));
        assert_eq!(restore_spectrum(&est, &spec).unwrap(), spec);
    }

    #[test]
    fn restore_value_e() {
        let cfg = AnalysisConfig::default();
        let mut spec = ComplexSpectrogram::zeros(1, 16_000, cfg).unwrap();
        spec.as_mut_slice().fill(Complex64::new(0.3, 0.0));
        let est = LpsMatrix::new(Matrix::filled(1, 257, 2.0));
        let out = restore_spectrum(&est, &spec).unwrap();
        assert!((out.get(0, 7) - Complex64::new(core::f64::consts::E, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn restore_inverts_lps() {
        let cfg = AnalysisConfig::default();
        let spec = stft(&noise(8000, 5), &cfg).unwrap();
        let back = restore_spectrum(&lps(&spec, &cfg).unwrap(), &spec).unwrap();
        for (a, b) in spec.as_slice().iter().zip(back.as_slice()) {
            if a.norm_sqr() > cfg.log_floor {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn restore_shape_mismatch() {
        let cfg = AnalysisConfig::default();
        let spec = ComplexSpectrogram::zeros(2, 16_000, cfg).unwrap();
        let est = LpsMatrix::new(Matrix::zeros(3, 257));
        assert!(matches!(restore_spectrum(&est, &spec), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn pipeline_identity_and_silence_models() {
        let cfg = AnalysisConfig::default();
        let y = noise(12_345, 11).scaled(0.3);
        let out = dereverb_pipeline(&y, &cfg, |s| Ok(s.center_frames())).unwrap();
        assert_eq!(out.len(), y.len());
        assert!(rel_interior_error(y.samples(), out.samples(), cfg.frame_len) < 1e-3);

        let floor = cfg.log_floor.ln();
        let silent = dereverb_pipeline(&y, &cfg, |s| {
            Ok(LpsMatrix::new(Matrix::filled(s.frames(), cfg.bins(), floor)))
        })
        .unwrap();
        assert_eq!(silent.len(), y.len());
        assert!(silent.rms() < 1e-5);
    }

    #[test]
    fn pipeline_rejects_wrong_model_shape() {
        let cfg = AnalysisConfig::default();
        let y = noise(4000, 2);
        let r = dereverb_pipeline(&y, &cfg, |s| Ok(LpsMatrix::new(Matrix::zeros(s.frames(), 10))));
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }
}
