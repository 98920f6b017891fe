//! Mono WAV input/output.

use std::path::Path;

use dereverb_core::dsp::Waveform;
use dereverb_core::rir::ImpulseResponse;

use crate::error::{HarnessError, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> HarnessError + '_ {
    move |source| HarnessError::Wav { path: path.to_path_buf(), source }
}

/// Reads a mono PCM (8/16/24/32-bit) or 32-bit float WAV.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(HarnessError::BadWav { path: path.into(), msg: format!("expected mono, found {} channels", spec.channels) });
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 / scale)).collect::<Result<_, _>>().map_err(wav_err(path))?
        }
        hound::SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>().map_err(wav_err(path))?,
    };
    if samples.is_empty() {
        return Err(HarnessError::BadWav { path: path.into(), msg: "no samples".into() });
    }
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Reads a WAV and insists on `rate`; corpus audio is never resampled.
pub fn read_wav_at(path: &Path, rate: u32) -> Result<Waveform> {
    let w = read_wav(path)?;
    if w.sample_rate() != rate {
        return Err(HarnessError::BadWav { path: path.into(), msg: format!("sample rate {} Hz, expected {rate} Hz", w.sample_rate()) });
    }
    Ok(w)
}

/// Writes 16-bit PCM without dither, clipping to [-1, 1]. Returns the number
/// of clipped samples.
pub fn write_pcm16(path: &Path, w: &Waveform) -> Result<usize> {
    let spec = hound::WavSpec { channels: 1, sample_rate: w.sample_rate(), bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    let mut clipped = 0;
    for &s in w.samples() {
        if !(-1.0..=1.0).contains(&s) {
            clipped += 1;
        }
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))?;
    Ok(clipped)
}

/// Writes an impulse response as 32-bit float.
pub fn write_rir(path: &Path, rir: &ImpulseResponse) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate: rir.sample_rate(), bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    for &s in rir.taps() {
        writer.write_sample(s as f32).map_err(wav_err(path))?;
    }
    writer.finalize().map_err(wav_err(path))
}
