//! Image-source room impulse responses, Schroeder T60 measurement and the
//! convolutional reverberation model `y = s * g` (no additive noise).

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::fft::{next_pow2, Fft};
use crate::math;
use crate::{Error, Result};

/// Sabine constant, `24 ln(10) / c` for c = 343 m/s, rounded as usually quoted.
const SABINE: f64 = 0.161;

/// Half-width of the fractional-delay interpolator; the kernel has `2 * 40 + 1` taps.
pub const SINC_HALF_WIDTH: usize = 40;

/// Shoebox room with one source and one receiver, all in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoomSpec {
    pub dims: [f64; 3],
    pub source: [f64; 3],
    pub receiver: [f64; 3],
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidRoom("dimensions must be positive"));
        }
        for axis in 0..3 {
            for p in [self.source[axis], self.receiver[axis]] {
                if !(p > 0.0 && p < self.dims[axis]) {
                    return Err(Error::InvalidRoom("source and receiver must lie strictly inside the room"));
                }
            }
        }
        if self.source == self.receiver {
            return Err(Error::InvalidRoom("source and receiver coincide"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Source-receiver distance.
    pub fn direct_distance(&self) -> f64 {
        distance(&self.source, &self.receiver)
    }

    /// Draws source and receiver positions at least `wall_margin` from every
    /// wall and at least `min_separation` apart.
    pub fn random(dims: [f64; 3], seed: u64, wall_margin: f64, min_separation: f64) -> Result<Self> {
        if dims.iter().any(|&d| d <= 2.0 * wall_margin) {
            return Err(Error::InvalidRoom("room too small for the wall margin"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = |rng: &mut ChaCha8Rng| {
            let mut p = [0.0; 3];
            for (axis, v) in p.iter_mut().enumerate() {
                *v = rng.gen_range(wall_margin..dims[axis] - wall_margin);
            }
            p
        };
        for _ in 0..10_000 {
            let source = point(&mut rng);
            let receiver = point(&mut rng);
            if distance(&source, &receiver) >= min_separation {
                let room = Self { dims, source, receiver };
                room.validate()?;
                return Ok(room);
            }
        }
        Err(Error::InvalidRoom("could not place source and receiver"))
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    math::sqrt((0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum())
}

/// How many image orders to visit along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageOrder {
    /// `ceil(c * t60 / min_dim) + 1`.
    #[default]
    Auto,
    Max(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirConfig {
    pub t60: f64,
    pub sample_rate: u32,
    pub rir_len: usize,
    pub sound_speed: f64,
    pub max_image_order: ImageOrder,
    /// Optional [`high_pass`] cutoff applied inside [`generate_rir`], so the
    /// T60 refinement sees the filtered response.
    pub high_pass_hz: Option<f64>,
}

impl RirConfig {
    /// Length `ceil(t60 * fs)` and c = 343 m/s.
    pub fn new(t60: f64, sample_rate: u32) -> Self {
        Self {
            t60,
            sample_rate,
            rir_len: math::ceil(t60 * sample_rate as f64) as usize,
            sound_speed: 343.0,
            max_image_order: ImageOrder::Auto,
            high_pass_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    taps: Vec<f64>,
    sample_rate: u32,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Self {
        Self { taps, sample_rate }
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }

    /// Rescales to unit energy. No-op on an all-zero response.
    pub fn normalized(mut self) -> Self {
        let e = self.energy();
        if e > 0.0 {
            let g = 1.0 / math::sqrt(e);
            self.taps.iter_mut().for_each(|v| *v *= g);
        }
        self
    }

    /// Index of the first non-zero tap.
    pub fn first_nonzero(&self) -> Option<usize> {
        self.taps.iter().position(|&v| v != 0.0)
    }
}

/// Uniform wall reflection coefficient from Sabine's formula:
/// `alpha = 0.161 V / (S t60)`, `beta = sqrt(1 - alpha)`.
pub fn reflection_from_t60(room: &RoomSpec, t60: f64) -> Result<f64> {
    if !(t60 > 0.0 && t60.is_finite()) {
        return Err(Error::UnachievableT60 { t60, alpha: f64::INFINITY });
    }
    let alpha = SABINE * room.volume() / (room.surface() * t60);
    if alpha >= 1.0 {
        return Err(Error::UnachievableT60 { t60, alpha });
    }
    Ok(math::sqrt(1.0 - alpha))
}

/// Maximum refinement passes in [`generate_rir`].
const MAX_REFINEMENTS: usize = 8;
/// Relative T60 error at which refinement stops.
const REFINE_TOLERANCE: f64 = 0.02;

/// Image-source RIR for the T60 in `cfg`.
///
/// Starts from the Sabine reflection coefficient and, because specular images
/// in a shoebox do not decay at the diffuse-field rate, rescales `ln(beta)` by
/// the ratio of measured (Schroeder) to target T60 until they agree within 2%.
pub fn generate_rir(room: &RoomSpec, cfg: &RirConfig) -> Result<ImpulseResponse> {
    room.validate()?;
    if cfg.high_pass_hz.is_some_and(|fc| !(fc > 0.0 && fc < cfg.sample_rate as f64 / 2.0)) {
        return Err(Error::InvalidConfig("high-pass cutoff must lie in (0, fs/2)"));
    }
    let mut beta = reflection_from_t60(room, cfg.t60)?;
    let mut best: Option<(f64, ImpulseResponse)> = None;
    for _ in 0..MAX_REFINEMENTS {
        let mut h = generate_rir_with_reflection(room, beta, cfg)?;
        if let Some(fc) = cfg.high_pass_hz {
            h = high_pass(&h, fc);
        }
        let measured = match measure_t60(&h) {
            Ok(t) => t,
            Err(_) => return Ok(best.map_or(h, |(_, b)| b)),
        };
        let err = math::abs(measured / cfg.t60 - 1.0);
        let done = err <= REFINE_TOLERANCE;
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, h));
        }
        if done {
            break;
        }
        let log_beta = math::ln(beta) * measured / cfg.t60;
        beta = math::exp(log_beta).clamp(1e-6, 1.0 - 1e-9);
    }
    Ok(best.expect("at least one pass").1)
}

/// Allen-Berkley image construction with a fixed, frequency-independent wall
/// reflection coefficient. Each image contributes `beta^k / (4 pi d)` placed at
/// the fractional delay `d / c * fs` through an 81-tap Hann-windowed sinc.
pub fn generate_rir_with_reflection(room: &RoomSpec, beta: f64, cfg: &RirConfig) -> Result<ImpulseResponse> {
    room.validate()?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidRoom("reflection coefficient outside [0, 1]"));
    }
    if cfg.sample_rate == 0 || cfg.sound_speed.is_nan() || cfg.sound_speed <= 0.0 {
        return Err(Error::InvalidRoom("sample rate and sound speed must be positive"));
    }
    let fs = cfg.sample_rate as f64;
    let c = cfg.sound_speed;
    let len = cfg.rir_len;
    let mut taps = vec![0.0; len];
    if len == 0 {
        return Ok(ImpulseResponse::new(taps, cfg.sample_rate));
    }

    // Images farther than this cannot reach the response window.
    let max_dist = (len + SINC_HALF_WIDTH) as f64 * c / fs;
    let order = match cfg.max_image_order {
        ImageOrder::Max(n) => n as i64,
        ImageOrder::Auto => {
            let min_dim = room.dims.iter().copied().fold(f64::INFINITY, f64::min);
            math::ceil(c * cfg.t60 / min_dim) as i64 + 1
        }
    };
    let axis_range = |axis: usize| -> i64 {
        let by_dist = math::ceil(max_dist / (2.0 * room.dims[axis])) as i64 + 1;
        order.min(by_dist)
    };
    let (nx, ny, nz) = (axis_range(0), axis_range(1), axis_range(2));
    let hw = SINC_HALF_WIDTH as f64;
    let src = room.source;
    let rcv = room.receiver;
    let [lx, ly, lz] = room.dims;

    for mx in -nx..=nx {
        for qx in 0..2i64 {
            let dx = (1 - 2 * qx) as f64 * src[0] + 2.0 * mx as f64 * lx - rcv[0];
            let kx = (mx - qx).unsigned_abs() + mx.unsigned_abs();
            for my in -ny..=ny {
                for qy in 0..2i64 {
                    let dy = (1 - 2 * qy) as f64 * src[1] + 2.0 * my as f64 * ly - rcv[1];
                    let ky = (my - qy).unsigned_abs() + my.unsigned_abs();
                    let dxy2 = dx * dx + dy * dy;
                    if dxy2 > max_dist * max_dist {
                        continue;
                    }
                    for mz in -nz..=nz {
                        for qz in 0..2i64 {
                            let dz = (1 - 2 * qz) as f64 * src[2] + 2.0 * mz as f64 * lz - rcv[2];
                            let dist = math::sqrt(dxy2 + dz * dz);
                            if dist > max_dist {
                                continue;
                            }
                            let kz = (mz - qz).unsigned_abs() + mz.unsigned_abs();
                            let k = (kx + ky + kz) as u32;
                            let gain = math::powi(beta, k) / (4.0 * math::PI * dist);
                            if gain == 0.0 {
                                continue;
                            }
                            add_fractional_impulse(&mut taps, dist / c * fs, gain, hw);
                        }
                    }
                }
            }
        }
    }
    Ok(ImpulseResponse::new(taps, cfg.sample_rate))
}

fn add_fractional_impulse(taps: &mut [f64], delay: f64, gain: f64, hw: f64) {
    let lo = math::ceil(delay - hw).max(0.0);
    let hi = math::floor(delay + hw);
    if hi < 0.0 || taps.is_empty() {
        return;
    }
    let hi = (hi as usize).min(taps.len() - 1);
    let lo = lo as usize;
    if lo > hi {
        return;
    }
    // sin(pi (t0 + j)) = (-1)^j sin(pi t0); the window cosine advances by a
    // fixed rotation per tap.
    let t0 = lo as f64 - delay;
    let step = math::PI / (hw + 1.0);
    let (step_sin, step_cos) = (math::sin(step), math::cos(step));
    let mut sin_pi_t = math::sin(math::PI * t0);
    let (mut wc, mut ws) = (math::cos(step * t0), math::sin(step * t0));
    for (j, tap) in taps[lo..=hi].iter_mut().enumerate() {
        let t = t0 + j as f64;
        let sinc = if math::abs(t) < 1e-9 { 1.0 } else { sin_pi_t / (math::PI * t) };
        *tap += gain * 0.5 * (1.0 + wc) * sinc;
        sin_pi_t = -sin_pi_t;
        let next_c = wc * step_cos - ws * step_sin;
        ws = ws * step_cos + wc * step_sin;
        wc = next_c;
    }
}

/// Allen-Berkley second-order high-pass (the recursion used by common
/// image-method generators). Removes the DC build-up of all-positive image
/// sums; `cutoff_hz` is usually 100.
pub fn high_pass(rir: &ImpulseResponse, cutoff_hz: f64) -> ImpulseResponse {
    let w = math::TAU * cutoff_hz / rir.sample_rate() as f64;
    let r1 = math::exp(-w);
    let (b1, b2, a1) = (2.0 * r1 * math::cos(w), -r1 * r1, -(1.0 + r1));
    let (mut y0, mut y1, mut y2) = (0.0, 0.0, 0.0);
    let taps = rir
        .taps()
        .iter()
        .map(|&x| {
            y2 = y1;
            y1 = y0;
            y0 = b1 * y1 + b2 * y2 + x;
            y0 + a1 * y1 + r1 * y2
        })
        .collect();
    ImpulseResponse::new(taps, rir.sample_rate())
}

/// Energy decay curve in dB, `10 log10(E(n) / E(0))` with Schroeder backward
/// integration `E(n) = sum_{k >= n} h(k)^2`.
pub fn energy_decay_curve(rir: &ImpulseResponse) -> Result<Vec<f64>> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for (i, &v) in rir.taps().iter().enumerate().rev() {
        acc += v * v;
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total.is_nan() || total <= 0.0 {
        return Err(Error::NoDecaySpan("impulse response has no energy"));
    }
    Ok(edc.into_iter().map(|e| 10.0 * math::log10(e / total)).collect())
}

/// T60 from a least-squares line through the -5 dB .. -25 dB part of the
/// Schroeder decay curve, extrapolated to -60 dB.
pub fn measure_t60(rir: &ImpulseResponse) -> Result<f64> {
    if rir.sample_rate() == 0 {
        return Err(Error::UnsupportedSampleRate(0));
    }
    let edc = energy_decay_curve(rir)?;
    if !edc.iter().any(|&d| d <= -25.0) {
        return Err(Error::NoDecaySpan("decay curve never reaches -25 dB"));
    }
    let fs = rir.sample_rate() as f64;
    let (mut n, mut st, mut sd, mut stt, mut std_) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &d) in edc.iter().enumerate() {
        if (-25.0..=-5.0).contains(&d) {
            let t = i as f64 / fs;
            n += 1.0;
            st += t;
            sd += d;
            stt += t * t;
            std_ += t * d;
        }
    }
    if n < 2.0 {
        return Err(Error::NoDecaySpan("fewer than two samples between -5 and -25 dB"));
    }
    let denom = n * stt - st * st;
    let slope = (n * std_ - st * sd) / denom;
    if !slope.is_finite() || slope >= 0.0 {
        return Err(Error::NoDecaySpan("non-negative decay slope"));
    }
    Ok(-60.0 / slope)
}

/// Linear convolution truncated to `len(s)`, evaluated with FFTs.
pub fn convolve(s: &Waveform, g: &ImpulseResponse) -> Result<Waveform> {
    if s.sample_rate() != g.sample_rate() {
        return Err(Error::SampleRateMismatch(s.sample_rate(), g.sample_rate()));
    }
    if s.is_empty() || g.is_empty() {
        return Ok(Waveform::zeros(s.len(), s.sample_rate()));
    }
    let out = fft_convolve(s.samples(), g.taps(), s.len());
    Ok(Waveform::new(out, s.sample_rate()))
}

/// First `out_len` samples of the full linear convolution of `a` and `b`.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    let full = a.len() + b.len() - 1;
    let n = next_pow2(full);
    let fft = Fft::new(n).expect("power of two");
    let mut fa: Vec<Complex64> = a.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft.inverse(&mut fa);
    let mut out: Vec<f64> = fa.iter().take(out_len.min(full)).map(|c| c.re).collect();
    out.resize(out_len, 0.0);
    out
}
