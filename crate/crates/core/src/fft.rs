//! Iterative radix-2 complex FFT for power-of-two lengths.

use alloc::vec::Vec;
use num_complex::Complex64;

use crate::math;
use crate::{Error, Result};

/// A planned transform of one fixed power-of-two length.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidConfig("fft length must be a power of two"));
        }
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -math::TAU * k as f64 / len as f64;
                Complex64::new(math::cos(angle), math::sin(angle))
            })
            .collect();
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Ok(Self { len, twiddles, bitrev })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place forward transform, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// In-place inverse transform including the `1/N` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.len, "fft buffer length");
        for i in 0..self.len {
            let j = self.bitrev[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= self.len {
            let half = size / 2;
            let stride = self.len / size;
            for start in (0..self.len).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            size *= 2;
        }
    }

    /// One-sided spectrum (`len/2 + 1` bins) of a real frame, zero-padded to `len`.
    pub fn forward_real(&self, input: &[f64], out: &mut Vec<Complex64>) {
        out.clear();
        out.extend(input.iter().map(|&x| Complex64::new(x, 0.0)));
        out.resize(self.len, Complex64::new(0.0, 0.0));
        self.forward(out);
        out.truncate(self.len / 2 + 1);
    }

    /// Real signal of length `len` from a one-sided spectrum of `len/2 + 1` bins.
    /// Imaginary parts of the DC and Nyquist bins are ignored.
    pub fn inverse_real(&self, half: &[Complex64], out: &mut Vec<f64>) {
        let n = self.len;
        assert_eq!(half.len(), n / 2 + 1, "one-sided spectrum length");
        let mut full = Vec::with_capacity(n);
        full.extend_from_slice(half);
        full[0].im = 0.0;
        if n > 1 {
            full[n / 2].im = 0.0;
        }
        for k in (1..n - n / 2).rev() {
            full.push(half[k].conj());
        }
        full.truncate(n);
        self.inverse(&mut full);
        out.clear();
        out.extend(full.iter().map(|c| c.re));
    }
}

/// Smallest power of two `>= n` (and at least 1).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (t, &v)| {
                    let a = -2.0 * core::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                    acc + v * Complex64::new(a.cos(), a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1usize, 2, 4, 8, 64, 512] {
            let x: Vec<Complex64> =
                (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let mut y = x.clone();
            Fft::new(n).unwrap().forward(&mut y);
            let oracle = naive_dft(&x);
            for (a, b) in y.iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-10, "n={n}");
            }
        }
    }

    #[test]
    fn real_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fft = Fft::new(256).unwrap();
        let mut spec = Vec::new();
        fft.forward_real(&x, &mut spec);
        assert_eq!(spec.len(), 129);
        let mut back = Vec::new();
        fft.inverse_real(&spec, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(0).is_err());
        assert!(Fft::new(12).is_err());
    }
}
