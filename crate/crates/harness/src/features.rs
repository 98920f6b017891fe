//! On-disk cache of per-utterance LPS features and normalizer statistics.
//!
//! Feature files (`*.lps`): `"DRVF"`, u32 utterances, u32 bins, one u32
//! frame count per utterance, then the reverberant LPS rows of every
//! utterance followed by the clean LPS rows, all f64 little-endian.
//! Normalizer files (`*.norm`): `"DRVN"`, u32 in_dim, u32 out_dim, then
//! input mean, input std, output mean, output std.

use std::path::Path;

use dereverb_core::dsp::{splice, LpsMatrix};
use dereverb_core::nn::FeatureNormalizer;
use dereverb_core::Matrix;

use crate::error::{io_err, CoreContext, HarnessError, Result};

/// Reverberant/clean LPS pairs of a set of utterances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub reverb: Vec<Matrix>,
    pub clean: Vec<Matrix>,
}

impl FeatureSet {
    pub fn push(&mut self, reverb: Matrix, clean: Matrix) {
        self.reverb.push(reverb);
        self.clean.push(clean);
    }

    pub fn frames(&self) -> usize {
        self.reverb.iter().map(Matrix::rows).sum()
    }

    pub fn extend(&mut self, other: &FeatureSet) {
        self.reverb.extend(other.reverb.iter().cloned());
        self.clean.extend(other.clean.iter().cloned());
    }

    /// Spliced inputs and clean targets, spliced within each utterance.
    pub fn training_pairs(&self, radius: usize) -> Result<(Matrix, Matrix)> {
        if self.reverb.is_empty() {
            return Err(HarnessError::Data("no training utterances".into()));
        }
        let spliced: Vec<Matrix> = self.reverb.iter().map(|m| splice(&LpsMatrix::new(m.clone()), radius).into_matrix()).collect();
        let x = Matrix::vstack(&spliced.iter().collect::<Vec<_>>()).context("stacking inputs")?;
        let y = Matrix::vstack(&self.clean.iter().collect::<Vec<_>>()).context("stacking targets")?;
        Ok((x, y))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bins = self.reverb.first().map_or(0, Matrix::cols);
        let mut out = Vec::with_capacity(12 + 4 * self.reverb.len() + 16 * self.frames() * bins);
        out.extend_from_slice(b"DRVF");
        out.extend_from_slice(&(self.reverb.len() as u32).to_le_bytes());
        out.extend_from_slice(&(bins as u32).to_le_bytes());
        for m in &self.reverb {
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        }
        for m in self.reverb.iter().chain(&self.clean) {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let corrupt = || HarnessError::Data(format!("{}: corrupted feature cache", path.display()));
        let mut r = Cursor { buf: &bytes, pos: 0 };
        if r.take(4).ok_or_else(corrupt)? != b"DRVF" {
            return Err(corrupt());
        }
        let n = r.u32().ok_or_else(corrupt)? as usize;
        let bins = r.u32().ok_or_else(corrupt)? as usize;
        let frames = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Option<Vec<_>>>().ok_or_else(corrupt)?;
        let read_set = |r: &mut Cursor| -> Option<Vec<Matrix>> {
            frames.iter().map(|&f| Matrix::from_vec(f, bins, r.f64s(f * bins)?).ok()).collect()
        };
        let reverb = read_set(&mut r).ok_or_else(corrupt)?;
        let clean = read_set(&mut r).ok_or_else(corrupt)?;
        if r.pos != bytes.len() {
            return Err(corrupt());
        }
        Ok(Self { reverb, clean })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len())?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let b = self.take(n.checked_mul(8)?)?;
        Some(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn save_normalizer(path: &Path, n: &FeatureNormalizer) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(b"DRVN");
    out.extend_from_slice(&(n.in_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(n.out_dim() as u32).to_le_bytes());
    for v in n.in_mean.iter().chain(&n.in_std).chain(&n.out_mean).chain(&n.out_std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn load_normalizer(path: &Path) -> Result<FeatureNormalizer> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let corrupt = || HarnessError::Data(format!("{}: corrupted normalizer file", path.display()));
    let mut r = Cursor { buf: &bytes, pos: 0 };
    if r.take(4).ok_or_else(corrupt)? != b"DRVN" {
        return Err(corrupt());
    }
    let (i, o) = (r.u32().ok_or_else(corrupt)? as usize, r.u32().ok_or_else(corrupt)? as usize);
    let n = FeatureNormalizer {
        in_mean: r.f64s(i).ok_or_else(corrupt)?,
        in_std: r.f64s(i).ok_or_else(corrupt)?,
        out_mean: r.f64s(o).ok_or_else(corrupt)?,
        out_std: r.f64s(o).ok_or_else(corrupt)?,
    };
    if r.pos != bytes.len() {
        return Err(corrupt());
    }
    n.validate().context(path.display().to_string())?;
    Ok(n)
}
