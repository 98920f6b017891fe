//! Trainable networks: the highway deep denoising autoencoder and the fusion
//! CNN, both regressing LPS frames under a row-summed MSE objective.

mod cnn;
mod gradcheck;
mod hddae;
mod train;

use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::matrix::Matrix;
use crate::{Error, Result};

pub use cnn::{ConvLayer, FusionArch, FusionCnnModel};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use hddae::{HddaeArch, HddaeModel};
pub use train::{train, Adam, TrainConfig, TrainReport};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; used for linear probes of the architectures.
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully connected layer, `y = W x + b` with `W` stored `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: alloc::vec![0.0; in_dim * out_dim], bias: alloc::vec![0.0; out_dim] }
    }

    /// Uniform weights in `[-limit, limit]`, zero bias.
    pub fn uniform<R: Rng>(in_dim: usize, out_dim: usize, limit: f64, rng: &mut R) -> Self {
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-limit..=limit)).collect();
        Self { in_dim, out_dim, weights, bias: alloc::vec![0.0; out_dim] }
    }
}

/// He-uniform bound for ReLU layers.
pub fn he_limit(fan_in: usize) -> f64 {
    math::sqrt(6.0 / fan_in as f64)
}

/// Xavier/Glorot-uniform bound for the linear output layer.
pub fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    math::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Per-dimension zero-mean / unit-variance statistics for inputs and outputs.
/// Targets are learned in normalized units and mapped back on output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

/// Standard deviations below this are replaced by 1 (constant dimensions).
const MIN_STD: f64 = 1e-8;

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = alloc::vec![0.0; m.cols()];
    for row in m.row_iter() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = alloc::vec![0.0; m.cols()];
    for row in m.row_iter() {
        for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = math::sqrt(v / n);
            if s < MIN_STD {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

impl FeatureNormalizer {
    pub fn identity(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_mean: alloc::vec![0.0; in_dim],
            in_std: alloc::vec![1.0; in_dim],
            out_mean: alloc::vec![0.0; out_dim],
            out_std: alloc::vec![1.0; out_dim],
        }
    }

    pub fn fit(inputs: &Matrix, targets: &Matrix) -> Result<Self> {
        if inputs.rows() == 0 || targets.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let (in_mean, in_std) = column_stats(inputs);
        let (out_mean, out_std) = column_stats(targets);
        Ok(Self { in_mean, in_std, out_mean, out_std })
    }

    pub fn in_dim(&self) -> usize {
        self.in_mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.out_mean.len()
    }

    pub fn normalize_inputs(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, mu), sd) in out.row_mut(i).iter_mut().zip(&self.in_mean).zip(&self.in_std) {
                *v = (*v - mu) / sd;
            }
        }
        out
    }

    pub fn denormalize_outputs(&self, y: &mut Matrix) {
        for i in 0..y.rows() {
            for ((v, mu), sd) in y.row_mut(i).iter_mut().zip(&self.out_mean).zip(&self.out_std) {
                *v = *v * sd + mu;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_std.len() == self.in_mean.len()
            && self.out_std.len() == self.out_mean.len()
            && self.in_std.iter().chain(&self.out_std).all(|s| *s > 0.0 && s.is_finite())
            && self.in_mean.iter().chain(&self.out_mean).all(|m| m.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel("normalizer statistics must be finite with std > 0"))
        }
    }
}

/// Parameter gradients, one vector per parameter tensor in the model's order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(math::abs(*v)))
    }
}

/// A model with a fixed list of parameter tensors and an MSE objective.
pub trait Trainable {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    /// `(1/I) sum_i ||f(x_i) - y_i||^2` over the batch.
    fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64>;
    fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Gradients)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Accumulates column sums of `m` into `out`.
pub(crate) fn add_column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub(crate) fn check_batch(x: &Matrix, in_dim: usize, y: Option<(&Matrix, usize)>) -> Result<()> {
    if x.cols() != in_dim {
        return Err(Error::ShapeMismatch(alloc::format!("input width {} vs model {in_dim}", x.cols())));
    }
    if let Some((y, out_dim)) = y {
        if y.cols() != out_dim || y.rows() != x.rows() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "targets {}x{} vs expected {}x{out_dim}",
                y.rows(),
                y.cols(),
                x.rows()
            )));
        }
    }
    Ok(())
}
