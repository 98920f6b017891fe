use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Trainable;
use crate::math;
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Upper bound on passes over the training split.
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Fraction of rows held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            minibatch_size: 128,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            validation_fraction: 0.1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(Error::InvalidTrainConfig("minibatch size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidTrainConfig("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidTrainConfig("Adam betas must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidTrainConfig("epsilon must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidTrainConfig("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Adam optimizer state, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<M: Trainable + ?Sized>(model: &M, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step<M: Trainable + ?Sized>(&mut self, model: &mut M, grads: &[Vec<f64>]) {
        self.step += 1;
        let c1 = 1.0 - math::powi(self.beta1, self.step);
        let c2 = 1.0 - math::powi(self.beta2, self.step);
        for (t, p) in model.params_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[t], &mut self.v[t], &grads[t]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch, measured after the epoch's updates.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
    pub final_loss: f64,
}

const EVAL_CHUNK: usize = 512;

/// Row-weighted mean loss over fixed-order chunks.
fn full_loss<M: Trainable + ?Sized>(model: &M, x: &Matrix, y: &Matrix, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        total += model.loss(&x.select_rows(chunk), &y.select_rows(chunk))? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

fn snapshot<M: Trainable + ?Sized>(model: &M) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| p.to_vec()).collect()
}

fn restore<M: Trainable + ?Sized>(model: &mut M, saved: &[Vec<f64>]) {
    for (p, s) in model.params_mut().into_iter().zip(saved) {
        p.copy_from_slice(s);
    }
}

/// Minibatch Adam on `(inputs, targets)`. With a validation split, training
/// stops after `patience` epochs without improvement and the best parameters
/// are restored.
pub fn train<M: Trainable + ?Sized>(model: &mut M, inputs: &Matrix, targets: &Matrix, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if inputs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if targets.rows() != inputs.rows() {
        return Err(Error::ShapeMismatch(alloc::format!("{} input rows vs {} target rows", inputs.rows(), targets.rows())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    let n_val = if cfg.validation_fraction > 0.0 && inputs.rows() >= 2 {
        ((inputs.rows() as f64 * cfg.validation_fraction) as usize).clamp(1, inputs.rows() - 1)
    } else {
        0
    };
    if n_val > 0 {
        order.shuffle(&mut rng);
    }
    let (val_idx, train_idx) = order.split_at(n_val);
    let (val_idx, mut train_idx) = (val_idx.to_vec(), train_idx.to_vec());
    train_idx.sort_unstable();
    let eval_idx = train_idx.clone();

    let mut opt = Adam::new(model, cfg);
    let mut report = TrainReport { train_loss: Vec::new(), val_loss: Vec::new(), epochs_run: 0, best_epoch: 0, final_loss: 0.0 };
    let mut best_val = if n_val > 0 { full_loss(model, inputs, targets, &val_idx)? } else { f64::INFINITY };
    let mut best_params = if n_val > 0 { Some(snapshot(model)) } else { None };
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            train_idx.shuffle(&mut rng);
        }
        for (b, batch) in train_idx.chunks(cfg.minibatch_size).enumerate() {
            let (loss, grads) = model.loss_and_grad(&inputs.select_rows(batch), &targets.select_rows(batch))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.step(model, &grads.0);
        }
        let tl = full_loss(model, inputs, targets, &eval_idx)?;
        if !tl.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX });
        }
        report.train_loss.push(tl);
        report.epochs_run = epoch + 1;
        log::debug!("epoch {} train loss {tl:.6}", epoch + 1);
        if n_val > 0 {
            let vl = full_loss(model, inputs, targets, &val_idx)?;
            report.val_loss.push(vl);
            if vl < best_val {
                best_val = vl;
                best_params = Some(snapshot(model));
                report.best_epoch = epoch + 1;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        } else {
            report.best_epoch = epoch + 1;
        }
    }
    if let Some(saved) = best_params {
        restore(model, &saved);
    }
    report.final_loss = full_loss(model, inputs, targets, &eval_idx)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, FeatureNormalizer, HddaeArch, HddaeModel};
    use rand::Rng;

    fn toy_task(rows: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(rows, 4, (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut y = Matrix::zeros(rows, 2);
        for r in 0..rows {
            let v = x.row(r);
            y.set(r, 0, 0.5 * v[0] - v[1] + 0.25 * v[3]);
            y.set(r, 1, v[2] + 0.3 * v[0] - 0.1);
        }
        (x, y)
    }

    fn linear_model(seed: u64) -> HddaeModel {
        let arch = HddaeArch { input_dim: 4, hidden_dim: 8, output_dim: 2, hidden_layers: 2, activation: Activation::Identity };
        let mut m = HddaeModel::new(arch, seed).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        m
    }

    #[test]
    fn learns_a_linear_map() {
        let (x, y) = toy_task(256, 1);
        let mut m = linear_model(2);
        let initial = m.loss(&x, &y).unwrap();
        let cfg = TrainConfig { epochs: 200, minibatch_size: 32, learning_rate: 1e-2, validation_fraction: 0.0, ..TrainConfig::default() };
        let report = train(&mut m, &x, &y, &cfg).unwrap();
        assert!(report.final_loss < 0.01 * initial, "{} vs {initial}", report.final_loss);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (x, y) = toy_task(64, 3);
        let mut m = linear_model(4);
        let before = m.clone();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, minibatch_size: 16, ..TrainConfig::default() };
        let report = train(&mut m, &x, &y, &cfg).unwrap();
        assert_eq!(m, before);
        assert!(report.train_loss.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_history() {
        let (x, y) = toy_task(100, 5);
        let cfg = TrainConfig { epochs: 5, learning_rate: 1e-3, minibatch_size: 16, seed: 9, ..TrainConfig::default() };
        let (mut a, mut b) = (linear_model(6), linear_model(6));
        let ra = train(&mut a, &x, &y, &cfg).unwrap();
        let rb = train(&mut b, &x, &y, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_restores_best() {
        let (x, y) = toy_task(64, 7);
        let mut m = linear_model(8);
        // an oversized step diverges after the first epoch or two
        let cfg = TrainConfig { epochs: 30, learning_rate: 5.0, minibatch_size: 8, patience: 3, ..TrainConfig::default() };
        match train(&mut m, &x, &y, &cfg) {
            Ok(r) => {
                assert!(r.epochs_run < 30 || r.best_epoch == r.epochs_run);
                assert!(r.val_loss.iter().all(|v| *v >= r.val_loss[r.best_epoch.max(1) - 1]) || r.best_epoch == 0);
            }
            Err(e) => assert!(matches!(e, Error::NonFiniteLoss { .. })),
        }
    }

    #[test]
    fn rejects_empty_and_bad_configs() {
        let mut m = linear_model(0);
        let cfg = TrainConfig::default();
        assert_eq!(train(&mut m, &Matrix::zeros(0, 4), &Matrix::zeros(0, 2), &cfg), Err(Error::EmptyDataset));
        let (x, y) = toy_task(8, 0);
        let bad = TrainConfig { minibatch_size: 0, ..cfg };
        assert!(matches!(train(&mut m, &x, &y, &bad), Err(Error::InvalidTrainConfig(_))));
    }
}
