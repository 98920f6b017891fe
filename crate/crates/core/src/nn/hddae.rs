use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{add_column_sums, check_batch, he_limit, xavier_limit, Activation, DenseLayer, FeatureNormalizer, Gradients, Trainable};
use crate::matrix::{matmul_a_b, matmul_a_bt, matmul_at_b, Matrix};
use crate::{Error, Result};

/// Layer sizes of a highway DDAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HddaeArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Number of hidden layers `L`; the last one concatenates the first
    /// hidden layer's output.
    pub hidden_layers: usize,
    pub activation: Activation,
}

impl HddaeArch {
    /// 2827 -> 2048 x L -> 257.
    pub fn full_size(hidden_layers: usize) -> Self {
        Self { input_dim: 2827, hidden_dim: 2048, output_dim: 257, hidden_layers, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers < 2 {
            return Err(Error::InvalidModel("highway DDAE needs at least two hidden layers"));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidModel("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Highway deep denoising autoencoder.
///
/// `layers[0..L-1]` are ordinary hidden layers, `layers[L-1]` is the highway
/// layer whose weights act on `h_{L-1}` (hidden x hidden) and whose bias has
/// length `2 * hidden` because it is added after concatenating `h_1`, and
/// `layers[L]` is the linear output layer reading `2 * hidden` units.
#[derive(Debug, Clone, PartialEq)]
pub struct HddaeModel {
    arch: HddaeArch,
    layers: Vec<DenseLayer>,
    normalizer: Option<FeatureNormalizer>,
}

struct Trace {
    xn: Matrix,
    /// Pre-activations of hidden layers 1..=L.
    z: Vec<Matrix>,
    /// Activations of hidden layers 1..=L.
    h: Vec<Matrix>,
    /// Output in normalized units.
    out_n: Matrix,
}

impl HddaeModel {
    /// He-uniform hidden layers, Xavier-uniform output layer, zero biases.
    pub fn new(arch: HddaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let HddaeArch { input_dim: d, hidden_dim: h, output_dim: b, hidden_layers: l, .. } = arch;
        let mut layers = Vec::with_capacity(l + 1);
        layers.push(DenseLayer::uniform(d, h, he_limit(d), &mut rng));
        for _ in 1..l {
            layers.push(DenseLayer::uniform(h, h, he_limit(h), &mut rng));
        }
        layers[l - 1].bias = vec![0.0; 2 * h];
        layers.push(DenseLayer::uniform(2 * h, b, xavier_limit(2 * h, b), &mut rng));
        Ok(Self { arch, layers, normalizer: None })
    }

    /// All weights and biases zero.
    pub fn zeros(arch: HddaeArch) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        for layer in &mut m.layers {
            layer.weights.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    /// Assembles a model from explicit layers, checking every shape.
    pub fn from_parts(arch: HddaeArch, layers: Vec<DenseLayer>, normalizer: Option<FeatureNormalizer>) -> Result<Self> {
        arch.validate()?;
        let HddaeArch { input_dim: d, hidden_dim: h, output_dim: b, hidden_layers: l, .. } = arch;
        if layers.len() != l + 1 {
            return Err(Error::InvalidModel("layer count must be hidden_layers + 1"));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (want_in, want_out, want_bias) = if i == 0 && l > 1 {
                (d, h, h)
            } else if i + 1 < l {
                (h, h, h)
            } else if i + 1 == l {
                (if l == 1 { d } else { h }, h, 2 * h)
            } else {
                (2 * h, b, b)
            };
            if layer.in_dim != want_in
                || layer.out_dim != want_out
                || layer.weights.len() != want_in * want_out
                || layer.bias.len() != want_bias
            {
                return Err(Error::InvalidModel("layer shape does not match the architecture"));
            }
        }
        if let Some(n) = &normalizer {
            n.validate()?;
            if n.in_dim() != d || n.out_dim() != b {
                return Err(Error::InvalidModel("normalizer width does not match the architecture"));
            }
        }
        Ok(Self { arch, layers, normalizer })
    }

    pub fn arch(&self) -> &HddaeArch {
        &self.arch
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn normalizer(&self) -> Option<&FeatureNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, n: FeatureNormalizer) -> Result<()> {
        n.validate()?;
        if n.in_dim() != self.arch.input_dim || n.out_dim() != self.arch.output_dim {
            return Err(Error::InvalidModel("normalizer width does not match the architecture"));
        }
        self.normalizer = Some(n);
        Ok(())
    }

    /// Fits input/output statistics on a training set.
    pub fn fit_normalizer(&mut self, inputs: &Matrix, targets: &Matrix) -> Result<()> {
        check_batch(inputs, self.arch.input_dim, Some((targets, self.arch.output_dim)))?;
        self.set_normalizer(FeatureNormalizer::fit(inputs, targets)?)
    }

    fn norm(&self) -> Result<&FeatureNormalizer> {
        self.normalizer.as_ref().ok_or(Error::UnfittedNormalizer)
    }

    fn dense(x: &Matrix, layer: &DenseLayer, out_cols: usize) -> Matrix {
        let n = x.rows();
        let mut out = Matrix::zeros(n, out_cols);
        matmul_a_bt(n, layer.in_dim, layer.out_dim, x.as_slice(), &layer.weights, 0.0, out.as_mut_slice());
        out
    }

    fn trace(&self, x: &Matrix) -> Result<Trace> {
        check_batch(x, self.arch.input_dim, None)?;
        let norm = self.norm()?;
        let act = self.arch.activation;
        let l = self.arch.hidden_layers;
        let hd = self.arch.hidden_dim;
        let n = x.rows();
        let xn = norm.normalize_inputs(x);
        let mut z = Vec::with_capacity(l);
        let mut h: Vec<Matrix> = Vec::with_capacity(l);
        for (i, layer) in self.layers[..l].iter().enumerate() {
            let input = if i == 0 { &xn } else { &h[i - 1] };
            let zi = if i + 1 < l {
                let mut zi = Self::dense(input, layer, hd);
                for r in 0..n {
                    for (v, b) in zi.row_mut(r).iter_mut().zip(&layer.bias) {
                        *v += b;
                    }
                }
                zi
            } else {
                let u = Self::dense(input, layer, hd);
                let mut zi = Matrix::zeros(n, 2 * hd);
                for r in 0..n {
                    let row = zi.row_mut(r);
                    row[..hd].copy_from_slice(u.row(r));
                    row[hd..].copy_from_slice(h[0].row(r));
                    for (v, b) in row.iter_mut().zip(&layer.bias) {
                        *v += b;
                    }
                }
                zi
            };
            let mut hi = zi.clone();
            hi.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            z.push(zi);
            h.push(hi);
        }
        let out_layer = &self.layers[l];
        let mut out_n = Self::dense(&h[l - 1], out_layer, self.arch.output_dim);
        for r in 0..n {
            for (v, b) in out_n.row_mut(r).iter_mut().zip(&out_layer.bias) {
                *v += b;
            }
        }
        Ok(Trace { xn, z, h, out_n })
    }

    /// Maps spliced LPS rows to clean-LPS estimates.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = self.trace(x)?.out_n;
        self.norm()?.denormalize_outputs(&mut out);
        Ok(out)
    }

    /// Hidden activations `h_1 .. h_L` for a batch (the last has `2 * hidden` columns).
    pub fn hidden_activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self.trace(x)?.h)
    }
}

impl Trainable for HddaeModel {
    fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }

    fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        check_batch(x, self.arch.input_dim, Some((y, self.arch.output_dim)))?;
        self.forward(x)?.mse_rows(y)
    }

    fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Gradients)> {
        check_batch(x, self.arch.input_dim, Some((y, self.arch.output_dim)))?;
        let norm = self.norm()?;
        let tr = self.trace(x)?;
        let act = self.arch.activation;
        let l = self.arch.hidden_layers;
        let hd = self.arch.hidden_dim;
        let bd = self.arch.output_dim;
        let n = x.rows();
        let mut out = tr.out_n.clone();
        norm.denormalize_outputs(&mut out);
        let loss = out.mse_rows(y)?;

        // d loss / d out_n = 2/n (out - y) * out_std
        let scale = 2.0 / n.max(1) as f64;
        let mut delta = Matrix::zeros(n, bd);
        for r in 0..n {
            for (j, d) in delta.row_mut(r).iter_mut().enumerate() {
                *d = scale * (out.get(r, j) - y.get(r, j)) * norm.out_std[j];
            }
        }

        let mut grads: Vec<Vec<f64>> = self.params().iter().map(|p| vec![0.0; p.len()]).collect();

        // Output layer.
        let out_layer = &self.layers[l];
        matmul_at_b(bd, n, 2 * hd, delta.as_slice(), tr.h[l - 1].as_slice(), 0.0, &mut grads[2 * l]);
        add_column_sums(delta.as_slice(), bd, &mut grads[2 * l + 1]);
        let mut dh = Matrix::zeros(n, 2 * hd);
        matmul_a_b(n, bd, 2 * hd, delta.as_slice(), &out_layer.weights, 0.0, dh.as_mut_slice());

        // Highway layer: dz over the concatenation, split into the W_L path and the h_1 path.
        let mut dz = dh;
        for (g, zv) in dz.as_mut_slice().iter_mut().zip(tr.z[l - 1].as_slice()) {
            *g *= act.derivative(*zv);
        }
        add_column_sums(dz.as_slice(), 2 * hd, &mut grads[2 * (l - 1) + 1]);
        let mut du = Matrix::zeros(n, hd);
        let mut dh1_highway = Matrix::zeros(n, hd);
        for r in 0..n {
            let row = dz.row(r);
            du.row_mut(r).copy_from_slice(&row[..hd]);
            dh1_highway.row_mut(r).copy_from_slice(&row[hd..]);
        }
        let highway = &self.layers[l - 1];
        let prev = if l >= 2 { &tr.h[l - 2] } else { &tr.xn };
        matmul_at_b(hd, n, highway.in_dim, du.as_slice(), prev.as_slice(), 0.0, &mut grads[2 * (l - 1)]);
        let mut dprev = Matrix::zeros(n, highway.in_dim);
        matmul_a_b(n, hd, highway.in_dim, du.as_slice(), &highway.weights, 0.0, dprev.as_mut_slice());

        // Remaining hidden layers, from L-1 down to 1.
        for i in (0..l - 1).rev() {
            let mut dzi = dprev;
            if i == 0 {
                for (a, b) in dzi.as_mut_slice().iter_mut().zip(dh1_highway.as_slice()) {
                    *a += b;
                }
            }
            for (g, zv) in dzi.as_mut_slice().iter_mut().zip(tr.z[i].as_slice()) {
                *g *= act.derivative(*zv);
            }
            let layer = &self.layers[i];
            let input = if i == 0 { &tr.xn } else { &tr.h[i - 1] };
            matmul_at_b(hd, n, layer.in_dim, dzi.as_slice(), input.as_slice(), 0.0, &mut grads[2 * i]);
            add_column_sums(dzi.as_slice(), hd, &mut grads[2 * i + 1]);
            let mut next = Matrix::zeros(n, layer.in_dim);
            if i > 0 {
                matmul_a_b(n, hd, layer.in_dim, dzi.as_slice(), &layer.weights, 0.0, next.as_mut_slice());
            }
            dprev = next;
        }
        Ok((loss, Gradients(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use rand::{Rng, SeedableRng};

    fn tiny_arch(act: Activation) -> HddaeArch {
        HddaeArch { input_dim: 4, hidden_dim: 3, output_dim: 2, hidden_layers: 3, activation: act }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Moves biases off zero so no pre-activation sits exactly on the ReLU kink
    /// (a dead `h_1` unit plus a zero highway bias would).
    fn jitter_biases(m: &mut HddaeModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in m.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
    }

    /// Straight-line evaluation of the highway forward pass on one row.
    fn naive_forward(m: &HddaeModel, x: &[f64]) -> Vec<f64> {
        let relu = |v: f64| v.max(0.0);
        let norm = m.normalizer().unwrap();
        let xn: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v - norm.in_mean[i]) / norm.in_std[i]).collect();
        let dense = |layer: &DenseLayer, input: &[f64]| -> Vec<f64> {
            (0..layer.out_dim)
                .map(|o| (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * input[i]).sum())
                .collect()
        };
        let l = m.arch().hidden_layers;
        let layers = m.layers();
        let h1: Vec<f64> = dense(&layers[0], &xn).iter().zip(&layers[0].bias).map(|(a, b)| relu(a + b)).collect();
        let mut h = h1.clone();
        for layer in &layers[1..l - 1] {
            h = dense(layer, &h).iter().zip(&layer.bias).map(|(a, b)| relu(a + b)).collect();
        }
        let mut cat = dense(&layers[l - 1], &h);
        cat.extend_from_slice(&h1);
        let hl: Vec<f64> = cat.iter().zip(&layers[l - 1].bias).map(|(a, b)| relu(a + b)).collect();
        let out = dense(&layers[l], &hl);
        out.iter()
            .zip(&layers[l].bias)
            .enumerate()
            .map(|(j, (a, b))| (a + b) * norm.out_std[j] + norm.out_mean[j])
            .collect()
    }

    fn hand_model() -> HddaeModel {
        let arch = tiny_arch(Activation::Relu);
        let w = |in_dim: usize, out_dim: usize, vals: &[f64], bias: &[f64]| DenseLayer {
            in_dim,
            out_dim,
            weights: vals.to_vec(),
            bias: bias.to_vec(),
        };
        let layers = vec![
            w(4, 3, &[1., 0., -1., 1., 0., 2., 0., -1., 1., 1., 1., 1.], &[0., 1., -1.]),
            w(3, 3, &[1., -1., 0., 0., 1., 1., 2., 0., -1.], &[1., 0., 0.]),
            w(3, 3, &[0., 1., 1., -1., 0., 2., 1., 1., 0.], &[0., 0., 1., -1., 0., 1.]),
            w(6, 2, &[1., 0., -1., 2., 0., 1., 0., 1., 1., -1., 1., 0.], &[1., -2.]),
        ];
        HddaeModel::from_parts(arch, layers, Some(FeatureNormalizer::identity(4, 2))).unwrap()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = HddaeModel::zeros(tiny_arch(Activation::Relu)).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        let out = m.forward(&random_batch(5, 4, 1)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_weighted_forward_matches_naive_oracle() {
        let m = hand_model();
        let x = [1.0, 0.0, -1.0, 2.0];
        let out = m.forward(&Matrix::from_rows(&[x]).unwrap()).unwrap();
        // h1 = relu([4, -2, 2] + [0, 1, -1]) = [4, 0, 1]
        // h2 = relu([4, 1, 7] + [1, 0, 0]) = [5, 1, 7]
        // cat = [8, 9, 6, 4, 0, 1] + b3 = [8, 9, 7, 3, 0, 2]
        // out = [9, 13] + [1, -2] = [10, 11]
        assert_eq!(out.row(0), &[10.0, 11.0]);
        assert_eq!(out.row(0), naive_forward(&m, &x).as_slice());
    }

    #[test]
    fn random_models_match_naive_oracle() {
        for seed in 0..5 {
            let mut m = HddaeModel::new(tiny_arch(Activation::Relu), seed).unwrap();
            let x = random_batch(6, 4, seed + 100);
            let y = random_batch(6, 2, seed + 200);
            m.fit_normalizer(&x, &y).unwrap();
            let out = m.forward(&x).unwrap();
            for r in 0..6 {
                for (a, b) in out.row(r).iter().zip(naive_forward(&m, x.row(r))) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let mut m = HddaeModel::new(tiny_arch(Activation::Relu), 3).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        let row = [0.3, -0.2, 0.9, 0.1];
        let out = m.forward(&Matrix::from_rows(&[row, row]).unwrap()).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn unfitted_normalizer_and_shape_errors() {
        let m = HddaeModel::new(tiny_arch(Activation::Relu), 3).unwrap();
        assert_eq!(m.forward(&random_batch(2, 4, 0)), Err(Error::UnfittedNormalizer));
        let mut m = m;
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        assert!(matches!(m.forward(&random_batch(2, 5, 0)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.loss(&random_batch(2, 4, 0), &random_batch(3, 2, 0)), Err(Error::ShapeMismatch(_))));
        assert!(HddaeModel::new(HddaeArch { hidden_layers: 1, ..tiny_arch(Activation::Relu) }, 0).is_err());
    }

    #[test]
    fn highway_path_survives_zeroed_layer() {
        let mut m = HddaeModel::new(tiny_arch(Activation::Relu), 9).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        let hl = &mut m.layers_mut()[2];
        hl.weights.iter_mut().for_each(|v| *v = 0.0);
        hl.bias.iter_mut().for_each(|v| *v = 0.0);
        let x = random_batch(4, 4, 10);
        let h = m.hidden_activations(&x).unwrap();
        for r in 0..4 {
            let last = h[2].row(r);
            assert!(last[..3].iter().all(|&v| v == 0.0));
            assert_eq!(&last[3..], h[0].row(r));
        }
    }

    #[test]
    fn target_equal_to_output_gives_zero_loss_and_gradient() {
        let mut m = HddaeModel::new(tiny_arch(Activation::Relu), 5).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        let x = random_batch(7, 4, 6);
        let y = m.forward(&x).unwrap();
        let (loss, g) = m.loss_and_grad(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut m = HddaeModel::new(
                HddaeArch { input_dim: 6, hidden_dim: 5, output_dim: 4, hidden_layers: 3, activation: Activation::Relu },
                seed,
            )
            .unwrap();
            let x = random_batch(5, 6, seed + 1000);
            let y = random_batch(5, 4, seed + 2000);
            m.fit_normalizer(&x, &random_batch(5, 4, seed + 3000)).unwrap();
            jitter_biases(&mut m, seed);
            let report = gradient_check(&m, &x, &y, 1e-5).unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn two_hidden_layer_highway_gradients() {
        let mut m = HddaeModel::new(
            HddaeArch { input_dim: 5, hidden_dim: 4, output_dim: 3, hidden_layers: 2, activation: Activation::Relu },
            4,
        )
        .unwrap();
        let x = random_batch(6, 5, 1);
        let y = random_batch(6, 3, 2);
        m.set_normalizer(FeatureNormalizer::identity(5, 3)).unwrap();
        jitter_biases(&mut m, 11);
        assert!(gradient_check(&m, &x, &y, 1e-5).unwrap().max_rel_error < 1e-4);
    }

    #[test]
    fn residual_scaling_on_linear_variant() {
        let mut m = HddaeModel::new(tiny_arch(Activation::Identity), 8).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(4, 2)).unwrap();
        let x = random_batch(6, 4, 1);
        let out = m.forward(&x).unwrap();
        let r = random_batch(6, 2, 2);
        let mut y1 = out.clone();
        let mut y2 = out.clone();
        for ((a, b), d) in y1.as_mut_slice().iter_mut().zip(y2.as_mut_slice()).zip(r.as_slice()) {
            *a -= d;
            *b -= 2.0 * d;
        }
        let (l1, g1) = m.loss_and_grad(&x, &y1).unwrap();
        let (l2, g2) = m.loss_and_grad(&x, &y2).unwrap();
        assert!((l2 - 4.0 * l1).abs() < 1e-10 * l2.max(1.0));
        for (a, b) in g1.0.iter().flatten().zip(g2.0.iter().flatten()) {
            assert!((b - 2.0 * a).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}
