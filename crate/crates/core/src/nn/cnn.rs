use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add_column_sums, check_batch, he_limit, xavier_limit, Activation, DenseLayer, FeatureNormalizer, Gradients, Trainable};
use crate::matrix::{matmul_a_b, matmul_a_bt, matmul_at_b, Matrix};
use crate::{Error, Result};

/// Shape of the fusion network: `conv_layers` same-padded 1-D convolutions
/// along frequency, one fully connected hidden layer and a linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionArch {
    /// Input channels, one per specialist.
    pub channels: usize,
    pub bins: usize,
    pub conv_channels: usize,
    /// Odd kernel width along frequency.
    pub kernel: usize,
    pub conv_layers: usize,
    pub fc_hidden: usize,
    pub activation: Activation,
}

impl FusionArch {
    /// Two 32-channel convolutions of width 11 and a 2048-unit FC layer.
    pub fn full_size(channels: usize) -> Self {
        Self { channels, bins: 257, conv_channels: 32, kernel: 11, conv_layers: 2, fc_hidden: 2048, activation: Activation::Relu }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 {
            return Err(Error::InvalidModel("fusion CNN needs at least one convolution"));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidModel("kernel width must be odd"));
        }
        if self.channels == 0 || self.bins == 0 || self.conv_channels == 0 || self.fc_hidden == 0 {
            return Err(Error::InvalidModel("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.channels * self.bins
    }
}

/// One convolution layer; weights are `out x in x kernel`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fusion CNN over stacked specialist estimates. A frame enters as
/// `channels x bins` values laid out channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCnnModel {
    arch: FusionArch,
    convs: Vec<ConvLayer>,
    fc: DenseLayer,
    out: DenseLayer,
    normalizer: Option<FeatureNormalizer>,
}

struct Trace {
    xn: Matrix,
    conv_z: Vec<Matrix>,
    conv_h: Vec<Matrix>,
    fc_z: Matrix,
    fc_h: Matrix,
    out_n: Matrix,
}

/// `col[b][c * k + o] = input[c][b + o - k/2]`, zero outside the band.
fn im2col(input: &[f64], channels: usize, bins: usize, kernel: usize, col: &mut [f64]) {
    let pad = kernel / 2;
    let width = channels * kernel;
    for b in 0..bins {
        let row = &mut col[b * width..(b + 1) * width];
        for c in 0..channels {
            let src = &input[c * bins..(c + 1) * bins];
            for o in 0..kernel {
                let pos = b + o;
                row[c * kernel + o] = if pos >= pad && pos - pad < bins { src[pos - pad] } else { 0.0 };
            }
        }
    }
}

fn col2im_add(col: &[f64], channels: usize, bins: usize, kernel: usize, out: &mut [f64]) {
    let pad = kernel / 2;
    let width = channels * kernel;
    for b in 0..bins {
        let row = &col[b * width..(b + 1) * width];
        for c in 0..channels {
            for o in 0..kernel {
                let pos = b + o;
                if pos >= pad && pos - pad < bins {
                    out[c * bins + pos - pad] += row[c * kernel + o];
                }
            }
        }
    }
}

impl FusionCnnModel {
    pub fn new(arch: FusionArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(arch.conv_layers);
        for j in 0..arch.conv_layers {
            let in_channels = if j == 0 { arch.channels } else { arch.conv_channels };
            let limit = he_limit(in_channels * arch.kernel);
            let n = arch.conv_channels * in_channels * arch.kernel;
            convs.push(ConvLayer {
                in_channels,
                out_channels: arch.conv_channels,
                kernel: arch.kernel,
                weights: (0..n).map(|_| rng.gen_range(-limit..=limit)).collect(),
                bias: vec![0.0; arch.conv_channels],
            });
        }
        let flat = arch.conv_channels * arch.bins;
        let fc = DenseLayer::uniform(flat, arch.fc_hidden, he_limit(flat), &mut rng);
        let out = DenseLayer::uniform(arch.fc_hidden, arch.bins, xavier_limit(arch.fc_hidden, arch.bins), &mut rng);
        Ok(Self { arch, convs, fc, out, normalizer: None })
    }

    pub fn from_parts(
        arch: FusionArch,
        convs: Vec<ConvLayer>,
        fc: DenseLayer,
        out: DenseLayer,
        normalizer: Option<FeatureNormalizer>,
    ) -> Result<Self> {
        arch.validate()?;
        if convs.len() != arch.conv_layers {
            return Err(Error::InvalidModel("convolution count does not match the architecture"));
        }
        for (j, c) in convs.iter().enumerate() {
            let in_channels = if j == 0 { arch.channels } else { arch.conv_channels };
            if c.in_channels != in_channels
                || c.out_channels != arch.conv_channels
                || c.kernel != arch.kernel
                || c.weights.len() != c.out_channels * c.in_channels * c.kernel
                || c.bias.len() != c.out_channels
            {
                return Err(Error::InvalidModel("convolution shape does not match the architecture"));
            }
        }
        let flat = arch.conv_channels * arch.bins;
        let dense_ok = |l: &DenseLayer, i: usize, o: usize| {
            l.in_dim == i && l.out_dim == o && l.weights.len() == i * o && l.bias.len() == o
        };
        if !dense_ok(&fc, flat, arch.fc_hidden) || !dense_ok(&out, arch.fc_hidden, arch.bins) {
            return Err(Error::InvalidModel("dense layer shape does not match the architecture"));
        }
        if let Some(n) = &normalizer {
            n.validate()?;
            if n.in_dim() != arch.input_dim() || n.out_dim() != arch.bins {
                return Err(Error::InvalidModel("normalizer width does not match the architecture"));
            }
        }
        Ok(Self { arch, convs, fc, out, normalizer })
    }

    pub fn arch(&self) -> &FusionArch {
        &self.arch
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.convs
    }

    pub fn fc(&self) -> &DenseLayer {
        &self.fc
    }

    pub fn fc_mut(&mut self) -> &mut DenseLayer {
        &mut self.fc
    }

    pub fn output_layer(&self) -> &DenseLayer {
        &self.out
    }

    pub fn output_layer_mut(&mut self) -> &mut DenseLayer {
        &mut self.out
    }

    pub fn normalizer(&self) -> Option<&FeatureNormalizer> {
        self.normalizer.as_ref()
    }

    pub fn set_normalizer(&mut self, n: FeatureNormalizer) -> Result<()> {
        n.validate()?;
        if n.in_dim() != self.arch.input_dim() || n.out_dim() != self.arch.bins {
            return Err(Error::InvalidModel("normalizer width does not match the architecture"));
        }
        self.normalizer = Some(n);
        Ok(())
    }

    pub fn fit_normalizer(&mut self, inputs: &Matrix, targets: &Matrix) -> Result<()> {
        check_batch(inputs, self.arch.input_dim(), Some((targets, self.arch.bins)))?;
        self.set_normalizer(FeatureNormalizer::fit(inputs, targets)?)
    }

    fn norm(&self) -> Result<&FeatureNormalizer> {
        self.normalizer.as_ref().ok_or(Error::UnfittedNormalizer)
    }

    fn conv_forward(&self, layer: &ConvLayer, input: &Matrix) -> Matrix {
        let bins = self.arch.bins;
        let n = input.rows();
        let width = layer.in_channels * layer.kernel;
        let mut out = Matrix::zeros(n, layer.out_channels * bins);
        let mut col = vec![0.0; bins * width];
        for r in 0..n {
            im2col(input.row(r), layer.in_channels, bins, layer.kernel, &mut col);
            let dst = out.row_mut(r);
            matmul_a_bt(layer.out_channels, width, bins, &layer.weights, &col, 0.0, dst);
            for (t, b) in layer.bias.iter().enumerate() {
                dst[t * bins..(t + 1) * bins].iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    fn dense_forward(layer: &DenseLayer, input: &Matrix) -> Matrix {
        let n = input.rows();
        let mut z = Matrix::zeros(n, layer.out_dim);
        matmul_a_bt(n, layer.in_dim, layer.out_dim, input.as_slice(), &layer.weights, 0.0, z.as_mut_slice());
        for r in 0..n {
            z.row_mut(r).iter_mut().zip(&layer.bias).for_each(|(v, b)| *v += b);
        }
        z
    }

    fn trace(&self, x: &Matrix) -> Result<Trace> {
        check_batch(x, self.arch.input_dim(), None)?;
        let act = self.arch.activation;
        let xn = self.norm()?.normalize_inputs(x);
        let mut conv_z = Vec::with_capacity(self.convs.len());
        let mut conv_h: Vec<Matrix> = Vec::with_capacity(self.convs.len());
        for (j, layer) in self.convs.iter().enumerate() {
            let input = if j == 0 { &xn } else { &conv_h[j - 1] };
            let z = self.conv_forward(layer, input);
            let mut h = z.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            conv_z.push(z);
            conv_h.push(h);
        }
        let fc_z = Self::dense_forward(&self.fc, conv_h.last().expect("at least one conv"));
        let mut fc_h = fc_z.clone();
        fc_h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
        let out_n = Self::dense_forward(&self.out, &fc_h);
        Ok(Trace { xn, conv_z, conv_h, fc_z, fc_h, out_n })
    }

    /// Maps stacked specialist estimates (`channels * bins` per row) to LPS rows.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = self.trace(x)?.out_n;
        self.norm()?.denormalize_outputs(&mut out);
        Ok(out)
    }

    /// Post-activation outputs of each convolution layer, channel-major.
    pub fn conv_activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self.trace(x)?.conv_h)
    }
}

impl Trainable for FusionCnnModel {
    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &self.convs {
            p.push(&c.weights);
            p.push(&c.bias);
        }
        p.extend([self.fc.weights.as_slice(), &self.fc.bias, &self.out.weights, &self.out.bias]);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = Vec::with_capacity(2 * self.convs.len() + 4);
        for c in &mut self.convs {
            p.push(&mut c.weights);
            p.push(&mut c.bias);
        }
        p.push(&mut self.fc.weights);
        p.push(&mut self.fc.bias);
        p.push(&mut self.out.weights);
        p.push(&mut self.out.bias);
        p
    }

    fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        check_batch(x, self.arch.input_dim(), Some((y, self.arch.bins)))?;
        self.forward(x)?.mse_rows(y)
    }

    fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Gradients)> {
        check_batch(x, self.arch.input_dim(), Some((y, self.arch.bins)))?;
        let norm = self.norm()?;
        let tr = self.trace(x)?;
        let act = self.arch.activation;
        let bins = self.arch.bins;
        let n = x.rows();
        let nconv = self.convs.len();
        let mut out = tr.out_n.clone();
        norm.denormalize_outputs(&mut out);
        let loss = out.mse_rows(y)?;

        let mut grads: Vec<Vec<f64>> = self.params().iter().map(|p| vec![0.0; p.len()]).collect();
        let (gi_fc, gi_out) = (2 * nconv, 2 * nconv + 2);

        let scale = 2.0 / n.max(1) as f64;
        let mut delta = Matrix::zeros(n, bins);
        for r in 0..n {
            for (j, d) in delta.row_mut(r).iter_mut().enumerate() {
                *d = scale * (out.get(r, j) - y.get(r, j)) * norm.out_std[j];
            }
        }

        // Output and FC layers.
        let fh = self.arch.fc_hidden;
        matmul_at_b(bins, n, fh, delta.as_slice(), tr.fc_h.as_slice(), 0.0, &mut grads[gi_out]);
        add_column_sums(delta.as_slice(), bins, &mut grads[gi_out + 1]);
        let mut dfc = Matrix::zeros(n, fh);
        matmul_a_b(n, bins, fh, delta.as_slice(), &self.out.weights, 0.0, dfc.as_mut_slice());
        for (g, z) in dfc.as_mut_slice().iter_mut().zip(tr.fc_z.as_slice()) {
            *g *= act.derivative(*z);
        }
        let flat = self.fc.in_dim;
        let last_h = tr.conv_h.last().expect("at least one conv");
        matmul_at_b(fh, n, flat, dfc.as_slice(), last_h.as_slice(), 0.0, &mut grads[gi_fc]);
        add_column_sums(dfc.as_slice(), fh, &mut grads[gi_fc + 1]);
        let mut dh = Matrix::zeros(n, flat);
        matmul_a_b(n, fh, flat, dfc.as_slice(), &self.fc.weights, 0.0, dh.as_mut_slice());

        // Convolutions, last to first.
        for j in (0..nconv).rev() {
            let layer = &self.convs[j];
            let mut dz = dh;
            for (g, z) in dz.as_mut_slice().iter_mut().zip(tr.conv_z[j].as_slice()) {
                *g *= act.derivative(*z);
            }
            let input = if j == 0 { &tr.xn } else { &tr.conv_h[j - 1] };
            let width = layer.in_channels * layer.kernel;
            let mut col = vec![0.0; bins * width];
            let mut dcol = vec![0.0; bins * width];
            let mut dinput = Matrix::zeros(n, layer.in_channels * bins);
            let (gw, rest) = grads[2 * j..].split_at_mut(1);
            let gb = &mut rest[0];
            for r in 0..n {
                let dzr = dz.row(r);
                im2col(input.row(r), layer.in_channels, bins, layer.kernel, &mut col);
                // dW (out x width) += dz (out x bins) * col (bins x width)
                matmul_a_b(layer.out_channels, bins, width, dzr, &col, 1.0, &mut gw[0]);
                for t in 0..layer.out_channels {
                    gb[t] += dzr[t * bins..(t + 1) * bins].iter().sum::<f64>();
                }
                if j > 0 {
                    // dcol (bins x width) = dz^T (bins x out) * W (out x width)
                    matmul_at_b(bins, layer.out_channels, width, dzr, &layer.weights, 0.0, &mut dcol);
                    col2im_add(&dcol, layer.in_channels, bins, layer.kernel, dinput.row_mut(r));
                }
            }
            dh = dinput;
        }
        Ok((loss, Gradients(grads)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny(act: Activation) -> FusionArch {
        FusionArch { channels: 2, bins: 7, conv_channels: 2, kernel: 3, conv_layers: 2, fc_hidden: 4, activation: act }
    }

    /// Direct same-padded 1-D convolution, one output channel at a time.
    fn naive_conv(layer: &ConvLayer, input: &[f64], bins: usize) -> Vec<f64> {
        let pad = layer.kernel as isize / 2;
        let mut out = vec![0.0; layer.out_channels * bins];
        for t in 0..layer.out_channels {
            for b in 0..bins {
                let mut acc = layer.bias[t];
                for c in 0..layer.in_channels {
                    for o in 0..layer.kernel {
                        let pos = b as isize + o as isize - pad;
                        if pos >= 0 && (pos as usize) < bins {
                            acc += layer.weights[(t * layer.in_channels + c) * layer.kernel + o] * input[c * bins + pos as usize];
                        }
                    }
                }
                out[t * bins + b] = acc;
            }
        }
        out
    }

    #[test]
    fn zero_input_zero_bias_gives_zero() {
        let mut m = FusionCnnModel::new(tiny(Activation::Relu), 1).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(14, 7)).unwrap();
        let out = m.forward(&Matrix::zeros(3, 14)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_conv_matches_hand_convolution() {
        // P=2, B=5, k=3, one conv layer with one output channel; the FC layer
        // copies the conv map and the output layer copies the FC units.
        let arch = FusionArch { channels: 2, bins: 5, conv_channels: 1, kernel: 3, conv_layers: 1, fc_hidden: 5, activation: Activation::Identity };
        let conv = ConvLayer { in_channels: 2, out_channels: 1, kernel: 3, weights: vec![1., 2., 3., -1., 0., 1.], bias: vec![0.5] };
        let mut eye = DenseLayer::zeros(5, 5);
        for i in 0..5 {
            eye.weights[i * 5 + i] = 1.0;
        }
        let m = FusionCnnModel::from_parts(arch, vec![conv.clone()], eye.clone(), eye, Some(FeatureNormalizer::identity(10, 5))).unwrap();
        let x = [1., 2., 3., 4., 5., 0., 1., 0., -1., 2.];
        let out = m.forward(&Matrix::from_rows(&[x]).unwrap()).unwrap();
        // channel 0 taps [1,2,3] over [0,1,2,3,4,5,0]; channel 1 taps [-1,0,1] over [0,0,1,0,-1,2,0]
        let hand = [8.0 + 1.0 + 0.5, 14.0 + 0.0 + 0.5, 20.0 - 2.0 + 0.5, 26.0 + 2.0 + 0.5, 14.0 + 1.0 + 0.5];
        assert_eq!(out.row(0), &hand);
        assert_eq!(out.row(0), naive_conv(&conv, &x, 5).as_slice());
    }

    #[test]
    fn conv_stack_matches_naive_oracle() {
        let mut m = FusionCnnModel::new(tiny(Activation::Relu), 12).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(14, 7)).unwrap();
        let x = random_batch(3, 14, 4);
        let acts = m.conv_activations(&x).unwrap();
        for r in 0..3 {
            let mut h = x.row(r).to_vec();
            for (j, layer) in m.convs().iter().enumerate() {
                h = naive_conv(layer, &h, 7).into_iter().map(|v| v.max(0.0)).collect();
                for (a, b) in acts[j].row(r).iter().zip(&h) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_stack_is_translation_equivariant_in_the_interior() {
        let arch = FusionArch { channels: 2, bins: 20, conv_channels: 3, kernel: 3, conv_layers: 2, fc_hidden: 4, activation: Activation::Relu };
        let mut m = FusionCnnModel::new(arch, 5).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(40, 20)).unwrap();
        let x = random_batch(1, 40, 6);
        let mut shifted = Matrix::zeros(1, 40);
        for c in 0..2 {
            for b in 1..20 {
                shifted.set(0, c * 20 + b, x.get(0, c * 20 + b - 1));
            }
        }
        let a = m.conv_activations(&x).unwrap();
        let s = m.conv_activations(&shifted).unwrap();
        // two width-3 layers: receptive field +-2 bins, so bins 3..17 see no edge effects in either input
        for t in 0..3 {
            for b in 3..18 {
                let (u, v) = (a[1].get(0, t * 20 + b - 1), s[1].get(0, t * 20 + b));
                assert!((u - v).abs() < 1e-12, "channel {t} bin {b}");
            }
        }
    }

    #[test]
    fn target_equal_to_output_gives_zero_gradient() {
        let mut m = FusionCnnModel::new(tiny(Activation::Relu), 2).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(14, 7)).unwrap();
        let x = random_batch(4, 14, 3);
        let y = m.forward(&x).unwrap();
        let (loss, g) = m.loss_and_grad(&x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut m = FusionCnnModel::new(tiny(Activation::Relu), seed).unwrap();
            let x = random_batch(4, 14, seed + 50);
            let y = random_batch(4, 7, seed + 60);
            m.fit_normalizer(&x, &random_batch(4, 7, seed + 70)).unwrap();
            // nonzero biases so the bias gradients are exercised away from zero
            for c in m.convs_mut() {
                c.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64 - 0.05);
            }
            let report = gradient_check(&m, &x, &y, 1e-5).unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn linear_variant_is_homogeneous() {
        let mut m = FusionCnnModel::new(tiny(Activation::Identity), 3).unwrap();
        m.set_normalizer(FeatureNormalizer::identity(14, 7)).unwrap();
        let x = random_batch(3, 14, 8);
        let mut x2 = x.clone();
        x2.as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
        let (a, b) = (m.forward(&x).unwrap(), m.forward(&x2).unwrap());
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((v - 2.0 * u).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FusionCnnModel::new(FusionArch { kernel: 4, ..tiny(Activation::Relu) }, 0).is_err());
        let mut m = FusionCnnModel::new(tiny(Activation::Relu), 0).unwrap();
        assert_eq!(m.forward(&Matrix::zeros(1, 14)), Err(Error::UnfittedNormalizer));
        m.set_normalizer(FeatureNormalizer::identity(14, 7)).unwrap();
        assert!(matches!(m.forward(&Matrix::zeros(1, 13)), Err(Error::ShapeMismatch(_))));
    }
}
