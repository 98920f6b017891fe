//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "DRVK"  u32 version  u32 kind (1 hddae, 2 fusion)  u32 activation tag
//! u32 n_hyper, n_hyper x u32
//! u32 n_tensors, n_tensors x (u32 rows, u32 cols)
//! parameter blobs, f64, in tensor order
//! u32 normalizer flag; if 1: u32 in_dim, u32 out_dim, in_mean, in_std, out_mean, out_std (f64)
//! u32 epochs_run, f64 final_loss
//! ```
//!
//! HDDAE hyperparameters are `[input, hidden, output, hidden_layers]`, fusion
//! ones `[channels, bins, conv_channels, kernel, conv_layers, fc_hidden]`.
//! Each layer contributes a weight tensor `out x in` followed by a bias
//! tensor `len x 1`; conv weights are `out x (in * kernel)`.

use alloc::vec::Vec;

use crate::nn::{Activation, ConvLayer, DenseLayer, FeatureNormalizer, FusionArch, FusionCnnModel, HddaeArch, HddaeModel};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DRVK";
pub const VERSION: u32 = 1;

const KIND_HDDAE: u32 = 1;
const KIND_FUSION: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Hddae(HddaeModel),
    Fusion(FusionCnnModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub epochs_run: u32,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub meta: TrainingMeta,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn usize(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension exceeds u32"));
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::CorruptedCheckpoint("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(Error::CorruptedCheckpoint("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn dense_tensors<'a>(layers: &[&'a DenseLayer]) -> Vec<((usize, usize), &'a [f64])> {
    layers
        .iter()
        .flat_map(|l| [((l.out_dim, l.in_dim), l.weights.as_slice()), ((l.bias.len(), 1), l.bias.as_slice())])
        .collect()
}

/// Serializes a model with its training metadata.
pub fn encode(model: &AnyModel, meta: TrainingMeta) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&MAGIC);
    w.u32(VERSION);
    let (kind, act, hyper, tensors, norm) = match model {
        AnyModel::Hddae(m) => {
            let a = m.arch();
            let layers: Vec<&DenseLayer> = m.layers().iter().collect();
            (KIND_HDDAE, a.activation, alloc::vec![a.input_dim, a.hidden_dim, a.output_dim, a.hidden_layers], dense_tensors(&layers), m.normalizer())
        }
        AnyModel::Fusion(m) => {
            let a = m.arch();
            let mut tensors: Vec<((usize, usize), &[f64])> = Vec::new();
            for c in m.convs() {
                tensors.push(((c.out_channels, c.in_channels * c.kernel), &c.weights));
                tensors.push(((c.bias.len(), 1), &c.bias));
            }
            tensors.extend(dense_tensors(&[m.fc(), m.output_layer()]));
            let hyper = alloc::vec![a.channels, a.bins, a.conv_channels, a.kernel, a.conv_layers, a.fc_hidden];
            (KIND_FUSION, a.activation, hyper, tensors, m.normalizer())
        }
    };
    w.u32(kind);
    w.u32(act.tag());
    w.usize(hyper.len());
    hyper.iter().for_each(|&h| w.usize(h));
    w.usize(tensors.len());
    for ((r, c), _) in &tensors {
        w.usize(*r);
        w.usize(*c);
    }
    for (_, data) in &tensors {
        w.f64s(data);
    }
    match norm {
        Some(n) => {
            w.u32(1);
            w.usize(n.in_dim());
            w.usize(n.out_dim());
            w.f64s(&n.in_mean);
            w.f64s(&n.in_std);
            w.f64s(&n.out_mean);
            w.f64s(&n.out_std);
        }
        None => w.u32(0),
    }
    w.u32(meta.epochs_run);
    w.f64s(&[meta.final_loss]);
    w.0
}

fn corrupt(_: Error) -> Error {
    Error::CorruptedCheckpoint("parameters do not match the declared architecture")
}

fn pair_layers(tensors: &mut impl Iterator<Item = ((usize, usize), Vec<f64>)>) -> Result<DenseLayer> {
    let ((out_dim, in_dim), weights) = tensors.next().ok_or(Error::CorruptedCheckpoint("missing tensor"))?;
    let ((_, one), bias) = tensors.next().ok_or(Error::CorruptedCheckpoint("missing tensor"))?;
    if one != 1 {
        return Err(Error::CorruptedCheckpoint("bias tensor must be a column"));
    }
    Ok(DenseLayer { in_dim, out_dim, weights, bias })
}

/// Parses a checkpoint, rejecting trailing or missing bytes.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptedCheckpoint("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = r.u32()?;
    let act = Activation::from_tag(r.u32()?).ok_or(Error::CorruptedCheckpoint("unknown activation"))?;
    let n_hyper = r.usize()?;
    if n_hyper > r.remaining() / 4 {
        return Err(Error::CorruptedCheckpoint("truncated"));
    }
    let hyper = (0..n_hyper).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_tensors = r.usize()?;
    if n_tensors > r.remaining() / 8 {
        return Err(Error::CorruptedCheckpoint("truncated"));
    }
    let shapes = (0..n_tensors).map(|_| Ok((r.usize()?, r.usize()?))).collect::<Result<Vec<_>>>()?;
    let mut total = 0usize;
    for (a, b) in &shapes {
        total = a.checked_mul(*b).and_then(|n| total.checked_add(n)).ok_or(Error::CorruptedCheckpoint("length overflow"))?;
    }
    if total > r.remaining() / 8 {
        return Err(Error::CorruptedCheckpoint("truncated"));
    }
    let mut blobs = Vec::with_capacity(n_tensors);
    for &(a, b) in &shapes {
        blobs.push(r.f64s(a * b)?);
    }
    let normalizer = match r.u32()? {
        0 => None,
        1 => {
            let (i, o) = (r.usize()?, r.usize()?);
            if i.saturating_add(o).saturating_mul(2) > r.remaining() / 8 {
                return Err(Error::CorruptedCheckpoint("truncated"));
            }
            Some(FeatureNormalizer { in_mean: r.f64s(i)?, in_std: r.f64s(i)?, out_mean: r.f64s(o)?, out_std: r.f64s(o)? })
        }
        _ => return Err(Error::CorruptedCheckpoint("bad normalizer flag")),
    };
    let epochs_run = r.u32()?;
    let final_loss = r.f64s(1)?[0];
    if r.remaining() != 0 {
        return Err(Error::CorruptedCheckpoint("trailing bytes"));
    }

    let mut tensors = shapes.into_iter().zip(blobs);
    let model = match (kind, hyper.as_slice()) {
        (KIND_HDDAE, &[input_dim, hidden_dim, output_dim, hidden_layers]) => {
            let arch = HddaeArch { input_dim, hidden_dim, output_dim, hidden_layers, activation: act };
            let layers = (0..n_tensors / 2).map(|_| pair_layers(&mut tensors)).collect::<Result<Vec<_>>>()?;
            AnyModel::Hddae(HddaeModel::from_parts(arch, layers, normalizer).map_err(corrupt)?)
        }
        (KIND_FUSION, &[channels, bins, conv_channels, kernel, conv_layers, fc_hidden]) => {
            let arch = FusionArch { channels, bins, conv_channels, kernel, conv_layers, fc_hidden, activation: act };
            if kernel == 0 || n_tensors != 2 * conv_layers + 4 {
                return Err(Error::CorruptedCheckpoint("tensor count does not match the architecture"));
            }
            let mut convs = Vec::with_capacity(conv_layers);
            for _ in 0..conv_layers {
                let l = pair_layers(&mut tensors)?;
                convs.push(ConvLayer { in_channels: l.in_dim / kernel, out_channels: l.out_dim, kernel, weights: l.weights, bias: l.bias });
            }
            let fc = pair_layers(&mut tensors)?;
            let out = pair_layers(&mut tensors)?;
            AnyModel::Fusion(FusionCnnModel::from_parts(arch, convs, fc, out, normalizer).map_err(corrupt)?)
        }
        (KIND_HDDAE | KIND_FUSION, _) => return Err(Error::CorruptedCheckpoint("wrong hyperparameter count")),
        _ => return Err(Error::CorruptedCheckpoint("unknown model kind")),
    };
    Ok(Checkpoint { model, meta: TrainingMeta { epochs_run, final_loss } })
}
