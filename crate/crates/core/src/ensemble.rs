//! Integrated ensemble: condition-specific HDDAE specialists (EP stage) whose
//! stacked estimates are fused by a CNN (EI stage).

use alloc::string::String;
use alloc::vec::Vec;

use crate::dsp::{dereverb_pipeline, AnalysisConfig, LpsMatrix, Waveform};
use crate::matrix::Matrix;
use crate::nn::{train, FeatureNormalizer, FusionArch, FusionCnnModel, HddaeArch, HddaeModel, TrainConfig, TrainReport, Trainable};
use crate::{Error, Result};

/// Training pairs of one condition: spliced reverberant LPS rows and the
/// matching clean LPS rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionData {
    pub label: String,
    pub inputs: Matrix,
    pub targets: Matrix,
}

/// Initializes an HDDAE with `init_seed`, fits its normalizer on the data and
/// trains it.
pub fn fit_hddae(arch: HddaeArch, inputs: &Matrix, targets: &Matrix, cfg: &TrainConfig, init_seed: u64) -> Result<(HddaeModel, TrainReport)> {
    if inputs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    fit_hddae_with(arch, FeatureNormalizer::fit(inputs, targets)?, inputs, targets, cfg, init_seed)
}

/// As `fit_hddae`, with normalizer statistics computed elsewhere.
pub fn fit_hddae_with(
    arch: HddaeArch,
    normalizer: FeatureNormalizer,
    inputs: &Matrix,
    targets: &Matrix,
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(HddaeModel, TrainReport)> {
    let mut model = HddaeModel::new(arch, init_seed)?;
    model.set_normalizer(normalizer)?;
    let report = train(&mut model, inputs, targets, cfg)?;
    Ok((model, report))
}

/// EP stage. Specialist `p` is initialized with `seed + p` and shuffled with
/// `cfg.seed + p`, so a single group reproduces `fit_hddae(.., seed)`.
pub fn ensemble_prepare(groups: &[ConditionData], arch: HddaeArch, cfg: &TrainConfig, seed: u64) -> Result<Vec<(HddaeModel, TrainReport)>> {
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    groups
        .iter()
        .enumerate()
        .map(|(p, g)| {
            log::info!("training specialist {} ({} frames)", g.label, g.inputs.rows());
            let cfg_p = TrainConfig { seed: cfg.seed.wrapping_add(p as u64), ..cfg.clone() };
            fit_hddae(arch, &g.inputs, &g.targets, &cfg_p, seed.wrapping_add(p as u64))
        })
        .collect()
}

fn check_specialists(specialists: &[HddaeModel]) -> Result<(usize, usize)> {
    let first = specialists.first().ok_or(Error::InvalidModel("ensemble needs at least one specialist"))?;
    let (d, b) = (first.arch().input_dim, first.arch().output_dim);
    if specialists.iter().any(|m| m.arch().input_dim != d || m.arch().output_dim != b) {
        return Err(Error::InvalidModel("specialists disagree on input or output width"));
    }
    Ok((d, b))
}

/// EI-stage input: row `i` holds `[N_1(i); ...; N_P(i)]`, specialist `p`
/// occupying columns `p*B .. (p+1)*B`.
pub fn ensemble_infer(specialists: &[HddaeModel], x: &Matrix) -> Result<Matrix> {
    let (_, b) = check_specialists(specialists)?;
    let p_count = specialists.len();
    let mut stacked = Matrix::zeros(x.rows(), p_count * b);
    for (p, m) in specialists.iter().enumerate() {
        let est = m.forward(x)?;
        for r in 0..x.rows() {
            stacked.row_mut(r)[p * b..(p + 1) * b].copy_from_slice(est.row(r));
        }
    }
    Ok(stacked)
}

/// EI stage: trains a fusion CNN on the stacked specialist estimates of every
/// training frame. The specialists are only read.
pub fn train_fusion(
    specialists: &[HddaeModel],
    inputs: &Matrix,
    targets: &Matrix,
    arch: FusionArch,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(FusionCnnModel, TrainReport)> {
    let (_, b) = check_specialists(specialists)?;
    if arch.channels != specialists.len() || arch.bins != b {
        return Err(Error::InvalidModel("fusion shape does not match the specialists"));
    }
    if inputs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let stacked = ensemble_infer(specialists, inputs)?;
    let mut fusion = FusionCnnModel::new(arch, seed)?;
    fusion.fit_normalizer(&stacked, targets)?;
    let report = train(&mut fusion, &stacked, targets, cfg)?;
    Ok((fusion, report))
}

/// Specialists in a fixed order plus the fusion network that reads their
/// estimates as channels in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct IdeaModel {
    labels: Vec<String>,
    specialists: Vec<HddaeModel>,
    fusion: FusionCnnModel,
    analysis: AnalysisConfig,
}

impl IdeaModel {
    pub fn new(labels: Vec<String>, specialists: Vec<HddaeModel>, fusion: FusionCnnModel, analysis: AnalysisConfig) -> Result<Self> {
        analysis.validate()?;
        let (d, b) = check_specialists(&specialists)?;
        if labels.len() != specialists.len() {
            return Err(Error::InvalidModel("one label per specialist"));
        }
        if fusion.arch().channels != specialists.len() || fusion.arch().bins != b {
            return Err(Error::InvalidModel("fusion shape does not match the specialists"));
        }
        if d != analysis.spliced_dim() || b != analysis.bins() {
            return Err(Error::InvalidModel("model widths do not match the analysis configuration"));
        }
        Ok(Self { labels, specialists, fusion, analysis })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn specialists(&self) -> &[HddaeModel] {
        &self.specialists
    }

    pub fn fusion(&self) -> &FusionCnnModel {
        &self.fusion
    }

    pub fn analysis(&self) -> &AnalysisConfig {
        &self.analysis
    }

    /// Spliced reverberant rows to fused clean-LPS estimates.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.fusion.forward(&ensemble_infer(&self.specialists, x)?)
    }

    pub fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        self.fusion.loss(&ensemble_infer(&self.specialists, x)?, y)
    }
}

pub fn idea_dereverb(model: &IdeaModel, y: &Waveform) -> Result<Waveform> {
    dereverb_pipeline(y, &model.analysis, |s| Ok(LpsMatrix::new(model.forward(s.as_matrix())?)))
}

pub fn single_dereverb(model: &HddaeModel, y: &Waveform, cfg: &AnalysisConfig) -> Result<Waveform> {
    if model.arch().input_dim != cfg.spliced_dim() || model.arch().output_dim != cfg.bins() {
        return Err(Error::InvalidModel("model widths do not match the analysis configuration"));
    }
    dereverb_pipeline(y, cfg, |s| Ok(LpsMatrix::new(model.forward(s.as_matrix())?)))
}
