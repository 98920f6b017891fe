//! Model roster, training runs and model artifacts.
//!
//! Each model lives in `models/<dir>/` with `meta.json`, `loss.csv` and its
//! checkpoints: `model.drvk` for a single HDDAE, or `specialist_<p>.drvk` plus
//! `fusion.drvk` for an ensemble.

use std::path::{Path, PathBuf};

use dereverb_core::checkpoint::{self, AnyModel, TrainingMeta};
use dereverb_core::dsp::{AnalysisConfig, Waveform};
use dereverb_core::ensemble::{ensemble_infer, fit_hddae_with, idea_dereverb, single_dereverb, IdeaModel};
use dereverb_core::nn::{train, FusionCnnModel, HddaeModel, TrainReport};
use dereverb_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{io_err, CoreContext, HarnessError, Result};
use crate::features::{load_normalizer, FeatureSet};
use crate::manifest::t60_label;
use crate::prepare::{features_path, load_manifest, normalizer_path, ALL};
use crate::derive_seed;

/// Specialist depth inside an ensemble.
pub const SPECIALIST_LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// HDDAE with `layers` hidden layers; `t60 = None` trains on every condition.
    Hddae { t60: Option<f64>, layers: usize },
    /// Specialists of depth 3 fused by the CNN; `depth` counts both stages.
    Idea { depth: usize },
}

impl ModelSpec {
    pub fn parse(id: &str) -> Result<Self> {
        let unknown = || HarnessError::UnknownModel(id.to_string());
        let (head, depth) = id.strip_suffix(')').and_then(|s| s.split_once('(')).ok_or_else(unknown)?;
        let depth: usize = depth.parse().map_err(|_| unknown())?;
        match head.split_once('_').ok_or_else(unknown)? {
            ("HDDAE", "A") if depth >= 2 => Ok(ModelSpec::Hddae { t60: None, layers: depth }),
            ("HDDAE", t) if depth >= 2 => {
                let t60: f64 = t.parse().map_err(|_| unknown())?;
                if !(t60 > 0.0 && t60.is_finite()) {
                    return Err(unknown());
                }
                Ok(ModelSpec::Hddae { t60: Some(t60), layers: depth })
            }
            ("IDEA", "A") => Ok(ModelSpec::Idea { depth }),
            _ => Err(unknown()),
        }
    }

    pub fn id(&self) -> String {
        match self {
            ModelSpec::Hddae { t60: None, layers } => format!("HDDAE_A({layers})"),
            ModelSpec::Hddae { t60: Some(t), layers } => format!("HDDAE_{}({layers})", t60_label(*t)),
            ModelSpec::Idea { depth } => format!("IDEA_A({depth})"),
        }
    }

    /// Directory name: `HDDAE_0.3(3)` becomes `HDDAE_0.3_3`.
    pub fn dir_name(&self) -> String {
        self.id().replace('(', "_").replace(')', "")
    }
}

/// Expands roster entries: `HDDAE_T60(L)` stands for one model per train T60
/// and `all` for the configured roster.
pub fn expand_roster(cfg: &ExperimentConfig, ids: &[String]) -> Result<Vec<ModelSpec>> {
    let mut out: Vec<ModelSpec> = Vec::new();
    for id in ids {
        if id == "all" {
            for m in expand_roster(cfg, &cfg.roster)? {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            continue;
        }
        let specs = match id.strip_prefix("HDDAE_T60(") {
            Some(rest) => {
                let layers = ModelSpec::parse(&format!("HDDAE_A({rest}"))?;
                let ModelSpec::Hddae { layers, .. } = layers else { unreachable!() };
                cfg.conditions.train_t60.iter().map(|&t| ModelSpec::Hddae { t60: Some(t), layers }).collect()
            }
            None => vec![ModelSpec::parse(id)?],
        };
        for m in specs {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

pub fn model_dir(cfg: &ExperimentConfig, spec: &ModelSpec) -> PathBuf {
    cfg.out_dir.join("models").join(spec.dir_name())
}

/// Per-model seed: the experiment seed mixed with the model id.
pub fn model_seed(cfg: &ExperimentConfig, spec: &ModelSpec) -> u64 {
    derive_seed(cfg.seed, &spec.id(), 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub context_radius: usize,
    pub log_floor: f64,
}

impl From<AnalysisConfig> for AnalysisRecord {
    fn from(a: AnalysisConfig) -> Self {
        Self { frame_len: a.frame_len, hop: a.hop, fft_size: a.fft_size, context_radius: a.context_radius, log_floor: a.log_floor }
    }
}

impl AnalysisRecord {
    pub fn to_core(&self) -> AnalysisConfig {
        AnalysisConfig { frame_len: self.frame_len, hop: self.hop, fft_size: self.fft_size, context_radius: self.context_radius, log_floor: self.log_floor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub id: String,
    pub kind: String,
    pub config_hash: String,
    /// `ExperimentConfig::hddae_training_hash` for HDDAE models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_hash: Option<String>,
    pub dataset_hash: String,
    pub sample_rate: u32,
    pub analysis: AnalysisRecord,
    pub seed: u64,
    /// Conditions whose rows the model (or each specialist) was trained on.
    pub trained_on: Vec<String>,
    pub train_frames: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_loss: f64,
    /// Checkpoint files, relative to the model directory.
    pub checkpoints: Vec<String>,
    /// SHA-256 of each checkpoint, same order.
    pub checkpoint_sha256: Vec<String>,
}

pub const META_FILE: &str = "meta.json";
pub const LOSS_FILE: &str = "loss.csv";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|source| HarnessError::Json { path: path.into(), source })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.into(), source })
}

fn write_loss(path: &Path, reports: &[(&str, &TrainReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "epoch", "train_loss", "val_loss"])?;
    for (stage, r) in reports {
        for (e, tl) in r.train_loss.iter().enumerate() {
            let vl = r.val_loss.get(e).map_or(String::new(), |v| v.to_string());
            w.write_record([stage.to_string(), (e + 1).to_string(), tl.to_string(), vl])?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn write_checkpoint(path: &Path, model: AnyModel, r: &TrainReport) -> Result<String> {
    let bytes = checkpoint::encode(&model, TrainingMeta { epochs_run: r.epochs_run as u32, final_loss: r.final_loss });
    std::fs::write(path, &bytes).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

fn read_checkpoint(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(checkpoint::decode(&bytes).context(path.display().to_string())?.model)
}

/// Training rows of one condition (`ALL` for every train T60).
fn load_condition(cfg: &ExperimentConfig, condition: &str) -> Result<FeatureSet> {
    if condition != ALL {
        return FeatureSet::load(&features_path(&cfg.out_dir, condition));
    }
    let mut all = FeatureSet::default();
    for t in &cfg.conditions.train_t60 {
        all.extend(&FeatureSet::load(&features_path(&cfg.out_dir, &t60_label(*t)))?);
    }
    Ok(all)
}

/// Trains one HDDAE on `condition` and writes it to `dir`.
fn train_hddae(cfg: &ExperimentConfig, spec: &ModelSpec, layers: usize, condition: &str, dataset_hash: &str, dir: &Path) -> Result<(HddaeModel, ModelMeta)> {
    let analysis = cfg.analysis();
    let set = load_condition(cfg, condition)?;
    let (x, y) = set.training_pairs(analysis.context_radius)?;
    let norm = load_normalizer(&normalizer_path(&cfg.out_dir, condition))?;
    let seed = model_seed(cfg, spec);
    log::info!("training {} on {condition}: {} frames", spec.id(), x.rows());
    let (model, report) =
        fit_hddae_with(cfg.hddae_arch(layers), norm, &x, &y, &cfg.train.to_core(seed), seed).context(format!("training {}", spec.id()))?;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let sha = write_checkpoint(&dir.join("model.drvk"), AnyModel::Hddae(model.clone()), &report)?;
    write_loss(&dir.join(LOSS_FILE), &[("hddae", &report)])?;
    let meta = ModelMeta {
        id: spec.id(),
        kind: "hddae".into(),
        config_hash: cfg.content_hash(),
        training_hash: Some(cfg.hddae_training_hash()),
        dataset_hash: dataset_hash.into(),
        sample_rate: cfg.corpus.sample_rate,
        analysis: analysis.into(),
        seed,
        trained_on: vec![condition.to_string()],
        train_frames: x.rows(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        final_loss: report.final_loss,
        checkpoints: vec!["model.drvk".into()],
        checkpoint_sha256: vec![sha],
    };
    write_json(&dir.join(META_FILE), &meta)?;
    Ok((model, meta))
}

/// Reuses a specialist trained earlier against the same config and dataset.
fn cached_hddae(cfg: &ExperimentConfig, spec: &ModelSpec, dataset_hash: &str) -> Option<HddaeModel> {
    let dir = model_dir(cfg, spec);
    let meta: ModelMeta = read_json(&dir.join(META_FILE)).ok()?;
    if meta.training_hash.as_deref() != Some(cfg.hddae_training_hash().as_str()) || meta.dataset_hash != dataset_hash {
        return None;
    }
    match read_checkpoint(&dir.join("model.drvk")).ok()? {
        AnyModel::Hddae(m) => Some(m),
        AnyModel::Fusion(_) => None,
    }
}

/// Trains `spec` and returns the metadata written next to its checkpoints.
pub fn train_model(cfg: &ExperimentConfig, spec: &ModelSpec) -> Result<ModelMeta> {
    let manifest = load_manifest(cfg)?;
    let dir = model_dir(cfg, spec);
    match *spec {
        ModelSpec::Hddae { t60, layers } => {
            let condition = match t60 {
                None => ALL.to_string(),
                Some(t) if cfg.conditions.train_t60.contains(&t) => t60_label(t),
                Some(_) => return Err(HarnessError::UnknownModel(format!("{} (T60 not in the training set)", spec.id()))),
            };
            Ok(train_hddae(cfg, spec, layers, &condition, &manifest.content_hash, &dir)?.1)
        }
        ModelSpec::Idea { depth } => train_idea(cfg, spec, depth, &manifest.content_hash, &dir),
    }
}

fn train_idea(cfg: &ExperimentConfig, spec: &ModelSpec, depth: usize, dataset_hash: &str, dir: &Path) -> Result<ModelMeta> {
    let conv_stage = cfg.fusion.conv_layers + 1;
    if depth != SPECIALIST_LAYERS + conv_stage {
        return Err(HarnessError::UnknownModel(format!(
            "{} (this configuration builds IDEA_A({}))",
            spec.id(),
            SPECIALIST_LAYERS + conv_stage
        )));
    }
    let analysis = cfg.analysis();
    let labels: Vec<String> = cfg.conditions.train_t60.iter().map(|t| t60_label(*t)).collect();
    let mut specialists = Vec::with_capacity(labels.len());
    for &t in &cfg.conditions.train_t60 {
        let s = ModelSpec::Hddae { t60: Some(t), layers: SPECIALIST_LAYERS };
        let m = match cached_hddae(cfg, &s, dataset_hash) {
            Some(m) => {
                log::info!("reusing specialist {}", s.id());
                m
            }
            None => train_hddae(cfg, &s, SPECIALIST_LAYERS, &t60_label(t), dataset_hash, &model_dir(cfg, &s))?.0,
        };
        specialists.push(m);
    }

    let set = load_condition(cfg, ALL)?;
    let (x, y) = set.training_pairs(analysis.context_radius)?;
    let seed = model_seed(cfg, spec);
    log::info!("training fusion network on {} frames", x.rows());
    let stacked = ensemble_infer(&specialists, &x).context("specialist inference")?;
    let mut fusion = FusionCnnModel::new(cfg.fusion_arch(specialists.len()), seed).context("fusion init")?;
    fusion.fit_normalizer(&stacked, &y).context("fusion normalizer")?;
    let report = train(&mut fusion, &stacked, &y, &cfg.fusion_train.to_core(seed)).context(format!("training {}", spec.id()))?;

    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut checkpoints = Vec::new();
    let mut shas = Vec::new();
    for (p, (s, t)) in specialists.iter().zip(&cfg.conditions.train_t60).enumerate() {
        let src = model_dir(cfg, &ModelSpec::Hddae { t60: Some(*t), layers: SPECIALIST_LAYERS }).join("model.drvk");
        let name = format!("specialist_{p}.drvk");
        std::fs::copy(&src, dir.join(&name)).map_err(io_err(&src))?;
        let bytes = std::fs::read(dir.join(&name)).map_err(io_err(dir.join(&name)))?;
        if read_checkpoint(&dir.join(&name))? != AnyModel::Hddae(s.clone()) {
            return Err(HarnessError::Data(format!("{}: specialist checkpoint changed during training", src.display())));
        }
        checkpoints.push(name);
        shas.push(sha256_hex(&bytes));
    }
    shas.push(write_checkpoint(&dir.join("fusion.drvk"), AnyModel::Fusion(fusion), &report)?);
    checkpoints.push("fusion.drvk".into());
    write_loss(&dir.join(LOSS_FILE), &[("fusion", &report)])?;
    let meta = ModelMeta {
        id: spec.id(),
        kind: "idea".into(),
        config_hash: cfg.content_hash(),
        training_hash: None,
        dataset_hash: dataset_hash.into(),
        sample_rate: cfg.corpus.sample_rate,
        analysis: analysis.into(),
        seed,
        trained_on: labels,
        train_frames: x.rows(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        final_loss: report.final_loss,
        checkpoints,
        checkpoint_sha256: shas,
    };
    write_json(&dir.join(META_FILE), &meta)?;
    Ok(meta)
}

/// A trained model ready for inference.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Single { model: HddaeModel, analysis: AnalysisConfig },
    Idea(IdeaModel),
}

#[derive(Debug, Clone)]
pub struct ModelArtifact {
    pub meta: ModelMeta,
    pub model: LoadedModel,
}

impl ModelArtifact {
    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ModelMeta = read_json(&dir.join(META_FILE))?;
        let analysis = meta.analysis.to_core();
        analysis.validate().context(dir.display().to_string())?;
        let bad = |m: &str| HarnessError::Data(format!("{}: {m}", dir.display()));
        let mut models = Vec::with_capacity(meta.checkpoints.len());
        for (name, sha) in meta.checkpoints.iter().zip(&meta.checkpoint_sha256) {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            if &sha256_hex(&bytes) != sha {
                return Err(bad(&format!("{name} does not match its recorded hash")));
            }
            models.push(checkpoint::decode(&bytes).context(path.display().to_string())?.model);
        }
        if models.len() != meta.checkpoint_sha256.len() {
            return Err(bad("checkpoint list and hash list differ"));
        }
        let model = match meta.kind.as_str() {
            "hddae" => match models.pop() {
                Some(AnyModel::Hddae(model)) if models.is_empty() => LoadedModel::Single { model, analysis },
                _ => return Err(bad("expected one HDDAE checkpoint")),
            },
            "idea" => {
                let Some(AnyModel::Fusion(fusion)) = models.pop() else { return Err(bad("missing fusion checkpoint")) };
                let specialists = models
                    .into_iter()
                    .map(|m| match m {
                        AnyModel::Hddae(h) => Ok(h),
                        AnyModel::Fusion(_) => Err(bad("fusion checkpoint in specialist slot")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                LoadedModel::Idea(IdeaModel::new(meta.trained_on.clone(), specialists, fusion, analysis).context(dir.display().to_string())?)
            }
            other => return Err(bad(&format!("unknown model kind `{other}`"))),
        };
        Ok(Self { meta, model })
    }

    pub fn dereverb(&self, y: &Waveform) -> Result<Waveform> {
        if y.sample_rate() != self.meta.sample_rate {
            return Err(HarnessError::Data(format!("input is {} Hz, model expects {} Hz", y.sample_rate(), self.meta.sample_rate)));
        }
        match &self.model {
            LoadedModel::Single { model, analysis } => single_dereverb(model, y, analysis),
            LoadedModel::Idea(m) => idea_dereverb(m, y),
        }
        .context(format!("dereverberating with {}", self.meta.id))
    }

    /// LPS estimate for spliced inputs.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        match &self.model {
            LoadedModel::Single { model, .. } => model.forward(x),
            LoadedModel::Idea(m) => m.forward(x),
        }
        .context(self.meta.id.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_parse_and_print() {
        for id in ["HDDAE_A(3)", "HDDAE_A(6)", "HDDAE_0.3(3)", "HDDAE_0.9(3)", "IDEA_A(6)"] {
            assert_eq!(ModelSpec::parse(id).unwrap().id(), id);
        }
        assert_eq!(ModelSpec::parse("HDDAE_0.3(3)").unwrap(), ModelSpec::Hddae { t60: Some(0.3), layers: 3 });
        assert_eq!(ModelSpec::parse("IDEA_A(6)").unwrap().dir_name(), "IDEA_A_6");
        for bad in ["", "HDDAE", "HDDAE_A(1)", "HDDAE_B(3)", "HDDAE_-1(3)", "IDEA_0.3(6)", "DNN_A(3)", "HDDAE_A(x)"] {
            assert!(matches!(ModelSpec::parse(bad), Err(HarnessError::UnknownModel(_))), "{bad}");
        }
    }

    #[test]
    fn roster_expansion() {
        let cfg = ExperimentConfig::default();
        let ids: Vec<String> = expand_roster(&cfg, &["all".to_string()]).unwrap().iter().map(ModelSpec::id).collect();
        assert_eq!(ids, ["HDDAE_A(3)", "HDDAE_0.3(3)", "HDDAE_0.6(3)", "HDDAE_0.9(3)", "HDDAE_A(6)", "IDEA_A(6)"]);
    }

    #[test]
    fn seeds_differ_per_model() {
        let cfg = ExperimentConfig::default();
        let a = model_seed(&cfg, &ModelSpec::parse("HDDAE_A(3)").unwrap());
        let b = model_seed(&cfg, &ModelSpec::parse("HDDAE_A(6)").unwrap());
        assert_ne!(a, b);
        assert_eq!(a, model_seed(&cfg, &ModelSpec::parse("HDDAE_A(3)").unwrap()));
    }
}
