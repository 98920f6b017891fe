//! End-to-end checks of the waveform dereverberation paths on a tiny analysis
//! configuration, with small models trained on pseudo-speech.

use dereverb_core::dsp::{lps_of, splice, AnalysisConfig, Waveform};
use dereverb_core::ensemble::{ensemble_prepare, idea_dereverb, single_dereverb, train_fusion, ConditionData, IdeaModel};
use dereverb_core::nn::{Activation, FusionArch, HddaeArch, TrainConfig};
use dereverb_core::rir::{convolve, generate_rir, RirConfig, RoomSpec};
use dereverb_core::synth::{pseudo_speech, DEFAULT_PEAK};
use dereverb_core::Matrix;

const FS: u32 = 16_000;
const LEN: usize = 8_000;

fn cfg() -> AnalysisConfig {
    AnalysisConfig { frame_len: 64, hop: 32, fft_size: 64, context_radius: 1, ..AnalysisConfig::default() }
}

fn room() -> RoomSpec {
    RoomSpec { dims: [4.0, 5.0, 3.0], source: [1.2, 1.5, 1.4], receiver: [2.9, 3.6, 1.6] }
}

fn reverberate(s: &Waveform, t60: f64) -> Waveform {
    let rir = generate_rir(&room(), &RirConfig::new(t60, FS)).unwrap().normalized();
    convolve(s, &rir).unwrap()
}

/// Spliced reverberant rows and clean LPS rows for a set of clean utterances;
/// the last utterance is all-zero so silence is part of the corpus.
fn pairs(seeds: &[u64], t60: f64) -> (Matrix, Matrix) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut clean: Vec<Waveform> = seeds.iter().map(|&s| pseudo_speech(LEN, FS, s, DEFAULT_PEAK)).collect();
    clean.push(Waveform::zeros(LEN, FS));
    for s in &clean {
        let y = reverberate(s, t60);
        xs.push(splice(&lps_of(&y, &cfg()).unwrap(), 1).into_matrix());
        ys.push(lps_of(s, &cfg()).unwrap().into_matrix());
    }
    let xr: Vec<&Matrix> = xs.iter().collect();
    let yr: Vec<&Matrix> = ys.iter().collect();
    (Matrix::vstack(&xr).unwrap(), Matrix::vstack(&yr).unwrap())
}

fn arch() -> HddaeArch {
    let c = cfg();
    HddaeArch { input_dim: c.spliced_dim(), hidden_dim: 48, output_dim: c.bins(), hidden_layers: 3, activation: Activation::Relu }
}

fn train_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, minibatch_size: 64, learning_rate: 1e-3, validation_fraction: 0.0, ..TrainConfig::default() }
}

fn lps_mse(a: &Waveform, b: &Waveform) -> f64 {
    lps_of(a, &cfg()).unwrap().as_matrix().mse_rows(lps_of(b, &cfg()).unwrap().as_matrix()).unwrap()
}

fn build_idea() -> IdeaModel {
    let t60s = [0.3, 0.6];
    let groups: Vec<ConditionData> = t60s
        .iter()
        .map(|&t| {
            let (inputs, targets) = pairs(&[1, 2, 3, 4], t);
            ConditionData { label: format!("{t}"), inputs, targets }
        })
        .collect();
    let specialists: Vec<_> = ensemble_prepare(&groups, arch(), &train_cfg(25), 5).unwrap().into_iter().map(|(m, _)| m).collect();
    let xr: Vec<&Matrix> = groups.iter().map(|g| &g.inputs).collect();
    let yr: Vec<&Matrix> = groups.iter().map(|g| &g.targets).collect();
    let (x, y) = (Matrix::vstack(&xr).unwrap(), Matrix::vstack(&yr).unwrap());
    let fusion_arch = FusionArch { channels: 2, bins: cfg().bins(), conv_channels: 4, kernel: 5, conv_layers: 1, fc_hidden: 48, activation: Activation::Relu };
    let (fusion, _) = train_fusion(&specialists, &x, &y, fusion_arch, &train_cfg(25), 6).unwrap();
    IdeaModel::new(t60s.iter().map(|t| format!("{t}")).collect(), specialists, fusion, cfg()).unwrap()
}

#[test]
fn trained_models_reduce_spectral_error_and_keep_silence() {
    let (x, y) = pairs(&[1, 2, 3, 4], 0.6);
    let single = dereverb_core::ensemble::fit_hddae(arch(), &x, &y, &train_cfg(25), 9).unwrap().0;
    let idea = build_idea();

    let clean = pseudo_speech(LEN, FS, 50, DEFAULT_PEAK);
    let reverb = reverberate(&clean, 0.6);
    let before = lps_mse(&reverb, &clean);

    let out = single_dereverb(&single, &reverb, &cfg()).unwrap();
    assert_eq!(out.len(), reverb.len());
    let after_single = lps_mse(&out, &clean);
    assert!(after_single < before, "single: {after_single} vs {before}");

    let out = idea_dereverb(&idea, &reverb).unwrap();
    assert_eq!(out.len(), reverb.len());
    let after_idea = lps_mse(&out, &clean);
    assert!(after_idea < before, "ensemble: {after_idea} vs {before}");

    let silence = Waveform::zeros(LEN, FS);
    assert!(single_dereverb(&single, &silence, &cfg()).unwrap().rms() < 1e-4);
    assert!(idea_dereverb(&idea, &silence).unwrap().rms() < 1e-4);

    let odd = Waveform::new(reverb.samples()[..5001].to_vec(), FS);
    assert_eq!(idea_dereverb(&idea, &odd).unwrap().len(), 5001);
}
