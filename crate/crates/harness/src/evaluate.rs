//! Objective evaluation over the test split: per-utterance CSV, per-T60
//! summary CSV and a plain-text table split into matched and mismatched T60s.

use std::fmt::Write as _;
use std::path::Path;

use dereverb_core::dsp::Waveform;
use dereverb_core::metrics::{score_direct, MetricReport, Scores};

use crate::config::ExperimentConfig;
use crate::error::{io_err, CoreContext, HarnessError, Result};
use crate::manifest::{t60_label, Split};
use crate::models::{model_dir, ModelArtifact, ModelSpec};
use crate::prepare::{load_manifest, read_clean, read_reverb};

pub const CLEAN_ROW: &str = "Clean";
pub const REVERB_ROW: &str = "Reverberation";

/// Mean scores of one system per test T60 (config order) and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub system: String,
    pub per_t60: Vec<Scores>,
    pub avg: Scores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub test_t60: Vec<f64>,
    pub train_t60: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

impl EvalSummary {
    pub fn row(&self, system: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    pub fn is_matched(&self, t60: f64) -> bool {
        self.train_t60.contains(&t60)
    }

    pub fn t60_index(&self, t60: f64) -> Option<usize> {
        self.test_t60.iter().position(|&t| t == t60)
    }
}

fn clip(w: Waveform) -> Waveform {
    let rate = w.sample_rate();
    Waveform::new(w.into_samples().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect(), rate)
}

/// Scores the clean control, the unprocessed baseline and every listed model.
pub fn evaluate(cfg: &ExperimentConfig, models: &[ModelSpec]) -> Result<EvalSummary> {
    let manifest = load_manifest(cfg)?;
    let analysis = cfg.analysis();
    let mut artifacts = Vec::with_capacity(models.len());
    for spec in models {
        let dir = model_dir(cfg, spec);
        if !dir.join(crate::models::META_FILE).exists() {
            return Err(HarnessError::Data(format!("{}: model not trained; run `train --model {}`", dir.display(), spec.id())));
        }
        let a = ModelArtifact::load(&dir)?;
        if a.meta.dataset_hash != manifest.content_hash {
            return Err(HarnessError::Data(format!("{} was trained on a different dataset", spec.id())));
        }
        artifacts.push(a);
    }

    let systems: Vec<String> = [CLEAN_ROW.to_string(), REVERB_ROW.to_string()].into_iter().chain(models.iter().map(ModelSpec::id)).collect();
    let mut reports: Vec<MetricReport> = vec![MetricReport::default(); systems.len()];
    let records: Vec<_> = manifest.records(Split::Test).collect();
    for (n, rec) in records.iter().enumerate() {
        let clean = read_clean(cfg, rec)?;
        let reverb = read_reverb(cfg, rec)?;
        let cond = t60_label(rec.t60);
        let mut push = |i: usize, processed: &Waveform| -> Result<()> {
            let s = score_direct(&clean, processed, &analysis).context(format!("scoring {} / {}", systems[i], rec.id))?;
            reports[i].push(rec.id.clone(), cond.clone(), s);
            Ok(())
        };
        push(0, &clean)?;
        push(1, &reverb)?;
        for (i, a) in artifacts.iter().enumerate() {
            push(i + 2, &clip(a.dereverb(&reverb)?))?;
        }
        log::debug!("scored {}/{} {}", n + 1, records.len(), rec.id);
    }

    let test_t60 = cfg.conditions.test_t60.clone();
    let rows = systems
        .iter()
        .zip(&reports)
        .map(|(system, rep)| {
            let per_t60: Vec<Scores> = test_t60.iter().map(|t| rep.mean_for(&t60_label(*t)).unwrap_or(Scores { stoi: f64::NAN, sdi: f64::NAN, lsd: f64::NAN })).collect();
            let k = per_t60.len() as f64;
            let avg = Scores {
                stoi: per_t60.iter().map(|s| s.stoi).sum::<f64>() / k,
                sdi: per_t60.iter().map(|s| s.sdi).sum::<f64>() / k,
                lsd: per_t60.iter().map(|s| s.lsd).sum::<f64>() / k,
            };
            SummaryRow { system: system.clone(), per_t60, avg }
        })
        .collect();
    let summary = EvalSummary { test_t60, train_t60: cfg.conditions.train_t60.clone(), rows };

    let dir = cfg.out_dir.join("eval");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_metrics_csv(&dir.join("metrics.csv"), &systems, &reports, &summary)?;
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    let table = render_table(&summary);
    std::fs::write(dir.join("table.txt"), &table).map_err(io_err(dir.join("table.txt")))?;
    log::info!("evaluation written to {}", dir.display());
    Ok(summary)
}

fn write_metrics_csv(path: &Path, systems: &[String], reports: &[MetricReport], s: &EvalSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "utterance_id", "t60", "condition", "stoi", "sdi", "lsd"])?;
    for (system, rep) in systems.iter().zip(reports) {
        for u in &rep.utterances {
            let t60: f64 = u.condition.parse().unwrap_or(f64::NAN);
            let cond = if s.is_matched(t60) { "matched" } else { "mismatched" };
            w.write_record([system, &u.id, &u.condition, cond, &u.scores.stoi.to_string(), &u.scores.sdi.to_string(), &u.scores.lsd.to_string()])?;
        }
    }
    w.flush().map_err(io_err(path))
}

type Metric = (&'static str, fn(&Scores) -> f64);
const METRICS: [Metric; 3] = [("STOI", |s| s.stoi), ("SDI", |s| s.sdi), ("LSD", |s| s.lsd)];

fn write_summary_csv(path: &Path, s: &EvalSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["model".to_string(), "metric".to_string()];
    header.extend(s.test_t60.iter().map(|t| t60_label(*t)));
    header.push("avg".into());
    w.write_record(&header)?;
    for (name, get) in METRICS {
        for r in &s.rows {
            let mut rec = vec![r.system.clone(), name.to_string()];
            rec.extend(r.per_t60.iter().map(|v| get(v).to_string()));
            rec.push(get(&r.avg).to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// One block per metric; matched T60 columns first, then mismatched, then Avg.
pub fn render_table(s: &EvalSummary) -> String {
    let matched: Vec<usize> = (0..s.test_t60.len()).filter(|&i| s.is_matched(s.test_t60[i])).collect();
    let mismatched: Vec<usize> = (0..s.test_t60.len()).filter(|&i| !s.is_matched(s.test_t60[i])).collect();
    let name_w = s.rows.iter().map(|r| r.system.len()).max().unwrap_or(0).max(6);
    let col_w = 8;
    let mut out = String::new();
    for (name, get) in METRICS {
        let _ = writeln!(out, "{name}");
        let mut head = format!("{:name_w$}", "");
        let mut groups = format!("{:name_w$}", "");
        for (label, idx) in [("matched", &matched), ("mismatched", &mismatched)] {
            if idx.is_empty() {
                continue;
            }
            let width = idx.len() * (col_w + 1);
            let _ = write!(groups, " |{label:^width$}");
            head.push_str(" |");
            for &i in idx {
                let _ = write!(head, " {:>col_w$}", format!("{}s", t60_label(s.test_t60[i])));
            }
        }
        let _ = write!(head, " | {:>col_w$}", "Avg");
        let _ = writeln!(out, "{groups}");
        let _ = writeln!(out, "{head}");
        let _ = writeln!(out, "{}", "-".repeat(head.len()));
        for r in &s.rows {
            let mut line = format!("{:name_w$}", r.system);
            for idx in [&matched, &mismatched] {
                if idx.is_empty() {
                    continue;
                }
                line.push_str(" |");
                for &i in idx {
                    let _ = write!(line, " {:>col_w$.4}", get(&r.per_t60[i]));
                }
            }
            let _ = write!(line, " | {:>col_w$.4}", get(&r.avg));
            let _ = writeln!(out, "{line}");
        }
        out.push('\n');
    }
    out
}
