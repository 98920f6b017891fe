//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, render_table};
use crate::models::{expand_roster, model_dir, train_model, ModelArtifact, ModelSpec};
use crate::prepare::{gen_testdata, prepare};
use crate::spectrogram::spectrogram;
use crate::wav::{read_wav, write_pcm16};

#[derive(Debug, Parser)]
#[command(name = "dereverb", version, about = "Spectral-mapping speech dereverberation experiments")]
pub struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic pseudo-speech corpus into the configured corpus directories.
    GenTestdata,
    /// Generate RIRs, reverberant audio, feature caches and the manifest.
    Prepare,
    /// Train one or more models (`all` for the configured roster).
    Train {
        #[arg(long = "model", value_name = "ID", required = true, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Dereverberate a WAV file with a trained model.
    Dereverb {
        /// Model directory, or a model id resolved under the output directory.
        #[arg(long, value_name = "DIR|ID")]
        model: String,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score the test split; defaults to the configured roster.
    Evaluate {
        #[arg(long = "model", value_name = "ID", value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Export the LPS matrix of a WAV file as CSV.
    Spectrogram { input: PathBuf, output: PathBuf },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_model(cfg: &ExperimentConfig, model: &str) -> Result<PathBuf> {
    let p = Path::new(model);
    if p.is_dir() {
        return Ok(p.to_path_buf());
    }
    let dir = model_dir(cfg, &ModelSpec::parse(model)?);
    if !dir.is_dir() {
        return Err(HarnessError::Data(format!("{}: model not found", dir.display())));
    }
    Ok(dir)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenTestdata => {
            gen_testdata(&cfg)?;
        }
        Command::Prepare => {
            let m = prepare(&cfg)?;
            println!("{}", m.content_hash);
        }
        Command::Train { models } => {
            for spec in expand_roster(&cfg, models)? {
                let meta = train_model(&cfg, &spec)?;
                println!("{}\t{} epochs\tloss {}", meta.id, meta.epochs_run, meta.final_loss);
            }
        }
        Command::Dereverb { model, input, output } => {
            let artifact = ModelArtifact::load(&resolve_model(&cfg, model)?)?;
            let y = read_wav(input)?;
            let s = artifact.dereverb(&y)?;
            let clipped = write_pcm16(output, &s)?;
            if clipped > 0 {
                log::warn!("{clipped} output samples clipped to [-1, 1]");
            }
        }
        Command::Evaluate { models } => {
            let ids = if models.is_empty() { cfg.roster.clone() } else { models.clone() };
            let summary = evaluate(&cfg, &expand_roster(&cfg, &ids)?)?;
            print!("{}", render_table(&summary));
        }
        Command::Spectrogram { input, output } => {
            spectrogram(input, output, &cfg.analysis())?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
