//! The `aai` command line: `synth`, `train`, `infer`, `eval`, `report`.
//!
//! Settings come from an optional TOML file (`--config`); flags override it.

mod config;
mod experiment;
mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::aai::ReconLoss;
use crate::Result;

pub use config::{Paths, RunConfig, SweepSpec, DATA_DIR_ENV};
pub use experiment::{
    cmd_eval, cmd_infer, cmd_report, cmd_synth, cmd_train, condition_key, evaluate, fit_aai, fit_prior, load_manifest,
    ConditionResult, Estimator, ExperimentResult, TrainData, TrainLogs, CLEAN,
};
pub use plot::sweep_plots;

#[derive(Debug, Parser)]
#[command(name = "aai", version, about = "Speech to EGG by adversarial approximate inference")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Corpus root (default: $AAI_DATA_DIR, then ./data).
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic speech/EGG corpus with glottal ground truth.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        /// Output directory (default: the data dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seconds per utterance.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Train the EGG prior, then the adversarial stage.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Continue from this checkpoint up to `--aai-steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Estimate an EGG from a speech recording.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        infer_stride: Option<usize>,
    },
    /// Score a checkpoint on the test split under the noise sweep.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// White-noise SNRs in dB, comma-separated.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        white: Option<Vec<f64>>,
        /// Babble SNRs in dB, comma-separated.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        babble: Option<Vec<f64>>,
        /// Evaluate clean speech only.
        #[arg(long)]
        clean_only: bool,
        /// Score the reference EGG against itself.
        #[arg(long)]
        self_test: bool,
        #[arg(long)]
        infer_stride: Option<usize>,
    },
    /// Tables, plots and an ablation summary from saved results.
    Report {
        #[arg(long = "results", required = true, num_args = 1..)]
        results: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub prior_steps: Option<usize>,
    #[arg(long)]
    pub aai_steps: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub eps_std: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Reconstruction loss: cosine or l2.
    #[arg(long)]
    pub loss: Option<ReconLoss>,
    #[arg(long)]
    pub train_stride: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Cli {
    /// File settings with flag overrides applied.
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        if self.data_dir.is_some() {
            cfg.paths.data_dir = self.data_dir.clone();
        }
        if self.manifest.is_some() {
            cfg.paths.manifest = self.manifest.clone();
        }
        if self.out_dir.is_some() {
            cfg.paths.out_dir = self.out_dir.clone();
        }
        match &self.command {
            Command::Synth { n, duration, .. } => {
                set(&mut cfg.corpus.n, *n);
                set(&mut cfg.corpus.duration, *duration);
            }
            Command::Train { model, checkpoint, .. } => {
                let m = &mut cfg.model;
                set(&mut m.prior_steps, model.prior_steps);
                set(&mut m.aai_steps, model.aai_steps);
                set(&mut m.k, model.k);
                set(&mut m.batch_size, model.batch_size);
                set(&mut m.lambda_adv, model.lambda_adv);
                set(&mut m.eps_std, model.eps_std);
                set(&mut m.adam.lr, model.lr);
                set(&mut m.loss, model.loss);
                set(&mut cfg.train_stride, model.train_stride);
                if checkpoint.is_some() {
                    cfg.paths.checkpoint = checkpoint.clone();
                }
            }
            Command::Infer { infer_stride, .. } => set(&mut cfg.infer_stride, *infer_stride),
            Command::Eval {
                white,
                babble,
                clean_only,
                infer_stride,
                ..
            } => {
                set(&mut cfg.infer_stride, *infer_stride);
                set(&mut cfg.sweep.white, white.clone());
                set(&mut cfg.sweep.babble, babble.clone());
                if *clean_only {
                    cfg.sweep.white.clear();
                    cfg.sweep.babble.clear();
                }
            }
            Command::Report { .. } => {}
        }
        cfg.resolved()
    }
}

/// Run a parsed command, printing its primary output.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Synth { out, .. } => {
            let dir = out.clone().unwrap_or_else(|| cfg.data_dir());
            println!("{}", cmd_synth(&cfg, &dir)?.display());
        }
        Command::Train { resume, .. } => {
            let (path, val) = cmd_train(&cfg, resume.as_deref())?;
            match val {
                Some(v) => println!("final validation cosine distance: {v:.4}"),
                None => println!("final validation cosine distance: n/a"),
            }
            println!("{}", path.display());
        }
        Command::Infer {
            checkpoint, speech, out, ..
        } => {
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.checkpoint());
            cmd_infer(&cfg, &ckpt, speech, out)?;
            println!("{}", out.display());
        }
        Command::Eval {
            checkpoint, self_test, ..
        } => {
            let r = cmd_eval(&cfg, checkpoint.as_deref(), *self_test)?;
            print!("{}", r.tables());
        }
        Command::Report { results } => print!("{}", cmd_report(results, &cfg.out_dir())?),
    }
    Ok(())
}

/// Parse `args`, run, and map the outcome to the exit-code contract:
/// 0 success, 2 configuration, 3 data, 4 numerical divergence.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
