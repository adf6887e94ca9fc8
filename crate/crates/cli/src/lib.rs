//! Command line pipeline: scene generation, oracle and neural extraction,
//! training, evaluation and beam patterns.

pub mod commands;
pub mod config;
pub mod scenes;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use beamkit_core::pipeline::{OracleMaskKind, SteeringSource};
use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "beamkit", version, about = "Multichannel target speech extraction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON pipeline configuration; defaults apply to anything missing.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `simulation.duration_s=1.0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replaces the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SteeringArg {
    Doa,
    Pca,
    WhitenedPca,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskArg {
    Irm,
    Crm,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded scenes, one directory each.
    Simulate {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Oracle-mask covariances, MVDR, extracted WAV per scene.
    OracleExtract {
        /// Scene directories, or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
        #[arg(long, value_enum)]
        steering: Option<SteeringArg>,
        #[arg(long, value_enum)]
        mask: Option<MaskArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the neural beamformer on scene directories.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
        #[arg(long, value_enum)]
        mask: Option<MaskArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a trained checkpoint on scene directories.
    Infer {
        #[arg(long, required = true)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// SI-SDR and STOI over scene or estimate manifests.
    Evaluate {
        /// Manifest files, or directories searched for them.
        #[arg(long, required = true, num_args = 1..)]
        manifests: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Beam pattern CSVs of oracle MVDR (or neural, with a checkpoint) weights.
    Beampattern {
        #[arg(long, required = true, num_args = 1..)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        steering: Option<SteeringArg>,
        #[arg(long, value_enum)]
        mask: Option<MaskArg>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; nothing was written.
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::OracleExtract { common, .. }
            | Command::Train { common, .. }
            | Command::Infer { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Beampattern { common, .. } => common,
        }
    }
}

fn steering(s: SteeringArg) -> SteeringSource {
    match s {
        SteeringArg::Doa => SteeringSource::Doa,
        SteeringArg::Pca => SteeringSource::Pca,
        SteeringArg::WhitenedPca => SteeringSource::WhitenedPca,
    }
}

/// Builds the effective configuration for `cmd`; flags win over `--set`,
/// which wins over the file.
pub fn resolve_config(cmd: &Command) -> Result<PipelineConfig, CliError> {
    let common = cmd.common();
    let mut cfg = PipelineConfig::load(common.config.as_deref(), &common.set).map_err(CliError::Invalid)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.training.seed = s;
    }
    let (st, mk) = match cmd {
        Command::OracleExtract { steering, mask, .. } | Command::Beampattern { steering, mask, .. } => (*steering, *mask),
        Command::Train { mask, .. } => (None, *mask),
        _ => (None, None),
    };
    if let Some(s) = st {
        cfg.extraction.steering = steering(s);
    }
    if let Some(m) = mk {
        cfg.extraction.mask = match m {
            MaskArg::Irm => OracleMaskKind::Irm,
            MaskArg::Crm => OracleMaskKind::Crm,
        };
        if matches!(cmd, Command::Train { .. }) {
            cfg.model.preseparator.mask_kind = match m {
                MaskArg::Irm => beamkit_neural::preseparator::MaskKind::Irm,
                MaskArg::Crm => beamkit_neural::preseparator::MaskKind::Crm,
            };
        }
    }
    Ok(cfg)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(CliError::Invalid(errs)) => {
            eprintln!("invalid configuration:");
            for e in errs {
                eprintln!("  - {e}");
            }
            EXIT_INVALID
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// Runs a parsed command and returns every artifact written.
pub fn execute(cmd: &Command) -> Result<Vec<PathBuf>, CliError> {
    let cfg = resolve_config(cmd)?;
    let out = cmd.common().out.clone();
    let need_out = || out.clone().ok_or_else(|| CliError::Invalid(vec!["--out is required".into()]));
    match cmd {
        Command::Simulate { count, .. } => {
            if *count == 0 {
                return Err(CliError::Invalid(vec!["--count must be at least 1".into()]));
            }
            Ok(commands::simulate(&cfg, *count, &need_out()?)?)
        }
        Command::OracleExtract { scenes, .. } => Ok(commands::oracle_extract(&cfg, scenes, &need_out()?)?),
        Command::Train { scenes, .. } => Ok(commands::train(&cfg, scenes, &need_out()?)?),
        Command::Infer { checkpoint, scenes, .. } => Ok(commands::infer(&cfg, checkpoint, scenes, &need_out()?)?),
        Command::Evaluate { manifests, .. } => Ok(commands::evaluate(manifests, &need_out()?)?),
        Command::Beampattern { scenes, checkpoint, .. } => {
            Ok(commands::beampattern(&cfg, scenes, checkpoint.as_deref(), &need_out()?)?)
        }
    }
}
