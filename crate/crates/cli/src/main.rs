//! `lgs`: command-line driver for the latent generative solver pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lgs::app::{self, Subcommand};
use lgs::config::RunConfig;
use lgs::flow::AblationMode;
use lgs::LgsError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    GenData,
    TrainCodec,
    Encode,
    TrainFlow,
    Rollout,
    Eval,
    VerifyBounds,
    Report,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::GenData => Subcommand::GenData,
            Command::TrainCodec => Subcommand::TrainCodec,
            Command::Encode => Subcommand::Encode,
            Command::TrainFlow => Subcommand::TrainFlow,
            Command::Rollout => Subcommand::Rollout,
            Command::Eval => Subcommand::Eval,
            Command::VerifyBounds => Subcommand::VerifyBounds,
            Command::Report => Subcommand::Report,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lgs",
    version,
    about = "Latent generative solver: corpus generation, codec and flow training, rollouts and evaluation",
    after_help = "Each run writes into <out>/<subcommand>-<timestamp>. Worker threads are capped by LGS_THREADS."
)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    command: Command,

    /// Text `key = value` config file; unset keys keep their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Ablation mode of the flow model.
    #[arg(long, value_name = "MODE")]
    mode: Option<AblationMode>,

    /// Parent directory of run directories.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, LgsError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), LgsError> {
    let Ok(v) = std::env::var("LGS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| LgsError::Config(format!("LGS_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LgsError::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| {
        let cfg = resolve(&cli)?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
        app::run(cli.command.into(), &cfg, &cli.out, &stamp)
    });
    match result {
        Ok(outcome) => {
            println!("run directory: {}", outcome.run_dir.display());
            for line in &outcome.summary {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(app::exit_code(&e) as u8)
        }
    }
}
