use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use divkernel_cli::config::{self, Command, Config, Preset};
use divkernel_cli::run::CliError;
use divkernel_cli::run_to_dir;

#[derive(Parser)]
#[command(name = "divkernel", version, about = "Divergence-kernel score and linear-response experiments")]
struct Cli {
    /// TOML run configuration (required except for `repro`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DIVKERNEL_WORKERS")]
    workers: Option<usize>,
    /// Output directory [default: the config's `out`, else ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plain Euler-Maruyama ensemble, final states only.
    Simulate,
    /// Binned score of the final marginal.
    Score,
    /// Binned score and linear responses along parameter directions.
    Linresp,
    /// Long-orbit response of a time average.
    Ergodic,
    /// Independent reference values next to the kernel estimate.
    Oracle,
    /// Forward-only KL gradient descent on a diffusion model.
    Fit,
    /// Run a canned experiment.
    Repro {
        #[arg(value_enum)]
        preset: PresetArg,
        /// Larger Lorenz run (40 coordinates, 7 orbits of 400 time units).
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "sec4.1")]
    Sec41,
    #[value(name = "sec4.2")]
    Sec42,
    #[value(name = "sec5.1")]
    Sec51,
    #[value(name = "sec5.2")]
    Sec52,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Sec41 => Preset::Mult1d,
            PresetArg::Sec42 => Preset::Lorenz96,
            PresetArg::Sec51 => Preset::Fit1d,
            PresetArg::Sec52 => Preset::Fit5d,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match go(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn go(cli: Cli) -> Result<(), CliError> {
    let (command, mut cfg, text, preset) = match cli.command {
        Cmd::Repro { preset, full } => {
            let p = Preset::from(preset);
            let (c, cfg) = p.build(full);
            (c, cfg, None, Some(p))
        }
        other => {
            let command = match other {
                Cmd::Simulate => Command::Simulate,
                Cmd::Score => Command::Score,
                Cmd::Linresp => Command::Linresp,
                Cmd::Ergodic => Command::Ergodic,
                Cmd::Oracle => Command::Oracle,
                Cmd::Fit => Command::Fit,
                Cmd::Repro { .. } => unreachable!(),
            };
            let path = cli.config.as_ref().ok_or_else(|| {
                CliError::Config(config::ConfigError { message: format!("`{}` needs --config <FILE>", command.name()), line: None })
            })?;
            let (cfg, text): (Config, String) = config::load(path)?;
            (command, cfg, Some(text), None)
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let workers = cli.workers.or(cfg.workers).unwrap_or(0);
    let dir = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_to_dir(command, &cfg, text.as_deref(), preset, workers, &dir)?;
    println!("{} done: {}", command.name(), dir.display());
    println!("{}", serde_json::to_string(&outcome.summary).unwrap_or_default());
    Ok(())
}
