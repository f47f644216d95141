//! Experiment runner behind the `divkernel` binary: configuration,
//! output tables, plots and the run manifest.

pub mod config;
pub mod run;
pub mod svg;
pub mod tables;

use std::path::Path;
use std::time::Instant;

use serde_json::json;

use config::{Command, Config, Preset};
use run::{CliError, Outcome};

/// `git describe` of the tree the binary was built from.
pub const GIT_DESCRIBE: &str = env!("DIVKERNEL_GIT_DESCRIBE");

/// Validates `cfg`, runs `command` into `dir` and writes `config.toml` and
/// `manifest.json` next to the results.
pub fn run_to_dir(command: Command, cfg: &Config, text: Option<&str>, preset: Option<Preset>, workers: usize, dir: &Path) -> Result<Outcome, CliError> {
    cfg.validate(command, text)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let started = Instant::now();
    let mut outcome = divkernel::par::with_workers(workers, || run::execute(command, cfg, dir))?;
    let wall = started.elapsed().as_secs_f64();
    let toml = cfg.to_toml();
    std::fs::write(dir.join("config.toml"), &toml)?;
    outcome.outputs.push("config.toml".into());
    outcome.outputs.push("manifest.json".into());
    let manifest = json!({
        "command": command.name(),
        "preset": preset.map(Preset::name),
        "seed": cfg.seed,
        "workers": workers,
        "build": { "version": env!("CARGO_PKG_VERSION"), "git_describe": GIT_DESCRIBE },
        "wall_time_seconds": wall,
        "outputs": outcome.outputs,
        "summary": outcome.summary,
        "config": cfg,
        "config_toml": toml,
    });
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), body + "\n")?;
    Ok(outcome)
}
