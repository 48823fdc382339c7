//! Command-line definitions and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use svpg_core::noise::NoiseFamily;
use svpg_core::rl::{Coding, Method, Task};

use crate::commands;
use crate::config::Config;
use crate::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "svpg", about = "Spiking variational policy gradient experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub task: Option<Task>,
    #[arg(long, global = true)]
    pub method: Option<Method>,
    #[arg(long, global = true)]
    pub coding: Option<Coding>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy, writing metrics and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Zero-noise evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the best checkpoint in a directory (ties go to the earliest step).
    SelectBest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Noise and environment sweeps over one or more checkpoints.
    Robustness {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        /// Noise families; defaults to the config's `noise_family`.
        #[arg(long, num_args = 1..)]
        family: Vec<NoiseFamily>,
    },
    /// Check both gradient routes against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// `d_s,n_h,d_h,d_a`.
        #[arg(long)]
        shape: Option<String>,
    },
    /// Weight histograms and hidden-response changes.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
    },
}

impl Common {
    pub fn config(&self) -> CliResult<Config> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Config::resolve(&text, self.task, self.method)?;
        if let Some(c) = self.coding {
            cfg.coding = c;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }
}

/// Run a parsed command, returning the lines it prints.
pub fn run(cli: Cli) -> CliResult<Vec<String>> {
    let mut out = Vec::new();
    match cli.command {
        Command::Train { common } => {
            let cfg = common.config()?;
            let s = commands::train(&cfg, &common.out_dir)?;
            out.push(format!(
                "trained {} steps; best metric {} at step {} ({}); {} checkpoints",
                s.steps_run,
                s.best_metric,
                s.best_step,
                s.best_checkpoint.display(),
                s.checkpoints.len()
            ));
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.config()?;
            let e = commands::eval(&cfg, &checkpoint, Some(&common.out_dir))?;
            out.push(format!("metric {} std {} n {}", e.mean, e.std, e.n));
        }
        Command::SelectBest { dir, .. } => {
            out.push(commands::select_best(&dir)?.display().to_string());
        }
        Command::Robustness {
            common,
            checkpoint,
            family,
        } => {
            let cfg = common.config()?;
            let families = if family.is_empty() { vec![cfg.noise_family] } else { family };
            let rows = commands::robustness(&cfg, &checkpoint, &families, &common.out_dir)?;
            for r in rows.iter().filter(|r| r.seed.is_none()) {
                out.push(format!("{} {} {} {} ± {}", r.family, r.strength, r.method, r.mean, r.std));
            }
        }
        Command::Gradcheck { common, shape } => {
            let mut cfg = common.config()?;
            if let Some(s) = shape {
                cfg.set("gradcheck_shape", &s)?;
            }
            let g = commands::gradcheck(&cfg, Some(&common.out_dir))?;
            out.push(g.report.to_string());
            out.push(format!("max exact rel error {:.3e}, max approx rel error {:.3e}", g.max_exact, g.max_approx));
            if !g.passed {
                return Err(CliError::GradCheck(format!(
                    "exact {:.3e} (tol {:e}), approx {:.3e} (tol {:e})",
                    g.max_exact,
                    commands::GRADCHECK_EXACT_TOL,
                    g.max_approx,
                    commands::GRADCHECK_APPROX_TOL
                )));
            }
        }
        Command::Analyze { common, checkpoint } => {
            let cfg = common.config()?;
            let a = commands::analyze(&cfg, &checkpoint, &common.out_dir)?;
            for r in &a.sparsity {
                out.push(format!("{} seed {}: fraction |w|<0.01 = {:.4}", r.method, r.seed, r.fraction()));
            }
        }
    }
    Ok(out)
}
