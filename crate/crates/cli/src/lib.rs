//! Command-line front end for texture attacks: `attack`, `ablate`, `render`
//! and `eval`, driven by a `key = value` run configuration.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_ablate, cmd_attack, cmd_eval, cmd_render, summary_text, CliError};
use crate::config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "texcamo", version, about = "Multi-view adversarial texture optimization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration file (key = value lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize a texture and report the score before and after.
    Attack,
    /// Train several configurations and compare their final scores.
    Ablate {
        /// quartet, tau or k.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated radii for the tau sweep.
        #[arg(long)]
        taus: Option<String>,
        /// Comma-separated batch sizes for the k sweep.
        #[arg(long)]
        ks: Option<String>,
    },
    /// Render a texture at one pose or over the eval grid.
    Render {
        #[arg(long, value_name = "PATH")]
        texture: Option<PathBuf>,
        #[arg(long)]
        azimuth: Option<f64>,
        #[arg(long)]
        elevation: Option<f64>,
        #[arg(long)]
        distance: Option<f64>,
        /// One image per eval-grid pose.
        #[arg(long)]
        grid: bool,
    },
    /// Score a texture over the eval grid.
    Eval {
        #[arg(long, value_name = "PATH")]
        texture: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            msg: format!("--set expects KEY=VALUE, got {kv:?}"),
        })?;
        cfg.set(k.trim(), v)?;
    }
    let mut flags: Vec<(&str, String)> = Vec::new();
    if let Some(s) = cli.common.seed {
        flags.push(("seed", s.to_string()));
    }
    if let Some(o) = &cli.common.out {
        flags.push(("out", o.display().to_string()));
    }
    if let Some(t) = cli.common.threads {
        flags.push(("threads", t.to_string()));
    }
    match &cli.command {
        Command::Attack => {}
        Command::Ablate { sweep, taus, ks } => {
            flags.extend(sweep.clone().map(|v| ("sweep", v)));
            flags.extend(taus.clone().map(|v| ("sweep_taus", v)));
            flags.extend(ks.clone().map(|v| ("sweep_ks", v)));
        }
        Command::Render {
            texture,
            azimuth,
            elevation,
            distance,
            grid,
        } => {
            flags.extend(texture.as_ref().map(|p| ("texture", p.display().to_string())));
            flags.extend(azimuth.map(|v| ("render_azimuth", v.to_string())));
            flags.extend(elevation.map(|v| ("render_elevation", v.to_string())));
            flags.extend(distance.map(|v| ("render_distance", v.to_string())));
            if *grid {
                flags.push(("render_grid", "true".into()));
            }
        }
        Command::Eval { texture } => {
            flags.extend(texture.as_ref().map(|p| ("texture", p.display().to_string())));
        }
    }
    for (k, v) in flags {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    match command {
        Command::Attack => {
            let s = cmd_attack(cfg)?;
            print!("{}", summary_text(&s));
        }
        Command::Ablate { .. } => {
            for r in cmd_ablate(cfg)? {
                println!("{}: surrogate suppression score {}", r.id, r.final_mean_score);
            }
        }
        Command::Render { .. } => {
            for p in cmd_render(cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { .. } => {
            let s = cmd_eval(cfg)?;
            println!("surrogate suppression score (mean over {} poses): {}", s.rows.len(), s.mean);
            for b in &s.by_distance {
                println!("  distance {} m: {}", b.key, b.mean_score);
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("texcamo: config error: {e}");
            return 1;
        }
    };
    let result = if cfg.threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &cfg)),
            Err(e) => {
                eprintln!("texcamo: cannot start {} threads: {e}", cfg.threads);
                return 2;
            }
        }
    } else {
        dispatch(&cli.command, &cfg)
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("texcamo: {e}");
            e.exit_code()
        }
    }
}
