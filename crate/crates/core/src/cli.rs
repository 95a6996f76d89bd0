// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end of `lglb`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::error::{LabError, Result};
use crate::experiment::{parse_override, run_experiment, Cache, Experiment, ExperimentConfig, Stage};

const FIGURES: &str = "Figure ids for `repro`:
  fig5   addk-clustering   cosine similarity of add-k embeddings (K=2)
  fig6   addk-probe        linear probes at four sites (K=2)
  fig8   addk-geometry     PCA of add-k task vectors (K=4,8,16)
  fig9   addk-steer        steering between the first and last offset (K=4)
  fig12  addk-helix        32 offsets with gap 1, 3 PCs
  fig10  circle-geometry   PCA of CW circle task vectors (K=16,32,64)
  fig11  circle-steer      radius steering (K=32)
  fig13  circle-cwccw      CW and CCW task vectors together (K=32)
  fig14  rect-geometry     PCA over an 8x8 grid of rectangle sides (K=32)

Checkpoints are cached under $LGLB_CACHE_DIR (default target/lglb-cache).";

#[derive(Debug, Parser)]
#[command(name = "lglb", version, about = "Train small transformers on in-context tasks and analyse their task vectors", after_help = FIGURES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train (or load from the cache) and evaluate on held-out sequences.
    Train(RunArgs),
    /// Train, then run the experiment's analysis.
    Analyze(RunArgs),
    /// Steering between the first and last task vectors.
    Steer(RunArgs),
    /// Activation patching between the first and last add-k tasks.
    Patch(RunArgs),
    /// Run the experiment behind a figure id with its default settings.
    Repro {
        /// fig5, fig6, fig8, fig9, fig10, fig11, fig12, fig13 or fig14.
        figure: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default runs/<experiment>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted override, e.g. train.lr=0.002 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Resolves a command into a configuration and the stage to run.
pub fn resolve(command: &Command) -> Result<(ExperimentConfig, Stage, Vec<String>)> {
    let (args, fallback, stage, forced) = match command {
        Command::Train(a) => (a, Experiment::AddkSteer, Stage::Train, None),
        Command::Analyze(a) => (a, Experiment::AddkGeometry, Stage::Analyze, None),
        Command::Steer(a) => (a, Experiment::AddkSteer, Stage::Analyze, None),
        Command::Patch(a) => (a, Experiment::AddkSteer, Stage::Patch, None),
        Command::Repro { figure, args } => {
            let e = Experiment::from_figure_id(figure)
                .ok_or_else(|| LabError::Usage(format!("unknown figure id {figure:?}; see `lglb --help`")))?;
            (args, e, Stage::Analyze, Some(e))
        }
    };
    let mut overrides = args.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(e) = forced {
        overrides.insert(0, ("experiment".to_string(), e.name().to_string()));
    }
    let base = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| LabError::io(p, e))?),
        None => None,
    };
    let mut cfg = ExperimentConfig::resolve(fallback, base.as_deref(), args.seed, &overrides)?;
    if let Some(e) = forced {
        if cfg.experiment != e {
            return Err(LabError::Usage(format!("`repro` fixes the experiment to {e}")));
        }
    }
    if matches!(command, Command::Steer(_)) && !matches!(cfg.experiment, Experiment::AddkSteer | Experiment::CircleSteer) {
        return Err(LabError::Usage(format!("`steer` needs a steering experiment, not {}", cfg.experiment)));
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok((cfg, stage, args.set.clone()))
}

fn exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Usage(_) | LabError::Config(_) => 2,
        _ => 1,
    }
}

/// Runs the CLI and returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    if args.len() <= 1 {
        let _ = Cli::command().print_help();
        println!();
        return 0;
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (cfg, stage, overrides) = match resolve(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match run_experiment(&cfg, stage, &overrides, &Cache::from_env()) {
        Ok(outcome) => {
            println!("{} -> {}", cfg.experiment, outcome.dir.display());
            for r in &outcome.manifest.runs {
                println!(
                    "  {} K={} checkpoint {}{}",
                    r.dir,
                    r.num_tasks,
                    &r.cache_key[..12],
                    if r.from_cache { " (cached)" } else { "" }
                );
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("lglb").chain(args.iter().copied()))
    }

    #[test]
    fn repro_expands_figure_defaults() {
        let cli = parse(&["repro", "fig8", "--seed", "7"]).unwrap();
        let (cfg, stage, _) = resolve(&cli.command).unwrap();
        assert_eq!(cfg.experiment, Experiment::AddkGeometry);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.sweep, vec![4, 8, 16]);
        assert_eq!(stage, Stage::Analyze);
    }

    #[test]
    fn set_overrides_are_applied_and_kept_verbatim() {
        let cli = parse(&["train", "--set", "train.lr=0.002", "--out", "/tmp/x"]).unwrap();
        let (cfg, stage, raw) = resolve(&cli.command).unwrap();
        assert_eq!(cfg.train.optimizer.lr, 0.002);
        assert_eq!(raw, vec!["train.lr=0.002".to_string()]);
        assert_eq!(cfg.out, PathBuf::from("/tmp/x"));
        assert_eq!(stage, Stage::Train);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_from(["lglb", "repro", "fig99"]), 2);
        assert_eq!(main_from(["lglb", "train", "--set", "novalue"]), 2);
        assert_eq!(main_from(["lglb", "train", "--set", "train.nope=1"]), 2);
        assert_eq!(main_from(["lglb", "steer", "--set", "experiment=addk-probe"]), 2);
        assert_eq!(main_from(["lglb", "frobnicate"]), 2);
        assert_eq!(main_from(["lglb", "repro", "fig8", "--set", "experiment=addk-probe"]), 2);
    }

    #[test]
    fn no_arguments_prints_help() {
        assert_eq!(main_from(["lglb"]), 0);
        assert_eq!(main_from(["lglb", "--help"]), 0);
    }
}
