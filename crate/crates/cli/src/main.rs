use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use crosswalk_cli::commands::{self, Metric, Outcome};
use crosswalk_cli::config::{self, ControllerChoice, LaneChoice, Overrides, SideChoice};

#[derive(Parser)]
#[command(name = "crosswalk", version, about = "Crosswalk yielding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// TOML configuration file; presets live in `presets/`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Deterministic gap sweep `LO:STEP:HI` in seconds.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, value_enum)]
    controller: Option<ControllerChoice>,
    #[arg(long, value_enum)]
    lane: Option<LaneChoice>,
    #[arg(long, value_enum)]
    side: Option<SideChoice>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn load(&self) -> Result<config::RunConfig> {
        let overrides = Overrides {
            trials: self.trials,
            sweep: self.sweep.clone(),
            controller: self.controller,
            lane: self.lane,
            side: self.side,
            seed: self.seed,
            out: self.out.clone(),
        };
        Ok(config::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one controller on one scenario and write trials.csv and summary.csv.
    Simulate(RunFlags),
    /// Run both controllers on all four lane/side quadrants with paired seeds.
    Compare(RunFlags),
    /// Render a trials.csv as an SVG scatter plot.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "min-distance")]
        metric: Metric,
        #[arg(long, value_enum)]
        lane: Option<LaneChoice>,
        #[arg(long, value_enum)]
        side: Option<SideChoice>,
    },
    /// Re-run a single trial with a fixed gap, or the scripted field trials.
    Replay {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long, conflicts_with = "field_trials", required_unless_present = "field_trials")]
        gap: Option<f64>,
        /// Run the six scripted on-road trials and check each one's mode.
        #[arg(long)]
        field_trials: bool,
    },
    /// Solve the POMDP baseline and store it in the policy cache.
    SolvePomdp(RunFlags),
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate(flags) => commands::simulate(&flags.load()?),
        Command::Compare(flags) => commands::compare(&flags.load()?),
        Command::Plot {
            input,
            out,
            metric,
            lane,
            side,
        } => {
            commands::plot(&input, &out, metric, lane.map(Into::into), side.map(Into::into))?;
            Ok(Outcome::default())
        }
        Command::Replay {
            flags,
            gap,
            field_trials,
        } => {
            let cfg = flags.load()?;
            match gap {
                Some(g) if !field_trials => commands::replay(&cfg, g),
                _ => commands::replay_field_trials(&cfg),
            }
        }
        Command::SolvePomdp(flags) => commands::solve_pomdp(&flags.load()?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) if outcome.success() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!(
                "run failed its safety contract: {} collisions, {} timeouts, {} mismatched trials",
                outcome.collisions, outcome.timeouts, outcome.mismatches
            );
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
