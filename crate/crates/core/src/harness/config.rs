//! Experiment configuration and the command-line surface.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::action::SelectionMode;
use crate::agent::{AgentKind, AgentSettings, ExperimentSettings};
use crate::environment::{LayoutName, NUM_ACTIONS};
use crate::error::{AifError, Result};
use crate::model::{ModelSpec, PrefLoc};

pub const GYM_ID: &str = "gridworld-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub exp_name: String,
    pub env_layout: LayoutName,
    pub num_runs: usize,
    pub num_episodes: usize,
    pub num_steps: usize,
    pub inf_steps: usize,
    pub num_policies: usize,
    pub action_selection: SelectionMode,
    #[serde(rename = "learn_B")]
    pub learn_b: bool,
    #[serde(rename = "learn_A")]
    pub learn_a: bool,
    pub pref_loc: PrefLoc,
    pub pref_precision: f64,
    pub agent_kind: AgentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Config {
    /// The tmaze4 reference configuration for `kind`.
    pub fn reference(kind: AgentKind) -> Self {
        Self {
            exp_name: default_exp_name(kind).to_string(),
            env_layout: LayoutName::Tmaze4,
            num_runs: 10,
            num_episodes: 100,
            num_steps: 4,
            inf_steps: 10,
            num_policies: 64,
            action_selection: SelectionMode::Kd,
            learn_b: true,
            learn_a: false,
            pref_loc: PrefLoc::AllGoal,
            pref_precision: 4.0,
            agent_kind: kind,
            seed: 0,
            out_dir: PathBuf::from("results"),
        }
    }

    /// The gridw9 reference configuration for `kind`.
    pub fn reference_grid(kind: AgentKind) -> Self {
        Self {
            env_layout: LayoutName::Gridw9,
            num_episodes: 180,
            num_steps: 5,
            num_policies: 256,
            ..Self::reference(kind)
        }
    }

    pub fn horizon(&self) -> usize {
        self.num_steps - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 2 {
            return Err(AifError::Config("--num_steps must be at least 2".into()));
        }
        let available = (NUM_ACTIONS as u32)
            .checked_pow((self.num_steps - 1) as u32)
            .map_or(usize::MAX, |n| n as usize);
        if self.num_policies == 0 || self.num_policies > available {
            return Err(AifError::Config(format!(
                "--num_policies must be in 1..={available} for --num_steps {}",
                self.num_steps
            )));
        }
        for (flag, value) in [
            ("--num_runs", self.num_runs),
            ("--num_episodes", self.num_episodes),
            ("--inf_steps", self.inf_steps),
        ] {
            if value == 0 {
                return Err(AifError::Config(format!("{flag} must be positive")));
            }
        }
        if !self.pref_precision.is_finite() {
            return Err(AifError::Config("--pref_precision must be finite".into()));
        }
        if self.exp_name.is_empty() || self.exp_name.contains(['/', '\\']) {
            return Err(AifError::Config(format!("--exp_name `{}` is not a directory name", self.exp_name)));
        }
        Ok(())
    }

    pub fn settings(&self) -> Result<ExperimentSettings> {
        self.validate()?;
        Ok(ExperimentSettings {
            layout: self.env_layout,
            model: ModelSpec {
                num_steps: self.num_steps,
                num_policies: self.num_policies,
                learn_a: self.learn_a,
                learn_b: self.learn_b,
                pref_loc: self.pref_loc,
                pref_precision: self.pref_precision,
            },
            agent: AgentSettings {
                inf_steps: self.inf_steps,
                selection: self.action_selection,
                ..AgentSettings::new(self.agent_kind)
            },
            num_runs: self.num_runs,
            num_episodes: self.num_episodes,
            seed: self.seed,
        })
    }

    /// `<out_dir>/<exp_name>/<layout>`.
    pub fn experiment_dir(&self) -> PathBuf {
        self.out_dir.join(&self.exp_name).join(self.env_layout.as_str())
    }
}

fn default_exp_name(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Unaware => "aif_paths",
        AgentKind::Aware => "aif_plans",
    }
}

#[derive(Debug, Parser)]
#[command(name = "aif-lab", version, about = "Action-aware and action-unaware active inference agents in grid worlds")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Train action-unaware agents.
    #[command(alias = "main_aif_paths")]
    Paths(RunArgs),
    /// Train action-aware agents (policies pruned by executed prefix).
    #[command(alias = "main_aif_plans_pi_cutoff")]
    Plans(RunArgs),
    /// Draw charts from an experiment directory.
    #[command(alias = "vis_aif")]
    Charts(ChartArgs),
    /// Repeat an experiment from the config echoed in its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long = "exp_name")]
    exp_name: Option<String>,
    #[arg(long = "gym_id", default_value = GYM_ID, value_parser = [GYM_ID])]
    gym_id: String,
    #[arg(long = "env_layout", default_value = "tmaze4", value_parser = parse_layout)]
    env_layout: LayoutName,
    #[arg(long = "num_runs", default_value_t = 10)]
    num_runs: usize,
    #[arg(long = "num_episodes", default_value_t = 100)]
    num_episodes: usize,
    #[arg(long = "num_steps", default_value_t = 4)]
    num_steps: usize,
    #[arg(long = "inf_steps", default_value_t = 10)]
    inf_steps: usize,
    #[arg(long = "num_policies", default_value_t = 64)]
    num_policies: usize,
    #[arg(long = "action_selection", default_value = "kd", value_parser = parse_selection)]
    action_selection: SelectionMode,
    /// Learn the transition maps (also `-lB`).
    #[arg(long = "learn_B")]
    learn_b: bool,
    /// Learn the emission map (also `-lA`).
    #[arg(long = "learn_A")]
    learn_a: bool,
    #[arg(long = "pref_loc", default_value = "all_goal", value_parser = parse_pref)]
    pref_loc: PrefLoc,
    #[arg(long = "pref_precision", default_value_t = 4.0)]
    pref_precision: f64,
    #[arg(long = "seed", default_value_t = 0)]
    seed: u64,
    #[arg(long = "out_dir", default_value = "results")]
    out_dir: PathBuf,
    /// Skip chart emission after the run.
    #[arg(long = "no_charts")]
    no_charts: bool,
}

#[derive(Debug, Args)]
struct ChartArgs {
    /// Experiment directory holding metrics/ and manifest.json.
    dir: PathBuf,
    /// Policy indices to draw individually (also `-fpi`). Without the flag a
    /// 16-policy selection including every optimal policy is used.
    #[arg(long = "policies", num_args = 0..)]
    policies: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct RerunArgs {
    manifest: PathBuf,
    /// Write into this directory instead of the echoed one.
    #[arg(long = "out_dir")]
    out_dir: Option<PathBuf>,
    #[arg(long = "no_charts")]
    no_charts: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Run { config: Config, charts: bool },
    Charts { dir: PathBuf, selection: Option<Vec<usize>> },
    Rerun { manifest: PathBuf, out_dir: Option<PathBuf>, charts: bool },
}

fn parse_layout(s: &str) -> std::result::Result<LayoutName, String> {
    s.parse().map_err(|e: AifError| e.to_string())
}

fn parse_selection(s: &str) -> std::result::Result<SelectionMode, String> {
    s.parse().map_err(|e: AifError| e.to_string())
}

fn parse_pref(s: &str) -> std::result::Result<PrefLoc, String> {
    s.parse().map_err(|e: AifError| e.to_string())
}

/// Rewrites the multi-letter short flags of the reference command lines.
fn normalize(arg: OsString) -> OsString {
    match arg.to_str() {
        Some("-lB") => "--learn_B".into(),
        Some("-lA") => "--learn_A".into(),
        Some("-fpi") => "--policies".into(),
        _ => arg,
    }
}

/// Parses a full argv (program name first).
pub fn parse_cli<I, T>(args: I) -> std::result::Result<Command, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let cli = Cli::try_parse_from(args.into_iter().map(|a| normalize(a.into())))?;
    Ok(match cli.command {
        CliCommand::Paths(a) => run_command(a, AgentKind::Unaware)?,
        CliCommand::Plans(a) => run_command(a, AgentKind::Aware)?,
        CliCommand::Charts(a) => Command::Charts {
            dir: a.dir,
            selection: a.policies,
        },
        CliCommand::Rerun(a) => Command::Rerun {
            manifest: a.manifest,
            out_dir: a.out_dir,
            charts: !a.no_charts,
        },
    })
}

fn run_command(a: RunArgs, kind: AgentKind) -> std::result::Result<Command, clap::Error> {
    let config = Config {
        exp_name: a.exp_name.unwrap_or_else(|| default_exp_name(kind).to_string()),
        env_layout: a.env_layout,
        num_runs: a.num_runs,
        num_episodes: a.num_episodes,
        num_steps: a.num_steps,
        inf_steps: a.inf_steps,
        num_policies: a.num_policies,
        action_selection: a.action_selection,
        learn_b: a.learn_b,
        learn_a: a.learn_a,
        pref_loc: a.pref_loc,
        pref_precision: a.pref_precision,
        agent_kind: kind,
        seed: a.seed,
        out_dir: a.out_dir,
    };
    config.validate().map_err(|e| {
        use clap::CommandFactory;
        Cli::command().error(clap::error::ErrorKind::ValueValidation, e.to_string())
    })?;
    Ok(Command::Run {
        config,
        charts: !a.no_charts,
    })
}
