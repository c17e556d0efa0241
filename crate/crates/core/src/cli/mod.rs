//! Command-line front end: `solve`, `learn`, `compare` and `evaluate`.
//!
//! Every command reads an [`ExperimentConfig`], writes CSV files into the
//! output directory and echoes the effective configuration to
//! `config.txt` there. Exit codes: 0 success, 1 configuration error,
//! 2 runtime error.

pub mod config;
pub mod csv;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::learning::{run_q_learning, LearningOutcome};
use crate::mdp::{ModelParams, QosState, TransitionModel};
use crate::planning::{
    constraint_satisfied, evaluate_policy_with, value_iteration_with, Criterion, Policy, Solution, ValueTables,
};
use crate::sim::{episode_seed, monte_carlo, rollout};
use crate::{Error, Result};

pub use config::{ConfigError, ExperimentConfig, PolicyChoice};
use csv::{fmt_f64, level_columns, policy_table, value_file, values_table, Table};

#[derive(Debug, Parser)]
#[command(
    name = "urllc-risk",
    version,
    about = "Risk-aware channel allocation: planning, learning, simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward induction: value tables and the three optimal policies.
    Solve(CommonArgs),
    /// Tabular Q-learning against the simulator.
    Learn(CommonArgs),
    /// Value and risk curves of the fixed and optimal policies, plus the
    /// min-risk allocation surface.
    Compare(CommonArgs),
    /// Exact and simulated performance of one policy.
    Evaluate(CommonArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Solve(a) | Command::Learn(a) | Command::Compare(a) | Command::Evaluate(a) => a,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("error: {0}")]
    Runtime(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

/// Reads the file at `path`, applies `APP_*` overrides from `env` and then
/// the command-line seed.
pub fn load_config(
    path: &Path,
    seed: Option<u64>,
    env: impl IntoIterator<Item = (String, String)>,
) -> std::result::Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        violations: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    let mut overrides = ExperimentConfig::env_overrides(env);
    if let Some(s) = seed {
        overrides.push(("run.seed".into(), s.to_string()));
    }
    ExperimentConfig::parse_with(&text, &overrides)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run(cli: Cli, env: impl IntoIterator<Item = (String, String)>) -> i32 {
    let args = cli.command.args();
    let result = load_config(&args.config, args.seed, env)
        .map_err(CliError::from)
        .and_then(|cfg| execute(&cli.command, &cfg, &args.out).map_err(CliError::from));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Runs one command with an already validated configuration and returns
/// the files written.
pub fn execute(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::Domain(format!("creating {}: {e}", out.display())))?;
    let mut files = Output {
        dir: out.to_path_buf(),
        written: Vec::new(),
    };
    files.write("config.txt", cfg.to_text())?;
    match command {
        Command::Solve(_) => solve(cfg, &mut files)?,
        Command::Learn(_) => learn(cfg, &mut files)?,
        Command::Compare(_) => compare(cfg, &mut files)?,
        Command::Evaluate(_) => evaluate(cfg, &mut files)?,
    }
    Ok(files.written)
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn write(&mut self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Error::Domain(format!("writing {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write(name, table.as_str().to_string())
    }
}

fn policy_file(prefix: &str, c: Criterion) -> String {
    let name = match c {
        Criterion::Reward => "max_value",
        Criterion::Risk => "min_risk",
        Criterion::Weighted => "weighted",
    };
    format!("{prefix}policy_{name}.csv")
}

struct Planned {
    params: ModelParams,
    model: TransitionModel,
    solution: Solution,
}

fn plan(cfg: &ExperimentConfig) -> Result<Planned> {
    let params = cfg.model_params()?;
    let model = TransitionModel::new(&params)?;
    let solution = value_iteration_with(&model, params.xi);
    Ok(Planned {
        params,
        model,
        solution,
    })
}

fn solve(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = plan(cfg)?;
    for c in Criterion::ALL {
        out.table(value_file(c), &values_table(&p.solution.values, c))?;
    }
    for c in Criterion::ALL {
        out.table(
            &policy_file("", c),
            &policy_table(p.solution.policy(c), |s| p.model.is_risk(s)),
        )?;
    }
    Ok(())
}

/// One cell of the first user's allocation surface, other users at zero
/// loss rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub t: usize,
    pub level: u32,
    pub rate: f64,
    pub channels: u32,
}

/// Channels `policy` gives user 1 at every epoch and every non-risk loss
/// level of user 1 while the others sit at level 0.
pub fn allocation_surface(policy: &Policy, params: &ModelParams) -> Result<Vec<SurfacePoint>> {
    let q = params.resolution;
    let mut out = Vec::new();
    for t in 0..params.horizon {
        for level in 0..=q {
            let mut levels = vec![0; params.users];
            levels[0] = level;
            let qos = QosState::new(levels);
            if crate::mdp::is_risk(&qos, params) {
                continue;
            }
            out.push(SurfacePoint {
                t,
                level,
                rate: qos.rate(0, q),
                channels: policy.action(t, &qos)?.alloc[0],
            });
        }
    }
    Ok(out)
}

fn surface_table(points: &[SurfacePoint]) -> Table {
    let mut table = Table::new(&["t", "level_1", "rho_1", "alloc_1"]);
    for p in points {
        table.push(vec![
            p.t.to_string(),
            p.level.to_string(),
            fmt_f64(p.rate),
            p.channels.to_string(),
        ]);
    }
    table
}

fn learn(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let params = cfg.model_params()?;
    let learning = cfg.learning();
    for w in learning.warnings() {
        eprintln!("warning: {w}");
    }
    let oracle = match csv::read_values(&out.dir, params.state_space(), params.horizon) {
        Some(tables) => Some(tables?),
        None => None,
    };
    let outcome = run_q_learning(&params, &learning, &cfg.start_state(), oracle.as_ref())?;
    let model = TransitionModel::new(&params)?;

    out.table("q_tables.csv", &q_table(&outcome, &model))?;
    for c in Criterion::ALL {
        out.table(
            &policy_file("learned_", c),
            &policy_table(outcome.policy(c), |s| model.is_risk(s)),
        )?;
    }
    out.table("diagnostics.csv", &diagnostics_table(&outcome, oracle.is_some()))?;
    out.table(
        "learned_min_risk_surface.csv",
        &surface_table(&allocation_surface(&outcome.min_risk, &params)?),
    )?;
    let mut summary = Table::new(&["steps", "converged"]);
    summary.push(vec![outcome.steps.to_string(), outcome.converged.to_string()]);
    out.table("learn_summary.csv", &summary)
}

fn q_table(outcome: &LearningOutcome, model: &TransitionModel) -> Table {
    let tables = &outcome.tables;
    let space = tables.space();
    let mut header = vec!["t".to_string()];
    header.extend(level_columns("level", space.users()));
    header.extend(level_columns("alloc", space.users()));
    header.extend(["q", "q_bar", "q_xi", "visits"].map(String::from));
    let mut table = Table::new(&header);
    for t in 0..tables.horizon() {
        for (s, qos) in space.iter().enumerate() {
            if model.is_risk(s) {
                continue;
            }
            for (a, action) in model.actions().iter().enumerate() {
                let i = tables.offset(t, s) + a;
                let mut row = vec![t.to_string()];
                row.extend(qos.levels.iter().map(u32::to_string));
                row.extend(action.alloc.iter().map(u32::to_string));
                row.push(fmt_f64(tables.q[i]));
                row.push(fmt_f64(tables.q_bar[i]));
                row.push(fmt_f64(tables.q_xi[i]));
                row.push(tables.visits[i].to_string());
                table.push(row);
            }
        }
    }
    table
}

fn diagnostics_table(outcome: &LearningOutcome, with_oracle: bool) -> Table {
    let mut header = vec!["step", "delta_q", "delta_q_bar", "delta_q_xi"];
    if with_oracle {
        header.extend(["oracle_q", "oracle_q_bar", "oracle_q_xi"]);
    }
    let mut table = Table::new(&header);
    for d in &outcome.diagnostics {
        let mut row = vec![d.step.to_string()];
        row.extend(d.delta.iter().map(|x| fmt_f64(*x)));
        if with_oracle {
            let o = d.oracle_distance.unwrap_or([f64::NAN; 3]);
            row.extend(o.iter().map(|x| fmt_f64(*x)));
        }
        table.push(row);
    }
    table
}

fn named_policy(p: &Planned, cfg: &ExperimentConfig, choice: PolicyChoice) -> Result<Policy> {
    Ok(match choice {
        PolicyChoice::Fixed => Policy::constant(&cfg.fixed_action(), &p.params)?,
        PolicyChoice::MaxValue => p.solution.max_value.clone(),
        PolicyChoice::MinRisk => p.solution.min_risk.clone(),
        PolicyChoice::Weighted => p.solution.weighted.clone(),
    })
}

fn compare(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = plan(cfg)?;
    let s0 = cfg.start_state();
    let s_idx = p.model.space().index(&s0)?;
    let mut table = Table::new(&[
        "policy",
        "t",
        "u",
        "u_bar",
        "mc_u",
        "mc_u_half_width",
        "mc_u_bar",
        "mc_u_bar_half_width",
        "max_quantization_gap",
    ]);
    for (k, choice) in PolicyChoice::ALL.into_iter().enumerate() {
        let policy = named_policy(&p, cfg, choice)?;
        let values = evaluate_policy_with(&p.model, p.params.xi, &policy)?;
        for t in 0..=p.params.horizon {
            let seed = episode_seed(cfg.seed, ((k as u64) << 32) | t as u64);
            let mc = monte_carlo(&policy, t, &s0, &p.params, cfg.env_options(), cfg.episodes, seed)?;
            table.push(vec![
                choice.name().to_string(),
                t.to_string(),
                fmt_f64(values.get(Criterion::Reward, t, s_idx)),
                fmt_f64(values.get(Criterion::Risk, t, s_idx)),
                fmt_f64(mc.value.mean),
                fmt_f64(mc.value.half_width),
                fmt_f64(mc.risk.mean),
                fmt_f64(mc.risk.half_width),
                fmt_f64(mc.max_quantization_gap),
            ]);
        }
    }
    out.table("policy_curves.csv", &table)?;
    out.table(
        "min_risk_surface.csv",
        &surface_table(&allocation_surface(&p.solution.min_risk, &p.params)?),
    )
}

fn evaluate(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let p = plan(cfg)?;
    let policy = named_policy(&p, cfg, cfg.policy)?;
    let values: ValueTables = evaluate_policy_with(&p.model, p.params.xi, &policy)?;
    let s0 = cfg.start_state();
    let s_idx = p.model.space().index(&s0)?;
    let mc = monte_carlo(&policy, 0, &s0, &p.params, cfg.env_options(), cfg.episodes, cfg.seed)?;
    let check = constraint_satisfied(&policy, &s0, &p.params)?;

    let mut header = vec!["policy".to_string()];
    header.extend(level_columns("level", p.params.users));
    header.extend(
        [
            "u",
            "u_bar",
            "u_xi",
            "mc_u",
            "mc_u_half_width",
            "mc_u_bar",
            "mc_u_bar_half_width",
            "max_quantization_gap",
            "w",
            "constraint_satisfied",
        ]
        .map(String::from),
    );
    let mut table = Table::new(&header);
    let mut row = vec![cfg.policy.name().to_string()];
    row.extend(s0.levels.iter().map(u32::to_string));
    row.extend([
        fmt_f64(values.get(Criterion::Reward, 0, s_idx)),
        fmt_f64(values.get(Criterion::Risk, 0, s_idx)),
        fmt_f64(values.get(Criterion::Weighted, 0, s_idx)),
        fmt_f64(mc.value.mean),
        fmt_f64(mc.value.half_width),
        fmt_f64(mc.risk.mean),
        fmt_f64(mc.risk.half_width),
        fmt_f64(mc.max_quantization_gap),
        fmt_f64(p.params.w),
        check.satisfied.to_string(),
    ]);
    table.push(row);
    out.table("evaluation.csv", &table)?;

    if cfg.trajectories > 0 {
        let mut header = vec!["episode".to_string(), "t".to_string()];
        header.extend(level_columns("level", p.params.users));
        header.extend(level_columns("alloc", p.params.users));
        header.extend(["reward", "r_bar"].map(String::from));
        let mut text = header.join(",") + "\n";
        for i in 0..cfg.trajectories {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(episode_seed(cfg.seed, i));
            let tr = rollout(&policy, 0, &s0, &p.params, cfg.env_options(), &mut rng)?;
            for line in tr.to_records().lines() {
                text.push_str(&format!("{i},{line}\n"));
            }
        }
        out.write("trajectories.csv", text)?;
    }
    Ok(())
}
