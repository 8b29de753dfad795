//! Command implementations behind the `analytic-policy` binary. Everything
//! that touches the filesystem lives here; the core crate stays pure.

pub mod summary;
pub mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use analytic_policy::bounds::{bound_comparison_experiment, ComparisonConfig, ComparisonRow, InstanceFamily};
use analytic_policy::io::{load_game, load_mdp, load_policy, save_json, to_json, write_csv};
use analytic_policy::multi_agent::{joint_objective, random_game, train_rounds, write_steps_csv, AgentPolicySet};
use analytic_policy::{evaluate, iterate, random_mdp, BoundReport, Error, TabularPolicy, UpdateConfig};
use anyhow::{bail, Context};
use serde::Serialize;

pub use summary::{summarize, RunSummary, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Eval,
    Train,
    Verify,
    MaTrain,
    CompareBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    Violation = 1,
    Usage = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    /// Discount for generated instances; overrides the file's value when an
    /// input is given.
    pub gamma: Option<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    /// Updates for `train`, rounds for `ma-train`, instances for `verify`.
    pub iters: usize,
    /// Stop `train` once `max|A|` falls below this.
    pub tol: f64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Output format; `None` picks the command's natural one.
    pub format: Option<Format>,
    /// Starting policy for `eval`/`train`; uniform when absent.
    pub policy: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: 0,
            gamma: None,
            n_states: 4,
            n_actions: 3,
            n_agents: 1,
            iters: 100,
            tol: 1e-8,
            input: None,
            output: None,
            format: None,
            policy: None,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                bail!("--gamma {g} outside [0, 1)");
            }
        }
        if self.n_states == 0 || self.n_actions == 0 || self.n_agents == 0 || self.iters == 0 {
            bail!("--states, --actions, --agents and --iters must be ≥ 1");
        }
        if !(self.tol >= 0.0) {
            bail!("--tol must be ≥ 0");
        }
        for p in [&self.input, &self.output, &self.policy].into_iter().flatten() {
            if p.as_os_str().is_empty() {
                bail!("empty path");
            }
        }
        match self.command {
            Command::Eval | Command::Train if self.input.is_none() => bail!("--in is required"),
            Command::Train if self.output.is_none() => bail!("--out is required for train"),
            _ => Ok(()),
        }
    }

    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn gamma_or(&self, default: f64) -> f64 {
        self.gamma.unwrap_or(default)
    }
}

/// Runs one command. `out` receives human-readable progress and summaries;
/// data goes to `--out` when given, else to `out`.
///
/// Invariant violations are reported on `out` and return
/// [`Exit::Violation`]; bad input returns an error (exit 2 in the binary).
pub fn run(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    cfg.validate()?;
    let result = match cfg.command {
        Command::Gen => gen(cfg, out),
        Command::Eval => eval(cfg, out),
        Command::Train => train(cfg, out),
        Command::Verify => verify::run_verify(cfg, out),
        Command::MaTrain => ma_train(cfg, out),
        Command::CompareBounds => compare_bounds(cfg, out),
    };
    settle(result, out)
}

/// Turns an invariant violation into [`Exit::Violation`] after printing the
/// offending step; other errors pass through.
fn settle(result: anyhow::Result<Exit>, out: &mut dyn Write) -> anyhow::Result<Exit> {
    match result {
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::Invariant { step, check, detail }) => {
                writeln!(out, "invariant violation at step {step}: {check} ({detail})")?;
                Ok(Exit::Violation)
            }
            _ => Err(e),
        },
        ok => ok,
    }
}

/// Opens `--out`, or falls back to `fallback`.
fn with_output(cfg: &RunConfig, fallback: &mut dyn Write, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
    match &cfg.output {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            body(&mut w)?;
            w.flush().with_context(|| format!("writing {}", path.display()))?;
            Ok(())
        }
        None => body(fallback),
    }
}

fn emit<T: Serialize>(cfg: &RunConfig, rows: &[T], default: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    let format = cfg.format_or(default);
    with_output(cfg, out, |w| {
        match format {
            Format::Csv => write_csv(rows, w)?,
            Format::Json => w.write_all(to_json(&rows)?.as_bytes())?,
        }
        Ok(())
    })
}

fn emit_json<T: Serialize>(cfg: &RunConfig, payload: &T, out: &mut dyn Write) -> anyhow::Result<()> {
    if cfg.format_or(Format::Json) != Format::Json {
        bail!("this command only writes JSON");
    }
    match &cfg.output {
        Some(path) => save_json(path, payload)?,
        None => out.write_all(to_json(payload)?.as_bytes())?,
    }
    Ok(())
}

fn gen(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    let gamma = cfg.gamma_or(0.9);
    if cfg.n_agents == 1 {
        emit_json(cfg, &random_mdp(cfg.seed, cfg.n_states, cfg.n_actions, gamma)?, out)?;
    } else {
        let counts = vec![cfg.n_actions; cfg.n_agents];
        emit_json(cfg, &random_game(cfg.seed, cfg.n_states, &counts, gamma)?, out)?;
    }
    Ok(Exit::Pass)
}

fn load_instance(cfg: &RunConfig) -> anyhow::Result<(analytic_policy::FiniteMdp, TabularPolicy)> {
    let path = cfg.input.as_deref().context("--in is required")?;
    let mut mdp = load_mdp(path)?;
    if let Some(g) = cfg.gamma {
        mdp = mdp.with_gamma(g);
    }
    let pi = match &cfg.policy {
        Some(p) => load_policy(p)?,
        None => TabularPolicy::uniform(mdp.n_states, mdp.n_actions),
    };
    Ok((mdp, pi))
}

fn eval(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    let (mdp, pi) = load_instance(cfg)?;
    emit_json(cfg, &evaluate(&mdp, &pi)?, out)?;
    Ok(Exit::Pass)
}

/// `<out>.policy.json` next to the trace.
pub fn policy_path(trace: &Path) -> PathBuf {
    let mut name = trace.as_os_str().to_owned();
    name.push(".policy.json");
    PathBuf::from(name)
}

fn train(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    if cfg.format_or(Format::Csv) != Format::Csv {
        bail!("train writes a CSV trace");
    }
    let (mdp, pi) = load_instance(cfg)?;
    let update = UpdateConfig {
        max_iters: cfg.iters,
        stop_tol: cfg.tol,
        ..UpdateConfig::default()
    };
    let trace = iterate(&mdp, &pi, &update)?;
    let path = cfg.output.as_deref().context("--out is required for train")?;
    with_output(cfg, out, |w| Ok(trace.write_csv(w)?))?;
    save_json(policy_path(path), &trace.final_policy)?;
    let summary = summarize(&[(path.display().to_string(), trace.records.as_slice())]);
    write!(out, "{summary}")?;
    Ok(if summary.all_monotone() { Exit::Pass } else { Exit::Violation })
}

fn ma_train(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    let game = match &cfg.input {
        Some(path) => {
            let mut g = load_game(path)?;
            if let Some(gamma) = cfg.gamma {
                g.gamma = gamma;
            }
            g
        }
        None => random_game(cfg.seed, cfg.n_states, &vec![cfg.n_actions; cfg.n_agents.max(2)], cfg.gamma_or(0.9))?,
    };
    let start = AgentPolicySet::uniform(&game);
    let j0 = joint_objective(&game, &start)?;
    let (_, steps) = train_rounds(&game, &start, &UpdateConfig::default(), cfg.iters)?;
    if cfg.format_or(Format::Csv) == Format::Csv {
        with_output(cfg, out, |w| Ok(write_steps_csv(&steps, w)?))?;
    } else {
        emit(cfg, &steps, Format::Json, out)?;
    }
    let jn = steps.last().map_or(j0, |s| s.joint_objective);
    writeln!(out, "joint J: {j0:.12} -> {jn:.12} over {} single-agent steps", steps.len())?;
    Ok(Exit::Pass)
}

/// One comparison CSV row: the instance family, then the bound columns.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCsvRow {
    pub family: &'static str,
    pub seed: u64,
    pub gamma: f64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gap: f64,
    pub thm1_rhs: f64,
    pub tv_sq_rhs: f64,
    pub trpo_rhs: f64,
    pub slack_thm1: f64,
    pub slack_tv_sq: f64,
    pub slack_trpo: f64,
}

impl ComparisonCsvRow {
    fn new(family: InstanceFamily, r: BoundReport) -> Self {
        Self {
            family: family_name(family),
            seed: r.seed,
            gamma: r.gamma,
            n_states: r.n_states,
            n_actions: r.n_actions,
            gap: r.gap,
            thm1_rhs: r.thm1_rhs,
            tv_sq_rhs: r.tv_sq_rhs,
            trpo_rhs: r.trpo_rhs,
            slack_thm1: r.slack_thm1,
            slack_tv_sq: r.slack_tv_sq,
            slack_trpo: r.slack_trpo,
        }
    }
}

fn family_name(f: InstanceFamily) -> &'static str {
    match f {
        InstanceFamily::Random => "random",
        InstanceFamily::Unreachable => "unreachable",
        InstanceFamily::NearUnreachable => "near_unreachable",
        InstanceFamily::AnalyticUpdate => "analytic_update",
    }
}

fn compare_bounds(cfg: &RunConfig, out: &mut dyn Write) -> anyhow::Result<Exit> {
    let mut comparison = ComparisonConfig {
        n_states: cfg.n_states,
        n_actions: cfg.n_actions,
        ..ComparisonConfig::default()
    };
    if let Some(g) = cfg.gamma {
        comparison.gammas = vec![g];
    }
    let rows: Vec<ComparisonRow> = bound_comparison_experiment(cfg.seed, &comparison)?;
    let violated = rows.iter().filter(|r| !r.report.holds()).count();
    let best = rows
        .iter()
        .filter(|r| r.report.trpo_rhs > 0.0)
        .map(|r| r.report.thm1_rhs / r.report.trpo_rhs)
        .fold(f64::INFINITY, f64::min);
    let csv_rows: Vec<ComparisonCsvRow> = rows
        .into_iter()
        .map(|r| ComparisonCsvRow::new(r.family, r.report))
        .collect();
    emit(cfg, &csv_rows, Format::Csv, out)?;
    writeln!(out, "smallest expected-KL/max-KL bound ratio: {best:.3e}; rows with a violated bound: {violated}")?;
    Ok(if violated == 0 { Exit::Pass } else { Exit::Violation })
}
