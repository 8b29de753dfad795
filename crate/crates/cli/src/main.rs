use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use analytic_policy_cli::{run, Command, Exit, Format, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "analytic-policy", version, about = "Exact tabular analytic policy updates and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded random MDP (or game with --agents > 1) as JSON.
    Gen(Opts),
    /// Evaluate a policy on an MDP file and write the report as JSON.
    Eval(Opts),
    /// Iterate the analytic update; writes a CSV trace and <out>.policy.json.
    Train(Opts),
    /// Run the randomized bound and monotonicity suite.
    Verify(Opts),
    /// Agent-by-agent updates on a Markov game; writes the round trace.
    MaTrain(Opts),
    /// Expected-KL against max-KL bounds across discounts and instance families.
    CompareBounds(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct Opts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 4)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    actions: usize,
    #[arg(long, default_value_t = 1)]
    agents: usize,
    /// Updates (train), rounds (ma-train) or instances (verify).
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Starting policy JSON for eval and train.
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn config(cli: Cli) -> RunConfig {
    let (command, o) = match cli.command {
        Cmd::Gen(o) => (Command::Gen, o),
        Cmd::Eval(o) => (Command::Eval, o),
        Cmd::Train(o) => (Command::Train, o),
        Cmd::Verify(o) => (Command::Verify, o),
        Cmd::MaTrain(o) => (Command::MaTrain, o),
        Cmd::CompareBounds(o) => (Command::CompareBounds, o),
    };
    RunConfig {
        command,
        seed: o.seed,
        gamma: o.gamma,
        n_states: o.states,
        n_actions: o.actions,
        n_agents: o.agents,
        iters: o.iters,
        tol: o.tol,
        input: o.input,
        output: o.out,
        format: o.format.map(|f| match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }),
        policy: o.policy,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = config(Cli::parse());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let status = match run(&cfg, &mut out) {
        Ok(status) => status,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            Exit::Usage
        }
    };
    let _ = out.flush();
    ExitCode::from(status as u8)
}
