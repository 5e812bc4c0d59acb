//! `ncs simulate | tune | rt`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::ConfigError;
use crate::objective::score_run;
use crate::report::{write_events_csv, write_history_csv, write_json, write_trace_csv};
use crate::rt::{run_controller_node, run_plant_node, Role, RtError};
use crate::sim::run_closed_loop;
use crate::tuner::{ga_tune, validation_seeds};

/// Fresh seeds used to re-score tuned gains out of sample.
pub const VALIDATION_RUNS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitCode {
    Success = 0,
    Config = 1,
    Diverged = 2,
    Handshake = 3,
}

#[derive(Debug, Parser)]
#[command(name = "ncs", version, about = "Networked control loop test-bed")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run config; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `sim.seed` (simulate, rt) or `ga.master_seed` (tune).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Plant,
    Controller,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Plant => Role::PlantMaster,
            RoleArg::Controller => Role::ControllerSlave,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the impaired closed loop once; writes trace.csv and events.csv.
    Simulate(CommonArgs),
    /// GA-tune the PI gains; writes gains.json and history.csv.
    Tune(CommonArgs),
    /// Run one node of the UDP lock-step pair.
    Rt {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `rt.role` from the config.
        #[arg(long, value_enum)]
        role: Option<RoleArg>,
    },
}

#[derive(Debug, Serialize)]
struct GainsReport {
    kp: f64,
    ki: f64,
    in_sample_j: f64,
    out_of_sample_j: f64,
    validation_diverged: usize,
    eval_seeds: Vec<u64>,
    validation_seeds: Vec<u64>,
}

enum Failure {
    Config(ConfigError),
    Io(std::io::Error),
    Rt(RtError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitCode::Config
            } else {
                ExitCode::Success
            }
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args),
        Command::Tune(args) => tune(&args),
        Command::Rt { common, role } => rt(&common, role),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::Config
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::Config
        }
        Err(Failure::Rt(RtError::Config(e))) => {
            eprintln!("error: {e}");
            ExitCode::Config
        }
        Err(Failure::Rt(e)) => {
            eprintln!("error: {e}");
            ExitCode::Handshake
        }
    }
}

fn load(args: &CommonArgs) -> Result<RunConfig, ConfigError> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

fn simulate(args: &CommonArgs) -> Result<ExitCode, Failure> {
    let mut cfg = load(args)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    prepare_out(&args.out, &cfg)?;
    let run = run_closed_loop(&cfg.plant, &cfg.controller, &cfg.channel, &cfg.sim)?;
    write_trace_csv(&args.out.join("trace.csv"), &run.trace)?;
    write_events_csv(&args.out.join("events.csv"), &run.events)?;
    match run.divergence {
        Some(d) => {
            eprintln!("loop diverged at t = {} s; trace truncated", d.t);
            Ok(ExitCode::Diverged)
        }
        None => {
            let j = score_run(&run, cfg.sim.horizon, &cfg.objective).expect("non-empty trace");
            println!("J = {j}");
            Ok(ExitCode::Success)
        }
    }
}

fn tune(args: &CommonArgs) -> Result<ExitCode, Failure> {
    let mut cfg = load(args)?;
    if let Some(seed) = args.seed {
        cfg.ga.master_seed = seed;
    }
    prepare_out(&args.out, &cfg)?;
    let res = ga_tune(&cfg.plant, &cfg.channel, &cfg.sim, &cfg.objective, &cfg.ga)?;

    let fresh = validation_seeds(cfg.ga.master_seed, VALIDATION_RUNS);
    let mut total = 0.0;
    let mut diverged = 0;
    for &seed in &fresh {
        let sim = crate::sim::SimConfig { seed, ..cfg.sim };
        let run = run_closed_loop(&cfg.plant, &res.best_gains, &cfg.channel, &sim)?;
        diverged += run.diverged() as usize;
        total += score_run(&run, cfg.sim.horizon, &cfg.objective).expect("non-empty trace");
    }
    let report = GainsReport {
        kp: res.best_gains.kp,
        ki: res.best_gains.ki,
        in_sample_j: res.best_j,
        out_of_sample_j: total / fresh.len() as f64,
        validation_diverged: diverged,
        eval_seeds: res.eval_seeds.clone(),
        validation_seeds: fresh,
    };
    write_json(&args.out.join("gains.json"), &report)?;
    write_history_csv(&args.out.join("history.csv"), &res.history)?;
    println!(
        "kp = {}, ki = {}, J in-sample = {}, J out-of-sample = {}",
        report.kp, report.ki, report.in_sample_j, report.out_of_sample_j
    );
    Ok(ExitCode::Success)
}

fn rt(args: &CommonArgs, role: Option<RoleArg>) -> Result<ExitCode, Failure> {
    let mut cfg = load(args)?;
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    let role = role.map(Role::from).unwrap_or(cfg.rt.role);
    let node = cfg.node_config(role)?;
    prepare_out(&args.out, &cfg)?;
    match role {
        Role::PlantMaster => {
            let run = run_plant_node(&node).map_err(Failure::Rt)?;
            write_trace_csv(&args.out.join("trace.csv"), &run.trace)?;
            write_events_csv(&args.out.join("events.csv"), &run.events)?;
            eprintln!("plant node: {} periods, {} missed replies, {} malformed datagrams", run.trace.len(), run.misses, run.malformed);
            if run.divergence.is_some() {
                return Ok(ExitCode::Diverged);
            }
        }
        Role::ControllerSlave => {
            let run = run_controller_node(&node).map_err(Failure::Rt)?;
            write_trace_csv(&args.out.join("trace.csv"), &run.trace)?;
            eprintln!(
                "controller node: {} periods, {} stale sensor packets discarded, {} stale ticks",
                run.trace.len(),
                run.discarded.len(),
                run.stale_ticks
            );
        }
    }
    Ok(ExitCode::Success)
}
