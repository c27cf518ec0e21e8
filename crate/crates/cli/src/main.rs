//! Command-line front end: run single episodes, Monte-Carlo batches,
//! certificate reports and worst-case duration bounds over a scenario file.
//!
//! Exit codes: 0 on success, 1 on usage or I/O errors, 2 when a scenario
//! violates a standing assumption, 3 when an episode hits the tick limit
//! before finishing its task sequence.

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsnav_core::certify::{
    build_certificates, predicted_runtime_bound, task_feasible, Certificates, CertifyError,
    FeasibilityForm,
};
use dsnav_core::controller::DwellMode;
use dsnav_core::harness::{
    export_metrics, export_trace, load_scenario, monte_carlo, monte_carlo_baseline, run_episode,
    BaselineKind, EpisodeOptions, HarnessError, Scenario,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dsnav", version, about = "Event-triggered multi-task navigation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded episode and report per-task switch times.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// RNG seed for the noise and initial-estimate draws.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full per-tick trace to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a batch of seeded episodes and export aggregate metrics.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Number of independent runs.
        #[arg(long)]
        runs: usize,
        /// Metrics CSV output path.
        #[arg(long)]
        out: PathBuf,
        /// Run a comparison controller instead of the event-triggered one.
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        /// Seeds are seed-base, seed-base + 1, ...
        #[arg(long, default_value_t = 1)]
        seed_base: u64,
    },
    /// Report the per-task certificates, parameters and feasibility margins.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Which side of the constraint norm the feasibility threshold uses.
        #[arg(long, value_enum, default_value_t = FeasibilityArg::Paper)]
        feasibility_form: FeasibilityArg,
    },
    /// Worst-case duration bound for one task of the sequence.
    RuntimeBound {
        #[command(flatten)]
        common: Common,
        /// Task number, starting at 1.
        #[arg(long)]
        task: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario description file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// How trigger hits are counted towards the dwell requirement.
    #[arg(long, value_enum, default_value_t = DwellArg::Consecutive)]
    dwell_mode: DwellArg,
    /// Shape of the tracking-bound increment.
    #[arg(long, value_enum, default_value_t = BoundFormArg::Proof)]
    bound_form: BoundFormArg,
    /// Override the scenario's episode tick limit.
    #[arg(long)]
    max_ticks: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DwellArg {
    Cumulative,
    Consecutive,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundFormArg {
    /// Unsquared increment, as published.
    Paper,
    /// Squared increment, matching the derivation.
    Proof,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeasibilityArg {
    Paper,
    Corrected,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Ckf,
    ReferenceInput,
}

impl From<DwellArg> for DwellMode {
    fn from(v: DwellArg) -> Self {
        match v {
            DwellArg::Cumulative => DwellMode::Cumulative,
            DwellArg::Consecutive => DwellMode::Consecutive,
        }
    }
}

impl From<FeasibilityArg> for FeasibilityForm {
    fn from(v: FeasibilityArg) -> Self {
        match v {
            FeasibilityArg::Paper => FeasibilityForm::Paper,
            FeasibilityArg::Corrected => FeasibilityForm::Corrected,
        }
    }
}

impl From<BaselineArg> for BaselineKind {
    fn from(v: BaselineArg) -> Self {
        match v {
            BaselineArg::Ckf => BaselineKind::Ckf,
            BaselineArg::ReferenceInput => BaselineKind::ReferenceInput,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<HarnessError>().map_or(false, is_assumption)
                || err.downcast_ref::<CertifyError>().is_some()
            {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn is_assumption(err: &HarnessError) -> bool {
    matches!(err, HarnessError::AssumptionViolated(_))
}

fn load(common: &Common) -> Result<(Scenario, Certificates, EpisodeOptions)> {
    let mut scenario = load_scenario(&common.scenario)?;
    if let Some(limit) = common.max_ticks {
        scenario.max_ticks = limit;
    }
    let squared = matches!(common.bound_form, BoundFormArg::Proof);
    let certs = build_certificates(
        &scenario.model,
        &scenario.k_gain,
        &scenario.tasks,
        &scenario.sensors,
        squared,
    )?;
    let opts = EpisodeOptions { dwell_mode: common.dwell_mode.into(), max_ticks: None };
    Ok((scenario, certs, opts))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { common, seed, trace } => {
            let (scenario, certs, opts) = load(&common)?;
            let episode = run_episode(&scenario, &certs, seed, &opts);
            println!("scenario: {}", scenario.name);
            println!("seed: {seed}");
            for (i, &t) in episode.switch_times.iter().enumerate() {
                println!("task {} accomplished at tick {}", i + 1, t);
            }
            println!(
                "tasks accomplished: {}/{}",
                episode.tasks_accomplished,
                scenario.tasks.len()
            );
            println!("ticks simulated: {}", episode.records.len());
            if let Some(path) = trace {
                export_trace(&episode, &scenario, &path)?;
                println!("trace written to {}", path.display());
            }
            if episode.max_ticks_exceeded {
                eprintln!("tick limit {} reached before completion", scenario.max_ticks);
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Montecarlo { common, runs, out, baseline, seed_base } => {
            let (scenario, certs, opts) = load(&common)?;
            match baseline {
                Some(kind) => {
                    let horizon: usize =
                        scenario.tasks.iter().map(|t| t.trajectory.len()).sum();
                    let metrics =
                        monte_carlo_baseline(&scenario, kind.into(), runs, seed_base, horizon);
                    export_metrics(&metrics, &out)?;
                    println!("{runs} baseline runs over {horizon} ticks -> {}", out.display());
                    Ok(ExitCode::SUCCESS)
                }
                None => {
                    let (metrics, traces) =
                        monte_carlo(&scenario, &certs, runs, seed_base, &opts);
                    export_metrics(&metrics, &out)?;
                    let completed = traces.iter().filter(|t| t.completed).count();
                    let truncated = traces.iter().any(|t| t.max_ticks_exceeded);
                    println!("{completed}/{runs} runs completed -> {}", out.display());
                    if truncated {
                        eprintln!(
                            "some runs reached the tick limit {} before completion",
                            scenario.max_ticks
                        );
                        return Ok(ExitCode::from(3));
                    }
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Certify { common, feasibility_form } => {
            let (scenario, certs, _) = load(&common)?;
            print_certificates(&scenario, &certs, feasibility_form.into());
            Ok(ExitCode::SUCCESS)
        }
        Command::RuntimeBound { common, task } => {
            let (scenario, certs, _) = load(&common)?;
            if task == 0 || task > scenario.tasks.len() {
                anyhow::bail!("task must be in 1..={}", scenario.tasks.len());
            }
            match predicted_runtime_bound(&certs, &scenario.tasks, task) {
                Ok(dt) => {
                    println!("task {task}: worst-case duration {dt} ticks");
                    Ok(ExitCode::SUCCESS)
                }
                Err(CertifyError::NoFiniteBound) => {
                    println!("task {task}: no finite duration bound within the search horizon");
                    Ok(ExitCode::from(2))
                }
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn print_certificates(scenario: &Scenario, certs: &Certificates, form: FeasibilityForm) {
    let track = &certs.tracking;
    println!("scenario: {}", scenario.name);
    println!(
        "tracking: P* spectrum [{:.6e}, {:.6e}], decay {:.6}, beta {:.6e}",
        track.lambda_min, track.lambda_max, track.lambda, track.beta
    );
    println!("gains: ||BK|| = {:.6e}, ||A+BK|| = {:.6e}", certs.bk_norm, certs.abk_norm);
    for (task, cert) in scenario.tasks.iter().zip(&certs.tasks) {
        println!("task {}:", cert.task_index);
        println!(
            "  network: {} sensors, lambda_c = {:.6}, rounds = {} (required {})",
            cert.n_sensors, cert.lambda_c, cert.rounds, cert.min_rounds
        );
        if cert.rounds < cert.min_rounds {
            println!(
                "  warning: configured rounds {} below required {}",
                cert.rounds, cert.min_rounds
            );
        }
        println!(
            "  estimation: P spectrum [{:.6e}, {:.6e}], decay {:.6}",
            cert.lambda_min, cert.lambda_max, cert.varpi
        );
        println!(
            "  parameters: rho = {:.6e}, tau = {:.6e}, gamma = {:.6e}",
            cert.rho, cert.tau, cert.gamma
        );
        println!("  noise levels: q_bar = {:.6e}, q_eta = {:.6e}", cert.q_bar, cert.q_noise);
        let (ok, margin) = task_feasible(task, certs, cert, form);
        println!(
            "  feasibility: {} (margin {:.6e})",
            if ok { "ok" } else { "violated" },
            margin
        );
        match predicted_runtime_bound(certs, &scenario.tasks, cert.task_index) {
            Ok(dt) => println!("  worst-case duration: {dt} ticks"),
            Err(CertifyError::NoFiniteBound) => {
                println!("  worst-case duration: none within the search horizon")
            }
            Err(e) => println!("  worst-case duration: unavailable ({e})"),
        }
    }
}
