//! Command-line front end: train agents, roll out policies on outage
//! scenarios, run the timed evaluation, classify reports, and emit layout
//! documents. Exit codes: 0 success, 2 configuration errors, 1 runtime
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ranres::checkpoint;
use ranres::config::{PolicyKind, ScenarioConfig};
use ranres::dynamics::{self, DynamicsError};
use ranres::layout::build_hex_layout_with;
use ranres::link::LinkReport;
use ranres::marl::{self, AgentBundle};
use ranres::resilience::ResilienceSnapshot;
use ranres::trajectory::Trajectory;

#[derive(Parser)]
#[command(name = "ranres", version, about = "RAN outage simulator and resilience optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file; defaults mirror the reference table.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    NoAction,
    NeighborOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Train one DQN agent per site and write checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy rollout of a trained model from a post-outage state.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Action steps to roll out; defaults to the config value.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Timed outage run with metrics and plot-data export.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; required unless the policy is no_action.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fan out this many consecutive seeds, one isolated run each.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Reference policies for comparison runs.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Which reference policy to run.
        #[arg(value_enum)]
        kind: BaselineArg,
        /// Checkpoint file; required for neighbor-only.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Derive the resilience snapshot from a per-user link report CSV.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Link report CSV (one row per user).
        #[arg(long)]
        report: PathBuf,
    },
    /// Emit the layout JSON document for a scenario.
    Layout {
        #[command(flatten)]
        common: Common,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ranres::config::ConfigError> for CliError {
    fn from(e: ranres::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::MissingCheckpoints(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    ranres::layout::LayoutError,
    ranres::link::LinkError,
    ranres::marl::MarlError,
    ranres::resilience::ResilienceError,
    ranres::checkpoint::CheckpointError,
    std::io::Error
);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common } => cmd_train(common),
        Command::Infer {
            common,
            checkpoint,
            steps,
        } => cmd_infer(common, &checkpoint, steps),
        Command::Evaluate {
            common,
            checkpoint,
            sweep,
        } => match sweep {
            Some(n) => cmd_sweep(common, checkpoint.as_deref(), n),
            None => cmd_evaluate(common, checkpoint.as_deref(), None),
        },
        Command::Baseline {
            common,
            kind,
            checkpoint,
        } => {
            let policy = match kind {
                BaselineArg::NoAction => PolicyKind::NoAction,
                BaselineArg::NeighborOnly => PolicyKind::NeighborOnly,
            };
            cmd_evaluate(common, checkpoint.as_deref(), Some(policy))
        }
        Command::Classify { common, report } => cmd_classify(common, &report),
        Command::Layout { common } => cmd_layout(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

/// Persist the effective configuration next to a run's outputs.
fn write_run_snapshot(cfg: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config_snapshot.cfg"), cfg.snapshot_text())?;
    Ok(())
}

fn load_agents(path: &Path, n_cells: usize) -> Result<Vec<AgentBundle>, CliError> {
    let (agents, meta) = checkpoint::load(path)?;
    if meta.n_cells != n_cells {
        return Err(CliError::Runtime(format!(
            "checkpoint was trained for {} cells, scenario has {n_cells}",
            meta.n_cells
        )));
    }
    Ok(agents)
}

fn cmd_train(common: Common) -> Result<(), CliError> {
    let cfg = load_config(&common)?;
    write_run_snapshot(&cfg, &common.out)?;
    let layout = build_hex_layout_with(&cfg.layout)?;
    let result = marl::train(&layout, &cfg.setup, &cfg.train, Some(&common.out))?;
    let last = result.episodes.last();
    println!(
        "trained {} agents for {} episodes (final reward {:.4}); checkpoints in {}",
        result.agents.len(),
        result.episodes.len(),
        last.map(|e| e.total_reward).unwrap_or(0.0),
        common.out.display()
    );
    Ok(())
}

fn write_trajectory(traj: &Trajectory, out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("trajectory.jsonl"), traj.to_jsonl())?;
    let final_report = traj.final_report();
    std::fs::write(out.join("final_report.csv"), final_report.to_csv())?;
    std::fs::write(
        out.join("final_snapshot.json"),
        serde_json::to_string_pretty(traj.final_snapshot()).expect("snapshot serializes"),
    )?;
    Ok(())
}

fn cmd_infer(common: Common, checkpoint: &Path, steps: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(&common)?;
    write_run_snapshot(&cfg, &common.out)?;
    let layout = build_hex_layout_with(&cfg.layout)?;
    let agents = load_agents(checkpoint, layout.n_cells())?;
    let scenario = cfg.outage_for_run();
    let k = steps.unwrap_or(cfg.inference_steps);
    let traj = marl::infer(&agents, &layout, &cfg.setup, &scenario, k)?;
    write_trajectory(&traj, &common.out)?;
    let snap = traj.final_snapshot();
    println!(
        "inferred {k} steps with {} sites off: p_coverage {:.4} -> {:.4}, p_service {:.4} -> {:.4}",
        scenario.n_off(),
        traj.initial_snapshot.p_coverage,
        snap.p_coverage,
        traj.initial_snapshot.p_service,
        snap.p_service,
    );
    Ok(())
}

fn cmd_evaluate(
    common: Common,
    checkpoint: Option<&Path>,
    force_policy: Option<PolicyKind>,
) -> Result<(), CliError> {
    let mut cfg = load_config(&common)?;
    if let Some(policy) = force_policy {
        cfg.policy = policy;
    }
    write_run_snapshot(&cfg, &common.out)?;
    let layout = build_hex_layout_with(&cfg.layout)?;
    let agents = match (cfg.policy, checkpoint) {
        (PolicyKind::NoAction, _) => None,
        (_, Some(path)) => Some(load_agents(path, layout.n_cells())?),
        (policy, None) => {
            return Err(CliError::Config(format!(
                "policy {} needs --checkpoint",
                policy.as_str()
            )))
        }
    };
    let scenario = cfg.outage_for_run();
    let (records, info) =
        dynamics::run_dynamic_with(&cfg, &layout, &scenario, agents.as_deref())?;
    dynamics::export_metrics(&records, Some(&info), &common.out)?;
    dynamics::export_plot_data(&records, &common.out)?;
    let last = records.last().expect("at least one record");
    println!(
        "evaluated {} ticks ({} policy, sites {:?} off at t={}): final p_coverage {:.4}, p_service {:.4}",
        records.len(),
        cfg.policy.as_str(),
        info.off_sites,
        info.outage_tick,
        last.p_coverage,
        last.p_service,
    );
    Ok(())
}

/// Independent seeded evaluations fanned out across workers, each into
/// its own subdirectory.
fn cmd_sweep(common: Common, checkpoint: Option<&Path>, n_seeds: u64) -> Result<(), CliError> {
    use rayon::prelude::*;
    let base = load_config(&common)?;
    if n_seeds == 0 {
        return Err(CliError::Config("--sweep needs at least one seed".into()));
    }
    let agents = match (base.policy, checkpoint) {
        (PolicyKind::NoAction, _) => None,
        (_, Some(path)) => {
            let layout = build_hex_layout_with(&base.layout)?;
            Some(load_agents(path, layout.n_cells())?)
        }
        (policy, None) => {
            return Err(CliError::Config(format!(
                "policy {} needs --checkpoint",
                policy.as_str()
            )))
        }
    };
    let outcomes: Result<Vec<String>, CliError> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let mut cfg = base.clone();
            cfg.set_seed(base.seed + k);
            let out = common.out.join(format!("seed_{}", cfg.seed));
            write_run_snapshot(&cfg, &out)?;
            let layout = build_hex_layout_with(&cfg.layout)?;
            let scenario = cfg.outage_for_run();
            let (records, info) =
                dynamics::run_dynamic_with(&cfg, &layout, &scenario, agents.as_deref())?;
            dynamics::export_metrics(&records, Some(&info), &out)?;
            dynamics::export_plot_data(&records, &out)?;
            let last = records.last().expect("at least one record");
            Ok(format!(
                "seed {}: sites {:?} off, final p_coverage {:.4}, p_service {:.4}",
                cfg.seed, info.off_sites, last.p_coverage, last.p_service
            ))
        })
        .collect();
    for line in outcomes? {
        println!("{line}");
    }
    Ok(())
}

fn cmd_classify(common: Common, report_path: &Path) -> Result<(), CliError> {
    let cfg = load_config(&common)?;
    let text = std::fs::read_to_string(report_path)?;
    let report = LinkReport::from_csv(&text)?;
    let snapshot = ResilienceSnapshot::from_report(&report, &cfg.setup.thresholds)?;
    let json = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
    println!("{json}");
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("snapshot.json"), &json)?;
    Ok(())
}

fn cmd_layout(common: Common) -> Result<(), CliError> {
    let cfg = load_config(&common)?;
    write_run_snapshot(&cfg, &common.out)?;
    let layout = build_hex_layout_with(&cfg.layout)?;
    let path = common.out.join("layout.json");
    std::fs::write(&path, layout.to_json())?;
    println!(
        "wrote {} ({} sites, {} cells, {} users)",
        path.display(),
        layout.n_sites(),
        layout.n_cells(),
        layout.n_users()
    );
    Ok(())
}
