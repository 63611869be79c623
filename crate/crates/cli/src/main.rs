use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use krflow_cli::{
    init_threads, parse_config, run_experiment, CliError, ExperimentConfig, ExperimentKind,
    Overrides,
};

#[derive(Parser)]
#[command(
    name = "krflow",
    version,
    about = "Numerical lab for the collapsing Kähler-Ricci flow on elliptic fibrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (sectioned key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides experiment.output; default out/<experiment>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base resolution override (grid.base).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Seed override (experiment.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Snapshot cadence override for flow runs (flow.snapshot_every).
    #[arg(long, global = true)]
    snapshot_every: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the base Monge-Ampère equation for the configured model.
    SolveBase,
    /// Run the Kähler-Ricci flow on the reference model.
    RunFlow,
    /// Solve the collapsing Ricci-flat family.
    K3Family,
    /// Fit the density singularity of a catalog model.
    DensityFit,
    /// Check the Weil-Petersson and canonical Hodge metric identities.
    WpCheck,
    /// Run the flow and check the Schwarz-lemma inequality.
    SchwarzCheck,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::SolveBase => ExperimentKind::SolveBase,
            Command::RunFlow => ExperimentKind::RunFlow,
            Command::K3Family => ExperimentKind::K3Family,
            Command::DensityFit => ExperimentKind::DensityFit,
            Command::WpCheck => ExperimentKind::WpCheck,
            Command::SchwarzCheck => ExperimentKind::SchwarzCheck,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let kind = cli.command.kind();
    let base = match &cli.config {
        Some(p) => parse_config(&std::fs::read_to_string(p)?)?,
        None => ExperimentConfig::defaults(kind),
    };
    let overrides = Overrides {
        kind: Some(kind),
        grid: cli.grid,
        seed: cli.seed,
        snapshot_every: cli.snapshot_every,
        output: cli.out.clone(),
    };
    let cfg = base.with_overrides(&overrides)?;
    let out = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let threads = init_threads();
    eprintln!(
        "{kind}: config hash {} ({threads} thread(s)), writing to {}",
        cfg.hash(),
        out.display()
    );
    let report = run_experiment(&cfg, &out)?;
    for i in &report.invariants {
        println!(
            "{:<28} {:>24} bound {:>12}  {}",
            i.name,
            krflow_cli::fmt_g17(i.value),
            krflow_cli::fmt_g17(i.bound),
            if i.pass { "ok" } else { "VIOLATED" }
        );
    }
    eprintln!("{} files in {:.1} s", report.files.len(), report.wall_time);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
