use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use fedsplit::experiment::{
    compare_report, emit, load_curves, run_experiment, ConfigFile, CurveSet, ExperimentSpec, Group,
    Mode, TransportChoice, WINDOWS,
};
use fedsplit_cli::{init_logging, serve_blackboard, BlackboardArgs};

const MANIFEST: &str = "experiment.toml";

#[derive(Debug, Parser)]
#[command(
    name = "fedsplit",
    version,
    about = "Cooperative split-network DQN experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one experiment group and write raw.csv, mean.csv and plot.svg.
    Run(RunArgs),
    /// Windowed comparison of agent curves from several output directories.
    Compare(CompareArgs),
    /// Run the forwarder service.
    Blackboard(BlackboardArgs),
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// same | similar | diff-tall | diff-fat | totally-diff
    #[arg(long)]
    group: Option<Group>,
    /// coop | solo-a | solo-b
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// inprocess | network
    #[arg(long)]
    transport: Option<String>,
    /// Black Board address for network transport. Without it every run
    /// starts a private forwarder on loopback.
    #[arg(long)]
    bb: Option<String>,
    /// TOML file with [experiment], [agent.X], [env.X] and [federation] sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    /// Directories written by `fedsplit run`.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Agent whose curves are compared.
    #[arg(long, default_value = "A")]
    agent: String,
}

fn main() -> Result<()> {
    init_logging();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::Blackboard(args) => serve_blackboard(&args),
    }
}

fn build_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let group = args
        .group
        .or(file.experiment.group)
        .context("--group is required unless the config file names one")?;
    let mode = args.mode.or(file.experiment.mode).unwrap_or(Mode::Coop);
    let mut spec = ExperimentSpec::new(group, mode);
    file.apply(&mut spec)?;
    if let Some(r) = args.runs {
        spec.runs = r;
    }
    if let Some(e) = args.epochs {
        spec.epochs = e;
    }
    if let Some(s) = args.seed {
        spec.base_seed = s;
    }
    match args.transport.as_deref() {
        None => {
            if let Some(bb) = &args.bb {
                spec.transport = TransportChoice::Network {
                    blackboard: Some(bb.clone()),
                };
            }
        }
        Some("inprocess") => {
            if args.bb.is_some() {
                bail!("--bb only applies to --transport network");
            }
            spec.transport = TransportChoice::InProcess;
        }
        Some("network") => {
            let configured = match &spec.transport {
                TransportChoice::Network { blackboard } => blackboard.clone(),
                TransportChoice::InProcess => None,
            };
            spec.transport = TransportChoice::Network {
                blackboard: args.bb.clone().or(configured),
            };
        }
        Some(other) => bail!("unknown transport {other:?}, expected inprocess or network"),
    }
    spec.validate()?;
    Ok(spec)
}

fn run(args: RunArgs) -> Result<()> {
    let spec = build_spec(&args)?;
    info!(
        "{}: {} runs x {} epochs, seed {}, {} transport",
        spec.label(),
        spec.runs,
        spec.epochs,
        spec.base_seed,
        spec.transport.name()
    );
    let start = Instant::now();
    let curves = run_experiment(&spec)?;
    let paths = emit(&curves, &args.out)?;
    let manifest = args.out.join(MANIFEST);
    fs::write(&manifest, ConfigFile::from_spec(&spec).to_toml())
        .with_context(|| format!("writing {}", manifest.display()))?;
    info!("finished in {:.1}s", start.elapsed().as_secs_f64());

    println!("{} ({} runs)", spec.label(), curves.runs());
    print_summary(&curves);
    println!("wrote {}", paths.raw.display());
    println!("wrote {}", paths.mean.display());
    println!("wrote {}", paths.plot.display());
    Ok(())
}

fn print_summary(curves: &CurveSet) {
    let epochs = curves.epochs();
    let tail = epochs.saturating_sub(20);
    for agent in &curves.agents {
        let mut parts = Vec::new();
        for (s, e) in WINDOWS {
            if let Some(m) = curves.window_mean(agent, s, e) {
                parts.push(format!("epochs {s}-{e}: {m:.2}"));
            }
        }
        if let Some(m) = curves.window_mean(agent, tail, epochs) {
            parts.push(format!("last {}: {m:.2}", epochs - tail));
        }
        println!("  agent {agent}: {}", parts.join(", "));
    }
}

fn label_for(dir: &Path) -> String {
    let from_manifest = ConfigFile::load(&dir.join(MANIFEST))
        .ok()
        .and_then(|c| Some(format!("{}/{}", c.experiment.group?, c.experiment.mode?)));
    from_manifest.unwrap_or_else(|| dir.display().to_string())
}

fn compare(args: CompareArgs) -> Result<()> {
    let mut sets = Vec::with_capacity(args.dirs.len());
    for dir in &args.dirs {
        let curves = load_curves(dir)?;
        let mut label = label_for(dir);
        if sets.iter().any(|(l, _): &(String, CurveSet)| *l == label) {
            label = format!("{label} ({})", dir.display());
        }
        sets.push((label, curves));
    }
    let report = compare_report(&sets, &args.agent, &WINDOWS)?;
    print!("{report}");
    Ok(())
}
