use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use corrtomo::harness::{run_scenario, RunReport, Scenario, ScenarioConfig, ShotModel};

#[derive(Parser, Debug)]
#[command(
    name = "corrtomo",
    version,
    about = "Correlated readout simulation and tomography scenarios"
)]
struct Cli {
    /// Scenario configuration (JSON). Flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Required unless the configuration file provides one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the run report as JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune noise, estimate matched-filter kernels and measurement operators.
    Calibrate,
    /// Soft-average versus threshold variance across SNR.
    SweepCrossover,
    /// Correlated-variance table from per-channel variances.
    CorrVariance,
    /// State tomography of the entangled ZX state.
    StateTomo(TomoArgs),
    /// Process tomography of the ZX gate.
    ProcessTomo(TomoArgs),
    /// Simulate, channelize and persist multiplexed shots.
    Channelize {
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Channelizer throughput and filter attenuation table.
    Bench {
        #[arg(long)]
        shots: Option<usize>,
    },
}

#[derive(clap::Args, Debug)]
struct TomoArgs {
    #[arg(long, value_enum)]
    shot_model: Option<Model>,
    /// Shots per tomography configuration.
    #[arg(long)]
    shots: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    Waveform,
    Linear,
}

impl Command {
    fn scenario(&self) -> Scenario {
        match self {
            Command::Calibrate => Scenario::Calibrate,
            Command::SweepCrossover => Scenario::CrossoverSweep,
            Command::CorrVariance => Scenario::CorrVariance,
            Command::StateTomo(_) => Scenario::StateTomo,
            Command::ProcessTomo(_) => Scenario::ProcessTomo,
            Command::Channelize { .. } | Command::Bench { .. } => Scenario::ChannelizerBench,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ScenarioConfig> {
    let scenario = cli.command.scenario();
    let mut cfg = match &cli.config {
        Some(p) => {
            let cfg =
                ScenarioConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?;
            if cfg.scenario != scenario {
                bail!(
                    "{} describes scenario {}, not {scenario}",
                    p.display(),
                    cfg.scenario
                );
            }
            cfg
        }
        None => match cli.seed {
            Some(s) => ScenarioConfig::new(scenario, s),
            None => bail!("--seed is required when no --config is given"),
        },
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = Some(o.clone());
    }
    match &cli.command {
        Command::StateTomo(a) | Command::ProcessTomo(a) => {
            if let Some(m) = a.shot_model {
                cfg.shot_model = match m {
                    Model::Waveform => ShotModel::Waveform,
                    Model::Linear => ShotModel::Linear,
                };
            }
            if let Some(n) = a.shots {
                cfg.shots.per_configuration = n;
            }
        }
        Command::Channelize { shots } => {
            cfg.bench.persist_records = true;
            if let Some(n) = shots {
                cfg.bench.shots = *n;
            }
        }
        Command::Bench { shots } => {
            if let Some(n) = shots {
                cfg.bench.shots = *n;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(r: &RunReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(r)?);
        return Ok(());
    }
    println!("scenario     {}", r.scenario);
    println!("config hash  {}", r.config_hash);
    println!("wall time    {:.2} s", r.wall_time_s);
    println!();
    print!("{}", r.table());
    for (k, v) in &r.timing {
        println!("{k}  {v:.3}");
    }
    println!();
    for p in &r.outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let cfg = build_config(&cli)?;
    let report = run_scenario(&cfg)?;
    print_report(&report, cli.json)
}
