use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use canopy3d::local::DescriptorKind;
use canopy3d_cli::stages::{self, ALL_METHODS};
use canopy3d_cli::PipelineConfig;

#[derive(Parser)]
#[command(name = "canopy3d", version, about = "Drought-stress classification from plant point clouds")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed every stage derives its randomness from.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic plant dataset.
    Synth {
        #[arg(long)]
        control: Option<usize>,
        #[arg(long)]
        drought: Option<usize>,
    },
    /// Extract the canopy of every plant.
    Segment,
    /// Compute descriptors for every canopy.
    Describe {
        /// shot, rops, fpfh, net-global or net-agg (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        method: Vec<DescriptorKind>,
        /// Retrain the networks even when stored ones exist.
        #[arg(long)]
        retrain: bool,
    },
    /// Fit the quantizers and encode every descriptor set.
    Encode,
    /// Train one SVM per method row.
    Train,
    /// Score the trained models on the test plants.
    Eval,
    /// Run every stage in order.
    Pipeline {
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        method: Vec<DescriptorKind>,
    },
}

fn parse_method(s: &str) -> Result<DescriptorKind, String> {
    s.parse().map_err(|_| format!("unknown method '{s}' (expected shot, rops, fpfh, net-global or net-agg)"))
}

fn methods(selected: &[DescriptorKind]) -> Vec<DescriptorKind> {
    if selected.is_empty() {
        ALL_METHODS.to_vec()
    } else {
        ALL_METHODS.into_iter().filter(|k| selected.contains(k)).collect()
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("CANOPY3D_THREADS") else {
        return Ok(());
    };
    let n: usize = value.trim().parse().with_context(|| format!("CANOPY3D_THREADS must be a number, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Command::Synth { control, drought } = &cli.command {
        cfg.synth.control = control.unwrap_or(cfg.synth.control);
        cfg.synth.drought = drought.unwrap_or(cfg.synth.drought);
    }
    cfg.validate()?;
    match cli.command {
        Command::Synth { .. } => {
            let n = stages::synth(&cfg)?;
            println!("wrote {n} plants to {}", cfg.out.join("synth").display());
        }
        Command::Segment => {
            let stats = stages::segment(&cfg)?;
            println!("segmented {} plants", stats.len());
        }
        Command::Describe { method, retrain } => stages::describe(&cfg, &methods(&method), retrain)?,
        Command::Encode => {
            stages::encode(&cfg, &ALL_METHODS)?;
        }
        Command::Train => {
            stages::train_models(&cfg)?;
        }
        Command::Eval => print!("{}", stages::evaluate(&cfg)?.to_text()),
        Command::Pipeline { method } => print!("{}", stages::pipeline(&cfg, &methods(&method))?.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
