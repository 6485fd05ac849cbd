//! `dsd-snn`: run, resume and inspect continual-learning experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dsd_snn::checkpoint;
use dsd_snn::data::{resolve_data_root, DATA_ENV};
use dsd_snn::experiment::{self, preset, ExperimentConfig, RunOptions, RunPaths, PRESETS};
use dsd_snn::metrics::MetricsRecord;
use dsd_snn::structure::parameter_stats;

#[derive(Parser)]
#[command(name = "dsd-snn", version, about = "Spiking continual learning with growing and pruned structure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence from scratch
    Run(RunArgs),
    /// Print the accuracy table of a metrics file
    Report {
        /// metrics.json written by `run`
        metrics: PathBuf,
        /// Emit the accuracy matrix as CSV instead
        #[arg(long)]
        csv: bool,
    },
    /// Continue a run from its checkpoint
    Resume(ResumeArgs),
    /// Inspect network structure
    Structure {
        #[command(subcommand)]
        command: StructureCommand,
    },
    /// List the built-in presets
    Presets,
}

#[derive(Subcommand)]
enum StructureCommand {
    /// Per-layer slot counts and compression of a checkpoint, as JSON
    Dump { checkpoint: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Output directory for metrics, CSV, timing and checkpoint
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    /// Dataset root holding mnist/ or cifar-100-binary/
    #[arg(long, env = DATA_ENV)]
    data_root: Option<PathBuf>,
    /// Stop after this many tasks have been learned in total
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (see `presets`)
    #[arg(long)]
    preset: Option<String>,
    /// Seed for permutations, subsets, growth and initialization
    #[arg(long)]
    seed: Option<u64>,
    /// Five tasks of 10,000 training samples
    #[arg(long)]
    desk_scale: bool,
    /// Print the effective configuration and exit
    #[arg(long)]
    print_config: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ResumeArgs {
    /// Checkpoint to continue from (default: <out>/checkpoint.bin)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Replacement configuration; training settings may change, the benchmark may not
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

fn effective_config(args: &RunArgs) -> dsd_snn::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => preset("mnist-desk")?,
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if args.desk_scale {
        cfg.apply_desk_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn paths(common: &Common) -> RunPaths {
    RunPaths {
        out_dir: common.out.clone(),
        data_root: resolve_data_root(common.data_root.as_deref()),
    }
}

fn print_line(line: &str) {
    println!("{line}");
}

fn finish(m: &MetricsRecord, out: &Path) {
    if let Some(avg) = m.final_average() {
        println!(
            "learned {} tasks, final average accuracy {:.2}%; artifacts in {}",
            m.tasks_learned(),
            avg * 100.0,
            out.display()
        );
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = effective_config(&args)?;
            if args.print_config {
                println!("{}", serde_json::to_string_pretty(&cfg)?);
                return Ok(());
            }
            let p = paths(&args.common);
            let opts = RunOptions {
                stop_after: args.common.stop_after,
            };
            let m = experiment::run(&cfg, &p, &opts, &mut print_line)?;
            finish(&m, &p.out_dir);
        }
        Command::Resume(args) => {
            let p = paths(&args.common);
            let ckpt = args.checkpoint.clone().unwrap_or_else(|| p.checkpoint());
            let cfg = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
            let opts = RunOptions {
                stop_after: args.common.stop_after,
            };
            let m = experiment::resume(&ckpt, cfg.as_ref(), &p, &opts, &mut print_line)?;
            finish(&m, &p.out_dir);
        }
        Command::Report { metrics, csv } => {
            let m = MetricsRecord::load(&metrics)
                .with_context(|| format!("reading {}", metrics.display()))?;
            if csv {
                print!("{}", m.accuracy_csv());
            } else {
                print!("{}", m.render_report());
            }
        }
        Command::Structure {
            command: StructureCommand::Dump { checkpoint: path },
        } => {
            let state = checkpoint::load(&path).with_context(|| format!("reading {}", path.display()))?;
            let dump = serde_json::json!({
                "tasks_learned": state.next_task,
                "heads": state.net.heads().iter().map(|h| h.task()).collect::<Vec<_>>(),
                "parameters": parameter_stats(&state.net),
            });
            println!("{}", serde_json::to_string_pretty(&dump)?);
        }
        Command::Presets => {
            for name in PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<dsd_snn::Error>().map_or(1, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
