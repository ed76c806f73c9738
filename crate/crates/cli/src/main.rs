//! `pimcnn` experiment runner.
//!
//! Exit status: 0 on success, 1 when a verification check fails, 2 on usage,
//! configuration or input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pimcnn::accumulator::NvMode;
use pimcnn::config::{OutputFormat, SimConfig, TraceKind};
use pimcnn::costmodel::AccumulationMode;

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "pimcnn", version, about = "Bit-wise in-memory CNN accelerator simulator")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Default)]
struct GlobalOpts {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Check every stage against the reference implementation.
    #[arg(long, global = true)]
    verify: bool,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Bit-count datapath.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Non-volatile accumulator cells.
    #[arg(long, global = true, value_enum)]
    nv: Option<NvArg>,
    /// Frames between checkpoints.
    #[arg(long, global = true)]
    checkpoint_k: Option<u32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run inference on the configured model and write scores and costs.
    Run,
    /// Sweep one parameter and write one row per point.
    Sweep {
        #[arg(value_enum)]
        dimension: SweepDim,
    },
    /// Run the model under power traces and check the output is unchanged.
    Intermittent(TraceOpts),
    /// Monte-Carlo sense-margin experiment.
    McSense {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Render a cost or storage report as a table.
    Report {
        /// `cost.json` or `cost.csv` written by `run`.
        file: Option<PathBuf>,
        /// Print the storage footprint of the reference 8-layer network.
        #[arg(long, num_args = 2, value_names = ["W_BITS", "I_BITS"])]
        storage: Option<Vec<u32>>,
        /// Keep first and last layers at full precision in the storage report.
        #[arg(long)]
        full_first_last: bool,
    },
}

#[derive(Args, Debug)]
struct TraceOpts {
    #[arg(long, value_enum)]
    trace: Option<TraceArg>,
    #[arg(long)]
    traces: Option<usize>,
    #[arg(long)]
    mean_on: Option<f64>,
    #[arg(long)]
    mean_off: Option<f64>,
    #[arg(long)]
    on: Option<u64>,
    #[arg(long)]
    off: Option<u64>,
    /// `on,off` CSV trace.
    #[arg(long)]
    trace_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepDim {
    Bitwidth,
    CheckpointK,
    Sigma,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Compressor,
    Serial,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NvArg {
    #[value(name = "two_ff", alias = "two-ff")]
    TwoFf,
    #[value(name = "one_ff", alias = "one-ff")]
    OneFf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TraceArg {
    Exponential,
    Periodic,
    #[value(name = "always_on", alias = "always-on")]
    AlwaysOn,
    File,
}

/// Why a command failed, which decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Verification(String),
    Usage(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

pub type CmdResult = std::result::Result<(), Failure>;

fn load_config(opts: &GlobalOpts) -> anyhow::Result<SimConfig> {
    let path = opts
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--config is required for this command"))?;
    let mut cfg = SimConfig::load(path)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(d) = &opts.out_dir {
        cfg.output.dir = d.clone();
    } else {
        cfg.output.dir = cfg.resolve(&cfg.output.dir);
    }
    if let Some(f) = opts.format {
        cfg.output.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
    if let Some(m) = opts.mode {
        cfg.cost.mode = match m {
            ModeArg::Compressor => AccumulationMode::Compressor,
            ModeArg::Serial => AccumulationMode::Serial,
        };
    }
    if let Some(n) = opts.nv {
        let mode = match n {
            NvArg::TwoFf => NvMode::TwoFf,
            NvArg::OneFf => NvMode::OneFf,
        };
        cfg.intermittency.nv_mode = mode;
        cfg.cost.nv_mode = mode;
    }
    if let Some(k) = opts.checkpoint_k {
        cfg.intermittency.checkpoint_k = k;
        cfg.cost.checkpoint_interval = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_trace_opts(cfg: &mut SimConfig, t: &TraceOpts) {
    let ic = &mut cfg.intermittency;
    if let Some(kind) = t.trace {
        ic.trace = match kind {
            TraceArg::Exponential => TraceKind::Exponential,
            TraceArg::Periodic => TraceKind::Periodic,
            TraceArg::AlwaysOn => TraceKind::AlwaysOn,
            TraceArg::File => TraceKind::File,
        };
    }
    if let Some(n) = t.traces {
        ic.traces = n;
    }
    if let Some(v) = t.mean_on {
        ic.mean_on = v;
    }
    if let Some(v) = t.mean_off {
        ic.mean_off = v;
    }
    if let Some(v) = t.on {
        ic.on = v;
    }
    if let Some(v) = t.off {
        ic.off = v;
    }
    if let Some(p) = &t.trace_file {
        // flag paths are relative to the working directory
        ic.file = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
        ic.trace = TraceKind::File;
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    if let Command::Report {
        file,
        storage,
        full_first_last,
    } = &cli.command
    {
        return commands::report(file.as_deref(), storage.as_deref(), *full_first_last);
    }
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Run => commands::run(&cfg, cli.global.verify),
        Command::Sweep { dimension } => match dimension {
            SweepDim::Bitwidth => commands::sweep_bitwidth(&cfg),
            SweepDim::CheckpointK => commands::sweep_checkpoint_k(&cfg),
            SweepDim::Sigma => commands::sweep_sigma(&cfg),
        },
        Command::Intermittent(t) => {
            apply_trace_opts(&mut cfg, &t);
            commands::intermittent(&cfg)
        }
        Command::McSense { trials } => {
            if let Some(t) = trials {
                cfg.monte_carlo.trials = t;
            }
            commands::mc_sense(&cfg)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
