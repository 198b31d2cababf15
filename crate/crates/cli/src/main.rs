use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use terrapatch::config::PipelineConfig;
use terrapatch::eval::PredSpace;
use terrapatch::pipeline;
use terrapatch::Error;

const EXIT_INTERNAL: u8 = 1;
const EXIT_LEAKAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "terrapatch",
    version,
    about = "Curate orthoimage/DEM pairs into training patches"
)]
struct Cli {
    /// YAML configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomised stage (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the complete default configuration and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Repair, verticalise and tile every sample directory under --input.
    Process {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Cluster overlapping samples and assign clusters to train/val.
    Split {
        /// Dataset directory written by `process`.
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Only re-check the existing clusters.json for leakage.
        #[arg(long)]
        verify: bool,
    },
    /// Per-patch statistics and elevation histograms.
    Stats {
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predicted DEMs (<input>/[<split>/]<patch>/pred.mgrd) against the dataset.
    Eval {
        /// Directory of predictions.
        #[arg(long)]
        input: PathBuf,
        /// Dataset directory written by `process`/`split`.
        #[arg(long)]
        dataset: PathBuf,
        /// Report directory (defaults to --input).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        pred_space: Option<PredSpace>,
        #[arg(long)]
        exclude_masked: bool,
        #[arg(long)]
        pixel_pooled: bool,
    },
    /// Write a synthetic corpus of sample directories.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Leakage(_) => EXIT_LEAKAGE,
        _ => EXIT_INTERNAL,
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match &cli.command {
        Some(Command::Split {
            train_fraction: Some(f),
            ..
        }) => cfg.split.train_fraction = *f,
        Some(Command::Eval {
            pred_space,
            exclude_masked,
            pixel_pooled,
            ..
        }) => {
            if let Some(s) = pred_space {
                cfg.eval.pred_space = *s;
            }
            cfg.eval.exclude_masked |= exclude_masked;
            cfg.eval.pixel_pooled |= pixel_pooled;
        }
        Some(Command::Synth {
            samples: Some(n), ..
        }) => cfg.synth.samples = *n,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &PipelineConfig, command: &Command) -> Result<u8, Error> {
    let threads = cli.threads;
    match command {
        Command::Process { input, output } => {
            let s = pipeline::cmd_process(input, output, cfg, threads)?;
            println!(
                "{} samples ({} resumed), {} rejected, {} patches accepted",
                s.samples, s.resumed, s.rejected, s.patches
            );
            for (name, err) in &s.failures {
                eprintln!("failed: {name}: {err}");
            }
            Ok(if s.failures.is_empty() {
                0
            } else {
                EXIT_INTERNAL
            })
        }
        Command::Split {
            output,
            verify: true,
            ..
        } => {
            pipeline::cmd_verify_split(output)?;
            println!("no leakage");
            Ok(0)
        }
        Command::Split { output, .. } => {
            let s = pipeline::cmd_split(output, cfg.split.train_fraction, cfg.split.seed)?;
            let total = (s.train_patches + s.val_patches).max(1) as f64;
            println!(
                "{} clusters; train {} / val {} patches ({:.1}% train)",
                s.clusters,
                s.train_patches,
                s.val_patches,
                100.0 * s.train_patches as f64 / total
            );
            Ok(0)
        }
        Command::Stats { output } => {
            pipeline::cmd_stats(output, cfg, threads)?;
            println!("wrote {}", output.join(pipeline::STATS_DIR).display());
            Ok(0)
        }
        Command::Eval {
            input,
            dataset,
            output,
            ..
        } => {
            let report: &Path = output.as_deref().unwrap_or(input);
            let s = pipeline::cmd_eval(input, dataset, report, &cfg.eval, threads)?;
            let a = s.aggregate;
            println!(
                "{} patches scored ({} missing, {} degenerate): RMSE {:.4} MAE {:.4} RelErr {:.6} RelAbsErr {:.6}",
                s.evaluated, s.missing, s.degenerate, a.rmse, a.mae, a.rel_err, a.rel_abs_err
            );
            Ok(0)
        }
        Command::Synth { output, .. } => {
            let ids = pipeline::cmd_synth(output, cfg)?;
            println!("wrote {} samples to {}", ids.len(), output.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors share the config-error code; 2 is reserved for leakage.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    if cli.print_default_config {
        print!("{}", PipelineConfig::default().to_yaml());
        return ExitCode::SUCCESS;
    }
    let Some(command) = &cli.command else {
        eprintln!("no subcommand given; see --help");
        return ExitCode::from(EXIT_CONFIG);
    };
    let code = load_config(&cli).and_then(|cfg| run(&cli, &cfg, command));
    match code {
        Ok(c) => ExitCode::from(c),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
