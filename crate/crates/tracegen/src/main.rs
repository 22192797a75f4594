//! Thin command-line wrapper over the pipeline commands in `tracegen::cli`.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use tracegen::cli::{
    cmd_eval, cmd_generate, cmd_preprocess, cmd_sweep_report, cmd_synth, cmd_train, CliError,
    EvalOptions, GenerateOverrides, RunConfig, SweepInput, SynthArgs,
};
use tracegen::trace::{SynthPattern, TraceFormat};
use tracegen::util::derive_seed;

#[derive(Parser)]
#[command(
    name = "tracegen",
    about = "Train a small transformer on packet traces, generate novel traces, and score their fidelity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's global seed (re-derives training and
    /// generation streams).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.train.seed = derive_seed(seed, 1);
            config.model.seed = derive_seed(seed, 2);
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Filter, shift, clip, and canonicalize the configured raw traces.
    Preprocess(ConfigArgs),
    /// Train on the preprocessed dataset; writes model.ckpt and loss.csv.
    Train(ConfigArgs),
    /// Generate traces from a checkpoint (defaults: every configured trace
    /// at every configured temperature).
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to sample from (default: <out>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Generate only this trace ID.
        #[arg(long)]
        trace_id: Option<u32>,
        /// Requests per generated trace.
        #[arg(long)]
        requests: Option<usize>,
        /// Single temperature instead of the configured sweep.
        #[arg(long)]
        temperature: Option<f64>,
        /// Restrict generated IDs to [0, N).
        #[arg(long)]
        scale_mask: Option<u32>,
        /// Segment length in tokens (default: the original trace's).
        #[arg(long)]
        segment_length: Option<usize>,
    },
    /// Score a generated trace against its original.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 1)]
        ngram_min: usize,
        #[arg(long, default_value_t = 40)]
        ngram_max: usize,
        #[arg(long, default_value_t = 6000)]
        ngram_samples: usize,
        /// Shuffle/uniform baseline repeats for complexity profiles.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv-pairs")]
        format: TraceFormat,
        /// Output directory for report.json and the per-measure CSVs.
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Distance-vs-temperature summary over a set of generated traces.
    SweepReport {
        #[arg(long)]
        original: PathBuf,
        /// Generated trace files (temperatures read from their .spec.json
        /// provenance sidecars unless --temperatures is given).
        #[arg(long, required = true, num_args = 1..)]
        generated: Vec<PathBuf>,
        /// Explicit temperature labels, parallel to --generated.
        #[arg(long, num_args = 1..)]
        temperatures: Option<Vec<f64>>,
        #[arg(long, default_value_t = 20_000)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Emit a synthetic trace (with metadata sidecar).
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        nodes: u32,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        name: String,
        #[arg(long, default_value_t = 0)]
        trace_id: u32,
        /// Constant pair source (constant-pair only).
        #[arg(long, default_value_t = 0)]
        src: u32,
        /// Constant pair destination (constant-pair only).
        #[arg(long, default_value_t = 0)]
        dst: u32,
        /// Diagonal block count (block-diagonal only).
        #[arg(long, default_value_t = 4)]
        blocks: u32,
        /// Hot pair count (two-phase-bursty only).
        #[arg(long, default_value_t = 4)]
        hot_pairs: u32,
        /// Run length of each burst (two-phase-bursty only).
        #[arg(long, default_value_t = 50)]
        run_len: u32,
        /// Output trace file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
#[clap(rename_all = "kebab-case")]
enum SynthKind {
    UniformRandom,
    ConstantPair,
    PeriodicRing,
    BlockDiagonal,
    TwoPhaseBursty,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess(args) => {
            let config = args.load()?;
            let outputs = cmd_preprocess(&config)?;
            for path in outputs {
                println!("{}", path.display());
            }
        }
        Command::Train(args) => {
            let config = args.load()?;
            let ckpt = cmd_train(&config)?;
            println!("{}", ckpt.display());
        }
        Command::Generate {
            config,
            checkpoint,
            trace_id,
            requests,
            temperature,
            scale_mask,
            segment_length,
        } => {
            let config = config.load()?;
            let checkpoint = checkpoint.unwrap_or_else(|| config.checkpoint_path());
            let overrides = GenerateOverrides {
                trace_id,
                requests,
                temperature,
                scale_mask,
                segment_length,
            };
            let outputs = cmd_generate(&config, &checkpoint, &overrides)?;
            for path in outputs {
                println!("{}", path.display());
            }
        }
        Command::Eval {
            original,
            generated,
            window,
            stride,
            ngram_min,
            ngram_max,
            ngram_samples,
            repeats,
            seed,
            format,
            out,
        } => {
            let options = EvalOptions {
                window,
                stride,
                ngram_min,
                ngram_max,
                ngram_samples,
                repeats,
                seed,
                original_format: format,
                generated_format: format,
                matrix_clip: Some(100),
            };
            let report = cmd_eval(&original, &generated, &options, &out)?;
            println!(
                "matrix_similarity {}  profile_distance {}  mean_par {} -> {}",
                report.matrix_similarity,
                report.profile_distance,
                report.original_mean_par,
                report.generated_mean_par
            );
            println!("{}", out.join("report.json").display());
        }
        Command::SweepReport {
            original,
            generated,
            temperatures,
            window,
            stride,
            repeats,
            seed,
            out,
        } => {
            if let Some(temps) = &temperatures {
                if temps.len() != generated.len() {
                    return Err(CliError::Config(format!(
                        "{} temperatures for {} traces",
                        temps.len(),
                        generated.len()
                    )));
                }
            }
            let inputs: Vec<SweepInput> = generated
                .into_iter()
                .enumerate()
                .map(|(i, path)| SweepInput {
                    path,
                    temperature: temperatures.as_ref().map(|t| t[i]),
                })
                .collect();
            let options = EvalOptions {
                window,
                stride,
                repeats,
                seed,
                ..EvalOptions::default()
            };
            let rows = cmd_sweep_report(&original, &inputs, &options, &out)?;
            for row in rows {
                println!("t={} distance={} mean_par={}", row.temperature, row.profile_distance, row.mean_par);
            }
        }
        Command::Synth {
            kind,
            nodes,
            length,
            seed,
            name,
            trace_id,
            src,
            dst,
            blocks,
            hot_pairs,
            run_len,
            out,
        } => {
            let pattern = match kind {
                SynthKind::UniformRandom => SynthPattern::UniformRandom,
                SynthKind::ConstantPair => SynthPattern::ConstantPair { src, dst },
                SynthKind::PeriodicRing => SynthPattern::PeriodicRing,
                SynthKind::BlockDiagonal => SynthPattern::BlockDiagonal { blocks },
                SynthKind::TwoPhaseBursty => SynthPattern::TwoPhaseBursty { hot_pairs, run_len },
            };
            let path = cmd_synth(&SynthArgs {
                pattern,
                n_nodes: nodes,
                length,
                seed,
                name,
                trace_id,
                out,
            })?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(cause) = source {
            eprintln!("  caused by: {cause}");
            source = cause.source();
        }
        std::process::exit(err.exit_code());
    }
}
