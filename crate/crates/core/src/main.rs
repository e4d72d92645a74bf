use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use gaa::pipeline::{
    cmd_diffuse, cmd_evaluate, cmd_predict, cmd_report, cmd_synth, cmd_train, load_run_config,
    ModelKind, RunConfig, SplitChoice,
};
use gaa::testkit::SynthSpec;
use gaa::Result;

/// Diffusion-feature pipeline: train and apply a graph attentional
/// autoencoder (or a logistic baseline) to classify compounds by their
/// protein targets on a shared interaction network.
#[derive(Parser)]
#[command(name = "gaa", version, arg_required_else_help = true)]
struct Cli {
    /// Run configuration file (TOML); defaults apply when omitted
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config value by dotted path, e.g. --set train.lr=0.01
    /// (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Gaa,
    Baseline,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute diffusion features for every compound and store them in the
    /// configured cache directory
    Diffuse,

    /// Train a model; writes a checkpoint, an epoch log (JSON lines), and
    /// the resolved config into the output directory
    Train {
        /// Which model to fit
        #[arg(long, value_enum, default_value = "gaa")]
        model: ModelArg,
        /// Master seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
        /// Bit-reproducible gradient reduction and logging
        #[arg(long)]
        deterministic: bool,
        /// Output directory (overrides paths.out_dir)
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Epoch cap (overrides the config)
        #[arg(long)]
        max_epochs: Option<usize>,
    },

    /// Score one data split with a checkpoint and print an ACC/F1/AUPR row
    Evaluate {
        /// Checkpoint file written by train
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Which split to score
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Output directory (overrides paths.out_dir)
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },

    /// Rank compounds by predicted probability and flag those at or above
    /// the threshold
    Predict {
        /// Checkpoint file written by train
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Flag compounds whose probability reaches this value
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        /// Score these compound targets instead of the configured file
        /// (for unlabeled compounds)
        #[arg(long, value_name = "FILE")]
        features: Option<PathBuf>,
        /// Output directory (overrides paths.out_dir)
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },

    /// Tabulate per-pathway embedding magnitudes for positive vs negative
    /// compounds
    Report {
        /// Checkpoint file written by train (autoencoder only)
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Comma-separated pathway names (default: all)
        #[arg(long, value_delimiter = ',', value_name = "NAMES")]
        pathways: Option<Vec<String>>,
        /// Output directory (overrides paths.out_dir)
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },

    /// Generate a synthetic planted-signal dataset plus a ready-to-run
    /// config file
    Synth {
        /// Directory for the generated dataset and its config file
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = SynthSpec::default().n_nodes)]
        nodes: usize,
        #[arg(long, default_value_t = SynthSpec::default().extra_edges)]
        extra_edges: usize,
        #[arg(long, default_value_t = SynthSpec::default().n_modules)]
        modules: usize,
        #[arg(long, default_value_t = SynthSpec::default().module_size_min)]
        module_size_min: usize,
        #[arg(long, default_value_t = SynthSpec::default().module_size_max)]
        module_size_max: usize,
        #[arg(long, default_value_t = SynthSpec::default().n_compounds)]
        compounds: usize,
        #[arg(long, default_value_t = SynthSpec::default().targets_per_compound)]
        targets_per_compound: usize,
        #[arg(long, default_value_t = SynthSpec::default().positive_ratio)]
        positive_ratio: f64,
        #[arg(long, default_value_t = SynthSpec::default().signal_alpha)]
        signal_alpha: f64,
        #[arg(long, default_value_t = SynthSpec::default().noise_rate)]
        noise_rate: f64,
        #[arg(long, default_value_t = SynthSpec::default().seed)]
        seed: u64,
    },
}

fn config_for(cli: &Cli, extra: &[String]) -> Result<RunConfig> {
    let mut overrides = cli.overrides.clone();
    overrides.extend_from_slice(extra);
    load_run_config(cli.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Diffuse => cmd_diffuse(&config_for(&cli, &[])?),
        Cmd::Train {
            model,
            seed,
            deterministic,
            out_dir,
            max_epochs,
        } => {
            let mut extra = Vec::new();
            if let Some(s) = seed {
                extra.push(format!("seed={s}"));
            }
            if *deterministic {
                extra.push("train.deterministic=true".to_string());
            }
            if let Some(d) = out_dir {
                extra.push(format!("paths.out_dir={:?}", d.display().to_string()));
            }
            if let Some(e) = max_epochs {
                extra.push(format!("train.max_epochs={e}"));
            }
            let kind = match model {
                ModelArg::Gaa => ModelKind::Gaa,
                ModelArg::Baseline => ModelKind::Baseline,
            };
            cmd_train(&config_for(&cli, &extra)?, kind).map(|_| ())
        }
        Cmd::Evaluate {
            checkpoint,
            split,
            out_dir,
        } => {
            let extra = out_dir_override(out_dir);
            let choice = match split {
                SplitArg::Train => SplitChoice::Train,
                SplitArg::Val => SplitChoice::Val,
                SplitArg::Test => SplitChoice::Test,
            };
            cmd_evaluate(&config_for(&cli, &extra)?, checkpoint, choice).map(|_| ())
        }
        Cmd::Predict {
            checkpoint,
            threshold,
            features,
            out_dir,
        } => {
            let extra = out_dir_override(out_dir);
            cmd_predict(
                &config_for(&cli, &extra)?,
                checkpoint,
                *threshold,
                features.as_deref(),
            )
            .map(|_| ())
        }
        Cmd::Report {
            checkpoint,
            pathways,
            out_dir,
        } => {
            let extra = out_dir_override(out_dir);
            cmd_report(&config_for(&cli, &extra)?, checkpoint, pathways.as_deref()).map(|_| ())
        }
        Cmd::Synth {
            out_dir,
            nodes,
            extra_edges,
            modules,
            module_size_min,
            module_size_max,
            compounds,
            targets_per_compound,
            positive_ratio,
            signal_alpha,
            noise_rate,
            seed,
        } => {
            let spec = SynthSpec {
                n_nodes: *nodes,
                extra_edges: *extra_edges,
                n_modules: *modules,
                module_size_min: *module_size_min,
                module_size_max: *module_size_max,
                n_compounds: *compounds,
                targets_per_compound: *targets_per_compound,
                positive_ratio: *positive_ratio,
                signal_alpha: *signal_alpha,
                noise_rate: *noise_rate,
                seed: *seed,
            };
            cmd_synth(&spec, out_dir).map(|_| ())
        }
    }
}

fn out_dir_override(out_dir: &Option<PathBuf>) -> Vec<String> {
    match out_dir {
        Some(d) => vec![format!("paths.out_dir={:?}", d.display().to_string())],
        None => Vec::new(),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
