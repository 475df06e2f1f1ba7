mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::CliError;

#[derive(Parser, Debug)]
#[command(name = "switchgp", version, about = "Switching Gaussian-process activity monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Sessions {
    /// One series per subject, rows concatenated in file order.
    Subject,
    /// One series per contiguous run of a subject's rows.
    Contiguous,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset root in the UCI HAR layout (`train/`, `test/`).
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Keep only the first N subjects of each split.
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long, value_enum, default_value = "subject")]
    pub sessions: Sessions,
}

#[derive(Args, Debug, Clone)]
pub struct OutArgs {
    /// Directory for the run document and tables; the run document is also printed to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct MonitorArgs {
    /// Monte Carlo samples per selection step.
    #[arg(long, default_value_t = 50)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Group sizes; the catalog holds every feature subset of these sizes.
    #[arg(long, value_delimiter = ',', default_value = "4,7,10")]
    pub groups: Vec<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on the training split and write the model file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Principal components kept; inputs with at most this many features are used as is.
        #[arg(long, default_value_t = 10)]
        components: usize,
        /// Keep PCA scores unscaled instead of whitening them.
        #[arg(long)]
        no_whiten: bool,
        /// Number of states; defaults to the largest training label plus one.
        #[arg(long)]
        states: Option<usize>,
        /// Duration cap override.
        #[arg(long)]
        dmax: Option<usize>,
        /// Report the objective through the FFT approximation.
        #[arg(long)]
        use_fft: bool,
        #[arg(long)]
        freeze_noise: bool,
        #[arg(long, default_value = "3/2")]
        smoothness: String,
        #[arg(long, default_value_t = 500)]
        max_iterations: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Known-state trajectory prediction on the test split.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Observed to held-out ratio.
        #[arg(long, default_value_t = 0.25)]
        ratio: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Online state recognition on the test split with every feature observed.
    Filter {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Duration cap override.
        #[arg(long)]
        dmax: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Adaptive sensor-group selection at one energy cost.
    Monitor {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Energy cost of observing every feature.
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long)]
        dmax: Option<usize>,
        #[command(flatten)]
        monitor: MonitorArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Adaptive monitoring over a grid of energy costs.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Energy costs to evaluate.
        #[arg(
            long = "lambda",
            value_delimiter = ',',
            default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1"
        )]
        lambdas: Vec<f64>,
        #[arg(long)]
        dmax: Option<usize>,
        #[command(flatten)]
        monitor: MonitorArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sample a labeled dataset in the HAR layout from a random model.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        states: usize,
        #[arg(long, default_value_t = 10)]
        features: usize,
        /// Rows per subject.
        #[arg(long, default_value_t = 400)]
        length: usize,
        #[arg(long, default_value_t = 6)]
        train_subjects: usize,
        #[arg(long, default_value_t = 3)]
        test_subjects: usize,
        /// Embed the latent features into this many observed features.
        #[arg(long)]
        ambient_dim: Option<usize>,
        /// Noise standard deviation added after embedding.
        #[arg(long, default_value_t = 0.05)]
        ambient_noise: f64,
        /// Output dataset root; the generating model is written to `model.txt` inside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA on the training split and write the projected dataset.
    Pca {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 10)]
        components: usize,
        #[arg(long)]
        no_whiten: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Time the FFT segment likelihood at several lengths.
    BenchFft {
        #[arg(long, default_value_t = 10)]
        features: usize,
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            data,
            model,
            components,
            no_whiten,
            states,
            dmax,
            use_fft,
            freeze_noise,
            smoothness,
            max_iterations,
            out,
        } => commands::train(commands::TrainOptions {
            data,
            model,
            components,
            whiten: !no_whiten,
            states,
            dmax,
            use_fft,
            freeze_noise,
            smoothness,
            max_iterations,
            out,
        }),
        Command::Predict {
            data,
            model,
            ratio,
            out,
        } => commands::predict(&data, &model, ratio, &out),
        Command::Filter { data, model, dmax, out } => commands::filter(&data, &model, dmax, &out),
        Command::Monitor {
            data,
            model,
            lambda,
            dmax,
            monitor,
            out,
        } => commands::monitor(&data, &model, lambda, dmax, &monitor, &out),
        Command::Sweep {
            data,
            model,
            lambdas,
            dmax,
            monitor,
            out,
        } => commands::sweep(&data, &model, &lambdas, dmax, &monitor, &out),
        Command::Simulate {
            seed,
            states,
            features,
            length,
            train_subjects,
            test_subjects,
            ambient_dim,
            ambient_noise,
            out,
        } => commands::simulate(commands::SimulateOptions {
            seed,
            states,
            features,
            length,
            train_subjects,
            test_subjects,
            ambient_dim,
            ambient_noise,
            out,
        }),
        Command::Pca {
            data,
            components,
            no_whiten,
            out,
        } => commands::pca(&data, components, !no_whiten, &out),
        Command::BenchFft {
            features,
            lengths,
            repeats,
            seed,
            out,
        } => commands::bench_fft(features, &lengths, repeats, seed, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", CliError::new("usage", e.to_string().trim_end()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
