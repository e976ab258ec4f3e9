//! `tabgraph`: synthesize tables, train the two-branch model, score it, and
//! run the lambda / width / ablation sweeps.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tabgraph::model::{ArchConfig, BranchMask, TrainConfig};
use tabgraph::nn::StepDecay;
use tabgraph::pairgen::PairGenConfig;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NAN: u8 = 4;
pub const EXIT_DATA: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "tabgraph",
    version,
    about = "Table structure recognition and cell type classification"
)]
#[command(after_help = "Set TABGRAPH_THREADS to cap the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct PairArgs {
    /// Nearest neighbours per cell when generating candidate pairs
    #[arg(long, default_value_t = 20)]
    pub m: usize,
}

impl PairArgs {
    pub fn config(&self) -> Result<PairGenConfig, Failure> {
        if self.m == 0 {
            return Err(Failure::new(EXIT_USAGE, "--m must be at least 1"));
        }
        Ok(PairGenConfig { m: self.m })
    }
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    /// Cell-type share of the joint loss, in [0, 1]
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    /// Structure branch hidden width
    #[arg(long, default_value_t = 128)]
    pub l1: usize,
    /// Text feature width
    #[arg(long, default_value_t = 128)]
    pub l2: usize,
    /// Cell-image feature width
    #[arg(long, default_value_t = 128)]
    pub l3: usize,
    /// Coordinate feature width
    #[arg(long, default_value_t = 32)]
    pub l4: usize,
    /// Hashed text vector dimension
    #[arg(long, default_value_t = 64)]
    pub d_text: usize,
    /// Output channels of each embedding convolution
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Cell-type branches to use: any of text,image,coord, or all
    #[arg(long, default_value = "all")]
    pub mask: String,
}

impl ModelArgs {
    pub fn config(&self) -> Result<ArchConfig, Failure> {
        let mask = BranchMask::parse(&self.mask).map_err(|e| Failure::new(EXIT_USAGE, format!("--mask: {e}")))?;
        let arch = ArchConfig {
            l1: self.l1,
            l2: self.l2,
            l3: self.l3,
            l4: self.l4,
            d_text: self.d_text,
            lambda: self.lambda,
            channels: self.channels,
            mask,
        };
        arch.validate().map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
        Ok(arch)
    }
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Base learning rate
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Samples per task in every step
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Optimizer steps per epoch [default: one pass over the larger task]
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    /// Multiply the learning rate by --decay-factor every this many epochs
    #[arg(long, default_value_t = 10)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay_factor: f64,
    /// Seed of initialization and batch order
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self) -> Result<TrainConfig, Failure> {
        if self.batch_size == 0 || self.steps_per_epoch == Some(0) {
            return Err(Failure::new(
                EXIT_USAGE,
                "--batch-size and --steps-per-epoch must be at least 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Failure::new(
                EXIT_USAGE,
                "--lr must be positive and --momentum in [0, 1)",
            ));
        }
        Ok(TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            steps_per_epoch: self.steps_per_epoch,
            lr: self.lr,
            momentum: self.momentum,
            decay: StepDecay {
                every: self.decay_every,
                factor: self.decay_factor,
            },
            seed: self.seed,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a 60/20/20 split
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of tables
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Chance of starting a spanning cell
        #[arg(long, default_value_t = 0.1)]
        p_span: f64,
        /// Chance of leaving a data cell blank
        #[arg(long, default_value_t = 0.05)]
        p_empty: f64,
    },
    /// Train on the training split; writes checkpoint.json and loss.csv
    Train {
        /// Dataset directory written by `synth`
        #[arg(long)]
        data: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Score a checkpoint on one split; writes report.json and report.txt
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val or test
        #[arg(long, default_value = "test")]
        split: String,
        /// Output directory [default: print only]
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Label the candidate pairs and cell types of one table
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Table JSON
        #[arg(long)]
        table: PathBuf,
        /// Output table JSON carrying the predicted labels
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Rebuild the logical grid of a table from its associations
    Export {
        /// Table JSON (gold, or written by `predict`)
        #[arg(long)]
        table: PathBuf,
        /// Output logical table JSON
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Train and score once per lambda value; writes a CSV
    SweepLambda {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated lambda values
        #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        values: String,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Train and score once per hidden width (l1 = l2 = l3 = l4); writes a CSV
    SweepWidth {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated widths
        #[arg(long, default_value = "16,32,64,128")]
        values: String,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pairs: PairArgs,
    },
    /// Multi-task run next to single-task and single-branch variants; writes a CSV
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        pairs: PairArgs,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("TABGRAPH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::new(EXIT_USAGE, format!("TABGRAPH_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            out,
            n,
            seed,
            p_span,
            p_empty,
        } => commands::synth(&out, n, seed, p_span, p_empty),
        Command::Train {
            data,
            out,
            model,
            train,
            pairs,
        } => commands::train(&data, &out, &model, &train, &pairs),
        Command::Eval {
            data,
            checkpoint,
            split,
            out,
            pairs,
        } => commands::eval(&data, &checkpoint, &split, out.as_deref(), &pairs),
        Command::Predict {
            checkpoint,
            table,
            out,
            pairs,
        } => commands::predict(&checkpoint, &table, &out, &pairs),
        Command::Export { table, out, pairs } => commands::export(&table, &out, &pairs),
        Command::SweepLambda {
            data,
            out,
            values,
            model,
            train,
            pairs,
        } => commands::sweep_lambda(&data, &out, &values, &model, &train, &pairs),
        Command::SweepWidth {
            data,
            out,
            values,
            model,
            train,
            pairs,
        } => commands::sweep_width(&data, &out, &values, &model, &train, &pairs),
        Command::Ablate {
            data,
            out,
            model,
            train,
            pairs,
        } => commands::ablate(&data, &out, &model, &train, &pairs),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tabgraph: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
