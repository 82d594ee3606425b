//! Command-line harness for the toolkit's seeded experiments. Each
//! subcommand builds one experiment configuration, runs it, prints summary
//! lines to stdout and warnings to stderr, and writes machine-readable
//! reports when an output path is given.
//!
//! Exit codes: 0 success, 2 invalid configuration or flags, 3 missing or
//! malformed input file, 4 computation failure. TI_NUM_THREADS caps the
//! worker-thread count (default: hardware parallelism).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tinit::expt::{
    AssignmentInit, EdgeEvalConfig, ExperimentConfig, GaussStatsConfig, OracleKind, Precision,
    SchemeKind, SpConsistencyConfig, SpLossConfig, TiRecoveryConfig, TiStabilityConfig,
};
use tinit::sploss::DistanceKind;
use tinit::stack::ActivationKind;
use tinit::Error;

#[derive(Parser)]
#[command(
    name = "tinit",
    version,
    about = "Seeded experiments: identity-preserving initialization, superpixel consistency, clustering loss, edge metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Init-rate and identity-recovery comparison across initialization schemes.
    #[command(name = "ti-recovery")]
    TiRecovery(TiRecoveryArgs),
    /// Identity error of a transparent stack across scaled input ranges.
    #[command(name = "ti-stability")]
    TiStability(TiStabilityArgs),
    /// Column statistics of a seeded Gaussian matrix.
    #[command(name = "gauss-stats")]
    GaussStats(GaussStatsArgs),
    /// Enforce superpixel logit consistency over stored fixtures.
    #[command(name = "sp-consistency")]
    SpConsistency(SpConsistencyArgs),
    /// Superpixel clustering loss and its gradient check.
    #[command(name = "sp-loss")]
    SpLoss(SpLossArgs),
    /// Edge precision/recall/F-measure/performance-ratio curves.
    #[command(name = "edge-eval")]
    EdgeEval(EdgeEvalArgs),
    /// Check an experiment configuration file without running it.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    #[value(name = "32")]
    F32,
    #[value(name = "64")]
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    Ours,
    Random,
    Xavier,
    Net2net,
}

impl From<SchemeArg> for SchemeKind {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Ours => SchemeKind::Ours,
            SchemeArg::Random => SchemeKind::Random,
            SchemeArg::Xavier => SchemeKind::Xavier,
            SchemeArg::Net2net => SchemeKind::Net2Net,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistanceArg {
    L2,
    CrossEntropy,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::L2 => DistanceKind::L2,
            DistanceArg::CrossEntropy => DistanceKind::CrossEntropy,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AssignmentArg {
    Uniform,
    Random,
    OneHot,
}

impl From<AssignmentArg> for AssignmentInit {
    fn from(a: AssignmentArg) -> Self {
        match a {
            AssignmentArg::Uniform => AssignmentInit::Uniform,
            AssignmentArg::Random => AssignmentInit::Random,
            AssignmentArg::OneHot => AssignmentInit::OneHot,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleArg {
    Dense,
}

/// Accepts `relu`, `soft_relu`, `log_sigmoid`, and `leaky_relu` with an
/// optional slope in parentheses, e.g. `leaky_relu(0.1)` (default 0.01).
fn parse_activation(s: &str) -> Result<ActivationKind, String> {
    s.parse().map_err(|e: tinit::Error| e.to_string())
}

#[derive(Args)]
struct TiRecoveryArgs {
    /// Layer widths of the chain, first = last.
    #[arg(long, value_delimiter = ',', default_value = "42,64,64,42")]
    dims: Vec<usize>,
    #[arg(long, value_parser = parse_activation, default_value = "relu")]
    activation: ActivationKind,
    /// Threshold for init and recovery rates.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Evaluation batch rows.
    #[arg(long, default_value_t = 16384)]
    batch: usize,
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    input_lo: f64,
    #[arg(long, default_value_t = 10.0)]
    input_hi: f64,
    #[arg(long, default_value_t = 1e-4)]
    bias_variance: f64,
    #[arg(long, value_enum, default_value = "32")]
    precision: PrecisionArg,
    /// Schemes to evaluate, in report order.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "ours,random,xavier,net2net"
    )]
    schemes: Vec<SchemeArg>,
    /// Square chain for net2net (default: first width repeated).
    #[arg(long, value_delimiter = ',')]
    net2net_dims: Option<Vec<usize>>,
    /// CSV report destination.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TiStabilityArgs {
    #[arg(long, value_delimiter = ',', default_value = "42,64,64,42")]
    dims: Vec<usize>,
    #[arg(long, value_parser = parse_activation, default_value = "relu")]
    activation: ActivationKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    bias_variance: f64,
    /// Input ranges [-s, s] per scale s.
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    scales: Vec<f64>,
    /// Rows sampled per range.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, value_enum, default_value = "32")]
    precision: PrecisionArg,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GaussStatsArgs {
    #[arg(long, default_value_t = 4096)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    /// Entry variance (default 1/rows).
    #[arg(long)]
    variance: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON report destination.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SpConsistencyArgs {
    /// Logit tensor (LGTS file).
    #[arg(long)]
    logits: PathBuf,
    /// Superpixel map (SPXL file).
    #[arg(long)]
    spmap: PathBuf,
    /// Independent reference to compare against.
    #[arg(long, value_enum)]
    oracle: Option<OracleArg>,
    #[arg(long, value_enum, default_value = "32")]
    precision: PrecisionArg,
    /// JSON report destination.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Destination for the consistent logits (LGTS file).
    #[arg(long)]
    output_logits: Option<PathBuf>,
}

#[derive(Args)]
struct SpLossArgs {
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Superpixel grid spacing in pixels.
    #[arg(long, default_value_t = 4)]
    grid_interval: usize,
    /// Property channels per pixel.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Coordinate-term weight m.
    #[arg(long, default_value_t = 1.0)]
    m_weight: f64,
    #[arg(long, value_enum, default_value = "l2")]
    distance: DistanceArg,
    #[arg(long, value_enum, default_value = "random")]
    assignment: AssignmentArg,
    /// Pixel property matrix (binary64 MTRX, (height*width) x k).
    #[arg(long, requires = "coords")]
    properties: Option<PathBuf>,
    /// Pixel coordinate matrix (binary64 MTRX, (height*width) x 2).
    #[arg(long, requires = "properties")]
    coords: Option<PathBuf>,
    /// Verify the analytic gradient against central differences.
    #[arg(long)]
    grad_check: bool,
    #[arg(long, default_value_t = 1e-5)]
    fd_step: f64,
    /// JSON report destination.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EdgeEvalArgs {
    /// Predicted label map (SPXL file).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map (SPXL file).
    #[arg(long)]
    gt: PathBuf,
    /// Pixel tolerances to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    tolerances: Vec<usize>,
    /// CSV report destination.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Experiment configuration as JSON.
    #[arg(long)]
    config: PathBuf,
}

fn build_config(command: Command) -> Result<ExperimentConfig, ValidateArgs> {
    match command {
        Command::TiRecovery(a) => Ok(ExperimentConfig::TiRecovery(TiRecoveryConfig {
            dims: a.dims,
            activation: a.activation,
            epsilon: a.epsilon,
            seed: a.seed,
            batch: a.batch,
            input_lo: a.input_lo,
            input_hi: a.input_hi,
            bias_variance: a.bias_variance,
            precision: a.precision.into(),
            schemes: a.schemes.into_iter().map(Into::into).collect(),
            net2net_dims: a.net2net_dims,
            output: a.output,
        })),
        Command::TiStability(a) => Ok(ExperimentConfig::TiStability(TiStabilityConfig {
            dims: a.dims,
            activation: a.activation,
            seed: a.seed,
            bias_variance: a.bias_variance,
            scales: a.scales,
            samples: a.samples,
            precision: a.precision.into(),
            output: a.output,
        })),
        Command::GaussStats(a) => Ok(ExperimentConfig::GaussStats(GaussStatsConfig {
            rows: a.rows,
            cols: a.cols,
            variance: a.variance,
            seed: a.seed,
            output: a.output,
        })),
        Command::SpConsistency(a) => Ok(ExperimentConfig::SpConsistency(SpConsistencyConfig {
            logits: a.logits,
            spmap: a.spmap,
            oracle: a.oracle.map(|OracleArg::Dense| OracleKind::Dense),
            precision: a.precision.into(),
            output: a.output,
            output_logits: a.output_logits,
        })),
        Command::SpLoss(a) => Ok(ExperimentConfig::SpLoss(SpLossConfig {
            height: a.height,
            width: a.width,
            grid_interval: a.grid_interval,
            k: a.k,
            seed: a.seed,
            m_weight: a.m_weight,
            distance: a.distance.into(),
            assignment: a.assignment.into(),
            properties: a.properties,
            coords: a.coords,
            grad_check: a.grad_check,
            fd_step: a.fd_step,
            output: a.output,
        })),
        Command::EdgeEval(a) => Ok(ExperimentConfig::EdgeEval(EdgeEvalConfig {
            pred: a.pred,
            gt: a.gt,
            tolerances: a.tolerances,
            output: a.output,
        })),
        Command::Validate(a) => Err(a),
    }
}

/// Distinct exit codes per failure family: 2 config, 3 input files, 4
/// computation.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::BadFormat { .. } => 3,
        Error::InvalidArgument { .. } | Error::InvalidChain { .. } => 2,
        _ => 4,
    }
}

/// Applies the TI_NUM_THREADS cap before any parallel work starts.
fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("TI_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("TI_NUM_THREADS={raw:?} is not a thread count"))?;
    if n == 0 {
        return Err("TI_NUM_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn run_validate(args: &ValidateArgs) -> u8 {
    let bytes = match std::fs::read(&args.config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return 3;
        }
    };
    let config: ExperimentConfig = match serde_json::from_slice(&bytes) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: not an experiment config: {e}", args.config.display());
            return 2;
        }
    };
    let diagnostics = config.validate();
    if diagnostics.is_empty() {
        println!("ok");
        0
    } else {
        for d in &diagnostics {
            println!("{d}");
        }
        2
    }
}

fn main() -> ExitCode {
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let config = match build_config(cli.command) {
        Ok(c) => c,
        Err(validate_args) => return ExitCode::from(run_validate(&validate_args)),
    };
    match config.run() {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            for line in &summary.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
