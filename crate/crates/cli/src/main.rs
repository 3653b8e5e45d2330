//! `infocomp` command-line interface.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "infocomp", version, about = "Compare, group and fuse probabilistic representation spaces")]
struct Cli {
    /// Seed for every random choice (sampling, Monte Carlo draws, initialization).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for fingerprint and pairwise kernels.
    #[arg(long, global = true, env = "INFOCOMP_THREADS")]
    threads: Option<usize>,

    /// Base directory for outputs; relative `--out` paths resolve against it.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Format of reports printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fingerprint a posterior set, whole or per channel.
    Fingerprint(FingerprintArgs),
    /// Compare two fingerprints (or posterior sets, or clusterings with --exact).
    Compare(CompareArgs),
    /// Compare two posterior sets with Monte Carlo information estimates.
    CompareMc(CompareMcArgs),
    /// Filter, compare and group the channels of a model ensemble.
    Channels(ChannelsArgs),
    /// Fuse an ensemble of fingerprints into a new posterior set.
    Fuse(FuseArgs),
    /// Generate synthetic posterior sets.
    Synth(SynthArgs),
    /// Continuity ratio of a posterior set along a circular order.
    Continuity(ContinuityArgs),
    /// Validate an artifact and report its information content.
    Info(InfoArgs),
}

#[derive(Args, Debug)]
struct FingerprintArgs {
    /// Posterior set directory.
    #[arg(long)]
    input: PathBuf,
    /// Output directory (one subdirectory per channel with --dims).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `all` or a comma-separated list of channel indices; omitted means the full space.
    #[arg(long)]
    dims: Option<String>,
    /// Data points drawn without replacement; the whole set if it is smaller.
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    /// Payload encoding.
    #[arg(long, value_enum, default_value_t = DtypeArg::F32le)]
    dtype: DtypeArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DtypeArg {
    F32le,
    F64le,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MeasureArg {
    Nmi,
    Vi,
    Cka,
    Mi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EstimatorArg {
    Kt,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = MeasureArg::Nmi)]
    measure: MeasureArg,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Kt)]
    estimator: EstimatorArg,
    /// Inputs are label (`sample_id,label`) or membership CSVs; compute exact information.
    #[arg(long)]
    exact: bool,
    /// Symmetrize fingerprints that fail validation instead of rejecting them.
    #[arg(long)]
    repair: bool,
}

#[derive(Args, Debug)]
struct CompareMcArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = MeasureArg::Nmi)]
    measure: MeasureArg,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    agg_fraction: f64,
}

#[derive(Args, Debug)]
struct ChannelsArgs {
    /// Directory of posterior sets, one subdirectory per model.
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    threshold_bits: f64,
    #[arg(long, default_value_t = 20)]
    min_samples: usize,
    #[arg(long, default_value_t = 0.05)]
    xi: f64,
    /// `sample_id,<factor>,...` CSV of ground-truth labels.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// `ref,group` CSV of planted channel groups; adds group agreement to the report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Nmi,
    ExpNegVi,
    Mi,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// Directory of fingerprints, one subdirectory per member.
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Nmi)]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 3.0)]
    lr: f64,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 2)]
    latent_dim: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repair: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Nine,
    So2,
    Planted,
    Separated,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Data points (nine, so2, planted).
    #[arg(long)]
    n: Option<usize>,
    /// Weak learners (so2).
    #[arg(long, default_value_t = 16)]
    members: usize,
    /// Posterior width of the weak learners (so2).
    #[arg(long, default_value_t = infocomp::bench::SO2_DEFAULT_NOISE)]
    noise: f64,
    /// Models (planted).
    #[arg(long, default_value_t = 50)]
    models: usize,
    /// Planted groups (planted).
    #[arg(long, default_value_t = 5)]
    groups: usize,
    /// Latent dims per model (planted).
    #[arg(long, default_value_t = 10)]
    dims: usize,
    /// Informative dims per model (planted).
    #[arg(long, default_value_t = 5)]
    informative: usize,
    /// Distinct points (separated).
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Copies of each point (separated).
    #[arg(long, default_value_t = 16)]
    copies: usize,
    /// Latent dimension (separated).
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ContinuityArgs {
    #[arg(long)]
    input: PathBuf,
    /// `sample_id,angle` CSV giving each datum's position on the circle, in radians.
    #[arg(long)]
    order: PathBuf,
}

#[derive(Args, Debug)]
struct InfoArgs {
    /// Fingerprint or posterior set directory.
    #[arg(long)]
    input: PathBuf,
    /// Also estimate by Monte Carlo (posterior sets only).
    #[arg(long)]
    mc: bool,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    agg_fraction: f64,
    #[arg(long)]
    repair: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
