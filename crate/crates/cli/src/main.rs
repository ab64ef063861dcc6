//! `gnia`: prepare graphs, train surrogates and generators, run attacks
//! and scenario evaluations, and render rate tables.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "gnia", version, about = "Single-node injection evasion attacks on GNNs")]
struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, env = "GNIA_DATA_DIR", global = true)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a stochastic block model graph with a seeded split.
    Synth(SynthArgs),
    /// Load a graph, keep its largest connected component and split it.
    Prep(PrepArgs),
    /// Train a GCN or APPNP model on the training split.
    TrainSurrogate(TrainSurrogateArgs),
    /// Attack explicit targets and emit one JSON record per attack.
    Attack {
        #[arg(value_enum)]
        method: Method,
        #[command(flatten)]
        args: AttackArgs,
    },
    /// Train or apply the generator.
    #[command(subcommand)]
    Gnia(GniaCommand),
    /// Run a scenario over the test split and write records plus a manifest.
    Eval(EvalArgs),
    /// Train the full generator and its three ablations, then evaluate each.
    Ablate(AblateArgs),
    /// Render a markdown table from run manifests.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum GniaCommand {
    /// Train on the training split with early stopping on validation.
    Train(GniaTrainArgs),
    /// Single forward pass per target with a trained generator.
    Infer(AttackArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Opti,
    Gnia,
    Random,
    Mostattr,
    Prefedge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Gcn,
    Appnp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScenarioArg {
    Single,
    Multi,
    BlackBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    Full,
    NoAttr,
    NoEdge,
    NoJoint,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    features: usize,
    /// Binary attributes instead of Gaussian ones.
    #[arg(long)]
    discrete: bool,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output graph directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PrepArgs {
    /// Input graph directory.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output graph directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainSurrogateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "gcn")]
    model: ModelArg,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Surrogate checkpoint the attacker differentiates through.
    #[arg(long)]
    model: PathBuf,
    /// Generator checkpoint, required by the gnia method.
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Comma separated node ids; defaults to the test split.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<usize>,
    /// Attack all targets as one group instead of one by one.
    #[arg(long)]
    group: bool,
    #[arg(long, default_value_t = 1)]
    delta: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// OPTI iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Records file (JSON lines); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct GniaTrainOpts {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 2000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 100)]
    patience: usize,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 512)]
    width: usize,
    /// Pick lr and tau from the grids by validation rate.
    #[arg(long)]
    tune: bool,
}

#[derive(Args, Debug)]
struct GniaTrainArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    scenario: ScenarioArg,
    #[arg(long, value_enum, default_value = "full")]
    ablation: AblationArg,
    #[command(flatten)]
    opts: GniaTrainOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output checkpoint; the manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Surrogate checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Victim checkpoint; defaults to the surrogate for white-box runs.
    #[arg(long)]
    victim: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    scenario: ScenarioArg,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Fixed edge budget; multi-target runs use the degree rule when
    /// omitted.
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for records, manifest and access log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "single")]
    scenario: ScenarioArg,
    #[command(flatten)]
    opts: GniaTrainOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Manifest files or directories holding `*.manifest.json`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Markdown output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
