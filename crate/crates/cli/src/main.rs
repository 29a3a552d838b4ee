use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

#[derive(Parser)]
#[command(
    name = "tol",
    version,
    about = "Point-and-read screen reading over hierarchical layout trees"
)]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Layout tree construction.
    #[command(subcommand)]
    Tree(TreeCmd),
    /// View-hierarchy dataset extraction.
    #[command(subcommand)]
    Ashl(AshlCmd),
    /// Describe the region under one point.
    Read(ReadArgs),
    /// Cycle-consistency evaluation of screen-reader predictions.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Benchmark utilities.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Verify navigation-agent trajectories step by step.
    Verify(VerifyArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum TreeCmd {
    Build(TreeBuildArgs),
}

#[derive(Args)]
pub struct TreeBuildArgs {
    #[arg(long)]
    pub detections: PathBuf,
    /// Screen size as WxH; required when the detection file has none.
    #[arg(long, value_parser = parse_size)]
    pub screen: Option<(u32, u32)>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum AshlCmd {
    Extract(AshlExtractArgs),
}

#[derive(Args)]
pub struct AshlExtractArgs {
    /// One or more view-hierarchy JSON dumps.
    #[arg(long, required = true, num_args = 1..)]
    pub hierarchy: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub include_unmerged_multileaf: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Fixture,
    Http,
}

#[derive(Args)]
pub struct ReadArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Pixel point as X,Y.
    #[arg(long, value_parser = parse_pair::<i64>, conflicts_with = "norm_point", required_unless_present = "norm_point")]
    pub point: Option<(i64, i64)>,
    /// Normalized point as X,Y in [0, 1].
    #[arg(long, value_parser = parse_pair::<f64>)]
    pub norm_point: Option<(f64, f64)>,
    #[arg(long, conflicts_with = "hierarchy")]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Overrides the configured model backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Canned replies for the fixture backend.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AuxiliaryArg {
    /// Oracle judges that read ground truth embedded in oracle predictions.
    Mock,
    /// Uniformly random answers.
    Random,
    Http,
}

#[derive(Subcommand)]
enum EvalCmd {
    Content(EvalArgs),
    Layout(EvalArgs),
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    pub auxiliary: AuxiliaryArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    /// Also write a per-domain CSV summary.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Write a generated benchmark (PNG screenshots plus manifest).
    Synth(SynthArgs),
    /// Write predictions carrying their own ground truth, for `--auxiliary mock`.
    OraclePredictions(OraclePredArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 40)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct OraclePredArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Tol,
    Confidence,
    Direct,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeArg {
    /// Flags a region already seen three times in the history.
    Mock,
    Http,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long, value_enum, default_value = "tol")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "mock")]
    pub judge: JudgeArg,
    /// Describer backend for the `tol` method.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Overrides the confidence baseline threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    /// Overrides `server.bind`.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<(T, T), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let p = |v: &str| {
        v.trim()
            .parse::<T>()
            .map_err(|_| format!("bad coordinate {v:?}"))
    };
    Ok((p(a)?, p(b)?))
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let p = |v: &str| {
        v.trim()
            .parse::<u32>()
            .map_err(|_| format!("bad dimension {v:?}"))
    };
    Ok((p(w)?, p(h)?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = commands::load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Tree(TreeCmd::Build(a)) => commands::tree_build(&cfg, a),
        Command::Ashl(AshlCmd::Extract(a)) => commands::ashl_extract(cfg, a),
        Command::Read(a) => commands::read(cfg, a),
        Command::Eval(EvalCmd::Content(a)) => {
            commands::eval(cfg, a, tol_core::eval::Metric::Content)
        }
        Command::Eval(EvalCmd::Layout(a)) => commands::eval(cfg, a, tol_core::eval::Metric::Layout),
        Command::Bench(BenchCmd::Synth(a)) => commands::bench_synth(a),
        Command::Bench(BenchCmd::OraclePredictions(a)) => commands::bench_oracle(a),
        Command::Verify(a) => commands::verify(cfg, a),
        Command::Serve(a) => commands::serve(cfg, cli.config, a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", render_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}

/// Joins the error chain, skipping causes already embedded in their parent's message.
fn render_chain(error: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}
