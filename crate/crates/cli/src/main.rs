//! `axdse` command-line front end.

mod commands;
mod hashing;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use axdse_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "axdse",
    version,
    about = "Approximate-multiplier design-space exploration for int8 networks"
)]
struct Cli {
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quantize a float model with a calibration set.
    Quantize(QuantizeArgs),
    /// Exhaustively characterize multipliers against the exact product.
    Characterize(CharacterizeArgs),
    /// Fault-free accuracy of one configuration.
    Eval(EvalArgs),
    /// Statistical fault-injection campaign on one configuration.
    Inject(InjectArgs),
    /// Evaluate every layer mask for every multiplier and extract the Pareto frontier.
    Dse(DseArgs),
    /// Pareto frontier of an existing points CSV.
    Pareto(ParetoArgs),
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    /// Float model manifest (file or directory).
    #[arg(long)]
    pub model: String,
    /// Float calibration dataset.
    #[arg(long)]
    pub data: String,
    /// Float test dataset to quantize with the model's input parameters.
    #[arg(long)]
    pub test_data: Option<String>,
    /// Output directory; receives `model/` and, with --test-data, `data/`.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct CharacterizeArgs {
    /// Builtin name (`exact`, `trunc1`..`trunc7`) or `.mul8s` path.
    #[arg(long = "mult", required = true)]
    pub mults: Vec<String>,
    /// Directory for `<id>.profile.json`; profiles go to stdout without it.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct Target {
    /// Quantized model manifest.
    #[arg(long)]
    pub model: String,
    /// Quantized dataset.
    #[arg(long)]
    pub data: String,
    /// Evaluate only the first N images.
    #[arg(long)]
    pub images: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct PlanArgs {
    /// Master seed; 0 draws one from entropy and records it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed repetition count; otherwise sized from --confidence/--margin.
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long, default_value_t = axdse_core::faultsim::DEFAULT_CONFIDENCE)]
    pub confidence: f64,
    #[arg(long, default_value_t = axdse_core::faultsim::DEFAULT_MARGIN)]
    pub margin: f64,
    /// Pick the smallest grid count that matches the full campaign.
    #[arg(long)]
    pub calibrate: bool,
    /// Comma-separated calibration grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<u64>>,
    /// Calibration tolerance in percentage points.
    #[arg(long, default_value_t = axdse_core::faultsim::DEFAULT_CALIBRATION_TOLERANCE_PP)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long, default_value = "exact")]
    pub mult: String,
    /// Layer mask ('1' approximate, '0' exact, '-' non-computational); all layers by default.
    #[arg(long)]
    pub mask: Option<String>,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long, default_value = "exact")]
    pub mult: String,
    #[arg(long)]
    pub mask: Option<String>,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Directory for campaign.json and campaign.csv.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct DseArgs {
    #[command(flatten)]
    pub target: Target,
    #[arg(long = "mult", required = true)]
    pub mults: Vec<String>,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Comma-separated `field[:min|max]` list.
    #[arg(long, default_value = "area_proxy:min,fi_drop_pct:min")]
    pub objectives: String,
    /// Refuse to enumerate more computational layers than this.
    #[arg(long, default_value_t = axdse_core::dse::DEFAULT_ENUMERATION_CAP)]
    pub cap: usize,
    /// Keep one point per identical objective vector.
    #[arg(long)]
    pub dedup: bool,
    /// Directory for points.csv, pareto.csv and run.json.
    #[arg(long)]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct ParetoArgs {
    #[arg(long)]
    pub points: String,
    #[arg(long, default_value = "area_proxy:min,fi_drop_pct:min")]
    pub objectives: String,
    #[arg(long)]
    pub dedup: bool,
    /// Directory for pareto.csv; the table is printed either way.
    #[arg(long)]
    pub out: Option<String>,
}

fn report(e: &Error) -> ExitCode {
    let line = serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    });
    eprintln!("{line}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ").to_string();
            return report(&Error::Usage(first));
        }
    };

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => return report(&Error::Usage(format!("thread pool: {e}"))),
    };
    let result = pool.install(|| match cli.command {
        Command::Quantize(a) => commands::quantize(&a),
        Command::Characterize(a) => commands::characterize(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Inject(a) => commands::inject(&a),
        Command::Dse(a) => commands::dse(&a),
        Command::Pareto(a) => commands::pareto(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
