mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Detect malicious DNS-over-HTTPS traffic from flow statistics.
#[derive(Debug, Parser)]
#[command(name = "dohdetect", version)]
struct Cli {
    /// Master seed for all randomness; a time-derived seed is used and logged
    /// when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// key = value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for eval and sweep (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic flows for one traffic profile.
    Synth(SynthArgs),
    /// Build flow feature CSVs from packet captures or external flow tables.
    Ingest(IngestArgs),
    /// Train a detector on benign flows and write a model file.
    Train(TrainArgs),
    /// Score flows with a trained model and write verdicts.
    Score(ScoreArgs),
    /// Run the k-fold evaluation over benign sources and malware types.
    Eval(EvalArgs),
    /// Rank autoencoder architectures by cross-validated F1.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// benign, dga-sc, dga-scrw, dga-mc, dns2tcp, dnscat2 or iodine.
    #[arg(long)]
    profile: String,
    #[arg(long)]
    count: usize,
    /// Resolver the flows go to.
    #[arg(long, default_value = "cloudflare")]
    server: String,
    /// Flow feature CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the individual packets to this CSV.
    #[arg(long, value_name = "FILE")]
    packets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Packet CSV (timestamp,direction,size_bytes,conn_key).
    #[arg(long, conflicts_with = "mapped", required_unless_present = "mapped")]
    packets: Option<PathBuf>,
    /// External flow table read through --mapping.
    #[arg(long, requires = "mapping")]
    mapped: Option<PathBuf>,
    /// Column mapping for --mapped.
    #[arg(long)]
    mapping: Option<PathBuf>,
    /// Resolver allow-list (`ip = server` lines); keeps only flows to these.
    #[arg(long)]
    allow: Option<PathBuf>,
    /// Label given to flows assembled from packets.
    #[arg(long, default_value = "benign")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flow CSV with benign flows.
    #[arg(long)]
    input: PathBuf,
    /// Encoder layer sizes, e.g. 16,62,9.
    #[arg(long, default_value = "16,62,9")]
    arch: String,
    /// Train the variational variant instead.
    #[arg(long)]
    vae: bool,
    #[arg(long, default_value_t = 1.0)]
    kl_weight: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Disable batch normalization.
    #[arg(long)]
    no_batch_norm: bool,
    /// Model file to write.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// Flow CSV to score.
    #[arg(long)]
    input: PathBuf,
    /// Threshold at mean + N standard deviations of the training errors.
    #[arg(long, value_name = "N", conflicts_with = "roc")]
    sigma: Option<u32>,
    /// Pick the threshold from the ROC curve of the labeled input.
    #[arg(long)]
    roc: bool,
    /// ROC selection rule: youden or max-f1.
    #[arg(long, default_value = "youden", requires = "roc")]
    roc_rule: String,
    /// Also write the ROC points (fpr,tpr,threshold).
    #[arg(long, requires = "roc")]
    roc_out: Option<PathBuf>,
    /// Verdict CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// Benign source as NAME=flows.csv (repeatable); synthetic data when
    /// omitted.
    #[arg(long, value_name = "NAME=FILE")]
    benign: Vec<String>,
    /// Malware pool as NAME=flows.csv (repeatable).
    #[arg(long, value_name = "NAME=FILE")]
    malicious: Vec<String>,
    /// Synthetic benign flows per server.
    #[arg(long)]
    benign_per_server: Option<usize>,
    /// Synthetic flows per malware pool.
    #[arg(long)]
    pool: Option<usize>,
    /// Comma-separated synthetic servers (default: all five).
    #[arg(long)]
    servers: Option<String>,
    /// Comma-separated synthetic malware types (default: all six).
    #[arg(long)]
    malware: Option<String>,
    #[arg(long)]
    folds: Option<usize>,
    /// Malicious share of each test set.
    #[arg(long)]
    ratio: Option<f64>,
    /// roc, max-f1 or sigma:N.
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated detectors: ae, vae, iforest, lof.
    #[arg(long)]
    detectors: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    /// Directory for report, summary and heatmap CSVs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Architectures separated by ';', e.g. "16,62,9;16,26,17,9".
    /// Defaults to the ten reference architectures.
    #[arg(long)]
    archs: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ctx = commands::Context::new(cli.seed, cli.config, cli.jobs);
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
