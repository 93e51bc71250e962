use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context as _, Result};
use log::{info, warn};

use dohdetect::autoencoder::{
    train_vae, Architecture, SavedModel, TrainConfig, TrainedModel, VaeModel, REFERENCE_ARCHITECTURES,
};
use dohdetect::config::KeyValueConfig;
use dohdetect::detect::{
    classify, roc_threshold, sigma_threshold, write_roc_csv, write_verdict_csv, RocRule, VerdictRow,
};
use dohdetect::eval::{
    run_grid, sweep_architectures, write_heatmap_csv, write_report_csv, write_summary_csv,
    write_sweep_csv, Dataset, DetectorKind, ExperimentConfig, SyntheticGrid, ThresholdPolicy,
};
use dohdetect::flowcore::{FlowLabel, Scaler, ServerTag};
use dohdetect::ingest::{
    assemble_flows, filter_by_server, load_flow_records, load_mapped_csv, load_packet_csv,
    store_flow_csv, store_packet_csv, ColumnMapping, FlowRecord, ServerAllowList,
};
use dohdetect::synth::TrafficProfile;

use crate::{DataArgs, EvalArgs, IngestArgs, ScoreArgs, SweepArgs, SynthArgs, TrainArgs};

/// Bad invocation or configuration detected by the CLI itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for configuration problems (bad flags, files, formats), 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<dohdetect::Error>() {
            return match err {
                dohdetect::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                other if other.is_config_error() => 2,
                _ => 1,
            };
        }
    }
    1
}

pub struct Context {
    seed: Option<u64>,
    resolved: OnceLock<u64>,
    config: Option<PathBuf>,
    jobs: Option<usize>,
}

impl Context {
    pub fn new(seed: Option<u64>, config: Option<PathBuf>, jobs: Option<usize>) -> Self {
        Context {
            seed,
            resolved: OnceLock::new(),
            config,
            jobs,
        }
    }

    /// The master seed; a time-derived one is drawn and logged on first use
    /// when none was given.
    fn seed(&self) -> u64 {
        *self.resolved.get_or_init(|| {
            self.seed.unwrap_or_else(|| {
                let s = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map_or(0, |d| d.as_nanos() as u64);
                info!("no --seed given, using seed {s}");
                s
            })
        })
    }

    fn config(&self) -> Result<KeyValueConfig> {
        match &self.config {
            Some(p) => {
                check_input(p)?;
                Ok(KeyValueConfig::load(p)?)
            }
            None => Ok(KeyValueConfig::default()),
        }
    }

    fn jobs(&self) -> Result<usize> {
        match self.jobs {
            Some(0) => Err(usage("--jobs must be at least 1")),
            Some(n) => Ok(n),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }
}

fn check_input(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(usage(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn parse_label(s: &str) -> Result<FlowLabel> {
    s.parse().map_err(|_| {
        let valid: Vec<&str> = FlowLabel::ALL.iter().map(|l| l.as_str()).collect();
        usage(format!("unknown profile {s:?}; valid profiles: {}", valid.join(", ")))
    })
}

fn parse_server(s: &str) -> Result<ServerTag> {
    s.parse().map_err(|_| {
        let valid: Vec<&str> = ServerTag::KNOWN.iter().map(|t| t.as_str()).collect();
        usage(format!("unknown server {s:?}; valid servers: {}", valid.join(", ")))
    })
}

fn parse_list<T>(s: &str, parse: fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse(p.trim())).collect()
}

/// Top-level keys plus the `<label>.` section of a profile config.
fn profile_overrides(cfg: &KeyValueConfig, label: FlowLabel) -> KeyValueConfig {
    let mut out = KeyValueConfig::default();
    for (k, v) in cfg.iter().filter(|(k, _)| !k.contains('.')) {
        out.set(k, v);
    }
    for (k, v) in cfg.section(label.as_str()).iter() {
        out.set(k, v);
    }
    out
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    let label = parse_label(&args.profile)?;
    let server = parse_server(&args.server)?;
    check_output(&args.out)?;
    if let Some(p) = &args.packets {
        check_output(p)?;
    }
    let mut profile = TrafficProfile::for_label(label, server, ctx.seed());
    let overrides = profile_overrides(&ctx.config()?, label);
    if !overrides.is_empty() {
        profile.apply_config(&overrides)?;
    }
    match &args.packets {
        Some(packets) => {
            let flows = profile.generate(args.count)?;
            let records: Vec<FlowRecord> = flows.iter().map(FlowRecord::from_flow).collect();
            store_flow_csv(&args.out, &records)?;
            store_packet_csv(packets, &flows)?;
            info!("wrote {} packets to {}", flows.iter().map(|f| f.packets().len()).sum::<usize>(), packets.display());
        }
        None => store_flow_csv(&args.out, &profile.generate_records(args.count)?)?,
    }
    info!("wrote {} {} flows to {}", args.count, label.as_str(), args.out.display());
    Ok(())
}

pub fn ingest(_ctx: &Context, args: IngestArgs) -> Result<()> {
    check_output(&args.out)?;
    let allow = match &args.allow {
        Some(p) => {
            check_input(p)?;
            ServerAllowList::load(p)?
        }
        None => ServerAllowList::new(),
    };
    let records = if let Some(packets) = &args.packets {
        check_input(packets)?;
        let label = parse_label(&args.label)?;
        let loaded = load_packet_csv(packets, &allow)?;
        let assembled = assemble_flows(loaded.packets, label);
        let total = assembled.flows.len();
        let flows = filter_by_server(assembled.flows, &allow);
        info!(
            "{} flows assembled, {} kept, {} malformed packet rows, {} invalid packets",
            total,
            flows.len(),
            loaded.skipped,
            assembled.skipped
        );
        flows.iter().map(FlowRecord::from_flow).collect::<Vec<_>>()
    } else {
        let (mapped, mapping) = (args.mapped.as_ref().expect("clap"), args.mapping.as_ref().expect("clap"));
        check_input(mapped)?;
        check_input(mapping)?;
        if args.allow.is_some() {
            warn!("--allow is ignored for mapped flow tables");
        }
        let mapping = ColumnMapping::load(mapping)?;
        load_mapped_csv(mapped, &mapping)?
    };
    store_flow_csv(&args.out, &records)?;
    info!("wrote {} flows to {}", records.len(), args.out.display());
    Ok(())
}

fn train_config(ctx: &Context, cfg: &KeyValueConfig, args: &TrainArgs) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        epochs: args.epochs.or(cfg.get_parsed("epochs")?).unwrap_or(d.epochs),
        batch_size: args.batch_size.or(cfg.get_parsed("batch_size")?).unwrap_or(d.batch_size),
        learning_rate: args
            .learning_rate
            .or(cfg.get_parsed("learning_rate")?)
            .unwrap_or(d.learning_rate),
        batch_norm: !args.no_batch_norm && cfg.get_parsed("batch_norm")?.unwrap_or(true),
        seed: ctx.seed(),
    })
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    check_input(&args.input)?;
    check_output(&args.model)?;
    let cfg = ctx.config()?;
    let arch: Architecture = args.arch.parse()?;
    let config = train_config(ctx, &cfg, &args)?;
    let records = load_flow_records(&args.input)?;
    if records.is_empty() {
        return Err(usage(format!("{} contains no flows", args.input.display())));
    }
    let malicious = records.iter().filter(|r| r.label.is_malicious()).count();
    if malicious > 0 {
        warn!("{malicious} of {} training flows are labeled malicious", records.len());
    }
    let raw: Vec<_> = records.iter().map(|r| r.features).collect();
    let model = if args.vae {
        let scaler = Scaler::fit(&raw)?;
        let scaled = scaler.transform_all(&raw);
        let vae = VaeModel::build(arch, args.kl_weight, config.seed, config.batch_norm)?;
        SavedModel::Vae(train_vae(vae, &scaled, scaler, &config)?)
    } else {
        SavedModel::Autoencoder(TrainedModel::fit(arch, &raw, &config)?)
    };
    if let Some(stats) = model.training_stats() {
        info!(
            "trained on {} flows: final loss {:.6}, training MSE {:.6} ± {:.6}",
            raw.len(),
            stats.epoch_losses.last().copied().unwrap_or(f64::NAN),
            stats.mse_mean,
            stats.mse_std
        );
    }
    model.save(&args.model)?;
    info!("model written to {}", args.model.display());
    Ok(())
}

pub fn score(_ctx: &Context, args: ScoreArgs) -> Result<()> {
    check_input(&args.model)?;
    check_input(&args.input)?;
    check_output(&args.out)?;
    if let Some(p) = &args.roc_out {
        check_output(p)?;
    }
    let model = SavedModel::load(&args.model)?;
    let records = load_flow_records(&args.input)?;
    if records.is_empty() {
        return Err(usage(format!("{} contains no flows", args.input.display())));
    }
    let scaler = model
        .scaler()
        .ok_or_else(|| usage("model file carries no feature scaler"))?;
    let raw: Vec<_> = records.iter().map(|r| r.features).collect();
    let scores = model.score_scaled(&scaler.transform_all(&raw))?;

    let threshold = if args.roc {
        let rule: RocRule = args.roc_rule.parse()?;
        let labels: Vec<bool> = records.iter().map(|r| r.label.is_malicious()).collect();
        let sel = roc_threshold(&scores, &labels, rule)?;
        if let Some(p) = &args.roc_out {
            let mut w = create(p)?;
            write_roc_csv(&mut w, &sel.points)?;
            w.flush()?;
        }
        info!("ROC threshold {} (TPR {:.4}, FPR {:.4})", sel.threshold.value, sel.point().tpr, sel.point().fpr);
        sel.threshold
    } else {
        let s = args.sigma.unwrap_or(3);
        let stats = model
            .training_stats()
            .ok_or_else(|| usage("model has no training statistics; use --roc"))?;
        let t = sigma_threshold(stats.mse_mean, stats.mse_std, s)?;
        info!("threshold {} = {} + {s} * {}", t.value, stats.mse_mean, stats.mse_std);
        t
    };

    let rows: Vec<VerdictRow> = records
        .iter()
        .zip(&scores)
        .map(|(r, &s)| VerdictRow {
            conn_key: r.conn_key.clone(),
            score: s,
            verdict: classify(s, &threshold),
        })
        .collect();
    let flagged = rows.iter().filter(|r| r.verdict.is_malicious()).count();
    let mut w = create(&args.out)?;
    write_verdict_csv(&mut w, &rows)?;
    w.flush()?;
    info!("{flagged} of {} flows flagged malicious", rows.len());
    Ok(())
}

const DATA_KEYS: [&str; 10] = [
    "folds",
    "ratio",
    "threshold",
    "epochs",
    "benign_per_server",
    "pool_per_malware",
    "servers",
    "malware",
    "detectors",
    "architecture",
];

fn named_file(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.trim().is_empty() && !path.trim().is_empty() => {
            Ok((name.trim().to_string(), PathBuf::from(path.trim())))
        }
        _ => Err(usage(format!("expected NAME=FILE, got {spec:?}"))),
    }
}

fn load_sets(specs: &[String]) -> Result<Vec<Dataset>> {
    specs
        .iter()
        .map(|s| {
            let (name, path) = named_file(s)?;
            check_input(&path)?;
            let features = load_flow_records(&path)?.into_iter().map(|r| r.features).collect();
            Ok(Dataset::new(name, features))
        })
        .collect()
}

/// Experiment settings from the config file, overridden by flags, and the
/// datasets they run on.
fn prepare(ctx: &Context, data: &DataArgs) -> Result<(KeyValueConfig, ExperimentConfig, Vec<Dataset>, Vec<Dataset>)> {
    let cfg = ctx.config()?;
    if let Some((k, _)) = cfg.iter().find(|(k, _)| !k.contains('.') && !DATA_KEYS.contains(k)) {
        return Err(usage(format!("unknown config key {k:?}")));
    }
    let mut exp = ExperimentConfig {
        seed: ctx.seed(),
        ..ExperimentConfig::default()
    };
    exp.folds = data.folds.or(cfg.get_parsed("folds")?).unwrap_or(exp.folds);
    exp.malicious_ratio = data.ratio.or(cfg.get_parsed("ratio")?).unwrap_or(exp.malicious_ratio);
    if let Some(t) = data.threshold.as_deref().or(cfg.get("threshold")) {
        exp.threshold = t.parse::<ThresholdPolicy>()?;
    }
    if let Some(e) = data.epochs.or(cfg.get_parsed("epochs")?) {
        exp.settings.train.epochs = e;
    }

    let (servers, malware) = if data.benign.is_empty() && data.malicious.is_empty() {
        let mut grid = SyntheticGrid {
            seed: ctx.seed(),
            ..SyntheticGrid::default()
        };
        grid.benign_per_server = data
            .benign_per_server
            .or(cfg.get_parsed("benign_per_server")?)
            .unwrap_or(grid.benign_per_server);
        grid.pool_per_malware = data.pool.or(cfg.get_parsed("pool_per_malware")?).unwrap_or(grid.pool_per_malware);
        if let Some(s) = data.servers.as_deref().or(cfg.get("servers")) {
            grid.servers = parse_list(s, parse_server)?;
        }
        if let Some(m) = data.malware.as_deref().or(cfg.get("malware")) {
            grid.malware = parse_list(m, parse_label)?;
            if grid.malware.contains(&FlowLabel::Benign) {
                return Err(usage("benign is not a malware type"));
            }
        }
        for (k, v) in cfg.iter().filter(|(k, _)| k.contains('.')) {
            grid.overrides.set(k, v);
        }
        // surface bad overrides before any work starts
        for label in FlowLabel::ALL {
            grid.profile(label, ServerTag::Cloudflare, 0)?;
        }
        info!(
            "generating {} benign sources x {} flows and {} malware pools x {} flows",
            grid.servers.len(),
            grid.benign_per_server,
            grid.malware.len(),
            grid.pool_per_malware
        );
        grid.generate()?
    } else {
        if data.benign.is_empty() || data.malicious.is_empty() {
            return Err(usage("--benign and --malicious must be given together"));
        }
        (load_sets(&data.benign)?, load_sets(&data.malicious)?)
    };
    Ok((cfg, exp, servers, malware))
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let jobs = ctx.jobs()?;
    let (cfg, mut exp, servers, malware) = prepare(ctx, &args.data)?;
    let detectors = match args.detectors.as_deref().or(cfg.get("detectors")) {
        Some(list) => parse_list(list, |s| Ok(s.parse::<DetectorKind>()?))?,
        None => DetectorKind::ALL.to_vec(),
    };
    if detectors.is_empty() {
        return Err(usage("no detectors selected"));
    }
    if let Some(a) = args.arch.as_deref().or(cfg.get("architecture")) {
        let arch: Architecture = a.parse()?;
        exp.settings.vae_architecture = arch.clone();
        exp.settings.architecture = arch;
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    let reports = run_grid(&servers, &malware, &detectors, &exp, jobs)?;
    for &d in &detectors {
        let mine: Vec<_> = reports.iter().filter(|r| r.detector == d).cloned().collect();
        let mut w = create(&args.out_dir.join(format!("report_{d}.csv")))?;
        write_report_csv(&mut w, &mine)?;
        w.flush()?;
        let mut w = create(&args.out_dir.join(format!("heatmap_{d}.csv")))?;
        write_heatmap_csv(&mut w, &mine)?;
        w.flush()?;
    }
    let mut w = create(&args.out_dir.join("summary.csv"))?;
    write_summary_csv(&mut w, &reports)?;
    w.flush()?;
    info!("{} reports written to {}", reports.len(), args.out_dir.display());
    Ok(())
}

fn parse_archs(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';')
        .filter(|a| !a.trim().is_empty())
        .map(|a| {
            a.trim()
                .trim_matches(|c| c == '[' || c == ']')
                .split(',')
                .map(|n| n.trim().parse::<usize>().map_err(|_| usage(format!("bad architecture {a:?}"))))
                .collect()
        })
        .collect()
}

pub fn sweep(ctx: &Context, args: SweepArgs) -> Result<()> {
    let jobs = ctx.jobs()?;
    check_output(&args.out)?;
    let candidates = match &args.archs {
        Some(s) => parse_archs(s)?,
        None => REFERENCE_ARCHITECTURES.iter().map(|a| a.to_vec()).collect(),
    };
    if candidates.is_empty() {
        return Err(usage("architecture grid is empty"));
    }
    let (_, exp, servers, malware) = prepare(ctx, &args.data)?;
    let rows = sweep_architectures(&candidates, &servers, &malware, &exp, jobs)?;
    let mut w = create(&args.out)?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    for (rank, r) in rows.iter().enumerate() {
        info!("{:>2}. [{}] F1 {:.5} ± {:.5}", rank + 1, r.architecture, r.summary.f1.median, r.summary.f1.std);
    }
    Ok(())
}
