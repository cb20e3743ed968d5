use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calibkit::audit::{dimension_audit, success_vs_calibration_table};
use calibkit::confidence::{ensemble_ablation, trial_samples, EnsembleChoice, TrialAggregation};
use calibkit::io::{self, ParseMode};
use calibkit::metrics::{metric_report, DEFAULT_BINS};
use calibkit::monitor::{fit_and_evaluate, monitor_report, DEFAULT_QUANTILE};
use calibkit::recalibrate::protocol::{run_splits, summarize, Method, SplitProtocol};
use calibkit::recalibrate::{DimSamples, FitConfig, FitMode};
use calibkit::synth::{self, SynthConfig};
use calibkit::temporal::{completion_curve, reliability_at, TemporalAggregation, DEFAULT_WINDOW};
use calibkit::{EpisodeRecord, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Confidence calibration toolkit for token-based robot policies.
#[derive(Parser)]
#[command(name = "calibkit", version)]
struct Cli {
    /// Skip malformed log lines (reported on stderr) instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ECE, Brier and NLL of trial-level confidence.
    Metrics(MetricsArgs),
    /// Calibration against prompt-ensemble size.
    EnsembleAblation(AblationArgs),
    /// Fit a recalibrator and compare methods over random splits.
    Recalibrate(RecalibrateArgs),
    /// Calibration across task completion.
    Temporal(TemporalArgs),
    /// Fit quantile thresholds and evaluate halting.
    Monitor(MonitorArgs),
    /// Generate a synthetic episode log.
    Synth(SynthArgs),
    /// Per-dimension calibration of pre-action confidence.
    Audit(AuditArgs),
    /// Error rate against calibration across logs or tasks.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    PreAction,
    Mean,
    Min,
    Max,
}

impl From<AggArg> for TrialAggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::PreAction => TrialAggregation::PreAction,
            AggArg::Mean => TrialAggregation::Mean,
            AggArg::Min => TrialAggregation::Min,
            AggArg::Max => TrialAggregation::Max,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TemporalAggArg {
    Current,
    Window,
    AvgAll,
}

#[derive(Args)]
struct TemporalAggOpts {
    #[arg(long, value_enum, default_value = "current")]
    agg: TemporalAggArg,
    /// Trailing window length for `--agg window`.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

impl TemporalAggOpts {
    fn get(&self) -> TemporalAggregation {
        match self.agg {
            TemporalAggArg::Current => TemporalAggregation::Current,
            TemporalAggArg::Window => TemporalAggregation::Window(self.window),
            TemporalAggArg::AvgAll => TemporalAggregation::AvgAll,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct MetricsArgs {
    log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, value_enum, default_value = "pre-action")]
    agg: AggArg,
    /// Average confidence over instruction variants.
    #[arg(long)]
    ensemble: bool,
    /// Use only the first k variants (implies --ensemble).
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct AblationArgs {
    log: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10, 20])]
    k_list: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Platt,
    Temperature,
    AwPlatt,
    AwTemp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Joint,
    Independent,
}

#[derive(Args)]
struct RecalibrateArgs {
    log: PathBuf,
    #[arg(long, value_enum, default_value = "platt")]
    method: MethodArg,
    /// Objective for action-wise Platt scaling.
    #[arg(long, value_enum, default_value = "joint")]
    mode: ModeArg,
    /// Share of trials used for fitting in each split.
    #[arg(long, default_value_t = 0.2)]
    split: f64,
    #[arg(long, default_value_t = 1000)]
    splits: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Directory for recalibrator.txt and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TemporalArgs {
    log: PathBuf,
    #[command(flatten)]
    agg: TemporalAggOpts,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 50, 75, 99])]
    pcts: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Directory for curve.csv and reliability_<pct>.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    log: PathBuf,
    #[command(flatten)]
    agg: TemporalAggOpts,
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    quantile: f64,
    /// Judge each episode against thresholds fitted without it.
    #[arg(long)]
    loo: bool,
    /// Evaluate against a saved thresholds.csv instead of fitting.
    #[arg(long, conflicts_with_all = ["loo"])]
    profile: Option<PathBuf>,
    /// Directory for thresholds.csv and decisions.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// JSON generator config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of episodes (overrides the preset or config).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth sidecar file.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    log: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// One group per log, labelled by file stem.
    #[arg(required = true, num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Group episodes by task id instead of by file.
    #[arg(long)]
    by_task: bool,
    #[arg(long, value_enum, default_value = "pre-action")]
    agg: AggArg,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var("CALIBKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| format!("CALIBKIT_THREADS must be a non-negative integer, got `{raw}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn load(path: &Path, lenient: bool) -> Result<Vec<EpisodeRecord>> {
    let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let parsed = io::parse_log(BufReader::new(File::open(path)?), mode)?;
    for e in &parsed.errors {
        eprintln!("skipped: {e}");
    }
    if parsed.episodes.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(parsed.episodes)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn out_dir(dir: &Option<PathBuf>) -> Result<Option<&Path>> {
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    Ok(dir.as_deref())
}

fn metrics(a: MetricsArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let ensemble = EnsembleChoice::from_flags(a.ensemble || a.ensemble_size.is_some(), a.ensemble_size);
    let samples = trial_samples(&episodes, a.agg.into(), ensemble)?;
    let report = metric_report(&samples, a.bins)?;
    println!(
        "n={} bins={} ece1={:.6} ece2={:.6} brier={:.6} nll={:.6}",
        report.n, report.m_bins, report.ece1, report.ece2, report.brier, report.nll
    );
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        match a.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut w, &report).map_err(std::io::Error::from)?;
                writeln!(w)?;
            }
            Format::Csv => io::write_metric_report_csv(&mut w, &report)?,
        }
        w.flush()?;
    }
    Ok(())
}

fn ablation(a: AblationArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let rows = ensemble_ablation(&episodes, &a.k_list, a.trials, a.seed, a.bins)?;
    println!("{:>4} {:>7} {:>10} {:>10} {:>10} {:>10}", "k", "trials", "ece1", "sd_ece1", "brier", "nll");
    for r in &rows {
        println!(
            "{:>4} {:>7} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            r.k, r.trials, r.mean_ece1, r.sd_ece1, r.mean_brier, r.mean_nll
        );
    }
    if let Some(path) = &a.out {
        io::write_ablation_csv(create(path)?, &rows)?;
    }
    Ok(())
}

fn recalibrate(a: RecalibrateArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let data = DimSamples::pre_action(&episodes)?;
    let mode = match a.mode {
        ModeArg::Joint => FitMode::Joint,
        ModeArg::Independent => FitMode::Independent,
    };
    let method = match a.method {
        MethodArg::Platt => Method::Platt,
        MethodArg::Temperature => Method::Temperature,
        MethodArg::AwPlatt => Method::ActionwisePlatt(mode),
        MethodArg::AwTemp => Method::ActionwiseTemperature,
    };
    // Global Platt is always reported as the reference row.
    let mut methods = vec![Method::Platt];
    if method != Method::Platt {
        methods.push(method);
    }
    let protocol = SplitProtocol {
        calibration_fraction: a.split,
        splits: a.splits,
        seed: a.seed,
        bins: a.bins,
        fit: FitConfig::default(),
    };
    let rows = summarize(&run_splits(&data, &methods, &protocol)?);
    let mut fitted = method.fit(&data, &protocol.fit)?;
    fitted.meta.seed = Some(a.seed);

    println!("{} splits, calibration share {}, {} bins", a.splits, a.split, a.bins);
    println!("{:<22} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}", "method", "ece1", "ece2", "brier", "nll", "improved", "converged");
    for r in &rows {
        println!(
            "{:<22} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>9} {:>9}",
            r.method, r.mean_ece1, r.mean_ece2, r.mean_brier, r.mean_nll, r.ece1_improved, r.converged
        );
    }
    println!("fitted {} on all {} trials (converged: {})", method.name(), data.len(), fitted.meta.converged);
    if let Some(dir) = out_dir(&a.out)? {
        fs::write(dir.join("recalibrator.txt"), fitted.to_record())?;
        io::write_split_summary_csv(create(&dir.join("summary.csv"))?, &rows)?;
    }
    Ok(())
}

fn temporal(a: TemporalArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let agg = a.agg.get();
    let curve = completion_curve(&episodes, agg, a.bins)?;
    let diagrams = a
        .pcts
        .iter()
        .map(|&pct| Ok((pct, reliability_at(&episodes, pct, agg, a.bins)?)))
        .collect::<Result<Vec<_>>>()?;
    println!("{:>4} {:>10} {:>10}", "pct", "ece1", "brier");
    for &pct in &a.pcts {
        let p = &curve.points[pct];
        println!("{:>4} {:>10.6} {:>10.6}", pct, p.ece1, p.brier);
    }
    if let Some(dir) = out_dir(&a.out)? {
        io::write_curve_csv(create(&dir.join("curve.csv"))?, &curve)?;
        for (pct, d) in &diagrams {
            io::write_reliability_csv(create(&dir.join(format!("reliability_{pct}.csv")))?, d)?;
        }
    }
    Ok(())
}

fn monitor(a: MonitorArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let agg = a.agg.get();
    let (profile, summary) = match &a.profile {
        Some(path) => {
            let profile = io::read_thresholds_csv(BufReader::new(File::open(path)?))?;
            let summary = monitor_report(&episodes, &profile, agg)?;
            (profile, summary)
        }
        None => fit_and_evaluate(&episodes, a.quantile, agg, a.loo)?,
    };
    let rate = |r: Option<f64>| r.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "halted {} of {} episodes (rate {:.4}); failures halted {}, successes halted {}",
        summary.halted_failed + summary.halted_succeeded,
        episodes.len(),
        summary.halt_rate,
        rate(summary.halt_rate_failures),
        rate(summary.halt_rate_successes)
    );
    println!(
        "halted_failed={} halted_succeeded={} missed_failed={} not_halted_succeeded={}",
        summary.halted_failed, summary.halted_succeeded, summary.missed_failed, summary.not_halted_succeeded
    );
    if let Some(dir) = out_dir(&a.out)? {
        io::write_thresholds_csv(create(&dir.join("thresholds.csv"))?, &profile)?;
        io::write_decisions_csv(create(&dir.join("decisions.csv"))?, &summary.decisions)?;
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match (&a.preset, &a.config) {
        (Some(name), _) => synth::preset(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::BadConfig(e.to_string()))?
        }
        (None, None) => unreachable!("clap requires one of --preset/--config"),
    };
    if let Some(n) = a.n {
        cfg.n_episodes = n;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let out = synth::generate(&cfg)?;
    let mut w = create(&a.out)?;
    io::write_log(&mut w, &out.episodes)?;
    w.flush()?;
    if let Some(path) = &a.truth {
        let mut w = create(path)?;
        io::write_ground_truth(&mut w, &out.truth)?;
        w.flush()?;
    }
    let successes = out.episodes.iter().filter(|e| e.outcome).count();
    println!("wrote {} episodes ({} successes) to {}", out.episodes.len(), successes, a.out.display());
    Ok(())
}

fn audit(a: AuditArgs, lenient: bool) -> Result<()> {
    let episodes = load(&a.log, lenient)?;
    let audit = dimension_audit(&DimSamples::pre_action(&episodes)?, a.bins)?;
    println!("{:>4} {:>10} {:>10} {:>10}", "dim", "ece1", "brier", "nll");
    for r in &audit.per_dim {
        println!("{:>4} {:>10.6} {:>10.6} {:>10.6}", r.dim_index, r.ece1, r.brier, r.nll);
    }
    println!("ece1 spread (max/min): {:.3}", audit.ece1_spread());
    if let Some(path) = &a.out {
        io::write_audit_csv(create(path)?, &audit)?;
    }
    Ok(())
}

fn compare(a: CompareArgs, lenient: bool) -> Result<()> {
    let agg: TrialAggregation = a.agg.into();
    let mut groups = Vec::new();
    for path in &a.logs {
        let episodes = load(path, lenient)?;
        if a.by_task {
            let mut by_task: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
            for ep in episodes {
                by_task.entry(ep.task_id.clone()).or_default().push(ep);
            }
            for (task, eps) in by_task {
                groups.push((task, trial_samples(&eps, agg, EnsembleChoice::Original)?));
            }
        } else {
            let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            groups.push((label, trial_samples(&episodes, agg, EnsembleChoice::Original)?));
        }
    }
    let table = success_vs_calibration_table(&groups, a.bins)?;
    println!("{:<20} {:>10} {:>10} {:>10} {:>10} {:>8}", "group", "error_rate", "ece1", "brier", "nll", "n");
    for r in &table.rows {
        println!("{:<20} {:>10.4} {:>10.6} {:>10.6} {:>10.6} {:>8}", r.label, r.error_rate, r.ece1, r.brier, r.nll, r.n);
    }
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let s = &table.spearman;
    println!(
        "spearman vs error rate: ece1 {} ece2 {} brier {} nll {}",
        show(s.ece1),
        show(s.ece2),
        show(s.brier),
        show(s.nll)
    );
    if let Some(path) = &a.out {
        io::write_compare_csv(create(path)?, &table)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let lenient = cli.lenient;
    match cli.command {
        Command::Metrics(a) => metrics(a, lenient),
        Command::EnsembleAblation(a) => ablation(a, lenient),
        Command::Recalibrate(a) => recalibrate(a, lenient),
        Command::Temporal(a) => temporal(a, lenient),
        Command::Monitor(a) => monitor(a, lenient),
        Command::Synth(a) => synth_cmd(a),
        Command::Audit(a) => audit(a, lenient),
        Command::Compare(a) => compare(a, lenient),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
