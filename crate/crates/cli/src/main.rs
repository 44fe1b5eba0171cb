//! Operator command line: synthesize traffic, train models, classify
//! captures, serve the REST API, and benchmark throughput.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use mondeo::datagen::{
    gen_benign, gen_infected, gen_labeled_dataset, gen_mixed_capture, load_wordlist, TrafficProfile,
};
use mondeo::dga::{BigramModel, DgaThresholds, DEFAULT_CALIBRATION_QUANTILES, DEFAULT_SMOOTHING};
use mondeo::forest::{
    evaluate, split_train_test, train_forest, ForestModel, ForestParams, LabeledDataset,
};
use mondeo::ingest::{
    create_writer, read_labeled_file, read_records_file, write_jsonl, write_labeled_jsonl,
};
use mondeo::lists::{load_list_file, ListKind};
use mondeo::metrics::format_report_table;
use mondeo::pipeline::{Pipeline, PipelineConfig, PipelineStats};
use mondeo::rate::RateConfig;
use mondeo::record::extract_features;
use mondeo::verdict::FinalVerdict;
use mondeo::SuffixRules;
use mondeo_service::ServiceConfig;

#[derive(Parser)]
#[command(
    name = "mondeo",
    version,
    about = "Multistage DNS botnet-detection pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the forest and DGA models from a labeled dataset.
    Train(TrainArgs),
    /// Classify a capture file and report per-phase statistics.
    Classify(ClassifyArgs),
    /// Synthesize benign, infected, or mixed traffic.
    Synth(SynthArgs),
    /// Run the REST service.
    Serve(ServeArgs),
    /// Replay a capture repeatedly and report throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled JSON Lines dataset (records plus a `label` field).
    #[arg(long)]
    dataset: PathBuf,
    /// Where to write the forest model.
    #[arg(long)]
    out_forest: PathBuf,
    /// Where to write the DGA model.
    #[arg(long)]
    out_dga: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    n_trees: usize,
    #[arg(long, default_value_t = 16)]
    max_depth: usize,
    #[arg(long, default_value_t = 2)]
    min_samples_leaf: usize,
    /// Fraction of rows used for training; the rest evaluates the model.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Capture file: JSON Lines or CSV (`.gz` accepted).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    forest: PathBuf,
    #[arg(long)]
    dga: PathBuf,
    #[arg(long)]
    whitelist: Option<PathBuf>,
    #[arg(long)]
    blacklist: Option<PathBuf>,
    /// Feedback loop; with list files given, updated lists are written back.
    #[arg(long, value_enum, default_value = "off")]
    feedback: OnOff,
    /// Per-phase stats CSV output.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-record verdicts as JSON Lines.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = mondeo::rate::DEFAULT_DELTA_F)]
    delta_f: f64,
    #[arg(long, default_value_t = mondeo::rate::DEFAULT_K)]
    k: u32,
    #[arg(long, default_value_t = mondeo::dga::DEFAULT_LOWER)]
    lower: f64,
    #[arg(long, default_value_t = mondeo::dga::DEFAULT_UPPER)]
    upper: f64,
    /// Remote DGA scorer endpoint; the builtin model is the fallback.
    #[arg(long)]
    remote_url: Option<String>,
    #[arg(long, default_value_t = mondeo::dga::DEFAULT_REMOTE_TIMEOUT_MS)]
    remote_timeout_ms: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    Benign,
    Infected,
    Mixed,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; `.gz` compresses.
    #[arg(long)]
    out: PathBuf,
    /// Custom benign wordlist (defaults to the embedded list).
    #[arg(long)]
    wordlist: Option<PathBuf>,
    /// Include the label field on benign/infected streams too.
    #[arg(long, default_value_t = false)]
    labeled: bool,
    /// Emit a mixed capture in timestamp order instead of shuffled rows.
    #[arg(long, default_value_t = false)]
    time_ordered: bool,
    #[arg(long, default_value_t = 100)]
    queries_per_burst: usize,
    #[arg(long, default_value_t = 0.01)]
    intra_burst_gap: f64,
    #[arg(long, default_value_t = 5.0)]
    inter_burst_gap: f64,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config file; `MONDEO_*` environment variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    forest: PathBuf,
    #[arg(long)]
    dga: PathBuf,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: u64,
}

enum CliError {
    Data(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Data(m) | CliError::Internal(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (e.g. `mondeo bench | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Classify(args) => run_classify(args),
        Command::Synth(args) => run_synth(args),
        Command::Serve(args) => run_serve(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    if !(args.train_fraction > 0.0 && args.train_fraction < 1.0) {
        return Err(CliError::Data(format!(
            "train fraction must be in (0, 1), got {}",
            args.train_fraction
        )));
    }
    let (rows, skipped) = read_labeled_file(&args.dataset).map_err(data_err)?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} unparseable dataset rows");
    }
    if rows.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no usable rows",
            args.dataset.display()
        )));
    }

    // The DGA model learns from benign traffic only.
    let rules = SuffixRules::default();
    let benign_domains: Vec<&str> = rows
        .iter()
        .filter(|(r, l)| *l == 0 && r.query_name.is_some())
        .map(|(r, _)| r.query_name.as_deref().unwrap())
        .collect();
    match BigramModel::train(
        &benign_domains,
        &rules,
        DEFAULT_SMOOTHING,
        DEFAULT_CALIBRATION_QUANTILES,
    ) {
        Ok(model) => {
            model.save_file(&args.out_dga).map_err(data_err)?;
            println!("wrote DGA model to {}", args.out_dga.display());
        }
        Err(e) => eprintln!(
            "warning: DGA model not trained ({e}); {} not written",
            args.out_dga.display()
        ),
    }

    let labeled = LabeledDataset::new(
        rows.iter()
            .map(|(r, l)| (extract_features(r), *l))
            .collect(),
        args.dataset.display().to_string(),
    );
    let (train, test) =
        split_train_test(&labeled, args.train_fraction, args.seed).map_err(data_err)?;
    let params = ForestParams {
        n_trees: args.n_trees,
        max_depth: args.max_depth,
        min_samples_leaf: args.min_samples_leaf,
        seed: args.seed,
    };
    let model = train_forest(&train, &params).map_err(data_err)?;
    if model.single_class_warning {
        eprintln!("warning: training labels contain a single class; predictions are constant");
    }
    model.save_file(&args.out_forest).map_err(data_err)?;
    println!("wrote forest model to {}", args.out_forest.display());

    let report = evaluate(&model, &test).map_err(data_err)?;
    println!();
    print!("{}", format_report_table("RandomForest", &report));
    Ok(())
}

struct LoadedModels {
    forest: ForestModel,
    dga: BigramModel,
}

fn load_models(forest: &Path, dga: &Path) -> Result<LoadedModels, CliError> {
    Ok(LoadedModels {
        forest: ForestModel::load_file(forest).map_err(data_err)?,
        dga: BigramModel::load_file(dga).map_err(data_err)?,
    })
}

fn run_classify(args: ClassifyArgs) -> Result<(), CliError> {
    let models = load_models(&args.forest, &args.dga)?;
    let rate = RateConfig::new(args.delta_f, args.k).map_err(data_err)?;
    let thresholds = DgaThresholds::new(args.lower, args.upper).map_err(data_err)?;
    let feedback = args.feedback == OnOff::On;

    let pipeline = Pipeline::new(PipelineConfig {
        rules: SuffixRules::default(),
        rate,
        thresholds,
        feedback_enabled: feedback,
        allow_feedback_whitelist: false,
        dga_model: Some(models.dga),
        forest: Some(models.forest),
        remote_url: args.remote_url.clone(),
        remote_timeout: Duration::from_millis(args.remote_timeout_ms),
    });
    install_lists(
        &pipeline,
        args.whitelist.as_deref(),
        args.blacklist.as_deref(),
    )?;

    let (records, skipped) = read_records_file(&args.input).map_err(data_err)?;
    let (classifications, mut stats) = pipeline.process_records(&records);
    stats.records_skipped += skipped;

    if let Some(path) = &args.report {
        std::fs::write(path, stats.to_csv()).map_err(data_err)?;
    }
    if let Some(path) = &args.output {
        let mut writer = create_writer(path).map_err(data_err)?;
        for c in &classifications {
            serde_json::to_writer(&mut writer, c).map_err(data_err)?;
            writer.write_all(b"\n").map_err(data_err)?;
        }
    }
    // Feedback-updated lists persist via their files.
    if feedback {
        for (kind, path) in [
            (ListKind::Whitelist, args.whitelist.as_deref()),
            (ListKind::Blacklist, args.blacklist.as_deref()),
        ] {
            if let Some(path) = path {
                save_snapshot(&pipeline, kind, path).map_err(data_err)?;
            }
        }
    }

    let benign = classifications
        .iter()
        .filter(|c| c.verdict == FinalVerdict::Benign)
        .count();
    let infected = classifications.len() - benign;
    println!(
        "classified {} packets: {} benign, {} infected ({} skipped)",
        classifications.len(),
        benign,
        infected,
        stats.records_skipped
    );
    print_phase_summary(&stats);
    Ok(())
}

fn save_snapshot(pipeline: &Pipeline, kind: ListKind, path: &Path) -> std::io::Result<()> {
    let (entries, _) = pipeline.lists().snapshot(kind);
    let mut content = String::new();
    for entry in entries {
        content.push_str(&entry);
        content.push('\n');
    }
    std::fs::write(path, content)
}

fn install_lists(
    pipeline: &Pipeline,
    whitelist: Option<&Path>,
    blacklist: Option<&Path>,
) -> Result<(), CliError> {
    let rules = pipeline.rules().clone();
    for (kind, path) in [
        (ListKind::Whitelist, whitelist),
        (ListKind::Blacklist, blacklist),
    ] {
        if let Some(path) = path {
            if !path.exists() {
                // First feedback run: the file gets created on write-back.
                eprintln!(
                    "warning: {}: not found, starting with an empty {kind}",
                    path.display()
                );
                continue;
            }
            let (list, report) = load_list_file(path, kind, &rules).map_err(data_err)?;
            if report.skipped > 0 {
                eprintln!(
                    "warning: {}: skipped {} bad lines",
                    path.display(),
                    report.skipped
                );
            }
            pipeline.lists().install(list);
        }
    }
    Ok(())
}

fn print_phase_summary(stats: &PipelineStats) {
    println!("phase,processed,exits_benign,exits_infected,median_ms,p95_ms");
    for p in &stats.phases {
        println!(
            "{},{},{},{},{:.6},{:.6}",
            p.phase,
            p.processed,
            p.exits_benign,
            p.exits_infected,
            p.latency.median_ms,
            p.latency.p95_ms
        );
    }
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let wordlist = match &args.wordlist {
        Some(path) => load_wordlist(path).map_err(data_err)?,
        None => Vec::new(),
    };
    let mut writer = create_writer(&args.out).map_err(data_err)?;

    match args.kind {
        SynthKind::Mixed => {
            let rows = if args.time_ordered {
                gen_mixed_capture(args.n, args.seed, wordlist).map_err(data_err)?
            } else {
                gen_labeled_dataset(args.n, args.seed, wordlist).map_err(data_err)?
            };
            write_labeled_jsonl(&mut writer, &rows).map_err(data_err)?;
            println!(
                "wrote {} labeled rows to {}",
                rows.len(),
                args.out.display()
            );
        }
        SynthKind::Benign | SynthKind::Infected => {
            let mut profile = match args.kind {
                SynthKind::Benign => {
                    let mut p = TrafficProfile::benign(args.n, args.seed);
                    if !wordlist.is_empty() {
                        p.wordlist = wordlist;
                    }
                    p
                }
                _ => TrafficProfile::infected(args.n, args.seed),
            };
            profile.burst.queries_per_burst = args.queries_per_burst;
            profile.burst.intra_burst_gap_secs = args.intra_burst_gap;
            profile.burst.inter_burst_gap_secs = args.inter_burst_gap;
            let records = match args.kind {
                SynthKind::Benign => gen_benign(&profile).map_err(data_err)?,
                _ => gen_infected(&profile).map_err(data_err)?,
            };
            if args.labeled {
                let label = u8::from(args.kind == SynthKind::Infected);
                let rows: Vec<_> = records.into_iter().map(|r| (r, label)).collect();
                write_labeled_jsonl(&mut writer, &rows).map_err(data_err)?;
                println!(
                    "wrote {} labeled rows to {}",
                    rows.len(),
                    args.out.display()
                );
            } else {
                write_jsonl(&mut writer, &records).map_err(data_err)?;
                println!("wrote {} records to {}", records.len(), args.out.display());
            }
        }
    }
    writer.flush().map_err(data_err)?;
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => ServiceConfig::from_file(path).map_err(data_err)?,
        None => ServiceConfig::default(),
    };
    cfg.apply_env().map_err(data_err)?;
    mondeo_service::run_blocking(cfg).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_bench(args: BenchArgs) -> Result<(), CliError> {
    let models = load_models(&args.forest, &args.dga)?;
    let (records, skipped) = read_records_file(&args.input).map_err(data_err)?;
    if records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no usable records",
            args.input.display()
        )));
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} unparseable records");
    }

    println!("iteration,packets,elapsed_s,packets_per_s");
    let mut throughputs = Vec::with_capacity(args.iterations as usize);
    let mut last_stats: Option<PipelineStats> = None;
    for iteration in 1..=args.iterations {
        // Fresh state per iteration so every replay does identical work.
        let pipeline = Pipeline::new(PipelineConfig {
            dga_model: Some(models.dga.clone()),
            forest: Some(models.forest.clone()),
            ..Default::default()
        });
        let started = Instant::now();
        let (classifications, stats) = pipeline.process_records(&records);
        let elapsed = started.elapsed().as_secs_f64();
        let rate = classifications.len() as f64 / elapsed;
        println!(
            "{iteration},{},{elapsed:.4},{rate:.0}",
            classifications.len()
        );
        throughputs.push(rate);
        last_stats = Some(stats);
    }
    let mean = throughputs.iter().sum::<f64>() / throughputs.len() as f64;
    let min = throughputs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = throughputs
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "aggregate,{},mean={mean:.0},min={min:.0},max={max:.0}",
        records.len()
    );

    if let Some(stats) = last_stats {
        println!();
        print_phase_summary(&stats);
    }
    Ok(())
}
