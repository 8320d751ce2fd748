use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sacc_core::room_sim::{build_dataset, SimulationProfile, SourceCorpus};
use sacc_core::trainer::{evaluate, train, EvalOptions, Frontend, TrainConfig};
use sacc_core::{
    analyze, load_checkpoint, read_wav, DatasetManifest, Error, FeaturePipeline, SaccParams,
};

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Self-attention channel combinator: simulate, train, compare, analyze.
#[derive(Parser, Debug)]
#[command(name = "sacc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a reverberant multichannel dataset and its manifest.
    Simulate(SimulateArgs),
    /// Train combinator parameters on a manifest.
    Train(TrainArgs),
    /// Evaluate frontends on a manifest and emit the metric table.
    Compare(CompareArgs),
    /// Write intermediate combinator outputs for one utterance.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n_scenes: usize,
    /// TOML simulation profile; defaults apply to omitted keys.
    #[arg(long)]
    room_profile: Option<PathBuf>,
    /// Directory of noise WAVs; synthetic noise when omitted.
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    /// Directory of clean speech WAVs; synthetic speech when omitted.
    #[arg(long)]
    speech_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// TOML training configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Where to write the JSON training report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FrontendKind {
    Sdm,
    Rdm,
    Mvdr,
    Das,
    Sacc,
    CleanRef,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Trained parameters; required when `sacc` is evaluated.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "sdm,rdm,mvdr,das,sacc")]
    frontends: Vec<FrontendKind>,
    #[arg(long, default_value_t = 0)]
    rdm_seed: u64,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    format: TableFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Multichannel WAV with at least two channels.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, conflicts_with = "init_seed")]
    checkpoint: Option<PathBuf>,
    /// Analyze freshly initialized parameters instead of a checkpoint.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Core(Error),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Unsupported { .. } => EXIT_IO,
        Error::Numeric { .. } | Error::Divergence { .. } => EXIT_NUMERIC,
        Error::TooShort { .. }
        | Error::DegenerateUtterance { .. }
        | Error::Contract(_)
        | Error::Config(_)
        | Error::Geometry(_)
        | Error::Parse { .. } => EXIT_USAGE,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let profile = match &args.room_profile {
        Some(p) => SimulationProfile::load(p)?,
        None => SimulationProfile::default(),
    };
    let corpus = SourceCorpus::from_dirs(args.speech_dir.as_deref(), args.noise_dir.as_deref())?;
    let manifest = build_dataset(args.n_scenes, args.seed, &profile, &corpus, &args.out)?;
    println!("wrote {} scenes to {}", manifest.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<(), Failure> {
    let cfg = match &args.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let manifest = DatasetManifest::load(&args.manifest)?;
    let pipeline = FeaturePipeline::standard();
    let init = SaccParams::init(args.init_seed, pipeline.num_bins(), cfg.attention_dim);
    if let Some(dir) = args.out_checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let (_, report) = train(&manifest, &cfg, &init, &pipeline, Some(&args.out_checkpoint))?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train {:.6}  {} {:.6}",
            e.epoch, e.train_loss, report.monitored, e.monitor_loss
        );
    }
    println!(
        "steps {}  first loss {:.6}  last loss {:.6}  reduction {:.1}%  best epoch {}",
        report.step_losses.len(),
        report.step_losses.first().copied().unwrap_or(f64::NAN),
        report.step_losses.last().copied().unwrap_or(f64::NAN),
        100.0 * report.loss_reduction().unwrap_or(0.0),
        report.best_epoch
    );
    if let Some(path) = &args.report {
        write_text(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let mut frontends = Vec::new();
    for kind in &args.frontends {
        frontends.push(match kind {
            FrontendKind::Sdm => Frontend::Sdm,
            FrontendKind::Rdm => Frontend::Rdm { seed: args.rdm_seed },
            FrontendKind::Mvdr => Frontend::Mvdr,
            FrontendKind::Das => Frontend::Das,
            FrontendKind::CleanRef => Frontend::CleanRef,
            FrontendKind::Sacc => {
                let path = args
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| Failure::Usage("the sacc frontend needs --checkpoint".into()))?;
                if !path.is_file() {
                    return Err(Failure::Usage(format!("checkpoint {} not found", path.display())));
                }
                Frontend::Sacc {
                    label: "sacc".into(),
                    params: load_checkpoint(path)?,
                }
            }
        });
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    let opts = EvalOptions {
        max_frames: args.max_frames,
    };
    let table = evaluate(&manifest, &frontends, &FeaturePipeline::standard(), &opts)?;
    for s in &table.skipped {
        eprintln!("skipped {}: {}", s.scene_id, s.reason);
    }
    let text = match args.format {
        TableFormat::Csv => table.to_csv(),
        TableFormat::Json => table.to_json(),
    };
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn analyze_cmd(args: AnalyzeArgs) -> Result<(), Failure> {
    let wave = read_wav(&args.input)?;
    if wave.num_channels() < 2 {
        return Err(Failure::Usage(format!(
            "{} has a single channel; analysis needs at least 2",
            args.input.display()
        )));
    }
    let pipeline = FeaturePipeline::standard();
    let params = match (&args.checkpoint, args.init_seed) {
        (Some(path), _) => load_checkpoint(path)?,
        (None, seed) => SaccParams::init(
            seed.unwrap_or(0),
            pipeline.num_bins(),
            sacc_core::combinator::DEFAULT_ATTENTION_DIM,
        ),
    };
    let bundle = analyze(&wave, &params, &pipeline)?;
    let files = bundle.write(&args.out)?;
    println!("wrote {} files to {}", files.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Analyze(a) => analyze_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
