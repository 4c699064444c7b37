use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stormpipe_core::pipeline::{Pipeline, PipelineConfig, Stage};
use stormpipe_core::synth::{generate_synthetic_corpus, SynthSpec};
use stormpipe_core::Error;

/// Media storm detection pipeline.
#[derive(Parser)]
#[command(name = "stormpipe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize the raw corpus.
    Ingest(RunArgs),
    /// Build the filtered entity index.
    Index(RunArgs),
    /// Generate blocked candidate pairs.
    Candidates(RunArgs),
    /// Score candidates and keep similarity edges.
    Score(RunArgs),
    /// Group articles into story clusters.
    Cluster(RunArgs),
    /// Identify media storms among the clusters.
    Storms(RunArgs),
    /// Summary statistics, duration ECDFs and averaged series.
    Stats(RunArgs),
    /// Topic skew of storm coverage.
    Topics(RunArgs),
    /// Topic share around storm onsets.
    Gatekeeping(RunArgs),
    /// Lead-lag influence graphs.
    Influence(RunArgs),
    /// Every stage in order.
    All(RunArgs),
    /// Write a synthetic corpus with planted storms and ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for mock embeddings and the bootstrap.
    #[arg(long)]
    seed: Option<u64>,
    /// Config override, `key=value`; repeatable. Dotted keys reach tables.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Re-run stages even when up to date.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Benchmark,
    Chauvin,
    Small,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Built-in spec.
    #[arg(long, value_enum, conflicts_with = "spec")]
    preset: Option<Preset>,
    /// JSON spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_override(raw: &str) -> Result<(String, String), String> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {raw:?}"))?;
    Ok((key.trim().to_owned(), value.trim().to_owned()))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::MissingArtifact { .. } | Error::CorruptArtifact { .. } => 3,
        Error::Config(_)
        | Error::Malformed { .. }
        | Error::DuplicateId { .. }
        | Error::DateOutOfRange { .. }
        | Error::InvertedRange { .. }
        | Error::UnknownOutlet { .. }
        | Error::BadMagic { .. }
        | Error::DimMismatch { .. }
        | Error::Truncated { .. }
        | Error::IdCountMismatch { .. }
        | Error::ZeroNorm { .. }
        | Error::MissingTopics { .. }
        | Error::TopicLength { .. }
        | Error::Infeasible(_) => 2,
        _ => 1,
    }
}

fn run_stage(stage: Stage, args: RunArgs) -> Result<(), Error> {
    let mut overrides = args.overrides;
    if let Some(threads) = args.threads {
        overrides.push(("threads".into(), threads.to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let config = PipelineConfig::load(&args.config, &overrides).map_err(|e| match e {
        Error::Io { .. } => Error::Config(e.to_string()),
        e => e,
    })?;
    let pipeline = Pipeline::new(config)?.force(args.force);
    for report in pipeline.run(stage)? {
        let counts: Vec<String> = report.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!(
            "{:<12} {:<10} {:>8} ms  {}",
            report.stage,
            if report.skipped { "up-to-date" } else { "done" },
            report.wall_time_ms,
            counts.join(" ")
        );
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Error> {
    let mut spec = match (&args.spec, args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(Preset::Benchmark)) => SynthSpec::benchmark(),
        (None, Some(Preset::Chauvin)) => SynthSpec::chauvin(),
        (None, Some(Preset::Small) | None) => SynthSpec::small(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = generate_synthetic_corpus(&spec)?;
    corpus.write(&args.out)?;
    println!(
        "{} articles, {} planted storms, {} near-misses -> {}",
        corpus.articles.len(),
        corpus.truth.storms().count(),
        corpus.truth.near_misses().count(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => run_stage(Stage::Ingest, a),
        Command::Index(a) => run_stage(Stage::Index, a),
        Command::Candidates(a) => run_stage(Stage::Candidates, a),
        Command::Score(a) => run_stage(Stage::Score, a),
        Command::Cluster(a) => run_stage(Stage::Cluster, a),
        Command::Storms(a) => run_stage(Stage::Storms, a),
        Command::Stats(a) => run_stage(Stage::Stats, a),
        Command::Topics(a) => run_stage(Stage::Topics, a),
        Command::Gatekeeping(a) => run_stage(Stage::Gatekeeping, a),
        Command::Influence(a) => run_stage(Stage::Influence, a),
        Command::All(a) => run_stage(Stage::All, a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
