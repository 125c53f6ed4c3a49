use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use narranet::corpus::UnitLevel;
use narranet::pipeline::{Pipeline, PipelineConfig, Stage};
use narranet::sequence::{SimilarityMeasure, SnapshotSigns, Threshold};
use narranet::topics::Weakness;
use narranet::Error;

#[derive(Parser, Debug)]
#[command(name = "narranet", version, about = "Character networks, sentiment and topics from chaptered text")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    text: Option<PathBuf>,
    #[arg(long, global = true)]
    segmentation: Option<PathBuf>,
    #[arg(long, global = true)]
    roster: Option<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_level)]
    unit_level: Option<UnitLevel>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    topic_count: Option<usize>,
    #[arg(long, global = true)]
    n_seeds: Option<usize>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    rel_tol: Option<f64>,
    #[arg(long, global = true)]
    min_df: Option<usize>,
    /// `auto` or a number.
    #[arg(long, global = true, value_parser = parse_threshold)]
    threshold: Option<Threshold>,
    #[arg(long, global = true, value_parser = parse_measure)]
    measure: Option<SimilarityMeasure>,
    /// Sign snapshot edges by global or per-Sequence local cosentiment.
    #[arg(long, global = true, value_parser = parse_snapshot_signs)]
    snapshot_signs: Option<SnapshotSigns>,
    #[arg(long, global = true)]
    stage_window: Option<usize>,
    #[arg(long, global = true)]
    burst_z: Option<f64>,
    /// Restrict phase comparison to the last N chapters of each phase.
    #[arg(long, global = true)]
    phase_window: Option<usize>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true, value_parser = parse_weakness)]
    weakness: Option<Weakness>,

    #[arg(long, short, global = true)]
    quiet: bool,
    #[arg(long, global = true)]
    json_logs: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    Ingest,
    Network,
    Sentiment,
    Sequences,
    Topics,
    Phases,
    Report,
    /// Every stage in order.
    All,
    /// Print the resolved config and its hash.
    Config,
}

fn parse_level(s: &str) -> Result<UnitLevel, String> {
    match s {
        "chapter" => Ok(UnitLevel::Chapter),
        "book" => Ok(UnitLevel::Book),
        "volume" => Ok(UnitLevel::Volume),
        _ => Err(format!("unknown unit level {s}")),
    }
}

fn parse_threshold(s: &str) -> Result<Threshold, String> {
    if s == "auto" {
        Ok(Threshold::Auto)
    } else {
        s.parse().map(Threshold::Value).map_err(|e| format!("{e}"))
    }
}

fn parse_measure(s: &str) -> Result<SimilarityMeasure, String> {
    match s {
        "cosine" => Ok(SimilarityMeasure::Cosine),
        "count-cosine" => Ok(SimilarityMeasure::CountCosine),
        "jaccard" => Ok(SimilarityMeasure::Jaccard),
        _ => Err(format!("unknown measure {s}")),
    }
}

fn parse_snapshot_signs(s: &str) -> Result<SnapshotSigns, String> {
    match s {
        "global" => Ok(SnapshotSigns::Global),
        "local" => Ok(SnapshotSigns::Local),
        _ => Err(format!("unknown snapshot signs {s}")),
    }
}

fn parse_weakness(s: &str) -> Result<Weakness, String> {
    match s {
        "below-median" => Ok(Weakness::BelowMedian),
        "not-top-n" => Ok(Weakness::NotTopN),
        _ => Err(format!("unknown weakness rule {s}")),
    }
}

fn resolve(cli: &Cli) -> narranet::Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $opt:expr) => {
            if let Some(v) = $opt.clone() {
                $field = v;
            }
        };
    }
    set!(c.paths.text, cli.text);
    set!(c.paths.segmentation, cli.segmentation);
    set!(c.paths.roster, cli.roster);
    set!(c.paths.output, cli.output);
    if let Some(l) = &cli.lexicon {
        c.paths.lexicon = Some(l.clone());
    }
    set!(c.unit_level, cli.unit_level);
    set!(c.seed, cli.seed);
    set!(c.topics.topic_count, cli.topic_count);
    set!(c.topics.n_seeds, cli.n_seeds);
    set!(c.topics.max_iter, cli.max_iter);
    set!(c.topics.rel_tol, cli.rel_tol);
    set!(c.vocab.min_df, cli.min_df);
    set!(c.sequences.threshold, cli.threshold);
    set!(c.sequences.measure, cli.measure);
    set!(c.sequences.snapshot_signs, cli.snapshot_signs);
    set!(c.stages.window, cli.stage_window);
    set!(c.stages.burst_z, cli.burst_z);
    set!(c.phases.top_n, cli.top_n);
    set!(c.phases.weakness, cli.weakness);
    if cli.phase_window.is_some() {
        c.phases.window = cli.phase_window;
    }
    Ok(c)
}

fn init_logging(quiet: bool, json: bool) {
    let mut b = env_logger::Builder::new();
    b.filter_level(if quiet {
        log::LevelFilter::Error
    } else {
        log::LevelFilter::Info
    });
    b.parse_env("NARRANET_LOG");
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().as_str(),
                "target": rec.target(),
                "message": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = b.try_init();
}

fn execute(cli: &Cli) -> narranet::Result<()> {
    let config = resolve(cli)?;
    if let Command::Config = cli.command {
        let out = serde_json::json!({ "config_hash": config.hash(), "config": config });
        println!("{}", serde_json::to_string_pretty(&out).expect("serialisable"));
        return Ok(());
    }
    let pipeline = Pipeline::new(config)?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Network => Stage::Network,
        Command::Sentiment => Stage::Sentiment,
        Command::Sequences => Stage::Sequences,
        Command::Topics => Stage::Topics,
        Command::Phases => Stage::Phases,
        Command::Report => Stage::Report,
        Command::All => {
            pipeline.run_all()?;
            return Ok(());
        }
        Command::Config => unreachable!(),
    };
    pipeline.run(stage)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet, cli.json_logs);
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> ExitCode {
    let body = serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    });
    eprintln!("{body}");
    ExitCode::from(e.exit_code() as u8)
}
