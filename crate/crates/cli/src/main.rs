//! `causalcite` command-line frontend.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causalcite::config::EngineConfig;
use causalcite::evaluation::{
    self, classify_outliers, dataset_accuracy, fit_log_linear, point_biserial, AccuracyMode, ImpactPoint, Metric,
};
use causalcite::store::Store;
use causalcite::synthetic::{SyntheticCorpus, SyntheticSpec};
use causalcite::{Engine, Error};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

const EXIT_MISSING_INPUT: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_CONTRACT: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "causalcite", version, about = "Causal citation indices (PCI, ACI, TCI) and evaluation tools")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Config file (`key = value` lines); falls back to $CAUSALCITE_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set match.threshold=0.75`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: all hardware threads).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    edges: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    embeddings: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    blocklist: Option<PathBuf>,
    /// Store directory written by `ingest`.
    #[arg(long, global = true, value_name = "DIR")]
    store: Option<PathBuf>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    max_matches: Option<usize>,
    #[arg(long, global = true)]
    coarse_k: Option<usize>,
    /// Sample size for impact estimation.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    bins: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Count only influential citation edges as follow-ups.
    #[arg(long, global = true)]
    influential_only: bool,
    /// More logging on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the corpus and edge files and build a store.
    Ingest {
        /// Exit with status 3 if any row is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Pairwise causal impact of paper A on its follow-up B.
    Pci {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Average and total causal impact of paper A.
    Impact {
        #[arg(long)]
        a: String,
        /// Evaluate every follow-up instead of a sample.
        #[arg(long)]
        exact: bool,
    },
    /// Evaluation harnesses.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Write a deterministic synthetic corpus (papers.jsonl, edges.tsv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        papers: usize,
        #[arg(long, default_value_t = 3)]
        years: usize,
        #[arg(long = "synth-seed", default_value_t = 7)]
        synth_seed: u64,
    },
    /// TCI for a list of papers as rank-ordered TSV.
    ExportDistribution {
        /// One paper id per line.
        #[arg(long)]
        papers: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Pooled,
    BatchMean,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Share of non-significant references scored below significant ones.
    Accuracy {
        #[arg(long)]
        batches: PathBuf,
        /// `pci`, `citations` or `column:NAME`.
        #[arg(long, default_value = "pci")]
        metric: String,
        #[arg(long, value_enum, default_value = "pooled")]
        mode: ModeArg,
        /// Per-row conformity as TSV.
        #[arg(long, value_name = "FILE")]
        tsv_out: Option<PathBuf>,
    },
    /// Point-biserial correlation between award labels and scores.
    AwardCorr {
        /// JSON lines `{paper_id, label: 0|1}`.
        #[arg(long)]
        labels: PathBuf,
        /// JSON lines `{paper_id, score}`.
        #[arg(long)]
        scores: PathBuf,
        /// Rank-ordered scores with labels as TSV.
        #[arg(long, value_name = "FILE")]
        tsv_out: Option<PathBuf>,
    },
    /// Log-linear TCI vs citations fit with IQR outliers.
    Outliers {
        /// TSV `paper_id  tci  citations`.
        #[arg(long)]
        points: PathBuf,
        /// Per-point report as TSV.
        #[arg(long, value_name = "FILE")]
        tsv_out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
            Error::Io { .. } => EXIT_INTERNAL,
            Error::Format { .. } | Error::Conflict { .. } => EXIT_FORMAT,
            Error::NotFound(_) | Error::Contract(_) | Error::Config { .. } => EXIT_CONTRACT,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config: &'a EngineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding_source: Option<String>,
    result: T,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config = effective_config(&cli.global)?;
    match cli.command {
        Command::Ingest { strict } => ingest(&config, strict),
        Command::Pci { a, b } => {
            let engine = load_engine(&config)?;
            let result = engine.pci(&a, &b)?;
            emit(&engine, result)
        }
        Command::Impact { a, exact } => {
            let engine = load_engine(&config)?;
            let result = if exact { engine.impact_exact(&a)? } else { engine.impact(&a)? };
            emit(&engine, result)
        }
        Command::Eval { command } => eval(&config, command),
        Command::ExportDistribution { papers } => export_distribution(&config, &papers),
        Command::Synth {
            out,
            papers,
            years,
            synth_seed,
        } => {
            let sc = SyntheticCorpus::generate(&SyntheticSpec {
                papers,
                years,
                seed: synth_seed,
                ..SyntheticSpec::default()
            });
            fs::create_dir_all(&out).map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", out.display())))?;
            sc.write(&out.join("papers.jsonl"), &out.join("edges.tsv"))?;
            #[derive(Serialize)]
            struct SynthReport<'a> {
                out: &'a Path,
                papers: usize,
                edges: usize,
            }
            emit_plain(
                &config,
                SynthReport {
                    out: &out,
                    papers: sc.records.len(),
                    edges: sc.edges.len(),
                },
            )
        }
    }
}

fn effective_config(g: &GlobalArgs) -> CliResult<EngineConfig> {
    let mut config = EngineConfig::default();
    let file = g
        .config
        .clone()
        .or_else(|| std::env::var_os("CAUSALCITE_CONFIG").map(PathBuf::from));
    if let Some(path) = file {
        if !path.exists() {
            return Err(Failure::new(
                EXIT_MISSING_INPUT,
                format!("config file not found: {}", path.display()),
            ));
        }
        config.apply_file(&path)?;
    }
    for kv in &g.overrides {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::new(EXIT_CONTRACT, format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(key.trim(), value)?;
    }
    let paths = &mut config.paths;
    for (slot, flag) in [
        (&mut paths.corpus, &g.corpus),
        (&mut paths.edges, &g.edges),
        (&mut paths.embeddings, &g.embeddings),
        (&mut paths.blocklist, &g.blocklist),
        (&mut paths.store, &g.store),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if let Some(v) = g.threshold {
        config.matching.threshold = v;
    }
    if let Some(v) = g.max_matches {
        config.matching.max_matches = v;
    }
    if let Some(v) = g.coarse_k {
        config.matching.coarse_k = v;
    }
    if let Some(v) = g.n {
        config.sample.n = v;
    }
    if let Some(v) = g.bins {
        config.sample.bins = v;
    }
    if let Some(v) = g.seed {
        config.sample.seed = v;
    }
    if g.influential_only {
        config.influential_only = true;
    }
    if let Some(v) = g.workers {
        config.workers = v;
    }
    config.validate()?;
    Ok(config)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_MISSING_INPUT,
            format!("{what} not found: {}", path.display()),
        ))
    }
}

fn load_engine(config: &EngineConfig) -> CliResult<Engine> {
    let p = &config.paths;
    match (&p.store, &p.corpus, &p.edges) {
        (Some(dir), _, _) => require_file(&dir.join("manifest.json"), "store")?,
        (None, Some(corpus), Some(edges)) => {
            require_file(corpus, "corpus file")?;
            require_file(edges, "edges file")?;
        }
        (None, None, _) => return Err(Failure::new(EXIT_MISSING_INPUT, "no corpus given (--corpus or --store)")),
        (None, Some(_), None) => return Err(Failure::new(EXIT_MISSING_INPUT, "edges file not given (--edges)")),
    }
    if let Some(e) = &p.embeddings {
        require_file(e, "embedding file")?;
    }
    if let Some(b) = &p.blocklist {
        require_file(b, "blocklist file")?;
    }
    let engine = Engine::from_config(config.clone())?;
    info!("{engine:?} with {} workers", engine.workers());
    Ok(engine)
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(EXIT_INTERNAL, e.to_string()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Failure::new(EXIT_INTERNAL, e.to_string()))
}

fn emit<T: Serialize>(engine: &Engine, result: T) -> CliResult<()> {
    print_json(&Envelope {
        config: engine.config(),
        embedding_source: Some(engine.embeddings().describe()),
        result,
    })
}

fn emit_plain<T: Serialize>(config: &EngineConfig, result: T) -> CliResult<()> {
    print_json(&Envelope {
        config,
        embedding_source: None,
        result,
    })
}

fn ingest(config: &EngineConfig, strict: bool) -> CliResult<()> {
    let corpus = config
        .paths
        .corpus
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_MISSING_INPUT, "corpus file not given (--corpus)"))?;
    require_file(corpus, "corpus file")?;
    let edges = config
        .paths
        .edges
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_MISSING_INPUT, "edges file not given (--edges)"))?;
    require_file(edges, "edges file")?;

    let (store, report) = Store::ingest(corpus, edges)?;
    if let Some(dir) = &config.paths.store {
        store.save(dir)?;
        info!("store written to {}", dir.display());
    }
    #[derive(Serialize)]
    struct IngestSummary<'a> {
        papers: usize,
        edges: usize,
        store: Option<&'a Path>,
        report: &'a causalcite::store::StoreIngestReport,
    }
    emit_plain(
        config,
        IngestSummary {
            papers: store.corpus.len(),
            edges: store.graph.edge_count(),
            store: config.paths.store.as_deref(),
            report: &report,
        },
    )?;
    let rejected = report.papers.rejected.len() + report.edges.rejected.len();
    if rejected > 0 {
        warn!("{rejected} rows rejected");
        if strict {
            let first = report
                .papers
                .rejected
                .first()
                .map(|r| format!("{}: row {}: {}", corpus.display(), r.row, r.reason))
                .or_else(|| {
                    report
                        .edges
                        .rejected
                        .first()
                        .map(|r| format!("{}: row {}: {}", edges.display(), r.row, r.reason))
                })
                .unwrap_or_default();
            return Err(Failure::new(EXIT_FORMAT, format!("{rejected} rows rejected (strict); first: {first}")));
        }
    }
    Ok(())
}

fn open_reader(path: &Path, what: &str) -> CliResult<BufReader<File>> {
    require_file(path, what)?;
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display())))
}

fn tsv_writer(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", path.display())))
}

fn write_err(e: io::Error) -> Failure {
    Failure::new(EXIT_INTERNAL, e.to_string())
}

/// Attaches the file name to format errors.
fn in_file(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn eval(config: &EngineConfig, command: EvalCommand) -> CliResult<()> {
    match command {
        EvalCommand::Accuracy {
            batches,
            metric,
            mode,
            tsv_out,
        } => {
            let metric = Metric::parse(&metric)?;
            let lines = evaluation::read_batches(open_reader(&batches, "batch file")?).map_err(in_file(&batches))?;
            let needs_engine = lines
                .iter()
                .flat_map(|l| &l.refs)
                .any(|r| !r.score_overrides.contains_key(metric.column_name()));
            let engine = if needs_engine && !matches!(metric, Metric::Column(_)) {
                Some(load_engine(config)?)
            } else {
                None
            };
            let scored = evaluation::score_batches(&lines, &metric, engine.as_ref())?;
            let mode = match mode {
                ModeArg::Pooled => AccuracyMode::PooledRows,
                ModeArg::BatchMean => AccuracyMode::BatchMean,
            };
            let report = dataset_accuracy(&scored, mode)?;
            if let Some(path) = tsv_out {
                let mut out = tsv_writer(&path)?;
                writeln!(out, "pivot\treference_id\tscore\tconformity").map_err(write_err)?;
                for batch in &scored {
                    let Ok(conf) = batch.conformities() else { continue };
                    let non = batch
                        .rows
                        .iter()
                        .filter(|r| r.label == evaluation::Label::NonSignificant);
                    for (row, c) in non.zip(conf) {
                        writeln!(out, "{}\t{}\t{}\t{}", batch.pivot_paper_id, row.reference_id, row.score, c)
                            .map_err(write_err)?;
                    }
                }
                out.flush().map_err(write_err)?;
            }
            #[derive(Serialize)]
            struct AccuracyReport {
                metric: String,
                #[serde(flatten)]
                accuracy: evaluation::DatasetAccuracy,
            }
            let result = AccuracyReport {
                metric: metric.column_name().to_owned(),
                accuracy: report,
            };
            match &engine {
                Some(e) => emit(e, result),
                None => emit_plain(config, result),
            }
        }
        EvalCommand::AwardCorr { labels, scores, tsv_out } => {
            #[derive(Deserialize)]
            struct LabelLine {
                paper_id: String,
                label: u8,
            }
            #[derive(Deserialize)]
            struct ScoreLine {
                paper_id: String,
                score: f64,
            }
            let label_lines: Vec<LabelLine> =
                evaluation::read_jsonl(open_reader(&labels, "label file")?).map_err(in_file(&labels))?;
            if let Some((i, bad)) = label_lines.iter().enumerate().find(|(_, l)| l.label > 1) {
                return Err(Failure::new(
                    EXIT_FORMAT,
                    format!("{}: entry {}: label must be 0 or 1, got {}", labels.display(), i + 1, bad.label),
                ));
            }
            let score_lines: Vec<ScoreLine> =
                evaluation::read_jsonl(open_reader(&scores, "score file")?).map_err(in_file(&scores))?;
            let by_id: std::collections::HashMap<&str, f64> =
                score_lines.iter().map(|s| (s.paper_id.as_str(), s.score)).collect();
            let mut ids = Vec::new();
            let mut flags = Vec::new();
            let mut values = Vec::new();
            let mut unscored = Vec::new();
            for l in &label_lines {
                match by_id.get(l.paper_id.as_str()) {
                    Some(&s) => {
                        ids.push(l.paper_id.clone());
                        flags.push(l.label == 1);
                        values.push(s);
                    }
                    None => unscored.push(l.paper_id.clone()),
                }
            }
            if !unscored.is_empty() {
                warn!("{} labelled papers have no score and were skipped", unscored.len());
            }
            let r = point_biserial(&flags, &values)?;
            if let Some(path) = tsv_out {
                let pairs: Vec<(String, f64)> = ids.iter().cloned().zip(values.iter().copied()).collect();
                let label_of: std::collections::HashMap<&str, bool> =
                    ids.iter().map(String::as_str).zip(flags.iter().copied()).collect();
                let mut out = tsv_writer(&path)?;
                writeln!(out, "rank\tpaper_id\tlabel\tscore").map_err(write_err)?;
                for (rank, id, score) in evaluation::rank_distribution(&pairs) {
                    writeln!(out, "{rank}\t{id}\t{}\t{score}", u8::from(label_of[id.as_str()])).map_err(write_err)?;
                }
                out.flush().map_err(write_err)?;
            }
            #[derive(Serialize)]
            struct CorrReport {
                point_biserial: f64,
                papers: usize,
                positives: usize,
                unscored: Vec<String>,
            }
            emit_plain(
                config,
                CorrReport {
                    point_biserial: r,
                    papers: flags.len(),
                    positives: flags.iter().filter(|&&f| f).count(),
                    unscored,
                },
            )
        }
        EvalCommand::Outliers { points, tsv_out } => {
            let pts = read_points(open_reader(&points, "points file")?).map_err(in_file(&points))?;
            let fit = fit_log_linear(&pts)?;
            let (classes, fences) = classify_outliers(&pts, &fit);
            if let Some(path) = tsv_out {
                let mut out = tsv_writer(&path)?;
                writeln!(out, "paper_id\tlog_tci\tlog_cit\tresidual\tcategory").map_err(write_err)?;
                let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                for c in &classes {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}\t{}",
                        c.paper_id,
                        cell(c.log_tci),
                        cell(c.log_citations),
                        cell(c.residual),
                        c.category.as_str()
                    )
                    .map_err(write_err)?;
                }
                out.flush().map_err(write_err)?;
            }
            let mut counts = std::collections::BTreeMap::new();
            for c in &classes {
                *counts.entry(c.category.as_str()).or_insert(0usize) += 1;
            }
            #[derive(Serialize)]
            struct OutlierReport {
                fit: evaluation::LogLinearFit,
                fences: Option<evaluation::Fences>,
                counts: std::collections::BTreeMap<&'static str, usize>,
                points: Vec<evaluation::OutlierClassification>,
            }
            emit_plain(
                config,
                OutlierReport {
                    fit,
                    fences,
                    counts,
                    points: classes,
                },
            )
        }
    }
}

/// `paper_id<TAB>tci<TAB>citations`; an optional header line starting with
/// `paper_id`, blank lines and `#` comments are skipped.
fn read_points<R: BufRead>(reader: R) -> causalcite::Result<Vec<ImpactPoint>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Format {
            line: Some(i + 1),
            message: e.to_string(),
        })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (i == 0 && t.starts_with("paper_id")) {
            continue;
        }
        let bad = |message: String| Error::Format {
            line: Some(i + 1),
            message,
        };
        let cols: Vec<&str> = t.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated columns, got {}", cols.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        out.push(ImpactPoint {
            paper_id: cols[0].to_owned(),
            tci: num(cols[1])?,
            citations: num(cols[2])?,
        });
    }
    Ok(out)
}

fn export_distribution(config: &EngineConfig, papers: &Path) -> CliResult<()> {
    let text = {
        require_file(papers, "paper list")?;
        fs::read_to_string(papers).map_err(|e| Failure::new(EXIT_INTERNAL, format!("{}: {e}", papers.display())))?
    };
    let ids: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let engine = load_engine(config)?;
    struct Row<'a> {
        id: &'a str,
        citations: u64,
        children: usize,
        tci: f64,
        aci: Option<f64>,
    }
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        let rec = engine.corpus().get_paper(id)?;
        let children = engine.children(engine.corpus().idx(id)?)?.len();
        let (tci, aci) = if children == 0 {
            (0.0, None)
        } else {
            let r = engine.impact(id)?;
            (r.tci, Some(r.aci))
        };
        rows.push(Row {
            id,
            citations: rec.citation_count,
            children,
            tci,
            aci,
        });
    }
    rows.sort_by(|a, b| b.tci.total_cmp(&a.tci).then_with(|| a.id.cmp(b.id)));
    let mut out = io::stdout().lock();
    writeln!(out, "rank\tpaper_id\tcitations\tchildren\ttci\taci").map_err(write_err)?;
    for (i, r) in rows.iter().enumerate() {
        let aci = r.aci.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{aci}", i + 1, r.id, r.citations, r.children, r.tci).map_err(write_err)?;
    }
    Ok(())
}
