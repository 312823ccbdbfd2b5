//! `serp-audit`: command-line front end for the SERP sampling audit.
//!
//! `run` executes the whole pipeline from a config file; the other
//! subcommands each run one stage with explicit input and output paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use serp_audit::analytics;
use serp_audit::corpus_ingest::{self, Format, Schema, TokenCounts};
use serp_audit::entity_extract::{EntityKind, Extractor};
use serp_audit::lexicon::{self, FrequencyKind, KeywordSample, Stopwords, TermCounter};
use serp_audit::pipeline::{self, Config, RunOptions};
use serp_audit::rank_divergence::{self, Direction};
use serp_audit::serp_client::{
    self, CacheStore, Clock, Engine, FakeClock, Fetcher, IndexTransport, RateLimiter, SerpResultSet, SystemClock,
    Transport,
};

#[derive(Parser, Debug)]
#[command(name = "serp-audit", version, about = "Audit how representative search-engine samples of social platforms are")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Audit configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for the report bundle, cache and logs.
    #[arg(long, global = true, default_value = "audit-out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// RTD exponent.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Use the fixture search index instead of the live engine.
    #[arg(long, global = true)]
    offline: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count entities (and optionally vocabulary terms) in NDJSON dumps.
    Ingest(IngestArgs),
    /// Build a filtered vocabulary from term counts and draw a stratified keyword sample.
    SampleKeywords(SampleArgs),
    /// Run site-restricted queries for every keyword and save the result sets.
    FetchSerp(FetchArgs),
    /// Count entities in saved result sets.
    Extract(ExtractArgs),
    /// Rank turbulence divergence between two count tables.
    Diverge(DivergeArgs),
    /// Regression, hexbin and confidence-interval tables.
    Stats(StatsArgs),
    /// Keyword-subset cross-validation of the SERP-vs-corpus divergence.
    Crossval(CrossvalArgs),
    /// Inspect or verify a report bundle.
    Report(ReportArgs),
    /// Run every stage from the configuration file.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Dump files; format is inferred from the extension unless --format is given.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long, default_value = "reddit_post")]
    schema: String,
    #[arg(long, default_value = "subreddit")]
    kind: String,
    /// Field holding the entity (defaults from the schema).
    #[arg(long)]
    entity_field: Option<String>,
    /// Entity counts TSV.
    #[arg(long)]
    output: PathBuf,
    /// Also write vocabulary term counts to this TSV.
    #[arg(long)]
    terms_output: Option<PathBuf>,
    #[arg(long, default_value = "document")]
    frequency: String,
    /// `english`, `none`, or a stopword file.
    #[arg(long, default_value = "english")]
    stopwords: String,
    #[arg(long)]
    keep_non_english: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Term counts TSV (as written by `ingest --terms-output`).
    #[arg(long)]
    terms: PathBuf,
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 100)]
    min_freq: u64,
    /// Keep terms with non-letter characters.
    #[arg(long)]
    allow_non_alphabetic: bool,
    #[arg(long, default_value = "english")]
    stopwords: String,
    /// Keyword list; the sidecar is written next to it with a .json extension.
    #[arg(long, default_value = "keywords.txt")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct FetchArgs {
    #[arg(long)]
    keywords: PathBuf,
    #[arg(long)]
    site: String,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    /// One result set per line.
    #[arg(long)]
    output: PathBuf,
    /// Fixture index (implies the fixture engine).
    #[arg(long)]
    fixture: Option<PathBuf>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    pages: Option<u32>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    rps: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Ignore cached responses.
    #[arg(long)]
    refresh: bool,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Result sets written by `fetch-serp`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "subreddit")]
    kind: String,
    #[arg(long)]
    keep_non_english: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct DivergeArgs {
    /// Reference counts (the nonsampled corpus).
    #[arg(long)]
    left: PathBuf,
    /// Sampled counts (the SERP side).
    #[arg(long)]
    right: PathBuf,
    /// Per-entity CSV; the JSON header goes next to it. Stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the top-k promoted and suppressed entities to this directory.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, requires = "top_k")]
    lists_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// `x,y` count pairs for the log-log regression and hexbin.
    #[arg(long)]
    regression: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    /// Write hexbin counts of the regression pairs here.
    #[arg(long, requires = "regression")]
    hexbin: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    hexbin_width: f64,
    /// Toxicity score table for confidence intervals.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    keywords: PathBuf,
    /// Result sets written by `fetch-serp`.
    #[arg(long)]
    serp: PathBuf,
    /// Corpus entity counts TSV.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "subreddit")]
    kind: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report directory (defaults to `{out_dir}/report`).
    dir: Option<PathBuf>,
    /// Recompute every file hash listed in the manifest.
    #[arg(long)]
    verify: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Ignore cached SERP responses.
    #[arg(long)]
    refresh: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their source text
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg.push_str(": ");
                    msg.push_str(&c);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::SampleKeywords(a) => sample_keywords(g, a),
        Command::FetchSerp(a) => fetch_serp(g, a),
        Command::Extract(a) => extract(a),
        Command::Diverge(a) => diverge(g, a),
        Command::Stats(a) => stats(g, a),
        Command::Crossval(a) => crossval(g, a),
        Command::Report(a) => report(g, a),
        Command::Run(a) => run(g, a),
    }
}

fn parse<T: std::str::FromStr>(what: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| anyhow::anyhow!("invalid {what} `{raw}`: {e}"))
}

fn load_stopwords(spec: &str) -> Result<Stopwords> {
    Ok(match spec {
        "english" => Stopwords::english(),
        "none" => Stopwords::none(),
        path => Stopwords::from_file(Path::new(path))?,
    })
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn json(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let schema: Schema = parse("schema", &a.schema)?;
    let kind: EntityKind = parse("kind", &a.kind)?;
    let frequency: FrequencyKind = parse("frequency", &a.frequency)?;
    let format: Option<Format> = a.format.as_deref().map(|f| parse("format", f)).transpose()?;
    let stopwords = load_stopwords(&a.stopwords)?;
    let default_field = match kind {
        EntityKind::Subreddit => schema.entity_field(),
        EntityKind::Hashtag => schema.text_field(),
    };
    let entity_field = a
        .entity_field
        .clone()
        .or_else(|| default_field.map(str::to_string))
        .context("the schema has no default entity field; pass --entity-field")?;
    let extractor = Extractor {
        kind,
        english_only: !a.keep_non_english,
    };
    let mut counts = TokenCounts::new("corpus");
    let mut terms = TermCounter::new("corpus");
    let (mut records, mut corrupt) = (0u64, 0u64);
    for input in &a.inputs {
        let fmt = format.unwrap_or_else(|| Format::from_path(input));
        let mut stream = corpus_ingest::open_stream(input, fmt, schema)?;
        for record in stream.by_ref() {
            let record = record?;
            if schema.counts_as_activity() {
                for e in extractor.from_record(&record, &entity_field) {
                    counts.increment(&e);
                }
            }
            if a.terms_output.is_some() {
                if let Some(text) = schema.text_field().and_then(|f| corpus_ingest::extract_str(&record, f)) {
                    terms.add_document(&lexicon::tokenize(text, &stopwords));
                }
            }
        }
        records += stream.records();
        corrupt += stream.corrupt_lines();
    }
    counts.write_tsv(&a.output)?;
    if let Some(t) = &a.terms_output {
        terms.counts(frequency).write_tsv(t)?;
    }
    log::info!("{records} records, {corrupt} corrupt lines, {} entities", counts.len());
    Ok(())
}

fn sample_keywords(g: &Global, a: &SampleArgs) -> Result<()> {
    let counts = TokenCounts::read_tsv(&a.terms)?;
    let stopwords = load_stopwords(&a.stopwords)?;
    let vocab = lexicon::build_vocabulary(&counts, a.min_len, a.min_freq, !a.allow_non_alphabetic, &stopwords);
    let sample = lexicon::stratified_sample(&vocab, a.k, g.seed.unwrap_or(0))?;
    let sidecar = sample.write(&a.output)?;
    log::info!(
        "{} keywords from a vocabulary of {}; sidecar {}",
        sample.len(),
        vocab.len(),
        sidecar.display()
    );
    Ok(())
}

fn load_config(g: &Global) -> Result<Option<(Config, PathBuf)>> {
    let Some(path) = &g.config else { return Ok(None) };
    let config = Config::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok(Some((config, base)))
}

fn fetch_serp(g: &Global, a: &FetchArgs) -> Result<()> {
    let config = load_config(g)?;
    let from = parse("date", &a.from)?;
    let to = parse("date", &a.to)?;
    let sample = KeywordSample::read(&a.keywords)?;

    let (transport, engine): (Box<dyn Transport>, Engine) = match (&a.fixture, &config) {
        (Some(f), _) => (Box::new(IndexTransport::load(f)?), Engine::Fixture),
        (None, Some((c, base))) => {
            let mut c = c.clone();
            if g.offline {
                c.engine.kind = Engine::Fixture;
            }
            let kind = c.engine.kind;
            (pipeline::build_transport(&c, base)?, kind)
        }
        (None, None) => bail!("pass --fixture or a --config with an [engine] section"),
    };
    if g.offline && engine != Engine::Fixture {
        bail!("--offline requires the fixture engine");
    }
    let defaults = config.as_ref().map(|(c, _)| c.clone());
    let repetitions = a.repetitions.or(defaults.as_ref().map(|c| c.repetitions)).unwrap_or(3);
    let pages = a.pages.or(defaults.as_ref().map(|c| c.pages)).unwrap_or(1);
    let rps = a.rps.or(defaults.as_ref().map(|c| c.rate_limit.rps)).unwrap_or(1.0);
    let workers = a.workers.or(defaults.as_ref().map(|c| c.engine.workers)).unwrap_or(4);
    let cache_dir = a.cache_dir.clone().unwrap_or_else(|| g.out_dir.join("cache"));

    let cache = CacheStore::new(cache_dir);
    let limiter = RateLimiter::new(rps)?;
    let fake = FakeClock::default();
    let clock: &dyn Clock = if engine == Engine::Fixture { &fake } else { &SystemClock };
    let mut fetcher = Fetcher::new(transport.as_ref(), &cache, &limiter, clock);
    fetcher.refresh = a.refresh;
    if let Some(c) = &defaults {
        fetcher.page_size = c.engine.page_size;
    }
    let specs = sample
        .keywords
        .iter()
        .map(|k| {
            serp_client::build_query(k, &a.site, from, to)
                .map(|s| s.with_engine(engine).with_repetitions(repetitions).with_pages(pages))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::new();
    let mut failed = 0;
    for r in fetcher.fetch_all(&specs, workers) {
        match r {
            Ok(rs) => {
                out.push_str(&serde_json::to_string(&rs)?);
                out.push('\n');
            }
            Err(e) => {
                log::warn!("{e}");
                failed += 1;
            }
        }
    }
    fs::write(&a.output, out).with_context(|| format!("writing {}", a.output.display()))?;
    let stats = cache.stats();
    log::info!("{} queries, {failed} failed, cache {} hits / {} misses", specs.len(), stats.hits, stats.misses);
    if failed == specs.len() && !specs.is_empty() {
        bail!("every query failed");
    }
    Ok(())
}

fn read_result_sets(path: &Path) -> Result<Vec<SerpResultSet>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let extractor = Extractor {
        kind: parse("kind", &a.kind)?,
        english_only: !a.keep_non_english,
    };
    let mut counts = TokenCounts::new("serp");
    for rs in read_result_sets(&a.input)? {
        counts.merge_from(&extractor.from_serp(&rs));
    }
    counts.write_tsv(&a.output)?;
    Ok(())
}

fn alpha(g: &Global) -> f64 {
    g.alpha.unwrap_or(rank_divergence::DEFAULT_ALPHA)
}

fn diverge(g: &Global, a: &DivergeArgs) -> Result<()> {
    let corpus = TokenCounts::read_tsv(&a.left)?;
    let serp = TokenCounts::read_tsv(&a.right)?;
    let report = rank_divergence::rtd_counts(&serp, &corpus, alpha(g))?;
    match &a.output {
        Some(p) => {
            fs::write(p, report.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            let header = p.with_extension("json");
            fs::write(&header, report.header_json()).with_context(|| format!("writing {}", header.display()))?;
        }
        None => emit(None, &report.to_csv())?,
    }
    if let Some(k) = a.top_k {
        let dir = a.lists_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        for (name, direction) in [("promoted.csv", Direction::PromotedIn1), ("suppressed.csv", Direction::PromotedIn2)] {
            let mut s = String::from("entity,contribution,rank_serp,rank_corpus\n");
            for e in rank_divergence::signed_contributions(&report, k, direction) {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    e.entity,
                    serp_audit::report_float(e.contribution),
                    serp_audit::report_float(e.rank_1),
                    serp_audit::report_float(e.rank_2)
                ));
            }
            fs::write(dir.join(name), s)?;
        }
    }
    log::info!("total RTD {}", report.total_rtd);
    Ok(())
}

fn stats(g: &Global, a: &StatsArgs) -> Result<()> {
    if a.regression.is_none() && a.scores.is_none() {
        bail!("pass --regression and/or --scores");
    }
    let mut out = serde_json::Map::new();
    if let Some(path) = &a.regression {
        let pairs = analytics::read_pairs_csv(path)?;
        let r = analytics::loglog_regression(&pairs, a.permutations, g.seed.unwrap_or(0))?;
        out.insert("regression".into(), serde_json::to_value(r.rounded())?);
        if let Some(h) = &a.hexbin {
            let bins = analytics::hexbin(&pairs, a.hexbin_width)?;
            fs::write(h, analytics::hexbin_csv(&bins)).with_context(|| format!("writing {}", h.display()))?;
        }
    }
    if let Some(path) = &a.scores {
        let rows = analytics::read_scores_csv(path)?;
        let table = analytics::toxicity_table(&rows, a.level)?;
        out.insert("toxicity".into(), serde_json::to_value(table)?);
    }
    // a lone regression result is emitted bare
    let value = match (out.len(), out.get("regression")) {
        (1, Some(r)) => r.clone(),
        _ => serde_json::Value::Object(out),
    };
    emit(a.output.as_deref(), &json(&value))
}

fn crossval(g: &Global, a: &CrossvalArgs) -> Result<()> {
    let sample = KeywordSample::read(&a.keywords)?;
    let corpus = TokenCounts::read_tsv(&a.corpus)?;
    let corpus_rank = rank_divergence::rank(&corpus)?;
    let extractor = Extractor::new(parse("kind", &a.kind)?);
    let per_keyword: std::collections::BTreeMap<String, TokenCounts> = read_result_sets(&a.serp)?
        .iter()
        .map(|rs| (rs.spec.keyword.clone(), extractor.from_serp(rs)))
        .collect();
    let alpha = alpha(g);
    let result = analytics::keyword_crossval(&sample, a.folds, a.fraction, g.seed.unwrap_or(0), |subset| {
        let mut pooled = TokenCounts::new("fold");
        for k in subset {
            if let Some(c) = per_keyword.get(k) {
                pooled.merge_from(c);
            }
        }
        rank_divergence::rank(&pooled)
            .and_then(|r| rank_divergence::rtd(&r, &corpus_rank, alpha))
            .map(|r| r.total_rtd)
            .map_err(|e| analytics::AnalyticsError::Evaluator(e.to_string()))
    })?;
    emit(a.output.as_deref(), &json(&serde_json::to_value(result)?))
}

fn report(g: &Global, a: &ReportArgs) -> Result<()> {
    let dir = a.dir.clone().unwrap_or_else(|| g.out_dir.join("report"));
    if a.verify {
        let m = pipeline::verify_report(&dir)?;
        println!("ok: {} files verified in {}", m.files.len(), dir.display());
        return Ok(());
    }
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let m: pipeline::RunManifest = serde_json::from_str(&text)?;
    println!("status: {}", m.status);
    println!("config: {}", m.config_hash);
    if let Some(h) = &m.keyword_sample_hash {
        println!("keywords: {h}");
    }
    for s in &m.stages {
        println!("  {:<10} {}", s.stage, s.records);
    }
    for f in &m.files {
        println!("  {}  {}", f.sha256, f.path);
    }
    Ok(())
}

fn run(g: &Global, a: &RunArgs) -> Result<()> {
    let config = g.config.as_deref().context("`run` needs --config")?;
    let opts = RunOptions {
        seed: g.seed,
        alpha: g.alpha,
        offline: g.offline,
        refresh: a.refresh,
    };
    let started = std::time::Instant::now();
    let outcome = pipeline::run_pipeline(config, &g.out_dir, &opts)?;
    for (name, p) in &outcome.summary.platforms {
        println!(
            "{name}: RTD {:.4} (control {}), {} SERP entities vs {} corpus entities",
            p.pooled_rtd,
            p.control_rtd.map_or("n/a".into(), |c| format!("{c:.4}")),
            p.serp_entities,
            p.corpus_entities
        );
    }
    println!(
        "report: {} ({} files, cache {} hits / {} misses, {:.1?})",
        outcome.report_dir.display(),
        outcome.manifest.files.len(),
        outcome.log.cache.hits,
        outcome.log.cache.misses,
        Duration::from_millis(started.elapsed().as_millis() as u64)
    );
    Ok(())
}
