//! End-to-end audit run driven by a single TOML configuration file.
//!
//! Stages run in order: ingest, vocabulary, sample, fetch, extract, rank,
//! rtd, analytics. Outputs accumulate in `{out_dir}/partial/` and are moved
//! to `{out_dir}/report/` only when every stage succeeds; a failed run leaves
//! `partial/manifest.json` naming the completed stages and the error.
//!
//! Everything under `report/` is a pure function of the configuration and
//! the inputs. Timestamps and cache statistics go to `{out_dir}/run_log.json`
//! and raw result sets to `{out_dir}/serp/`, outside the bundle.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, CrossValResult, Group, RegressionResult};
use crate::corpus_ingest::{self, Format, IngestError, Schema, TokenCounts};
use crate::entity_extract::{EntityKind, Extractor};
use crate::lexicon::{self, FrequencyKind, LexiconError, Stopwords, TermCounter};
use crate::rank_divergence::{self, Direction, DivergenceError, DivergenceReport};
use crate::report_float;
use crate::serp_client::{
    self, CacheStats, CacheStore, Clock, Engine, FakeClock, Fetcher, HttpTransport, IndexTransport, RateLimiter,
    RetryPolicy, SerpError, SerpResultSet, SystemClock, Transport,
};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("cannot parse config {path}: {reason}")]
    ConfigParse { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Serp(#[from] SerpError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("report verification failed:\n  {}", .0.join("\n  "))]
    Verify(Vec<String>),
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_alpha() -> f64 {
    rank_divergence::DEFAULT_ALPHA
}
fn default_repetitions() -> u32 {
    3
}
fn default_pages() -> u32 {
    1
}
fn default_top_k() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_pages")]
    pub pages: u32,
    #[serde(default)]
    pub proxies: Vec<String>,
    /// Defaults to `{out_dir}/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Length of the promoted and suppressed lists.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub rate_limit: RateLimitConfig,
    #[serde(default)]
    pub vocabulary: VocabularyConfig,
    #[serde(default)]
    pub analytics: AnalyticsConfig,
    #[serde(rename = "platform", default)]
    pub platforms: Vec<PlatformConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default = "default_engine")]
    pub kind: Engine,
    /// Document index served by the fixture engine.
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Literal key or `${ENV_VAR}`.
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_page_size")]
    pub page_size: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_engine() -> Engine {
    Engine::Google
}
fn default_page_size() -> u32 {
    10
}
fn default_timeout() -> u64 {
    30
}
fn default_workers() -> usize {
    4
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            kind: default_engine(),
            fixture: None,
            endpoint: None,
            api_key: None,
            page_size: default_page_size(),
            timeout_secs: default_timeout(),
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitConfig {
    #[serde(default = "default_rps")]
    pub rps: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub base_backoff_ms: u64,
}

fn default_rps() -> f64 {
    1.0
}
fn default_retries() -> u32 {
    4
}
fn default_backoff() -> u64 {
    500
}

impl Default for RateLimitConfig {
    fn default() -> Self {
        RateLimitConfig {
            rps: default_rps(),
            max_retries: default_retries(),
            base_backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularyConfig {
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_min_freq")]
    pub min_freq: u64,
    #[serde(default = "default_true")]
    pub alphabetic_only: bool,
    #[serde(default)]
    pub frequency: FrequencyKind,
    /// `english`, `none`, or a path to a one-word-per-line file.
    #[serde(default = "default_stopwords")]
    pub stopwords: String,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    /// Platforms whose text feeds the vocabulary; all of them when unset.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
}

fn default_min_len() -> usize {
    3
}
fn default_min_freq() -> u64 {
    100
}
fn default_true() -> bool {
    true
}
fn default_stopwords() -> String {
    "english".into()
}
fn default_sample_size() -> usize {
    1000
}

impl Default for VocabularyConfig {
    fn default() -> Self {
        VocabularyConfig {
            min_len: default_min_len(),
            min_freq: default_min_freq(),
            alphabetic_only: true,
            frequency: FrequencyKind::Document,
            stopwords: default_stopwords(),
            sample_size: default_sample_size(),
            sources: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsConfig {
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_hexbin_width")]
    pub hexbin_width: f64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_folds")]
    pub crossval_folds: usize,
    #[serde(default = "default_fraction")]
    pub crossval_fraction: f64,
}

fn default_permutations() -> usize {
    10_000
}
fn default_hexbin_width() -> f64 {
    0.25
}
fn default_ci_level() -> f64 {
    0.95
}
fn default_folds() -> usize {
    5
}
fn default_fraction() -> f64 {
    0.8
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            permutations: default_permutations(),
            hexbin_width: default_hexbin_width(),
            ci_level: default_ci_level(),
            crossval_folds: default_folds(),
            crossval_fraction: default_fraction(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<Format>,
    pub schema: Schema,
    /// Overrides whether records count as activity (comments do not by default).
    #[serde(default)]
    pub activity: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatformConfig {
    pub name: String,
    pub site: String,
    pub kind: EntityKind,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    pub dumps: Vec<DumpConfig>,
    #[serde(default)]
    pub entity_field: Option<String>,
    #[serde(default)]
    pub text_field: Option<String>,
    #[serde(default = "default_true")]
    pub english_only: bool,
    /// `entity,category` table.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// `post_id,group,toxic,obscene,insult` table.
    #[serde(default)]
    pub scores: Option<PathBuf>,
}

impl PlatformConfig {
    fn entity_field(&self, dump: &DumpConfig) -> Option<String> {
        self.entity_field.clone().or_else(|| match self.kind {
            EntityKind::Subreddit => dump.schema.entity_field().map(str::to_string),
            EntityKind::Hashtag => dump.schema.text_field().map(str::to_string),
        })
    }

    fn text_field(&self, dump: &DumpConfig) -> Option<String> {
        self.text_field
            .clone()
            .or_else(|| dump.schema.text_field().map(str::to_string))
    }
}

/// Expand `${VAR}` from the environment; other values pass through.
pub fn resolve_secret(raw: &str) -> Result<String, String> {
    match raw.trim().strip_prefix("${").and_then(|s| s.strip_suffix('}')) {
        Some(var) => std::env::var(var).map_err(|_| format!("environment variable `{var}` is not set")),
        None => Ok(raw.to_string()),
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Config, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Config::from_toml(&text, path)
    }

    /// SHA-256 of the canonical JSON form (paths as written, not resolved).
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    /// Check every key a run depends on; relative paths resolve against `base`.
    pub fn validate(&self, base: &Path) -> Result<(), PipelineError> {
        let exists = |key: String, p: &Path| {
            let full = base.join(p);
            if full.is_file() {
                Ok(())
            } else {
                Err(config_err(key, format!("file not found: {}", full.display())))
            }
        };
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(config_err("alpha", "must be positive"));
        }
        if self.repetitions == 0 {
            return Err(config_err("repetitions", "must be at least 1"));
        }
        if self.pages == 0 {
            return Err(config_err("pages", "must be at least 1"));
        }
        if self.top_k == 0 {
            return Err(config_err("top_k", "must be at least 1"));
        }
        if self.vocabulary.sample_size == 0 {
            return Err(config_err("vocabulary.sample_size", "must be at least 1"));
        }
        match self.vocabulary.stopwords.as_str() {
            "english" | "none" => {}
            other => exists("vocabulary.stopwords".into(), Path::new(other))?,
        }
        if !(self.rate_limit.rps.is_finite() && self.rate_limit.rps > 0.0) {
            return Err(config_err("rate_limit.rps", "must be positive"));
        }
        if !(self.analytics.hexbin_width.is_finite() && self.analytics.hexbin_width > 0.0) {
            return Err(config_err("analytics.hexbin_width", "must be positive"));
        }
        if self.analytics.permutations == 0 {
            return Err(config_err("analytics.permutations", "must be at least 1"));
        }
        if !(self.analytics.ci_level > 0.0 && self.analytics.ci_level < 1.0) {
            return Err(config_err("analytics.ci_level", "must be in (0, 1)"));
        }
        if self.analytics.crossval_folds < 2 {
            return Err(config_err("analytics.crossval_folds", "must be at least 2"));
        }
        if !(self.analytics.crossval_fraction > 0.0 && self.analytics.crossval_fraction < 1.0) {
            return Err(config_err("analytics.crossval_fraction", "must be in (0, 1)"));
        }
        match self.engine.kind {
            Engine::Fixture => match &self.engine.fixture {
                Some(p) => exists("engine.fixture".into(), p)?,
                None => return Err(config_err("engine.fixture", "required by the fixture engine")),
            },
            Engine::Google => {
                if self.engine.endpoint.is_none() {
                    return Err(config_err("engine.endpoint", "required by the live engine"));
                }
                let key = self
                    .engine
                    .api_key
                    .as_deref()
                    .ok_or_else(|| config_err("engine.api_key", "required by the live engine"))?;
                resolve_secret(key).map_err(|r| config_err("engine.api_key", r))?;
            }
        }
        if self.platforms.is_empty() {
            return Err(config_err("platform", "at least one [[platform]] is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, p) in self.platforms.iter().enumerate() {
            let key = |k: &str| format!("platform[{i}].{k}");
            if p.name.is_empty() || !p.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(config_err(key("name"), "must be a nonempty [A-Za-z0-9_-] identifier"));
            }
            if !names.insert(p.name.as_str()) {
                return Err(config_err(key("name"), format!("duplicate platform `{}`", p.name)));
            }
            if p.date_from > p.date_to {
                return Err(config_err(key("date_from"), "is after date_to"));
            }
            if p.dumps.is_empty() {
                return Err(config_err(key("dumps"), "at least one dump is required"));
            }
            for (j, d) in p.dumps.iter().enumerate() {
                exists(key(&format!("dumps[{j}].path")), &d.path)?;
                if p.entity_field(d).is_none() {
                    return Err(config_err(key("entity_field"), format!("schema {:?} has no default", d.schema)));
                }
            }
            if let Some(l) = &p.labels {
                exists(key("labels"), l)?;
            }
            if let Some(s) = &p.scores {
                exists(key("scores"), s)?;
            }
        }
        if let Some(sources) = &self.vocabulary.sources {
            for s in sources {
                if !names.contains(s.as_str()) {
                    return Err(config_err("vocabulary.sources", format!("unknown platform `{s}`")));
                }
            }
        }
        Ok(())
    }
}

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    /// Force the fixture engine.
    pub offline: bool,
    /// Ignore cached responses.
    pub refresh: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub records: u64,
}

/// The deterministic part of a run description, stored in `report/manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub status: String,
    pub config_hash: String,
    pub keyword_sample_hash: Option<String>,
    pub vocabulary_hash: Option<String>,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

/// Volatile run facts, stored next to the bundle in `run_log.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub tool_version: String,
    pub config_hash: String,
    pub started_at: String,
    pub finished_at: String,
    pub cache: CacheStats,
    pub queries: u64,
    pub failed_queries: u64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformSummary {
    pub corpus_records: u64,
    pub corrupt_lines: u64,
    pub corpus_entities: usize,
    pub serp_entities: usize,
    pub serp_occurrences: u64,
    pub queries: usize,
    pub failed_queries: usize,
    pub pooled_rtd: f64,
    pub mean_keyword_rtd: Option<f64>,
    pub keywords_with_results: usize,
    pub control_rtd: Option<f64>,
    pub crossval: Option<CrossValResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub alpha: f64,
    pub seed: u64,
    pub keywords: usize,
    pub vocabulary_size: usize,
    pub platforms: BTreeMap<String, PlatformSummary>,
}

/// What a successful run hands back to the caller.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report_dir: PathBuf,
    pub manifest: RunManifest,
    pub log: RunLog,
    pub summary: RunSummary,
}

struct Bundle {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl Bundle {
    fn write(&mut self, name: &str, contents: impl Into<Vec<u8>>) -> Result<(), PipelineError> {
        let bytes = contents.into();
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        self.files.insert(name.to_string(), bytes);
        Ok(())
    }

    fn entries(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .map(|(p, b)| FileEntry {
                path: p.clone(),
                sha256: hex::encode(Sha256::digest(b)),
                bytes: b.len() as u64,
            })
            .collect()
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("report value serializes");
    s.push(b'\n');
    s
}

/// Round every float in a JSON tree for emission.
fn round_json(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|f| serde_json::Number::from_f64(report_float(f)))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn rounded_json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    json_bytes(&round_json(serde_json::to_value(v).expect("report value serializes")))
}

struct PlatformCorpus {
    activity: TokenCounts,
    terms: TermCounter,
    halves: [TokenCounts; 2],
    records: u64,
    corrupt: u64,
}

fn split_half(seed: u64, dump: usize, record: u64) -> usize {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((dump as u64).to_le_bytes());
    h.update(record.to_le_bytes());
    (h.finalize()[0] & 1) as usize
}

fn ingest_platform(
    p: &PlatformConfig,
    base: &Path,
    stopwords: &Stopwords,
    seed: u64,
) -> Result<PlatformCorpus, PipelineError> {
    let extractor = Extractor {
        kind: p.kind,
        english_only: p.english_only,
    };
    let shards: Vec<PlatformCorpus> = p
        .dumps
        .par_iter()
        .enumerate()
        .map(|(di, d)| {
            let path = base.join(&d.path);
            let format = d.format.unwrap_or_else(|| Format::from_path(&path));
            let mut stream = corpus_ingest::open_stream(&path, format, d.schema)?;
            let entity_field = p.entity_field(d).expect("validated");
            let text_field = p.text_field(d);
            let counts_activity = d.activity.unwrap_or(d.schema.counts_as_activity());
            let tag = format!("{}:{}", p.name, d.path.display());
            let mut shard = PlatformCorpus {
                activity: TokenCounts::new(&tag),
                terms: TermCounter::new(&tag),
                halves: [TokenCounts::new("control-a"), TokenCounts::new("control-b")],
                records: 0,
                corrupt: 0,
            };
            for (index, record) in stream.by_ref().enumerate() {
                let record = record?;
                if counts_activity {
                    let half = split_half(seed, di, index as u64);
                    for e in extractor.from_record(&record, &entity_field) {
                        shard.activity.increment(&e);
                        shard.halves[half].increment(&e);
                    }
                }
                if let Some(text) = text_field.as_deref().and_then(|f| corpus_ingest::extract_str(&record, f)) {
                    shard.terms.add_document(&lexicon::tokenize(text, stopwords));
                }
            }
            shard.records = stream.records();
            shard.corrupt = stream.corrupt_lines();
            Ok(shard)
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut out = PlatformCorpus {
        activity: TokenCounts::new(&p.name),
        terms: TermCounter::new(&p.name),
        halves: [TokenCounts::new("control-a"), TokenCounts::new("control-b")],
        records: 0,
        corrupt: 0,
    };
    for s in shards {
        out.activity.merge_from(&s.activity);
        out.terms.merge_from(&s.terms);
        out.halves[0].merge_from(&s.halves[0]);
        out.halves[1].merge_from(&s.halves[1]);
        out.records += s.records;
        out.corrupt += s.corrupt;
    }
    Ok(out)
}

fn load_stopwords(spec: &str, base: &Path) -> Result<Stopwords, PipelineError> {
    Ok(match spec {
        "english" => Stopwords::english(),
        "none" => Stopwords::none(),
        path => Stopwords::from_file(&base.join(path))?,
    })
}

/// Summed entity counts of the result sets whose keyword is in `keywords`.
fn pooled_counts(per_keyword: &BTreeMap<String, TokenCounts>, keywords: &[String], tag: &str) -> TokenCounts {
    let mut pooled = TokenCounts::new(tag);
    for k in keywords {
        if let Some(c) = per_keyword.get(k) {
            pooled.merge_from(c);
        }
    }
    pooled
}

struct StageTracker {
    stages: Vec<StageRecord>,
}

impl StageTracker {
    fn done(&mut self, stage: &str, records: u64) {
        log::info!("stage {stage} complete ({records} records)");
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            records,
        });
    }
}

fn staged<T>(stage: &'static str, r: Result<T, PipelineError>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Stage {
        stage,
        source: Box::new(e),
    })
}

/// Run every stage for the configuration at `config_path`, writing into `out_dir`.
pub fn run_pipeline(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let mut config = Config::load(config_path)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    if let Some(alpha) = opts.alpha {
        config.alpha = alpha;
    }
    if opts.offline {
        config.engine.kind = Engine::Fixture;
    }
    let base = config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    config.validate(&base)?;
    run_config(&config, &base, out_dir, opts)
}

/// Run a validated configuration; relative paths resolve against `base`.
pub fn run_config(config: &Config, base: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let partial = out_dir.join("partial");
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(io_err(&partial))?;
    }
    fs::create_dir_all(&partial).map_err(io_err(&partial))?;
    let mut bundle = Bundle {
        dir: partial.clone(),
        files: BTreeMap::new(),
    };
    let mut tracker = StageTracker { stages: Vec::new() };
    let mut manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        status: "running".into(),
        config_hash: config.content_hash(),
        keyword_sample_hash: None,
        vocabulary_hash: None,
        stages: Vec::new(),
        error: None,
        files: Vec::new(),
    };
    let cache_root = match &config.cache_dir {
        Some(p) => base.join(p),
        None => out_dir.join("cache"),
    };
    let cache = CacheStore::new(cache_root);

    let result = execute(config, base, out_dir, opts, &cache, &mut bundle, &mut tracker, &mut manifest);
    manifest.stages = tracker.stages;
    let finished_at = chrono::Utc::now().to_rfc3339();
    match result {
        Ok((summary, queries, failed)) => {
            manifest.status = "complete".into();
            manifest.files = bundle.entries();
            let mpath = partial.join("manifest.json");
            fs::write(&mpath, json_bytes(&manifest)).map_err(io_err(&mpath))?;
            let report_dir = out_dir.join("report");
            if report_dir.exists() {
                fs::remove_dir_all(&report_dir).map_err(io_err(&report_dir))?;
            }
            fs::rename(&partial, &report_dir).map_err(io_err(&report_dir))?;
            let log = RunLog {
                tool_version: TOOL_VERSION.to_string(),
                config_hash: manifest.config_hash.clone(),
                started_at,
                finished_at,
                cache: cache.stats(),
                queries,
                failed_queries: failed,
                status: "complete".into(),
            };
            let lpath = out_dir.join("run_log.json");
            fs::write(&lpath, json_bytes(&log)).map_err(io_err(&lpath))?;
            Ok(RunOutcome {
                report_dir,
                manifest,
                log,
                summary,
            })
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.files = bundle.entries();
            let mpath = partial.join("manifest.json");
            if let Err(write_err) = fs::write(&mpath, json_bytes(&manifest)) {
                log::error!("could not record failed run in {}: {write_err}", mpath.display());
            }
            Err(e)
        }
    }
}

/// The transport a configuration selects; relative paths resolve against `base`.
pub fn build_transport(config: &Config, base: &Path) -> Result<Box<dyn Transport>, PipelineError> {
    Ok(match config.engine.kind {
        Engine::Fixture => {
            let path = base.join(config.engine.fixture.as_ref().expect("validated"));
            Box::new(IndexTransport::load(&path)?)
        }
        Engine::Google => {
            let key = resolve_secret(config.engine.api_key.as_deref().expect("validated"))
                .map_err(|r| config_err("engine.api_key", r))?;
            Box::new(HttpTransport::new(
                config.engine.endpoint.as_deref().expect("validated"),
                &key,
                &config.proxies,
                std::time::Duration::from_secs(config.engine.timeout_secs),
            )?)
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn execute(
    config: &Config,
    base: &Path,
    out_dir: &Path,
    opts: &RunOptions,
    cache: &CacheStore,
    bundle: &mut Bundle,
    tracker: &mut StageTracker,
    manifest: &mut RunManifest,
) -> Result<(RunSummary, u64, u64), PipelineError> {
    let stopwords = staged("ingest", load_stopwords(&config.vocabulary.stopwords, base))?;

    // ingest
    let corpora: Vec<PlatformCorpus> = staged(
        "ingest",
        config
            .platforms
            .iter()
            .map(|p| ingest_platform(p, base, &stopwords, config.seed))
            .collect(),
    )?;
    for (p, c) in config.platforms.iter().zip(&corpora) {
        bundle.write(&format!("corpus_{}.tsv", p.name), c.activity.to_tsv())?;
    }
    tracker.done("ingest", corpora.iter().map(|c| c.records).sum());

    // vocabulary
    let mut terms = TermCounter::new("vocabulary");
    for (p, c) in config.platforms.iter().zip(&corpora) {
        let included = config
            .vocabulary
            .sources
            .as_ref()
            .is_none_or(|s| s.iter().any(|n| n == &p.name));
        if included {
            terms.merge_from(&c.terms);
        }
    }
    let v = &config.vocabulary;
    let vocab = lexicon::build_vocabulary(
        terms.counts(v.frequency),
        v.min_len,
        v.min_freq,
        v.alphabetic_only,
        &stopwords,
    );
    manifest.vocabulary_hash = Some(vocab.content_hash());
    tracker.done("vocabulary", vocab.len() as u64);

    // sample
    let sample = staged(
        "sample",
        lexicon::stratified_sample(&vocab, v.sample_size, config.seed).map_err(PipelineError::from),
    )?;
    bundle.write("keywords.txt", sample.keywords_text())?;
    bundle.write("keywords.json", sample.sidecar_json())?;
    manifest.keyword_sample_hash = Some(sample.content_hash());
    tracker.done("sample", sample.len() as u64);

    // fetch
    let transport = staged("fetch", build_transport(config, base))?;
    let limiter = staged("fetch", RateLimiter::new(config.rate_limit.rps).map_err(PipelineError::from))?;
    // the fixture engine answers instantly, so its pacing runs on simulated time
    let fake_clock = FakeClock::default();
    let clock: &dyn Clock = match config.engine.kind {
        Engine::Fixture => &fake_clock,
        Engine::Google => &SystemClock,
    };
    let mut fetcher = Fetcher::new(transport.as_ref(), cache, &limiter, clock);
    fetcher.retry = RetryPolicy {
        max_retries: config.rate_limit.max_retries,
        base_backoff: std::time::Duration::from_millis(config.rate_limit.base_backoff_ms),
        ..RetryPolicy::default()
    };
    fetcher.page_size = config.engine.page_size;
    fetcher.refresh = opts.refresh;

    let serp_dir = out_dir.join("serp");
    fs::create_dir_all(&serp_dir).map_err(io_err(&serp_dir))?;
    let mut fetched: Vec<Vec<(String, Option<SerpResultSet>)>> = Vec::new();
    let (mut queries, mut failed) = (0u64, 0u64);
    for p in &config.platforms {
        let specs: Vec<_> = staged(
            "fetch",
            sample
                .keywords
                .iter()
                .map(|k| {
                    serp_client::build_query(k, &p.site, p.date_from, p.date_to).map(|s| {
                        s.with_engine(config.engine.kind)
                            .with_repetitions(config.repetitions)
                            .with_pages(config.pages)
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(PipelineError::from),
        )?;
        let results = fetcher.fetch_all(&specs, config.engine.workers);
        let mut lines = String::new();
        let mut per_platform = Vec::with_capacity(results.len());
        for (spec, r) in specs.iter().zip(results) {
            queries += 1;
            match r {
                Ok(rs) => {
                    lines.push_str(&serde_json::to_string(&rs).expect("result set serializes"));
                    lines.push('\n');
                    per_platform.push((spec.keyword.clone(), Some(rs)));
                }
                Err(e @ SerpError::Cache { .. }) => return staged("fetch", Err(e.into())),
                Err(e) => {
                    log::warn!("{e}");
                    failed += 1;
                    per_platform.push((spec.keyword.clone(), None));
                }
            }
        }
        let path = serp_dir.join(format!("{}.jsonl", p.name));
        fs::write(&path, lines).map_err(io_err(&path))?;
        fetched.push(per_platform);
    }
    if queries > 0 && failed == queries {
        return staged(
            "fetch",
            Err(PipelineError::Serp(SerpError::AllRepetitionsFailed {
                query: "every query".into(),
                repetitions: config.repetitions,
                last_error: "no query returned results".into(),
            })),
        );
    }
    tracker.done("fetch", queries - failed);

    // extract
    let mut serp_per_keyword: Vec<BTreeMap<String, TokenCounts>> = Vec::new();
    let mut serp_pooled: Vec<TokenCounts> = Vec::new();
    for (p, results) in config.platforms.iter().zip(&fetched) {
        let extractor = Extractor {
            kind: p.kind,
            english_only: p.english_only,
        };
        let per_kw: BTreeMap<String, TokenCounts> = results
            .iter()
            .filter_map(|(k, rs)| rs.as_ref().map(|rs| (k.clone(), extractor.from_serp(rs))))
            .collect();
        let pooled = pooled_counts(&per_kw, &sample.keywords, &format!("serp:{}", p.name));
        bundle.write(&format!("serp_{}.tsv", p.name), pooled.to_tsv())?;
        serp_per_keyword.push(per_kw);
        serp_pooled.push(pooled);
    }
    tracker.done("extract", serp_pooled.iter().map(TokenCounts::total).sum());

    // rank
    let mut ranked = Vec::new();
    for ((p, c), s) in config.platforms.iter().zip(&corpora).zip(&serp_pooled) {
        let serp_rank = rank_divergence::rank(s).map_err(|_| {
            PipelineError::Stage {
                stage: "rank",
                source: Box::new(config_err(
                    format!("platform.{}", p.name),
                    "no SERP entities were extracted; nothing to compare",
                )),
            }
        })?;
        let corpus_rank = staged("rank", rank_divergence::rank(&c.activity).map_err(PipelineError::from))?;
        ranked.push((serp_rank, corpus_rank));
    }
    tracker.done("rank", ranked.iter().map(|(a, b)| (a.len() + b.len()) as u64).sum());

    // rtd
    let alpha = config.alpha;
    let mut reports: Vec<DivergenceReport> = Vec::new();
    let mut promoted = String::from("platform,entity,contribution,rank_serp,rank_corpus\n");
    let mut suppressed = promoted.clone();
    for (p, (serp_rank, corpus_rank)) in config.platforms.iter().zip(&ranked) {
        let report = staged("rtd", rank_divergence::rtd(serp_rank, corpus_rank, alpha).map_err(PipelineError::from))?;
        bundle.write(&format!("rtd_{}.csv", p.name), report.to_csv())?;
        bundle.write(&format!("rtd_{}.json", p.name), report.header_json())?;
        for (dir, out) in [(Direction::PromotedIn1, &mut promoted), (Direction::PromotedIn2, &mut suppressed)] {
            for e in rank_divergence::signed_contributions(&report, config.top_k, dir) {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.name,
                    e.entity,
                    report_float(e.contribution),
                    report_float(e.rank_1),
                    report_float(e.rank_2)
                ));
            }
        }
        reports.push(report);
    }
    bundle.write("promoted.csv", promoted)?;
    bundle.write("suppressed.csv", suppressed)?;
    tracker.done("rtd", reports.len() as u64);

    // analytics
    let a = &config.analytics;
    let mut summaries = BTreeMap::new();
    let mut regressions = BTreeMap::new();
    let mut hex_csv = String::from("platform,q,r,center_x,center_y,count\n");
    let mut prop_csv = String::from("platform,group,category,count,proportion\n");
    let mut tox_csv = String::from("platform,group,label,n,mean,half_width,level\n");
    for (i, p) in config.platforms.iter().enumerate() {
        let corpus = &corpora[i].activity;
        let serp = &serp_pooled[i];
        let union: std::collections::BTreeSet<&str> =
            corpus.iter().map(|(e, _)| e).chain(serp.iter().map(|(e, _)| e)).collect();
        let pairs: Vec<(u64, u64)> = union.iter().map(|e| (corpus.get(e), serp.get(e))).collect();

        let regression: Option<RegressionResult> =
            match analytics::loglog_regression(&pairs, a.permutations, config.seed) {
                Ok(r) => Some(r.rounded()),
                Err(AnalyticsError::Degenerate(why)) => {
                    log::warn!("{}: regression skipped: {why}", p.name);
                    None
                }
                Err(e) => return staged("analytics", Err(e.into())),
            };
        regressions.insert(p.name.clone(), regression);

        let bins = staged("analytics", analytics::hexbin(&pairs, a.hexbin_width).map_err(PipelineError::from))?;
        for line in analytics::hexbin_csv(&bins).lines().skip(1) {
            hex_csv.push_str(&format!("{},{line}\n", p.name));
        }

        if let Some(labels_path) = &p.labels {
            let labels = staged("analytics", analytics::read_labels_csv(&base.join(labels_path)).map_err(PipelineError::from))?;
            let membership: BTreeMap<String, Group> = labels
                .keys()
                .map(|e| {
                    let g = if serp.contains(e) { Group::InSerp } else { Group::NotInSerp };
                    (e.clone(), g)
                })
                .collect();
            let gc = staged("analytics", analytics::group_proportions(&labels, &membership).map_err(PipelineError::from))?;
            for line in gc.to_csv().lines().skip(1) {
                prop_csv.push_str(&format!("{},{line}\n", p.name));
            }
        }

        if let Some(scores_path) = &p.scores {
            let rows = staged("analytics", analytics::read_scores_csv(&base.join(scores_path)).map_err(PipelineError::from))?;
            let table = staged("analytics", analytics::toxicity_table(&rows, a.ci_level).map_err(PipelineError::from))?;
            for line in analytics::toxicity_csv(&table).lines().skip(1) {
                tox_csv.push_str(&format!("{},{line}\n", p.name));
            }
        }

        let corpus_rank = &ranked[i].1;
        let keyword_reports: Vec<DivergenceReport> = sample
            .keywords
            .iter()
            .filter_map(|k| serp_per_keyword[i].get(k))
            .filter(|c| !c.is_empty())
            .map(|c| rank_divergence::rank(c).and_then(|r| rank_divergence::rtd(&r, corpus_rank, alpha)))
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::Stage {
                stage: "analytics",
                source: Box::new(e.into()),
            })?;

        let [half_a, half_b] = &corpora[i].halves;
        let control_rtd = if half_a.is_empty() || half_b.is_empty() {
            None
        } else {
            Some(staged("analytics", rank_divergence::rtd_counts(half_a, half_b, alpha).map_err(PipelineError::from))?.total_rtd)
        };

        let crossval = if sample.len() >= 2 {
            let per_kw = &serp_per_keyword[i];
            let cv = analytics::keyword_crossval(&sample, a.crossval_folds, a.crossval_fraction, config.seed, |subset| {
                let pooled = pooled_counts(per_kw, subset, "fold");
                if pooled.is_empty() {
                    return Err(AnalyticsError::Evaluator("fold has no SERP entities".into()));
                }
                rank_divergence::rank(&pooled)
                    .and_then(|r| rank_divergence::rtd(&r, corpus_rank, alpha))
                    .map(|r| r.total_rtd)
                    .map_err(|e| AnalyticsError::Evaluator(e.to_string()))
            });
            match cv {
                Ok(cv) => Some(cv),
                Err(e) => {
                    log::warn!("{}: cross-validation skipped: {e}", p.name);
                    None
                }
            }
        } else {
            None
        };

        summaries.insert(
            p.name.clone(),
            PlatformSummary {
                corpus_records: corpora[i].records,
                corrupt_lines: corpora[i].corrupt,
                corpus_entities: corpus.len(),
                serp_entities: serp.len(),
                serp_occurrences: serp.total(),
                queries: fetched[i].len(),
                failed_queries: fetched[i].iter().filter(|(_, r)| r.is_none()).count(),
                pooled_rtd: reports[i].total_rtd,
                mean_keyword_rtd: rank_divergence::mean_rtd(&keyword_reports),
                keywords_with_results: keyword_reports.len(),
                control_rtd,
                crossval,
            },
        );
    }
    bundle.write("regression.json", rounded_json_bytes(&regressions))?;
    bundle.write("hexbin.csv", hex_csv)?;
    bundle.write("proportions.csv", prop_csv)?;
    bundle.write("toxicity_ci.csv", tox_csv)?;
    let summary = RunSummary {
        alpha,
        seed: config.seed,
        keywords: sample.len(),
        vocabulary_size: vocab.len(),
        platforms: summaries,
    };
    bundle.write("summary.json", rounded_json_bytes(&summary))?;
    tracker.done("analytics", config.platforms.len() as u64);

    Ok((summary, queries, failed))
}

/// Recompute the hash of every file listed in `{dir}/manifest.json`.
pub fn verify_report(dir: &Path) -> Result<RunManifest, PipelineError> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Verify(vec![format!(
        "manifest.json is malformed: {e}"
    )]))?;
    let mut problems = Vec::new();
    for f in &manifest.files {
        match fs::read(dir.join(&f.path)) {
            Ok(bytes) => {
                let h = hex::encode(Sha256::digest(&bytes));
                if h != f.sha256 {
                    problems.push(format!("{}: hash mismatch (manifest {}, file {h})", f.path, f.sha256));
                }
            }
            Err(e) => problems.push(format!("{}: {e}", f.path)),
        }
    }
    if problems.is_empty() {
        Ok(manifest)
    } else {
        Err(PipelineError::Verify(problems))
    }
}
