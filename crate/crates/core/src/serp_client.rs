//! Site-restricted SERP collection.
//!
//! A [`Fetcher`] issues `site:{domain} {keyword}` queries through a pluggable
//! [`Transport`], repeats each query a configured number of times, keeps every
//! raw response in a content-addressed [`CacheStore`], and paces requests with
//! a global [`RateLimiter`]. Two transports ship with the crate: a live HTTP
//! adapter for SerpAPI-style endpoints and a deterministic fixture engine.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SerpError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("all {repetitions} repetitions of `{query}` failed; last error: {last_error}")]
    AllRepetitionsFailed {
        query: String,
        repetitions: u32,
        last_error: String,
    },
    #[error("request for `{query}` failed: {source}")]
    Request {
        query: String,
        #[source]
        source: TransportError,
    },
    #[error("cache I/O on {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("fixture {path}: {reason}")]
    Fixture { path: PathBuf, reason: String },
}

/// Failure of a single request.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Google,
    Fixture,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Google => "google",
            Engine::Fixture => "fixture",
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One site-restricted, date-bounded query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpQuerySpec {
    pub keyword: String,
    pub site_filter: String,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    pub engine: Engine,
    pub repetitions: u32,
    pub pages: u32,
}

/// Build a query spec with the default protocol settings (3 repetitions, 1 page).
pub fn build_query(
    keyword: &str,
    site: &str,
    date_from: NaiveDate,
    date_to: NaiveDate,
) -> Result<SerpQuerySpec, SerpError> {
    let keyword = keyword.trim();
    if keyword.is_empty() {
        return Err(SerpError::Argument("keyword is empty".into()));
    }
    let site = site.trim().trim_end_matches('/');
    if site.is_empty() {
        return Err(SerpError::Argument("site filter is empty".into()));
    }
    if date_from > date_to {
        return Err(SerpError::Argument(format!(
            "date window is inverted: {date_from} > {date_to}"
        )));
    }
    Ok(SerpQuerySpec {
        keyword: keyword.to_string(),
        site_filter: site.to_ascii_lowercase(),
        date_from,
        date_to,
        engine: Engine::Google,
        repetitions: 3,
        pages: 1,
    })
}

impl SerpQuerySpec {
    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }

    pub fn with_repetitions(mut self, repetitions: u32) -> Self {
        self.repetitions = repetitions;
        self
    }

    pub fn with_pages(mut self, pages: u32) -> Self {
        self.pages = pages;
        self
    }

    /// The literal query string sent to the engine.
    pub fn render(&self) -> String {
        format!("site:{} {}", self.site_filter, self.keyword)
    }

    pub fn window(&self) -> String {
        format!("{}..{}", self.date_from, self.date_to)
    }
}

/// `host` belongs to `site` if it equals it or is a subdomain of it.
pub fn host_matches_site(host: &str, site: &str) -> bool {
    let host = host.to_ascii_lowercase();
    host == site || host.ends_with(&format!(".{site}"))
}

fn url_host(raw: &str) -> Option<String> {
    url::Url::parse(raw).ok()?.host_str().map(str::to_ascii_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpItem {
    pub url: String,
    pub title: String,
    pub snippet: String,
    pub page_rank_position: u32,
    pub repetition_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub index: u32,
    pub fetched_at_ms: u64,
    pub from_cache: bool,
    pub error: Option<String>,
}

/// Union of the result items of every repetition of one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerpResultSet {
    pub spec: SerpQuerySpec,
    pub items: Vec<SerpItem>,
    pub fetched_at: Vec<RepetitionRecord>,
}

impl SerpResultSet {
    /// One item per distinct URL, first occurrence wins.
    pub fn unique_items(&self) -> Vec<&SerpItem> {
        let mut seen = HashSet::new();
        self.items
            .iter()
            .filter(|it| seen.insert(it.url.as_str()))
            .collect()
    }

    pub fn unique_urls(&self) -> Vec<&str> {
        self.unique_items().into_iter().map(|i| i.url.as_str()).collect()
    }

    pub fn repetition_items(&self, rep: u32) -> impl Iterator<Item = &SerpItem> + '_ {
        self.items.iter().filter(move |i| i.repetition_index == rep)
    }

    pub fn failed_repetitions(&self) -> usize {
        self.fetched_at.iter().filter(|r| r.error.is_some()).count()
    }
}

/// A single page request handed to a transport.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerpRequest {
    pub engine: Engine,
    pub query: String,
    pub keyword: String,
    pub site: String,
    pub date_from: NaiveDate,
    pub date_to: NaiveDate,
    pub page: u32,
    pub page_size: u32,
    pub repetition: u32,
}

/// Anything that turns a request into raw response bytes.
///
/// Responses use the SerpAPI layout: a JSON object whose `organic_results`
/// array holds `{position, link, title, snippet}` objects.
pub trait Transport: Send + Sync {
    fn search(&self, request: &SerpRequest) -> Result<Vec<u8>, TransportError>;
}

impl<F> Transport for F
where
    F: Fn(&SerpRequest) -> Result<Vec<u8>, TransportError> + Send + Sync,
{
    fn search(&self, request: &SerpRequest) -> Result<Vec<u8>, TransportError> {
        self(request)
    }
}

/// Result entry as it appears in a raw response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResult {
    #[serde(default)]
    pub position: Option<u32>,
    pub link: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawResponse {
    #[serde(default)]
    organic_results: Vec<RawResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Serialize results in the raw response layout.
pub fn render_response(results: &[RawResult]) -> Vec<u8> {
    serde_json::to_vec(&RawResponse {
        organic_results: results.to_vec(),
        error: None,
    })
    .expect("raw response serializes")
}

/// Parse raw response bytes. An engine-reported "no results" is an empty page.
pub fn parse_response(raw: &[u8]) -> Result<Vec<RawResult>, TransportError> {
    let resp: RawResponse = serde_json::from_slice(raw)
        .map_err(|e| TransportError::Failed(format!("unparseable response: {e}")))?;
    match resp.error {
        Some(msg) if !msg.to_ascii_lowercase().contains("returned any results") => {
            Err(TransportError::Failed(msg))
        }
        _ => Ok(resp.organic_results),
    }
}

/// Cache coordinates of one raw response.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub engine: Engine,
    pub query: String,
    pub window: String,
    pub repetition: u32,
    pub page: u32,
}

impl CacheKey {
    pub fn for_request(spec: &SerpQuerySpec, repetition: u32, page: u32) -> Self {
        CacheKey {
            engine: spec.engine,
            query: spec.render(),
            window: spec.window(),
            repetition,
            page,
        }
    }

    /// `sha256(query|window|rep)`; pages beyond the first append `|p{page}`.
    pub fn digest(&self) -> String {
        let mut material = format!("{}|{}|{}", self.query, self.window, self.repetition);
        if self.page > 0 {
            material.push_str(&format!("|p{}", self.page));
        }
        hex::encode(Sha256::digest(material.as_bytes()))
    }
}

/// Raw responses on disk at `{root}/{engine}/{digest}.json`.
#[derive(Debug)]
pub struct CacheStore {
    root: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl CacheStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CacheStore {
            root: root.into(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(key.engine.as_str())
            .join(format!("{}.json", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, SerpError> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(SerpError::Cache { path, source }),
        }
    }

    /// Write via a temporary file and rename, so readers never see partial entries.
    pub fn put(&self, key: &CacheKey, raw: &[u8]) -> Result<(), SerpError> {
        let path = self.path_for(key);
        let cache_err = |p: &Path| {
            let p = p.to_path_buf();
            move |source| SerpError::Cache { path: p, source }
        };
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(cache_err(dir))?;
        let tmp = path.with_extension(format!(
            "tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, raw).map_err(cache_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(cache_err(&path))
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn record(&self, hit: bool) {
        let c = if hit { &self.hits } else { &self.misses };
        c.fetch_add(1, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Time source used for pacing and backoff.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// Manually driven clock: `sleep` advances time instantly.
#[derive(Debug, Default)]
pub struct FakeClock {
    now: Mutex<Duration>,
}

impl FakeClock {
    pub fn new(start: Duration) -> Self {
        FakeClock {
            now: Mutex::new(start),
        }
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for FakeClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Global request pacing: consecutive permits are at least `1 / rps` apart.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn new(rps: f64) -> Result<Self, SerpError> {
        if !(rps.is_finite() && rps > 0.0) {
            return Err(SerpError::Argument(format!(
                "requests per second must be positive, got {rps}"
            )));
        }
        Ok(RateLimiter {
            interval: Duration::from_secs_f64(1.0 / rps),
            next_slot: Mutex::new(None),
        })
    }

    pub fn unlimited() -> Self {
        RateLimiter {
            interval: Duration::ZERO,
            next_slot: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Block until a request may be issued; returns the permit time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let mut slot = self.next_slot.lock().unwrap();
        let mut now = clock.now();
        if let Some(next) = *slot {
            if next > now {
                clock.sleep(next - now);
                now = clock.now().max(next);
            }
        }
        *slot = Some(now + self.interval);
        now
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.min(20));
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Executes query specs against a transport with caching, pacing and retries.
pub struct Fetcher<'a> {
    transport: &'a dyn Transport,
    cache: &'a CacheStore,
    limiter: &'a RateLimiter,
    clock: &'a dyn Clock,
    pub retry: RetryPolicy,
    pub page_size: u32,
    /// Ignore existing cache entries (fresh responses still get written).
    pub refresh: bool,
}

impl fmt::Debug for Fetcher<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fetcher")
            .field("cache", &self.cache.root())
            .field("retry", &self.retry)
            .field("page_size", &self.page_size)
            .field("refresh", &self.refresh)
            .finish()
    }
}

impl<'a> Fetcher<'a> {
    pub fn new(
        transport: &'a dyn Transport,
        cache: &'a CacheStore,
        limiter: &'a RateLimiter,
        clock: &'a dyn Clock,
    ) -> Self {
        Fetcher {
            transport,
            cache,
            limiter,
            clock,
            retry: RetryPolicy::default(),
            page_size: 10,
            refresh: false,
        }
    }

    fn request_with_retry(&self, req: &SerpRequest) -> Result<Vec<u8>, TransportError> {
        let mut attempt = 0;
        loop {
            self.limiter.acquire(self.clock);
            let outcome = self
                .transport
                .search(req)
                .and_then(|raw| parse_response(&raw).map(|_| raw));
            match outcome {
                Ok(raw) => return Ok(raw),
                Err(e) if attempt >= self.retry.max_retries => return Err(e),
                Err(e) => {
                    let mut wait = self.retry.backoff(attempt);
                    if let TransportError::RateLimited {
                        retry_after: Some(after),
                    } = &e
                    {
                        wait = wait.max(*after);
                    }
                    log::debug!("`{}` attempt {} failed ({e}); backing off {:?}", req.query, attempt + 1, wait);
                    self.clock.sleep(wait);
                    attempt += 1;
                }
            }
        }
    }

    fn fetch_page(&self, spec: &SerpQuerySpec, rep: u32, page: u32) -> Result<(Vec<u8>, bool), SerpError> {
        let key = CacheKey::for_request(spec, rep, page);
        if !self.refresh {
            if let Some(raw) = self.cache.get(&key)? {
                self.cache.record(true);
                return Ok((raw, true));
            }
        }
        let req = SerpRequest {
            engine: spec.engine,
            query: spec.render(),
            keyword: spec.keyword.clone(),
            site: spec.site_filter.clone(),
            date_from: spec.date_from,
            date_to: spec.date_to,
            page,
            page_size: self.page_size,
            repetition: rep,
        };
        let raw = self
            .request_with_retry(&req)
            .map_err(|source| SerpError::Request {
                query: req.query.clone(),
                source,
            })?;
        self.cache.record(false);
        self.cache.put(&key, &raw)?;
        Ok((raw, false))
    }

    /// Run every repetition of `spec` and return the union of their results.
    pub fn fetch(&self, spec: &SerpQuerySpec) -> Result<SerpResultSet, SerpError> {
        if spec.repetitions == 0 || spec.pages == 0 {
            return Err(SerpError::Argument("repetitions and pages must be at least 1".into()));
        }
        let mut items = Vec::new();
        let mut records = Vec::with_capacity(spec.repetitions as usize);
        let mut last_error = None;
        for rep in 0..spec.repetitions {
            let fetched_at_ms = self.clock.now().as_millis() as u64;
            let mut rep_items = Vec::new();
            let mut from_cache = true;
            let mut error = None;
            for page in 0..spec.pages {
                match self.fetch_page(spec, rep, page) {
                    Ok((raw, hit)) => {
                        from_cache &= hit;
                        let results = parse_response(&raw).unwrap_or_default();
                        for (i, r) in results.into_iter().enumerate() {
                            let on_site = url_host(&r.link)
                                .is_some_and(|h| host_matches_site(&h, &spec.site_filter));
                            if !on_site {
                                log::debug!("dropping off-site result {}", r.link);
                                continue;
                            }
                            let local = r.position.unwrap_or(i as u32 + 1);
                            rep_items.push(SerpItem {
                                url: r.link,
                                title: r.title,
                                snippet: r.snippet,
                                page_rank_position: page * self.page_size + local,
                                repetition_index: rep,
                            });
                        }
                    }
                    Err(e @ SerpError::Cache { .. }) => return Err(e),
                    Err(e) => {
                        log::warn!("repetition {rep} of `{}` failed: {e}", spec.render());
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            if error.is_some() {
                last_error = error.clone();
                from_cache = false;
            } else {
                items.extend(rep_items);
            }
            records.push(RepetitionRecord {
                index: rep,
                fetched_at_ms,
                from_cache,
                error,
            });
        }
        if records.iter().all(|r| r.error.is_some()) {
            return Err(SerpError::AllRepetitionsFailed {
                query: spec.render(),
                repetitions: spec.repetitions,
                last_error: last_error.unwrap_or_default(),
            });
        }
        Ok(SerpResultSet {
            spec: spec.clone(),
            items,
            fetched_at: records,
        })
    }

    /// Fetch many specs on `workers` threads; results keep input order.
    pub fn fetch_all(&self, specs: &[SerpQuerySpec], workers: usize) -> Vec<Result<SerpResultSet, SerpError>> {
        let workers = workers.clamp(1, specs.len().max(1));
        if workers == 1 {
            return specs.iter().map(|s| self.fetch(s)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<SerpResultSet, SerpError>>>> =
            specs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= specs.len() {
                        break;
                    }
                    *slots[i].lock().unwrap() = Some(self.fetch(&specs[i]));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot filled"))
            .collect()
    }
}

/// Canned responses keyed by rendered query; unknown queries get an empty page.
#[derive(Debug, Clone, Default)]
pub struct CannedTransport {
    responses: BTreeMap<String, Vec<Vec<RawResult>>>,
}

impl CannedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register the results returned for each repetition of `query`.
    /// Repetitions beyond the list reuse its last entry.
    pub fn insert(&mut self, query: &str, per_repetition: Vec<Vec<RawResult>>) {
        self.responses.insert(query.to_string(), per_repetition);
    }
}

impl Transport for CannedTransport {
    fn search(&self, request: &SerpRequest) -> Result<Vec<u8>, TransportError> {
        let results = self
            .responses
            .get(&request.query)
            .and_then(|reps| reps.get(request.repetition as usize).or(reps.last()))
            .filter(|_| request.page == 0)
            .cloned()
            .unwrap_or_default();
        Ok(render_response(&results))
    }
}

/// A document served by [`IndexTransport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDocument {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub date: Option<NaiveDate>,
    #[serde(default = "default_boost")]
    pub boost: f64,
}

fn default_boost() -> f64 {
    1.0
}

/// Offline search engine over a fixed document list.
///
/// A document matches when its host is under the `site:` domain, every
/// keyword token occurs in its title or snippet, and its date (if any) lies in
/// the window. Matches are ordered by `boost` plus a stable per-query jitter;
/// each repetition independently withholds a deterministic `drop_rate`
/// fraction of them, which mimics the run-to-run variation of live engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTransport {
    #[serde(default)]
    pub drop_rate: f64,
    pub documents: Vec<IndexDocument>,
}

impl IndexTransport {
    pub fn load(path: &Path) -> Result<Self, SerpError> {
        let bytes = fs::read(path).map_err(|source| SerpError::Cache {
            path: path.to_path_buf(),
            source,
        })?;
        let t: IndexTransport = serde_json::from_slice(&bytes).map_err(|e| SerpError::Fixture {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if !(0.0..1.0).contains(&t.drop_rate) {
            return Err(SerpError::Fixture {
                path: path.to_path_buf(),
                reason: format!("drop_rate must be in [0, 1), got {}", t.drop_rate),
            });
        }
        Ok(t)
    }

    fn unit_hash(parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.as_bytes());
            h.update([0u8]);
        }
        let d = h.finalize();
        let v = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
        (v >> 11) as f64 / (1u64 << 53) as f64
    }

    fn words(text: &str) -> HashSet<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

impl Transport for IndexTransport {
    fn search(&self, request: &SerpRequest) -> Result<Vec<u8>, TransportError> {
        let wanted: Vec<String> = Self::words(&request.keyword).into_iter().collect();
        let rep = request.repetition.to_string();
        let mut hits: Vec<(f64, &IndexDocument)> = self
            .documents
            .iter()
            .filter(|d| url_host(&d.url).is_some_and(|h| host_matches_site(&h, &request.site)))
            .filter(|d| d.date.is_none_or(|dt| dt >= request.date_from && dt <= request.date_to))
            .filter(|d| {
                let words = Self::words(&format!("{} {}", d.title, d.snippet));
                !wanted.is_empty() && wanted.iter().all(|w| words.contains(w))
            })
            .filter(|d| Self::unit_hash(&[&d.url, &request.query, &rep]) >= self.drop_rate)
            .map(|d| (d.boost + Self::unit_hash(&[&d.url, &request.query]), d))
            .collect();
        hits.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.url.cmp(&b.1.url)));
        let start = (request.page * request.page_size) as usize;
        let results: Vec<RawResult> = hits
            .into_iter()
            .skip(start)
            .take(request.page_size as usize)
            .enumerate()
            .map(|(i, (_, d))| RawResult {
                position: Some(i as u32 + 1),
                link: d.url.clone(),
                title: d.title.clone(),
                snippet: d.snippet.clone(),
            })
            .collect();
        Ok(render_response(&results))
    }
}

/// Live adapter for SerpAPI-compatible HTTP endpoints.
///
/// Requests rotate round-robin over the configured proxies. Date windows are
/// sent as Google's custom date range (`tbs=cdr:1,cd_min:..,cd_max:..`).
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    agents: Vec<ureq::Agent>,
    next_agent: AtomicUsize,
}

impl fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpTransport")
            .field("endpoint", &self.endpoint)
            .field("proxies", &self.agents.len())
            .finish()
    }
}

impl HttpTransport {
    pub fn new(endpoint: &str, api_key: &str, proxies: &[String], timeout: Duration) -> Result<Self, SerpError> {
        let builder = || ureq::AgentBuilder::new().timeout(timeout);
        let agents = if proxies.is_empty() {
            vec![builder().build()]
        } else {
            proxies
                .iter()
                .map(|p| {
                    let proxy = ureq::Proxy::new(p)
                        .map_err(|e| SerpError::Argument(format!("bad proxy `{p}`: {e}")))?;
                    Ok(builder().proxy(proxy).build())
                })
                .collect::<Result<_, SerpError>>()?
        };
        Ok(HttpTransport {
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            agents,
            next_agent: AtomicUsize::new(0),
        })
    }

    /// Query parameters for a request (the API key is appended separately).
    pub fn query_params(request: &SerpRequest) -> Vec<(&'static str, String)> {
        let us = |d: NaiveDate| d.format("%m/%d/%Y").to_string();
        vec![
            ("engine", request.engine.as_str().to_string()),
            ("q", request.query.clone()),
            (
                "tbs",
                format!("cdr:1,cd_min:{},cd_max:{}", us(request.date_from), us(request.date_to)),
            ),
            ("num", request.page_size.to_string()),
            ("start", (request.page * request.page_size).to_string()),
        ]
    }
}

impl Transport for HttpTransport {
    fn search(&self, request: &SerpRequest) -> Result<Vec<u8>, TransportError> {
        let i = self.next_agent.fetch_add(1, Ordering::Relaxed) % self.agents.len();
        let mut call = self.agents[i].get(&self.endpoint);
        for (k, v) in Self::query_params(request) {
            call = call.query(k, &v);
        }
        call = call.query("api_key", &self.api_key);
        match call.call() {
            Ok(resp) => {
                let mut body = Vec::new();
                io::Read::read_to_end(&mut resp.into_reader(), &mut body)
                    .map_err(|e| TransportError::Failed(format!("reading body: {e}")))?;
                Ok(body)
            }
            Err(ureq::Error::Status(429, resp)) => Err(TransportError::RateLimited {
                retry_after: resp
                    .header("retry-after")
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs),
            }),
            Err(ureq::Error::Status(code, _)) => Err(TransportError::Failed(format!("HTTP {code}"))),
            Err(e) => Err(TransportError::Failed(e.to_string())),
        }
    }
}
