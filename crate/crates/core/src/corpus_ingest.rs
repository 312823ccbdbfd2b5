//! Streaming ingestion of line-delimited social-media dumps.
//!
//! Dumps are NDJSON files (one JSON object per line), optionally gzip or
//! zstd compressed. A [`RecordStream`] reads them one line at a time through
//! a reused buffer, so memory stays bounded by the longest line plus whatever
//! the caller accumulates. Entity counts are collected into [`TokenCounts`],
//! which merge pointwise so independent shards can be counted in parallel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed count table at line {line}: {reason}")]
    Table { line: usize, reason: String },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// On-disk encoding of a dump file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Ndjson,
    NdjsonGzip,
    NdjsonZstd,
}

impl Format {
    /// Guess the format from the file extension (`.gz`, `.zst`, anything else is plain).
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("gz") => Format::NdjsonGzip,
            Some("zst") | Some("zstd") => Format::NdjsonZstd,
            _ => Format::Ndjson,
        }
    }
}

impl FromStr for Format {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ndjson" | "jsonl" => Ok(Format::Ndjson),
            "ndjson_gzip" | "ndjson.gz" | "gzip" | "gz" => Ok(Format::NdjsonGzip),
            "ndjson_zstd" | "ndjson.zst" | "zstd" | "zst" => Ok(Format::NdjsonZstd),
            other => Err(IngestError::Config(format!("unknown dump format `{other}`"))),
        }
    }
}

/// Record layout of a dump, which decides the default field paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schema {
    RedditPost,
    RedditComment,
    Tweet,
    Generic,
}

impl Schema {
    /// Default path of the community field, if the schema has one.
    pub fn entity_field(self) -> Option<&'static str> {
        match self {
            Schema::RedditPost | Schema::RedditComment => Some("subreddit"),
            Schema::Tweet | Schema::Generic => None,
        }
    }

    /// Default path of the free-text field.
    pub fn text_field(self) -> Option<&'static str> {
        match self {
            Schema::RedditPost => Some("title"),
            Schema::RedditComment => Some("body"),
            Schema::Tweet => Some("text"),
            Schema::Generic => None,
        }
    }

    /// Whether records of this schema count towards community activity.
    /// Activity is measured in submissions, so comments are excluded.
    pub fn counts_as_activity(self) -> bool {
        !matches!(self, Schema::RedditComment)
    }
}

impl FromStr for Schema {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reddit_post" | "submission" => Ok(Schema::RedditPost),
            "reddit_comment" | "comment" => Ok(Schema::RedditComment),
            "tweet" => Ok(Schema::Tweet),
            "generic" => Ok(Schema::Generic),
            other => Err(IngestError::Config(format!("unknown record schema `{other}`"))),
        }
    }
}

/// Single-consumer iterator over the JSON objects of a dump file.
///
/// Lines that are not valid UTF-8 JSON objects are skipped and counted in
/// [`RecordStream::corrupt_lines`]; a warning is logged for each one.
pub struct RecordStream {
    source_path: PathBuf,
    format: Format,
    schema: Schema,
    reader: Box<dyn BufRead + Send>,
    buf: Vec<u8>,
    lines_read: u64,
    records: u64,
    corrupt_lines: u64,
    done: bool,
}

impl fmt::Debug for RecordStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordStream")
            .field("source_path", &self.source_path)
            .field("format", &self.format)
            .field("schema", &self.schema)
            .field("lines_read", &self.lines_read)
            .field("corrupt_lines", &self.corrupt_lines)
            .finish()
    }
}

/// Open a dump file for streaming.
pub fn open_stream(path: &Path, format: Format, schema: Schema) -> Result<RecordStream, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let reader: Box<dyn BufRead + Send> = match format {
        Format::Ndjson => Box::new(BufReader::new(file)),
        Format::NdjsonGzip => Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(file))),
        Format::NdjsonZstd => {
            let decoder = zstd::stream::read::Decoder::new(file).map_err(|e| IngestError::io(path, e))?;
            Box::new(BufReader::new(decoder))
        }
    };
    Ok(RecordStream::from_reader(path.to_path_buf(), format, schema, reader))
}

impl RecordStream {
    /// Wrap an already-decoded line reader.
    pub fn from_reader(
        source_path: PathBuf,
        format: Format,
        schema: Schema,
        reader: Box<dyn BufRead + Send>,
    ) -> Self {
        RecordStream {
            source_path,
            format,
            schema,
            reader,
            buf: Vec::with_capacity(8 * 1024),
            lines_read: 0,
            records: 0,
            corrupt_lines: 0,
            done: false,
        }
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    /// Physical lines consumed so far.
    pub fn lines_read(&self) -> u64 {
        self.lines_read
    }

    /// Records successfully parsed so far.
    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn corrupt_lines(&self) -> u64 {
        self.corrupt_lines
    }

    fn parse_line(line: &[u8]) -> Option<Value> {
        let text = std::str::from_utf8(line).ok()?;
        let text = text.trim_end_matches(['\n', '\r']);
        match serde_json::from_str::<Value>(text) {
            Ok(v @ Value::Object(_)) => Some(v),
            _ => None,
        }
    }
}

impl Iterator for RecordStream {
    type Item = Result<Value, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => self.done = true,
                Ok(_) => {
                    self.lines_read += 1;
                    match Self::parse_line(&self.buf) {
                        Some(v) => {
                            self.records += 1;
                            return Some(Ok(v));
                        }
                        None => {
                            self.corrupt_lines += 1;
                            log::warn!(
                                "{}: skipping malformed line {}",
                                self.source_path.display(),
                                self.lines_read
                            );
                        }
                    }
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(IngestError::io(&self.source_path, e)));
                }
            }
        }
        None
    }
}

/// Look up a dotted path (`"a.b.c"`) in a JSON record.
///
/// Numeric segments index into arrays. Any missing segment yields `None`.
pub fn extract_field<'a>(record: &'a Value, field_path: &str) -> Option<&'a Value> {
    let mut cur = record;
    for seg in field_path.split('.') {
        cur = match cur {
            Value::Object(map) => map.get(seg)?,
            Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

/// Like [`extract_field`] but only yields string values.
pub fn extract_str<'a>(record: &'a Value, field_path: &str) -> Option<&'a str> {
    extract_field(record, field_path).and_then(Value::as_str)
}

/// Lowercase and trim an entity key.
pub fn normalize_key(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Occurrence counts of normalized entity strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    counts: BTreeMap<String, u64>,
    total: u64,
    source_tag: String,
}

impl TokenCounts {
    pub fn new(source_tag: impl Into<String>) -> Self {
        TokenCounts {
            counts: BTreeMap::new(),
            total: 0,
            source_tag: source_tag.into(),
        }
    }

    /// Build from raw `(entity, count)` pairs; keys are normalized and
    /// collisions after normalization are summed.
    pub fn from_pairs<I, S>(source_tag: impl Into<String>, pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: AsRef<str>,
    {
        let mut out = TokenCounts::new(source_tag);
        for (k, n) in pairs {
            out.add(k.as_ref(), n);
        }
        out
    }

    /// Add `n` occurrences of `entity`. Empty keys are ignored.
    pub fn add(&mut self, entity: &str, n: u64) {
        let key = normalize_key(entity);
        if key.is_empty() || n == 0 {
            return;
        }
        *self.counts.entry(key).or_insert(0) += n;
        self.total += n;
    }

    pub fn increment(&mut self, entity: &str) {
        self.add(entity, 1);
    }

    pub fn get(&self, entity: &str) -> u64 {
        self.counts.get(entity).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn set_source_tag(&mut self, tag: impl Into<String>) {
        self.source_tag = tag.into();
    }

    /// Entries in entity-ascending order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn contains(&self, entity: &str) -> bool {
        self.counts.contains_key(entity)
    }

    /// Keep only the entries for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&str, u64) -> bool) {
        self.counts.retain(|k, v| keep(k, *v));
        self.total = self.counts.values().sum();
    }

    /// Entries sorted by count descending, then entity ascending.
    pub fn sorted_desc(&self) -> Vec<(&str, u64)> {
        let mut v: Vec<(&str, u64)> = self.iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    /// The `n` most frequent entities.
    pub fn top(&self, n: usize) -> TokenCounts {
        let mut out = TokenCounts::new(self.source_tag.clone());
        for (k, c) in self.sorted_desc().into_iter().take(n) {
            out.counts.insert(k.to_string(), c);
            out.total += c;
        }
        out
    }

    /// Two-column `entity<TAB>count` table, count descending then entity ascending.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, c) in self.sorted_desc() {
            s.push_str(k);
            s.push('\t');
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), IngestError> {
        let mut f = File::create(path).map_err(|e| IngestError::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes())
            .map_err(|e| IngestError::io(path, e))
    }

    /// Parse a table produced by [`TokenCounts::to_tsv`].
    pub fn parse_tsv(source_tag: impl Into<String>, text: &str) -> Result<TokenCounts, IngestError> {
        let mut out = TokenCounts::new(source_tag);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, c) = line.rsplit_once('\t').ok_or_else(|| IngestError::Table {
                line: i + 1,
                reason: "expected `entity<TAB>count`".into(),
            })?;
            let c: u64 = c.trim().parse().map_err(|_| IngestError::Table {
                line: i + 1,
                reason: format!("count `{c}` is not a nonnegative integer"),
            })?;
            out.add(k, c);
        }
        Ok(out)
    }

    pub fn read_tsv(path: &Path) -> Result<TokenCounts, IngestError> {
        let mut text = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| IngestError::io(path, e))?;
        let tag = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        TokenCounts::parse_tsv(tag, &text)
    }
}

/// Pointwise sum of two count tables. The source tag of `a` is kept.
pub fn merge_counts(a: &TokenCounts, b: &TokenCounts) -> TokenCounts {
    let mut out = a.clone();
    out.merge_from(b);
    out
}

impl TokenCounts {
    pub fn merge_from(&mut self, other: &TokenCounts) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += *v;
        }
        self.total += other.total;
    }
}

/// Result of a counting pass over one stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountOutcome {
    pub counts: TokenCounts,
    pub records: u64,
    pub corrupt_lines: u64,
}

/// Count the entities `extractor` yields for every record of `stream`.
pub fn count_entities<F>(
    stream: &mut RecordStream,
    source_tag: &str,
    mut extractor: F,
) -> Result<CountOutcome, IngestError>
where
    F: FnMut(&Value) -> Vec<String>,
{
    let mut counts = TokenCounts::new(source_tag);
    for record in stream.by_ref() {
        let record = record?;
        for entity in extractor(&record) {
            counts.increment(&entity);
        }
    }
    Ok(CountOutcome {
        counts,
        records: stream.records(),
        corrupt_lines: stream.corrupt_lines(),
    })
}

/// Extractor yielding the string at `field_path`, if present.
pub fn field_extractor(field_path: &str) -> impl Fn(&Value) -> Vec<String> + '_ {
    move |record| {
        extract_str(record, field_path)
            .map(|s| vec![s.to_string()])
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::Cursor;

    fn stream_of(text: &str) -> RecordStream {
        RecordStream::from_reader(
            PathBuf::from("<mem>"),
            Format::Ndjson,
            Schema::Generic,
            Box::new(Cursor::new(text.as_bytes().to_vec())),
        )
    }

    #[test]
    fn empty_input_yields_nothing() {
        let mut s = stream_of("");
        assert!(s.next().is_none());
        assert_eq!(s.corrupt_lines(), 0);
        assert_eq!(s.lines_read(), 0);
    }

    #[test]
    fn malformed_lines_are_counted() {
        let mut s = stream_of("{\"a\":1}\n{oops\n{\"a\":2}\n");
        let recs: Vec<_> = s.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(s.corrupt_lines(), 1);
        assert_eq!(s.lines_read(), 3);
    }

    #[test]
    fn non_object_json_and_blank_lines_are_corrupt() {
        let mut s = stream_of("3\n\n[1]\n{\"ok\":true}");
        let n = s.by_ref().filter_map(Result::ok).count();
        assert_eq!(n, 1);
        assert_eq!(s.corrupt_lines(), 3);
        assert_eq!(s.lines_read(), 4);
    }

    #[test]
    fn crlf_lines_parse() {
        let mut s = stream_of("{\"a\":1}\r\n{\"a\":2}\r\n");
        assert_eq!(s.by_ref().filter_map(Result::ok).count(), 2);
        assert_eq!(s.corrupt_lines(), 0);
    }

    #[test]
    fn extract_field_paths() {
        let r = json!({"subreddit": "AskReddit", "a": {"b": 1}, "c": {}, "l": [{"x": "y"}]});
        assert_eq!(extract_field(&r, "subreddit"), Some(&json!("AskReddit")));
        assert_eq!(extract_field(&r, "a.b"), Some(&json!(1)));
        assert_eq!(extract_field(&r, "c.b"), None);
        assert_eq!(extract_field(&r, "a.b.c"), None);
        assert_eq!(extract_str(&r, "l.0.x"), Some("y"));
    }

    #[test]
    fn unknown_format_is_config_error() {
        assert!(matches!("parquet".parse::<Format>(), Err(IngestError::Config(_))));
        assert_eq!("ndjson_zstd".parse::<Format>().unwrap(), Format::NdjsonZstd);
        assert_eq!(Format::from_path(Path::new("x.ndjson.gz")), Format::NdjsonGzip);
    }

    #[test]
    fn counting_subreddits() {
        let mut s = stream_of(
            "{\"subreddit\":\"ffxiv\"}\n{\"subreddit\":\"FFXIV\"}\n{\"subreddit\":\"ffxiv \"}\n",
        );
        let out = count_entities(&mut s, "t", field_extractor("subreddit")).unwrap();
        assert_eq!(out.counts.get("ffxiv"), 3);
        assert_eq!(out.counts.total(), 3);
        assert_eq!(out.records, 3);
    }

    #[test]
    fn merge_identity_and_sum() {
        let a = TokenCounts::from_pairs("a", [("x", 1)]);
        let b = TokenCounts::from_pairs("b", [("x", 2), ("y", 1)]);
        let m = merge_counts(&a, &b);
        assert_eq!(m.get("x"), 3);
        assert_eq!(m.get("y"), 1);
        assert_eq!(m.total(), 4);
        assert_eq!(merge_counts(&a, &TokenCounts::new("e")), a);
    }

    #[test]
    fn tsv_ordering_is_count_desc_then_entity() {
        let c = TokenCounts::from_pairs("t", [("b", 2), ("a", 2), ("z", 5), ("c", 1)]);
        assert_eq!(c.to_tsv(), "z\t5\na\t2\nb\t2\nc\t1\n");
        let back = TokenCounts::parse_tsv("t", &c.to_tsv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn tsv_rejects_bad_counts() {
        assert!(TokenCounts::parse_tsv("t", "a\tx\n").is_err());
        assert!(TokenCounts::parse_tsv("t", "no-tab\n").is_err());
    }

    #[test]
    fn keys_are_normalized() {
        let c = TokenCounts::from_pairs("t", [("  MiXeD ", 2), ("", 4)]);
        assert_eq!(c.get("mixed"), 2);
        assert_eq!(c.total(), 2);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn comments_do_not_count_as_activity() {
        assert!(Schema::RedditPost.counts_as_activity());
        assert!(!Schema::RedditComment.counts_as_activity());
        assert_eq!(Schema::Tweet.text_field(), Some("text"));
    }
}
