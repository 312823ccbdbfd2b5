//! Subreddit and hashtag extraction from corpus records and SERP results.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus_ingest::{extract_str, TokenCounts};
use crate::serp_client::SerpResultSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Subreddit,
    Hashtag,
}

impl std::str::FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subreddit" | "subreddits" => Ok(EntityKind::Subreddit),
            "hashtag" | "hashtags" => Ok(EntityKind::Hashtag),
            other => Err(format!("unknown entity kind `{other}`")),
        }
    }
}

fn is_reddit_host(host: &str) -> bool {
    host == "reddit.com" || host.ends_with(".reddit.com")
}

/// The subreddit a reddit.com URL points into, lowercased.
pub fn subreddit_from_url(raw: &str) -> Option<String> {
    let url = url::Url::parse(raw).ok()?;
    let host = url.host_str()?.to_ascii_lowercase();
    if !is_reddit_host(&host) {
        return None;
    }
    let mut segments = url.path_segments()?;
    while let Some(seg) = segments.next() {
        if seg.eq_ignore_ascii_case("r") {
            return segments
                .next()
                .map(str::to_lowercase)
                .filter(|s| !s.is_empty());
        }
    }
    None
}

/// Strip an optional `r/` or `/r/` prefix from a subreddit name and lowercase it.
pub fn normalize_subreddit(name: &str) -> String {
    let n = name.trim();
    let n = n.strip_prefix('/').unwrap_or(n);
    let n = n
        .strip_prefix("r/")
        .or_else(|| n.strip_prefix("R/"))
        .unwrap_or(n);
    n.trim_end_matches('/').to_lowercase()
}

fn hashtag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#(\w+)").expect("hashtag pattern compiles"))
}

/// Every `#tag` in order of appearance, lowercased without the `#`.
pub fn hashtags_from_text(text: &str) -> Vec<String> {
    hashtag_re()
        .captures_iter(text)
        .map(|c| c[1].to_lowercase())
        .collect()
}

/// ASCII letters, digits and underscore only.
pub fn is_english_like(hashtag: &str) -> bool {
    !hashtag.is_empty()
        && hashtag
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Entity extraction settings shared by the corpus and SERP sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extractor {
    pub kind: EntityKind,
    /// Drop hashtags that fail [`is_english_like`].
    pub english_only: bool,
}

impl Extractor {
    pub fn new(kind: EntityKind) -> Self {
        Extractor {
            kind,
            english_only: true,
        }
    }

    fn keep(&self, tag: &str) -> bool {
        !self.english_only || is_english_like(tag)
    }

    fn hashtags(&self, text: &str) -> impl Iterator<Item = String> + '_ {
        hashtags_from_text(text)
            .into_iter()
            .filter(move |t| self.keep(t))
    }

    /// Entities carried by one corpus record. `field` is the subreddit field
    /// for subreddits and the text field for hashtags.
    pub fn from_record(&self, record: &Value, field: &str) -> Vec<String> {
        let Some(value) = extract_str(record, field) else {
            return Vec::new();
        };
        match self.kind {
            EntityKind::Subreddit => {
                let s = normalize_subreddit(value);
                if s.is_empty() {
                    Vec::new()
                } else {
                    vec![s]
                }
            }
            EntityKind::Hashtag => self.hashtags(value).collect(),
        }
    }

    /// Entity counts over the distinct URLs of a result set.
    pub fn from_serp(&self, results: &SerpResultSet) -> TokenCounts {
        let mut counts = TokenCounts::new(format!("serp:{}", results.spec.render()));
        for item in results.unique_items() {
            match self.kind {
                EntityKind::Subreddit => {
                    if let Some(s) = subreddit_from_url(&item.url) {
                        counts.increment(&s);
                    }
                }
                EntityKind::Hashtag => {
                    for tag in self.hashtags(&item.title).chain(self.hashtags(&item.snippet)) {
                        counts.increment(&tag);
                    }
                }
            }
        }
        counts
    }
}

/// SERP-side entity counts with the default (English-only) hashtag filter.
pub fn extract_from_serp(results: &SerpResultSet, kind: EntityKind) -> TokenCounts {
    Extractor::new(kind).from_serp(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serp_client::{build_query, SerpItem};
    use serde_json::json;

    #[test]
    fn subreddit_urls() {
        assert_eq!(
            subreddit_from_url("https://www.reddit.com/r/AskReddit/comments/x1/some_title/").as_deref(),
            Some("askreddit")
        );
        assert_eq!(subreddit_from_url("https://reddit.com/user/foo"), None);
        assert_eq!(subreddit_from_url("https://old.reddit.com/r/ffxiv/").as_deref(), Some("ffxiv"));
        assert_eq!(subreddit_from_url("https://example.com/r/ffxiv/"), None);
        assert_eq!(subreddit_from_url("https://www.reddit.com/r/"), None);
        assert_eq!(subreddit_from_url("not a url"), None);
    }

    #[test]
    fn hashtag_scanning() {
        assert_eq!(hashtags_from_text("gm #NFT #nft!"), vec!["nft", "nft"]);
        assert!(hashtags_from_text("no tags here").is_empty());
        assert_eq!(hashtags_from_text("#unga77 live"), vec!["unga77"]);
        assert!(hashtags_from_text("lone # sign").is_empty());
    }

    #[test]
    fn english_heuristic() {
        assert!(is_english_like("peaceday"));
        assert!(!is_english_like("ドラマ"));
        assert!(is_english_like("unga77"));
        assert!(is_english_like("web_3"));
        assert!(!is_english_like(""));
    }

    #[test]
    fn record_extraction() {
        let ex = Extractor::new(EntityKind::Subreddit);
        assert_eq!(ex.from_record(&json!({"subreddit": "r/Cooking"}), "subreddit"), vec!["cooking"]);
        assert!(ex.from_record(&json!({}), "subreddit").is_empty());
        let ex = Extractor::new(EntityKind::Hashtag);
        assert_eq!(
            ex.from_record(&json!({"text": "#NFT #nft #ドラマ #eth"}), "text"),
            vec!["nft", "nft", "eth"]
        );
        let ex = Extractor {
            english_only: false,
            ..ex
        };
        assert_eq!(ex.from_record(&json!({"text": "#ドラマ"}), "text"), vec!["ドラマ"]);
    }

    fn result_set(items: &[(&str, &str, &str, u32)]) -> SerpResultSet {
        let spec = build_query("k", "reddit.com", "2023-01-01".parse().unwrap(), "2023-01-31".parse().unwrap())
            .unwrap();
        SerpResultSet {
            spec,
            items: items
                .iter()
                .enumerate()
                .map(|(i, (url, title, snippet, rep))| SerpItem {
                    url: url.to_string(),
                    title: title.to_string(),
                    snippet: snippet.to_string(),
                    page_rank_position: i as u32 + 1,
                    repetition_index: *rep,
                })
                .collect(),
            fetched_at: Vec::new(),
        }
    }

    #[test]
    fn serp_subreddits_count_unique_urls() {
        let rs = result_set(&[
            ("https://www.reddit.com/r/cooking/comments/1/", "", "", 0),
            ("https://www.reddit.com/r/cooking/comments/2/", "", "", 0),
            ("https://www.reddit.com/r/Cooking/comments/3/", "", "", 0),
            ("https://www.reddit.com/r/cooking/comments/1/", "", "", 1),
        ]);
        let c = extract_from_serp(&rs, EntityKind::Subreddit);
        assert_eq!(c.get("cooking"), 3);
        assert_eq!(c.total(), 3);
    }

    #[test]
    fn serp_hashtags_from_titles_and_snippets() {
        let rs = result_set(&[
            ("https://twitter.com/a/status/1", "", "... #linux ...", 0),
            ("https://twitter.com/a/status/2", "", "... #linux #money ...", 0),
        ]);
        let c = extract_from_serp(&rs, EntityKind::Hashtag);
        assert_eq!(c.get("linux"), 2);
        assert_eq!(c.get("money"), 1);
        assert!(extract_from_serp(&result_set(&[]), EntityKind::Hashtag).is_empty());
    }
}
