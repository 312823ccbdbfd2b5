//! Audit how a search engine's results over- or under-represent communities
//! (subreddits) and topics (hashtags) relative to a full platform corpus.
//!
//! The pipeline streams corpus dumps ([`corpus_ingest`]), builds a filtered
//! vocabulary and a frequency-stratified keyword sample ([`lexicon`]), issues
//! `site:`-restricted queries ([`serp_client`]), extracts entities from both
//! sides ([`entity_extract`]), and compares the two rankings with Rank
//! Turbulence Divergence ([`rank_divergence`]) plus supporting statistics
//! ([`analytics`]). [`pipeline`] ties the stages together from a TOML config.

pub mod analytics;
pub mod corpus_ingest;
pub mod entity_extract;
pub mod lexicon;
pub mod pipeline;
pub mod rank_divergence;
pub mod serp_client;

pub use corpus_ingest::{count_entities, extract_field, merge_counts, open_stream, RecordStream, TokenCounts};
pub use entity_extract::{extract_from_serp, EntityKind};
pub use lexicon::{build_vocabulary, stratified_sample, tokenize, KeywordSample, Vocabulary};
pub use rank_divergence::{element_divergence, rank, rtd, signed_contributions, DivergenceReport, RankedDistribution};
pub use serp_client::{build_query, Fetcher, SerpQuerySpec, SerpResultSet};

/// Round to 12 decimal places for emitted reports, so the last-ulp
/// differences between platform math libraries do not reach the output.
pub fn report_float(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let r = (x * 1e12).round() / 1e12;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}
