//! Rank Turbulence Divergence between two ranked entity distributions.
//!
//! Entities are ranked from most to least active with fractional tied ranks.
//! For every entity in the union of both systems the element divergence
//!
//! ```text
//! δ(r1, r2) = | r1^(-α) - r2^(-α) |^(1 / (α + 1))
//! ```
//!
//! is summed, multiplied by `(α + 1) / α`, and divided by a normalization
//! `N` obtained by evaluating the same prefactored sum on the fully disjoint
//! arrangement of the two systems. Identical rankings score 0 and disjoint
//! ones score 1.
//!
//! An entity missing from a system of `n` entities, in a union where `a`
//! entities are missing from it, gets the shared tied rank `n + (a + 1) / 2`.
//!
//! All reductions run in entity-ascending order so reports are bitwise
//! reproducible; swapping the systems gives the same total bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_ingest::TokenCounts;
use crate::report_float;

#[derive(Debug, Error, PartialEq)]
pub enum DivergenceError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// The conventional weighting of rare versus common entities.
pub const DEFAULT_ALPHA: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub entity: String,
    pub count: u64,
    pub rank: f64,
}

/// Entities ordered by activity with fractional tied ranks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDistribution {
    entries: Vec<RankedEntry>,
    ranks: BTreeMap<String, f64>,
}

/// Rank entities by count, highest first; ties share the mean of their positions.
pub fn rank(counts: &TokenCounts) -> Result<RankedDistribution, DivergenceError> {
    if counts.is_empty() {
        return Err(DivergenceError::Argument("cannot rank an empty count table".into()));
    }
    let sorted = counts.sorted_desc();
    let mut entries = Vec::with_capacity(sorted.len());
    let mut start = 0;
    while start < sorted.len() {
        let count = sorted[start].1;
        let end = start + sorted[start..].iter().take_while(|(_, c)| *c == count).count();
        // positions start+1 ..= end share their mean
        let tied = (start + 1 + end) as f64 / 2.0;
        entries.extend(sorted[start..end].iter().map(|(e, c)| RankedEntry {
            entity: e.to_string(),
            count: *c,
            rank: tied,
        }));
        start = end;
    }
    let ranks = entries.iter().map(|e| (e.entity.clone(), e.rank)).collect();
    Ok(RankedDistribution { entries, ranks })
}

impl RankedDistribution {
    /// Entries in rank-ascending, then entity-ascending order.
    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rank_of(&self, entity: &str) -> Option<f64> {
        self.ranks.get(entity).copied()
    }

    /// Entity names in ascending order.
    pub fn domain(&self) -> impl Iterator<Item = &str> + '_ {
        self.ranks.keys().map(String::as_str)
    }

    /// Ranks in entity order.
    pub fn ranks_by_entity(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.ranks.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn check_alpha(alpha: f64) -> Result<(), DivergenceError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(DivergenceError::Argument(format!("alpha must be positive and finite, got {alpha}")))
    }
}

#[inline]
fn delta(r1: f64, r2: f64, alpha: f64) -> f64 {
    (r1.powf(-alpha) - r2.powf(-alpha)).abs().powf(1.0 / (alpha + 1.0))
}

/// `| r1^(-α) - r2^(-α) |^(1 / (α + 1))`.
pub fn element_divergence(r1: f64, r2: f64, alpha: f64) -> Result<f64, DivergenceError> {
    check_alpha(alpha)?;
    if !(r1 > 0.0 && r2 > 0.0) || !r1.is_finite() || !r2.is_finite() {
        return Err(DivergenceError::Argument(format!("ranks must be positive, got {r1} and {r2}")));
    }
    Ok(delta(r1, r2, alpha))
}

/// The tied rank shared by the `absent` entities missing from a system of `size` entities.
pub fn absent_rank(size: usize, absent: usize) -> f64 {
    size as f64 + (absent as f64 + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum System {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDivergence {
    pub entity: String,
    pub rank_1: f64,
    pub rank_2: f64,
    /// Normalized share of the total; contributions sum to `total_rtd`.
    pub contribution: f64,
    /// +1 when ranked higher (smaller rank) in system 1, -1 in system 2, 0 if equal.
    pub sign: i8,
    pub exclusive_to: Option<System>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub alpha: f64,
    pub total_rtd: f64,
    /// `N`, the prefactored divergence of the disjoint arrangement.
    pub normalization: f64,
    pub size_1: usize,
    pub size_2: usize,
    /// Entity-ascending.
    pub per_entity: Vec<EntityDivergence>,
}

/// Rank Turbulence Divergence of `first` against `second`.
pub fn rtd(
    first: &RankedDistribution,
    second: &RankedDistribution,
    alpha: f64,
) -> Result<DivergenceReport, DivergenceError> {
    check_alpha(alpha)?;
    if first.is_empty() || second.is_empty() {
        return Err(DivergenceError::Argument("both distributions must be nonempty".into()));
    }
    let union: BTreeSet<&str> = first.domain().chain(second.domain()).collect();
    let (n1, n2) = (first.len(), second.len());
    let absent_1 = absent_rank(n1, union.len() - n1);
    let absent_2 = absent_rank(n2, union.len() - n2);

    let prefactor = (alpha + 1.0) / alpha;

    let disjoint_1 = absent_rank(n2, n1);
    let disjoint_2 = absent_rank(n1, n2);
    let part_1: f64 = first.ranks_by_entity().map(|(_, r)| delta(r, disjoint_1, alpha)).sum();
    let part_2: f64 = second.ranks_by_entity().map(|(_, r)| delta(r, disjoint_2, alpha)).sum();
    let normalization = prefactor * (part_1 + part_2);

    let mut per_entity = Vec::with_capacity(union.len());
    let mut raw_sum = 0.0;
    for entity in union {
        let in_1 = first.rank_of(entity);
        let in_2 = second.rank_of(entity);
        let rank_1 = in_1.unwrap_or(absent_1);
        let rank_2 = in_2.unwrap_or(absent_2);
        let d = delta(rank_1, rank_2, alpha);
        raw_sum += d;
        let sign = match rank_1.partial_cmp(&rank_2) {
            Some(std::cmp::Ordering::Less) => 1,
            Some(std::cmp::Ordering::Greater) => -1,
            _ => 0,
        };
        let exclusive_to = match (in_1, in_2) {
            (Some(_), None) => Some(System::First),
            (None, Some(_)) => Some(System::Second),
            _ => None,
        };
        per_entity.push(EntityDivergence {
            entity: entity.to_string(),
            rank_1,
            rank_2,
            contribution: prefactor * d / normalization,
            sign,
            exclusive_to,
        });
    }

    Ok(DivergenceReport {
        alpha,
        total_rtd: prefactor * raw_sum / normalization,
        normalization,
        size_1: n1,
        size_2: n2,
        per_entity,
    })
}

/// Convenience wrapper ranking both count tables first.
pub fn rtd_counts(first: &TokenCounts, second: &TokenCounts, alpha: f64) -> Result<DivergenceReport, DivergenceError> {
    rtd(&rank(first)?, &rank(second)?, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Entities ranked more prominently in system 1.
    PromotedIn1,
    /// Entities ranked more prominently in system 2.
    PromotedIn2,
}

/// The `k` largest contributions with the requested sign, ties by entity name.
pub fn signed_contributions(report: &DivergenceReport, k: usize, direction: Direction) -> Vec<&EntityDivergence> {
    let want = match direction {
        Direction::PromotedIn1 => 1,
        Direction::PromotedIn2 => -1,
    };
    let mut picked: Vec<&EntityDivergence> = report.per_entity.iter().filter(|e| e.sign == want).collect();
    picked.sort_by(|a, b| {
        b.contribution
            .total_cmp(&a.contribution)
            .then_with(|| a.entity.cmp(&b.entity))
    });
    picked.truncate(k);
    picked
}

/// Arithmetic mean of several totals, e.g. one per keyword.
pub fn mean_rtd(reports: &[DivergenceReport]) -> Option<f64> {
    if reports.is_empty() {
        return None;
    }
    Some(reports.iter().map(|r| r.total_rtd).sum::<f64>() / reports.len() as f64)
}

#[derive(Debug, Serialize)]
struct ReportHeader {
    alpha: f64,
    normalization: f64,
    total_rtd: f64,
    size_serp: usize,
    size_corpus: usize,
    union_size: usize,
}

impl DivergenceReport {
    /// Per-entity table, system 1 labelled as the SERP side. Rows are
    /// entity-ascending and floats are rounded to 12 decimals.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["entity", "rank_serp", "rank_corpus", "contribution", "sign", "exclusive"])
            .expect("in-memory csv");
        for e in &self.per_entity {
            let exclusive = match e.exclusive_to {
                Some(System::First) => "1",
                Some(System::Second) => "2",
                None => "",
            };
            w.write_record([
                e.entity.as_str(),
                &report_float(e.rank_1).to_string(),
                &report_float(e.rank_2).to_string(),
                &report_float(e.contribution).to_string(),
                &e.sign.to_string(),
                exclusive,
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// JSON header with α, N and the total.
    pub fn header_json(&self) -> String {
        let header = ReportHeader {
            alpha: report_float(self.alpha),
            normalization: report_float(self.normalization),
            total_rtd: report_float(self.total_rtd),
            size_serp: self.size_1,
            size_corpus: self.size_2,
            union_size: self.per_entity.len(),
        };
        let mut s = serde_json::to_string_pretty(&header).expect("header serializes");
        s.push('\n');
        s
    }
}
