//! Supporting statistics: log-log regression with permutation p-values,
//! hexagonal binning, group proportions, normal-approximation confidence
//! intervals and keyword cross-validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::lexicon::KeywordSample;
use crate::report_float;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("labelled entities without a group: {}", .0.join(", "))]
    MissingGroup(Vec<String>),
    #[error("{path}: {reason}")]
    Table { path: PathBuf, reason: String },
    #[error("evaluator failed: {0}")]
    Evaluator(String),
}

/// `log10(max(count, 1))`.
pub fn log_count(count: u64) -> f64 {
    (count.max(1) as f64).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub p_value: f64,
    pub n: usize,
    /// Points with a zero coordinate, mapped to log10(1) = 0.
    pub clamped_points: usize,
    pub permutations: usize,
    pub seed: u64,
}

impl RegressionResult {
    pub fn rounded(&self) -> RegressionResult {
        RegressionResult {
            slope: report_float(self.slope),
            intercept: report_float(self.intercept),
            r_squared: report_float(self.r_squared),
            p_value: report_float(self.p_value),
            ..self.clone()
        }
    }
}

/// Simple least-squares line through `(xs, ys)`: `(slope, intercept, r²)`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64), AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::Argument("x and y lengths differ".into()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(AnalyticsError::Degenerate(format!("need at least 2 points, got {n}")));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 || xs.iter().all(|x| *x == xs[0]) {
        return Err(AnalyticsError::Degenerate("x has zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 || ys.iter().all(|y| *y == ys[0]) {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok((slope, intercept, r2))
}

/// r² of every `y` permutation, seeded per iteration so the result does not
/// depend on scheduling.
fn permutation_p_value(xs: &[f64], ys: &[f64], observed: f64, permutations: usize, seed: u64) -> f64 {
    let at_least = (0..permutations)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut shuffled = ys.to_vec();
            shuffled.shuffle(&mut rng);
            let r2 = ols_fit(xs, &shuffled).map(|f| f.2).unwrap_or(0.0);
            r2 >= observed - 1e-12
        })
        .count();
    (at_least + 1) as f64 / (permutations + 1) as f64
}

/// OLS on `(log10 x, log10 y)` with a seeded permutation-test p-value.
pub fn loglog_regression(pairs: &[(u64, u64)], permutations: usize, seed: u64) -> Result<RegressionResult, AnalyticsError> {
    if permutations == 0 {
        return Err(AnalyticsError::Argument("permutations must be at least 1".into()));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| log_count(p.0)).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| log_count(p.1)).collect();
    let (slope, intercept, r_squared) = ols_fit(&xs, &ys)?;
    let p_value = permutation_p_value(&xs, &ys, r_squared, permutations, seed);
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        p_value,
        n: pairs.len(),
        clamped_points: pairs.iter().filter(|p| p.0 == 0 || p.1 == 0).count(),
        permutations,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexBin {
    /// Axial lattice coordinates.
    pub q: i64,
    pub r: i64,
    pub center_x: f64,
    pub center_y: f64,
    pub count: u64,
}

/// Nearest lattice cell of a pointy-top hexagonal grid whose centres are
/// `bin_width` apart horizontally.
pub fn hex_cell(x: f64, y: f64, bin_width: f64) -> (i64, i64) {
    let size = bin_width / 3f64.sqrt();
    let q = (3f64.sqrt() / 3.0 * x - y / 3.0) / size;
    let r = (2.0 / 3.0 * y) / size;
    cube_round(q, r)
}

fn cube_round(q: f64, r: f64) -> (i64, i64) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i64, rr as i64)
}

pub fn hex_center(q: i64, r: i64, bin_width: f64) -> (f64, f64) {
    let size = bin_width / 3f64.sqrt();
    (bin_width * (q as f64 + r as f64 / 2.0), 1.5 * size * r as f64)
}

/// Bin points (already in plot coordinates) on the hex lattice.
pub fn hexbin_points(points: &[(f64, f64)], bin_width: f64) -> Result<Vec<HexBin>, AnalyticsError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(AnalyticsError::Argument(format!("bin width must be positive, got {bin_width}")));
    }
    let mut cells: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    for &(x, y) in points {
        let (q, r) = hex_cell(x, y, bin_width);
        *cells.entry((r, q)).or_insert(0) += 1;
    }
    Ok(cells
        .into_iter()
        .map(|((r, q), count)| {
            let (center_x, center_y) = hex_center(q, r, bin_width);
            HexBin {
                q,
                r,
                center_x,
                center_y,
                count,
            }
        })
        .collect())
}

/// Log-transform count pairs and bin them; output is ordered by `(r, q)`.
pub fn hexbin(pairs: &[(u64, u64)], bin_width: f64) -> Result<Vec<HexBin>, AnalyticsError> {
    let points: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (log_count(x), log_count(y))).collect();
    hexbin_points(&points, bin_width)
}

pub fn hexbin_csv(bins: &[HexBin]) -> String {
    let mut s = String::from("q,r,center_x,center_y,count\n");
    for b in bins {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            b.q,
            b.r,
            report_float(b.center_x),
            report_float(b.center_y),
            b.count
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    InSerp,
    NotInSerp,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::InSerp, Group::NotInSerp];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::InSerp => "in_serp",
            Group::NotInSerp => "not_in_serp",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "in_serp" => Ok(Group::InSerp),
            "not_in_serp" => Ok(Group::NotInSerp),
            other => Err(AnalyticsError::Argument(format!("unknown group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub groups: BTreeMap<Group, BTreeMap<String, f64>>,
    pub counts: BTreeMap<Group, BTreeMap<String, u64>>,
    pub warnings: Vec<String>,
}

/// Category proportions within each group. Groups with no labelled entity are left out.
pub fn group_proportions(
    labels: &BTreeMap<String, String>,
    membership: &BTreeMap<String, Group>,
) -> Result<GroupComparison, AnalyticsError> {
    let offenders: Vec<String> = labels
        .keys()
        .filter(|e| !membership.contains_key(*e))
        .cloned()
        .collect();
    if !offenders.is_empty() {
        return Err(AnalyticsError::MissingGroup(offenders));
    }
    let mut out = GroupComparison::default();
    for (entity, category) in labels {
        let g = membership[entity];
        *out.counts.entry(g).or_default().entry(category.clone()).or_insert(0) += 1;
    }
    for g in Group::ALL {
        match out.counts.get(&g) {
            Some(cats) => {
                let total: u64 = cats.values().sum();
                let props = cats
                    .iter()
                    .map(|(c, n)| (c.clone(), *n as f64 / total as f64))
                    .collect();
                out.groups.insert(g, props);
            }
            None => {
                let msg = format!("group {g} has no labelled entities; excluded");
                log::warn!("{msg}");
                out.warnings.push(msg);
            }
        }
    }
    Ok(out)
}

impl GroupComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,category,count,proportion\n");
        for (g, cats) in &self.counts {
            for (c, n) in cats {
                s.push_str(&format!("{g},{},{n},{}\n", csv_field(c), report_float(self.groups[g][c])));
            }
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiStat {
    pub mean: f64,
    pub half_width: f64,
    pub level: f64,
    pub n: usize,
}

/// Two-sided standard normal quantile for a confidence level.
pub fn z_value(level: f64) -> Result<f64, AnalyticsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalyticsError::Argument(format!("confidence level must be in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// Mean with a normal-approximation interval `z · s / √n` (sample standard deviation).
pub fn mean_ci(scores: &[f64], level: f64) -> Result<CiStat, AnalyticsError> {
    if scores.is_empty() {
        return Err(AnalyticsError::Argument("no scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(AnalyticsError::Argument(format!("score {bad} outside [0, 1]")));
    }
    let z = z_value(level)?;
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(CiStat {
        mean,
        half_width: z * sd / (n as f64).sqrt(),
        level,
        n,
    })
}

/// One row of an external toxicity score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub post_id: String,
    pub group: String,
    pub toxic: f64,
    pub obscene: f64,
    pub insult: f64,
}

pub const SCORE_LABELS: [&str; 3] = ["toxic", "obscene", "insult"];

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>, AnalyticsError> {
    let table_err = |reason: String| AnalyticsError::Table {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
    let rows: Vec<ScoreRow> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| table_err(e.to_string()))?;
    for r in &rows {
        for (label, v) in SCORE_LABELS.iter().zip([r.toxic, r.obscene, r.insult]) {
            if !(0.0..=1.0).contains(&v) {
                return Err(table_err(format!("post {}: {label} = {v} outside [0, 1]", r.post_id)));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityRow {
    pub group: String,
    pub label: String,
    pub stat: CiStat,
}

/// Mean and interval of each score label per group, groups in ascending order.
pub fn toxicity_table(rows: &[ScoreRow], level: f64) -> Result<Vec<ToxicityRow>, AnalyticsError> {
    let mut by_group: BTreeMap<&str, Vec<&ScoreRow>> = BTreeMap::new();
    for r in rows {
        by_group.entry(r.group.as_str()).or_default().push(r);
    }
    let mut out = Vec::new();
    for (group, members) in by_group {
        for (i, label) in SCORE_LABELS.iter().enumerate() {
            let scores: Vec<f64> = members
                .iter()
                .map(|r| [r.toxic, r.obscene, r.insult][i])
                .collect();
            out.push(ToxicityRow {
                group: group.to_string(),
                label: label.to_string(),
                stat: mean_ci(&scores, level)?,
            });
        }
    }
    Ok(out)
}

pub fn toxicity_csv(rows: &[ToxicityRow]) -> String {
    let mut s = String::from("group,label,n,mean,half_width,level\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_field(&r.group),
            r.label,
            r.stat.n,
            report_float(r.stat.mean),
            report_float(r.stat.half_width),
            r.stat.level
        ));
    }
    s
}

/// Read an `entity,category` label table; entity names are normalized.
pub fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, String>, AnalyticsError> {
    #[derive(Deserialize)]
    struct Row {
        entity: String,
        category: String,
    }
    let table_err = |reason: String| AnalyticsError::Table {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| table_err(e.to_string()))?;
        out.insert(crate::corpus_ingest::normalize_key(&row.entity), row.category.trim().to_string());
    }
    Ok(out)
}

/// Read a two-column `x,y` count table (header required).
pub fn read_pairs_csv(path: &Path) -> Result<Vec<(u64, u64)>, AnalyticsError> {
    #[derive(Deserialize)]
    struct Row {
        x: u64,
        y: u64,
    }
    let table_err = |reason: String| AnalyticsError::Table {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| table_err(e.to_string()))?;
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| (r.x, r.y)).map_err(|e| table_err(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub keywords: Vec<String>,
    pub rtd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    pub folds: Vec<Fold>,
    pub subset_size: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation across folds.
    pub stdev: f64,
}

/// Seeded subsets of `fraction · |keywords|` keywords, original order kept.
pub fn crossval_subsets(
    keywords: &KeywordSample,
    folds: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<Vec<String>>, AnalyticsError> {
    if folds < 2 {
        return Err(AnalyticsError::Argument(format!("need at least 2 folds, got {folds}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AnalyticsError::Argument(format!("fraction must be in (0, 1), got {fraction}")));
    }
    let n = keywords.len();
    let size = (fraction * n as f64 + 1e-9).floor() as usize;
    if size == 0 {
        return Err(AnalyticsError::Argument(format!(
            "a {fraction} subset of {n} keywords is empty"
        )));
    }
    Ok((0..folds)
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| keywords.keywords[i].clone()).collect()
        })
        .collect())
}

/// Evaluate the divergence on each seeded keyword subset and summarize the spread.
pub fn keyword_crossval<F>(
    keywords: &KeywordSample,
    folds: usize,
    fraction: f64,
    seed: u64,
    mut evaluator: F,
) -> Result<CrossValResult, AnalyticsError>
where
    F: FnMut(&[String]) -> Result<f64, AnalyticsError>,
{
    let subsets = crossval_subsets(keywords, folds, fraction, seed)?;
    let subset_size = subsets[0].len();
    let mut out = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let rtd = evaluator(&subset)?;
        out.push(Fold { keywords: subset, rtd });
    }
    let vals: Vec<f64> = out.iter().map(|f| f.rtd).collect();
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let stdev = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    Ok(CrossValResult {
        folds: out,
        subset_size,
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        stdev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::SampleMeta;

    fn sample(n: usize) -> KeywordSample {
        KeywordSample {
            keywords: (0..n).map(|i| format!("kw{i}")).collect(),
            positions: (0..n).collect(),
            meta: SampleMeta {
                k: n,
                stride: 1,
                offset: 0,
                seed: 0,
                vocabulary_size: n,
                vocabulary_hash: String::new(),
            },
        }
    }

    #[test]
    fn collinear_powers_of_ten() {
        let pairs: Vec<(u64, u64)> = (0..5).map(|k| (10u64.pow(k), 10u64.pow(2 * k))).collect();
        let r = loglog_regression(&pairs, 99, 1).unwrap();
        assert_eq!(r.r_squared, 1.0);
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!(r.intercept.abs() < 1e-12);
    }

    #[test]
    fn collinear_general_squares() {
        let pairs: Vec<(u64, u64)> = (1..40u64).map(|x| (x, x * x)).collect();
        let r = loglog_regression(&pairs, 10, 1).unwrap();
        assert!((r.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_y_has_zero_r2() {
        let pairs: Vec<(u64, u64)> = (1..20u64).map(|x| (x, 7)).collect();
        let r = loglog_regression(&pairs, 50, 3).unwrap();
        assert_eq!(r.r_squared, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn degenerate_regressions() {
        assert!(matches!(loglog_regression(&[(1, 1)], 10, 0), Err(AnalyticsError::Degenerate(_))));
        assert!(matches!(loglog_regression(&[(5, 1), (5, 9)], 10, 0), Err(AnalyticsError::Degenerate(_))));
        assert!(matches!(loglog_regression(&[(1, 1), (2, 2)], 0, 0), Err(AnalyticsError::Argument(_))));
    }

    #[test]
    fn zero_counts_are_clamped_and_flagged() {
        let r = loglog_regression(&[(0, 1), (10, 10), (100, 1000)], 10, 0).unwrap();
        assert_eq!(r.clamped_points, 1);
    }

    #[test]
    fn hexbin_basics() {
        assert_eq!(hexbin(&[(10, 10)], 0.5).unwrap().len(), 1);
        let two = hexbin(&[(10, 10), (10, 10)], 0.5).unwrap();
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].count, 2);
        assert!(hexbin(&[(1, 1)], 0.0).is_err());
    }

    #[test]
    fn hex_centres_lie_on_lattice() {
        for q in -3..3 {
            for r in -3..3 {
                let (x, y) = hex_center(q, r, 0.7);
                assert_eq!(hex_cell(x, y, 0.7), (q, r));
            }
        }
        // neighbouring centres in a row are one bin width apart
        let (x0, _) = hex_center(0, 0, 0.7);
        let (x1, _) = hex_center(1, 0, 0.7);
        assert!((x1 - x0 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn proportions() {
        let labels: BTreeMap<String, String> = [("a", "public"), ("b", "public"), ("c", "forbidden")]
            .iter()
            .map(|(e, c)| (e.to_string(), c.to_string()))
            .collect();
        let membership: BTreeMap<String, Group> =
            [("a", Group::InSerp), ("b", Group::InSerp), ("c", Group::NotInSerp)]
                .iter()
                .map(|(e, g)| (e.to_string(), *g))
                .collect();
        let gc = group_proportions(&labels, &membership).unwrap();
        assert_eq!(gc.groups[&Group::InSerp]["public"], 1.0);
        assert_eq!(gc.groups[&Group::NotInSerp]["forbidden"], 1.0);
        assert!(gc.warnings.is_empty());
    }

    #[test]
    fn proportions_missing_group_and_empty_group() {
        let labels: BTreeMap<String, String> = [("a".to_string(), "x".to_string())].into();
        let err = group_proportions(&labels, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, AnalyticsError::MissingGroup(ref v) if v == &["a".to_string()]));
        let membership = [("a".to_string(), Group::InSerp)].into();
        let gc = group_proportions(&labels, &membership).unwrap();
        assert!(!gc.groups.contains_key(&Group::NotInSerp));
        assert_eq!(gc.warnings.len(), 1);
    }

    #[test]
    fn ci_values() {
        let c = mean_ci(&[0.5; 10], 0.95).unwrap();
        assert_eq!(c.mean, 0.5);
        assert_eq!(c.half_width, 0.0);
        let c = mean_ci(&[0.0, 1.0], 0.95).unwrap();
        let expected = 1.959964 * 0.5f64.sqrt() / 2f64.sqrt();
        assert!((c.half_width - expected).abs() < 1e-6);
        assert!((z_value(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!(mean_ci(&[], 0.95).is_err());
        assert!(mean_ci(&[1.5], 0.95).is_err());
        assert_eq!(mean_ci(&[0.3], 0.95).unwrap().half_width, 0.0);
    }

    #[test]
    fn crossval_constant_evaluator() {
        let r = keyword_crossval(&sample(1000), 5, 0.8, 11, |_| Ok(0.5)).unwrap();
        assert_eq!(r.stdev, 0.0);
        assert_eq!(r.folds.len(), 5);
        assert!(r.folds.iter().all(|f| f.keywords.len() == 800));
        assert_eq!(r.subset_size, 800);
    }

    #[test]
    fn crossval_is_deterministic_and_folds_differ() {
        let a = crossval_subsets(&sample(50), 5, 0.8, 3).unwrap();
        let b = crossval_subsets(&sample(50), 5, 0.8, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for s in &a {
            let mut sorted = s.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), 40);
        }
    }

    #[test]
    fn crossval_argument_errors() {
        assert!(crossval_subsets(&sample(10), 1, 0.8, 0).is_err());
        assert!(crossval_subsets(&sample(10), 5, 1.0, 0).is_err());
        assert!(crossval_subsets(&sample(1), 5, 0.5, 0).is_err());
    }

    #[test]
    fn pairs_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        std::fs::write(&p, "x,y\n10,3\n0,7\n").unwrap();
        assert_eq!(read_pairs_csv(&p).unwrap(), vec![(10, 3), (0, 7)]);
        std::fs::write(&p, "x,y\n-1,3\n").unwrap();
        assert!(read_pairs_csv(&p).is_err());
    }
}
