//! Independent reference implementations and generators shared by the
//! integration and acceptance tests. Nothing here calls into the library's
//! ranking or divergence code.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serp_audit::TokenCounts;

/// Fractional ranks by direct grouping of equal counts.
pub fn oracle_ranks(counts: &[(String, u64)]) -> HashMap<String, f64> {
    let mut v: Vec<&(String, u64)> = counts.iter().filter(|(_, c)| *c > 0).collect();
    v.sort_by_key(|e| std::cmp::Reverse(e.1));
    let mut out = HashMap::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j < v.len() && v[j].1 == v[i].1 {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let mean = (i + 1..=j).map(|p| p as f64).sum::<f64>() / (j - i) as f64;
        for e in &v[i..j] {
            out.insert(e.0.clone(), mean);
        }
        i = j;
    }
    out
}

fn mean_of_positions(from: usize, count: usize) -> f64 {
    (from..from + count).map(|p| p as f64).sum::<f64>() / count as f64
}

/// Unnormalized sum over the union; absent entities take the mean of the
/// positions just past the end of the system that lacks them.
fn oracle_sum(r1: &HashMap<String, f64>, r2: &HashMap<String, f64>, alpha: f64) -> f64 {
    let union: HashSet<&String> = r1.keys().chain(r2.keys()).collect();
    let missing_1 = union.len() - r1.len();
    let missing_2 = union.len() - r2.len();
    let tail_1 = if missing_1 > 0 { mean_of_positions(r1.len() + 1, missing_1) } else { f64::NAN };
    let tail_2 = if missing_2 > 0 { mean_of_positions(r2.len() + 1, missing_2) } else { f64::NAN };
    union
        .into_iter()
        .map(|e| {
            let a = *r1.get(e).unwrap_or(&tail_1);
            let b = *r2.get(e).unwrap_or(&tail_2);
            let d = 1.0 / a.powf(alpha) - 1.0 / b.powf(alpha);
            d.abs().powf(1.0 / (alpha + 1.0))
        })
        .sum()
}

/// Divergence normalized by the same computation on renamed, fully disjoint
/// copies of both systems. The common prefactor cancels.
pub fn oracle_rtd(c1: &[(String, u64)], c2: &[(String, u64)], alpha: f64) -> f64 {
    let r1 = oracle_ranks(c1);
    let r2 = oracle_ranks(c2);
    let raw = oracle_sum(&r1, &r2, alpha);
    let d1: HashMap<String, f64> = r1.iter().map(|(k, v)| (format!("left\u{1}{k}"), *v)).collect();
    let d2: HashMap<String, f64> = r2.iter().map(|(k, v)| (format!("right\u{1}{k}"), *v)).collect();
    raw / oracle_sum(&d1, &d2, alpha)
}

pub fn pairs(c: &TokenCounts) -> Vec<(String, u64)> {
    c.iter().map(|(e, n)| (e.to_string(), n)).collect()
}

/// Random count table over a pool of `pool` names; small counts force ties.
pub fn random_table(rng: &mut ChaCha8Rng, pool: usize, max_entities: usize, max_count: u64) -> TokenCounts {
    let n = rng.gen_range(1..=max_entities.min(pool));
    let mut names: Vec<usize> = (0..pool).collect();
    for i in 0..n {
        let j = rng.gen_range(i..pool);
        names.swap(i, j);
    }
    TokenCounts::from_pairs(
        "random",
        names[..n]
            .iter()
            .map(|i| (format!("e{i:03}"), rng.gen_range(1..=max_count))),
    )
}

/// Instance families used for oracle comparison: general overlap, nested,
/// disjoint, and heavy ties.
pub fn random_instance(seed: u64, i: u64) -> (TokenCounts, TokenCounts) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    match i % 4 {
        0 => (random_table(&mut rng, 60, 50, 40), random_table(&mut rng, 60, 50, 40)),
        1 => {
            let big = random_table(&mut rng, 60, 50, 20);
            let mut small = big.clone();
            let keep = rng.gen_range(1..=big.len());
            let mut seen = 0;
            small.retain(|_, _| {
                seen += 1;
                seen <= keep
            });
            (big, small)
        }
        2 => {
            let a = random_table(&mut rng, 30, 25, 10);
            let b_raw = random_table(&mut rng, 30, 25, 10);
            let b = TokenCounts::from_pairs("b", b_raw.iter().map(|(e, n)| (format!("x{e}"), n)));
            (a, b)
        }
        _ => (random_table(&mut rng, 40, 40, 3), random_table(&mut rng, 40, 40, 3)),
    }
}

/// Zipf-shaped term frequencies `floor(C / r)` over alphabetic names that
/// cannot collide with a stopword (none starts with `q`).
pub fn zipf_terms(n: usize) -> TokenCounts {
    TokenCounts::from_pairs(
        "zipf",
        (1..=n).map(|r| (format!("q{}", alpha_name(r)), (10_000_000 / r as u64).max(1))),
    )
}

/// Lowercase alphabetic name for `i` (bijective base 26, at least 3 letters).
pub fn alpha_name(i: usize) -> String {
    let mut n = i + 26 * 26 + 26;
    let mut s = Vec::new();
    while n > 0 {
        n -= 1;
        s.push(b'a' + (n % 26) as u8);
        n /= 26;
    }
    s.reverse();
    String::from_utf8(s).unwrap()
}

/// `y = 10^b · x^m` exactly on integer points, for collinear log-log data.
pub fn collinear_pairs() -> Vec<(u64, u64)> {
    (0..8u32).map(|k| (10u64.pow(k), 10u64.pow(k) * 1000)).collect()
}

/// Closed-form OLS via the normal equations `(XᵀX)β = Xᵀy`, solved by Cramer's rule.
pub fn normal_equations(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    let intercept = (sy * sxx - sx * sxy) / det;
    let slope = (n * sxy - sx * sy) / det;
    let mean_y = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    (slope, intercept, 1.0 - ss_res / ss_tot)
}
