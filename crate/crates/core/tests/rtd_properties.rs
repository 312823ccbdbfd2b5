mod support;

use proptest::prelude::*;
use serp_audit::rank_divergence::{
    self, absent_rank, element_divergence, rank, rtd, rtd_counts, signed_contributions, Direction, System,
    DEFAULT_ALPHA,
};
use serp_audit::TokenCounts;

fn table() -> impl Strategy<Value = TokenCounts> {
    prop::collection::btree_map("[a-h]{1,2}", 1u64..30, 1..40)
        .prop_map(|m| TokenCounts::from_pairs("t", m))
}

fn alpha() -> impl Strategy<Value = f64> {
    prop_oneof![Just(DEFAULT_ALPHA), 0.05f64..5.0]
}

proptest! {
    #[test]
    fn identity_is_zero(a in table(), al in alpha()) {
        let r = rtd_counts(&a, &a, al).unwrap();
        prop_assert!(r.total_rtd.abs() <= 1e-12);
        prop_assert!(r.per_entity.iter().all(|e| e.contribution == 0.0 && e.sign == 0));
    }

    #[test]
    fn symmetric(a in table(), b in table(), al in alpha()) {
        let ab = rtd_counts(&a, &b, al).unwrap().total_rtd;
        let ba = rtd_counts(&b, &a, al).unwrap().total_rtd;
        prop_assert!((ab - ba).abs() <= 1e-12, "{ab} vs {ba}");
    }

    #[test]
    fn nonnegative(a in table(), b in table(), al in alpha()) {
        prop_assert!(rtd_counts(&a, &b, al).unwrap().total_rtd >= 0.0);
    }

    #[test]
    fn disjoint_systems_normalize_to_one(a in table(), b in table(), al in alpha()) {
        let b = TokenCounts::from_pairs("b", b.iter().map(|(e, n)| (format!("z{e}"), n)));
        let t = rtd_counts(&a, &b, al).unwrap().total_rtd;
        prop_assert!((t - 1.0).abs() <= 1e-9, "{t}");
    }

    #[test]
    fn invariant_under_count_scaling(a in table(), b in table(), k in 2u64..50) {
        let scaled = TokenCounts::from_pairs("s", a.iter().map(|(e, n)| (e.to_string(), n * k)));
        let x = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap().total_rtd;
        let y = rtd_counts(&scaled, &b, DEFAULT_ALPHA).unwrap().total_rtd;
        prop_assert_eq!(x, y);
    }

    #[test]
    fn matches_oracle(a in table(), b in table(), al in alpha()) {
        let got = rtd_counts(&a, &b, al).unwrap().total_rtd;
        let want = support::oracle_rtd(&support::pairs(&a), &support::pairs(&b), al);
        prop_assert!((got - want).abs() <= 1e-12, "{got} vs oracle {want}");
    }

    #[test]
    fn contributions_sum_to_total(a in table(), b in table()) {
        let r = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap();
        let s: f64 = r.per_entity.iter().map(|e| e.contribution).sum();
        prop_assert!((s - r.total_rtd).abs() <= 1e-12);
        prop_assert!(r.per_entity.iter().all(|e| e.contribution >= 0.0));
    }

    #[test]
    fn signs_and_exclusivity_are_consistent(a in table(), b in table()) {
        let r = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap();
        for e in &r.per_entity {
            let expected = if e.rank_1 < e.rank_2 { 1 } else if e.rank_1 > e.rank_2 { -1 } else { 0 };
            prop_assert_eq!(e.sign, expected);
            match e.exclusive_to {
                Some(System::First) => prop_assert!(a.contains(&e.entity) && !b.contains(&e.entity)),
                Some(System::Second) => prop_assert!(!a.contains(&e.entity) && b.contains(&e.entity)),
                None => prop_assert!(a.contains(&e.entity) && b.contains(&e.entity)),
            }
        }
    }

    #[test]
    fn fractional_ranks_match_oracle(a in table()) {
        let ours = rank(&a).unwrap();
        let theirs = support::oracle_ranks(&support::pairs(&a));
        prop_assert_eq!(ours.len(), theirs.len());
        for (e, r) in ours.ranks_by_entity() {
            prop_assert_eq!(r, theirs[e]);
        }
        // tied ranks still sum to 1 + 2 + ... + n
        let n = ours.len() as f64;
        let total: f64 = ours.ranks_by_entity().map(|(_, r)| r).sum();
        prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn element_divergence_symmetric_and_zero_on_diagonal(r1 in 1.0f64..1e4, r2 in 1.0f64..1e4, al in alpha()) {
        prop_assert_eq!(element_divergence(r1, r2, al).unwrap(), element_divergence(r2, r1, al).unwrap());
        prop_assert_eq!(element_divergence(r1, r1, al).unwrap(), 0.0);
    }
}

#[test]
fn oracle_agreement_on_seeded_families() {
    for i in 0..1000 {
        let (a, b) = support::random_instance(0x5eed, i);
        let got = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap().total_rtd;
        let want = support::oracle_rtd(&support::pairs(&a), &support::pairs(&b), DEFAULT_ALPHA);
        assert!((got - want).abs() <= 1e-12, "instance {i}: {got} vs {want}");
    }
}

#[test]
fn disjoint_is_one_nested_is_interior() {
    let a = TokenCounts::from_pairs("a", [("x", 5), ("y", 3), ("z", 3), ("w", 1)]);
    let b = TokenCounts::from_pairs("b", [("p", 9), ("q", 2)]);
    let t = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap().total_rtd;
    assert!((t - 1.0).abs() <= 1e-9, "{t}");

    let nested = TokenCounts::from_pairs("n", [("x", 5), ("y", 3)]);
    let t = rtd_counts(&a, &nested, DEFAULT_ALPHA).unwrap().total_rtd;
    assert!(t > 0.0 && t < 1.0, "{t}");
}

#[test]
fn dropping_only_the_last_entity_gives_zero() {
    // the dropped entity's absent rank equals its true rank
    let full = TokenCounts::from_pairs("f", [("a", 9), ("b", 5), ("c", 2)]);
    let top = TokenCounts::from_pairs("t", [("a", 9), ("b", 5)]);
    assert_eq!(rtd_counts(&top, &full, DEFAULT_ALPHA).unwrap().total_rtd, 0.0);
}

#[test]
fn disjoint_normalization_is_not_an_upper_bound_under_ties() {
    // a one-entity system against nine where the shared entity sits in a tie
    let one = TokenCounts::from_pairs("one", [("e5", 11)]);
    let nine = TokenCounts::from_pairs(
        "nine",
        [("e0", 21), ("e3", 9), ("e1", 1), ("e2", 1), ("e4", 1), ("e5", 1), ("e6", 1), ("e7", 1), ("e8", 1)],
    );
    let got = rtd_counts(&one, &nine, DEFAULT_ALPHA).unwrap().total_rtd;
    let want = support::oracle_rtd(&support::pairs(&one), &support::pairs(&nine), DEFAULT_ALPHA);
    assert!((got - want).abs() <= 1e-12);
    assert!(got > 1.1, "{got}");
}

#[test]
fn absent_ranks_follow_the_tail_convention() {
    assert_eq!(absent_rank(4, 1), 5.0);
    assert_eq!(absent_rank(4, 3), 6.0);
    let a = TokenCounts::from_pairs("a", [("x", 5), ("y", 3)]);
    let b = TokenCounts::from_pairs("b", [("x", 1), ("p", 4), ("q", 2)]);
    let r = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap();
    let by: std::collections::BTreeMap<_, _> = r.per_entity.iter().map(|e| (e.entity.as_str(), e)).collect();
    // p and q are missing from a (size 2): both sit at 2 + (2 + 1) / 2
    assert_eq!(by["p"].rank_1, 3.5);
    assert_eq!(by["q"].rank_1, 3.5);
    // y is missing from b (size 3)
    assert_eq!(by["y"].rank_2, 4.0);
}

#[test]
fn promoted_and_suppressed_lists_partition_by_sign() {
    let a = TokenCounts::from_pairs("serp", [("gaming", 50), ("news", 10), ("cooking", 5)]);
    let b = TokenCounts::from_pairs("corpus", [("nsfw", 90), ("news", 40), ("gaming", 20), ("cooking", 1)]);
    let r = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap();
    let up = signed_contributions(&r, 10, Direction::PromotedIn1);
    let down = signed_contributions(&r, 10, Direction::PromotedIn2);
    assert!(up.iter().all(|e| e.sign == 1));
    assert!(down.iter().all(|e| e.sign == -1));
    assert_eq!(up[0].entity, "gaming");
    assert_eq!(down[0].entity, "nsfw");
    assert!(up.windows(2).all(|w| w[0].contribution >= w[1].contribution));
    assert_eq!(signed_contributions(&r, 1, Direction::PromotedIn1).len(), 1);
}

#[test]
fn mean_of_reports() {
    let a = TokenCounts::from_pairs("a", [("x", 2), ("y", 1)]);
    let b = TokenCounts::from_pairs("b", [("p", 1)]);
    let r1 = rtd_counts(&a, &a, DEFAULT_ALPHA).unwrap();
    let r2 = rtd_counts(&a, &b, DEFAULT_ALPHA).unwrap();
    let m = rank_divergence::mean_rtd(&[r1, r2]).unwrap();
    assert!((m - 0.5).abs() < 1e-12);
    assert_eq!(rank_divergence::mean_rtd(&[]), None);
}

#[test]
fn rtd_rejects_bad_inputs() {
    let a = rank(&TokenCounts::from_pairs("a", [("x", 1)])).unwrap();
    assert!(rtd(&a, &a, 0.0).is_err());
    assert!(rtd(&a, &a, f64::NAN).is_err());
    assert!(rank(&TokenCounts::new("empty")).is_err());
    assert!(element_divergence(0.0, 1.0, DEFAULT_ALPHA).is_err());
}
