use proptest::prelude::*;
use serp_audit::entity_extract::{extract_from_serp, subreddit_from_url, EntityKind, Extractor};
use serp_audit::serp_client::{build_query, SerpItem, SerpResultSet};

fn item(url: String, title: String) -> SerpItem {
    SerpItem {
        url,
        title,
        snippet: String::new(),
        page_rank_position: 1,
        repetition_index: 0,
    }
}

fn result_set(items: Vec<SerpItem>) -> SerpResultSet {
    SerpResultSet {
        spec: build_query("k", "reddit.com", "2023-01-01".parse().unwrap(), "2023-01-31".parse().unwrap()).unwrap(),
        items,
        fetched_at: Vec::new(),
    }
}

fn url() -> impl Strategy<Value = String> {
    let sub = "[a-z][a-z0-9_]{0,10}";
    prop_oneof![
        (sub, "[a-z0-9]{4}").prop_map(|(s, id)| format!("https://www.reddit.com/r/{s}/comments/{id}/t/")),
        sub.prop_map(|s| format!("https://old.reddit.com/r/{s}/")),
        (sub, "[a-z]{3,8}").prop_map(|(s, host)| format!("https://{host}.com/r/{s}/")),
        "[a-z]{3,8}".prop_map(|u| format!("https://www.reddit.com/user/{u}")),
    ]
}

proptest! {
    #[test]
    fn subreddits_only_come_from_reddit_urls(urls in prop::collection::vec(url(), 0..40)) {
        let set = result_set(urls.iter().map(|u| item(u.clone(), String::new())).collect());
        let counts = extract_from_serp(&set, EntityKind::Subreddit);
        let expected: usize = {
            let mut seen = std::collections::HashSet::new();
            urls.iter()
                .filter(|u| seen.insert(u.as_str()))
                .filter(|u| u.contains("reddit.com/r/"))
                .count()
        };
        prop_assert_eq!(counts.total() as usize, expected);
        for (e, _) in counts.iter() {
            prop_assert!(urls.iter().any(|u| u.contains("reddit.com/r/") && subreddit_from_url(u).as_deref() == Some(e)));
        }
    }

    #[test]
    fn extraction_ignores_item_order(urls in prop::collection::vec(url(), 0..40), seed: u64) {
        let items: Vec<SerpItem> = urls.iter().map(|u| item(u.clone(), format!("about #{}", u.len()))).collect();
        let mut shuffled = items.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 1) >> 7) as usize % (i + 1));
        }
        for kind in [EntityKind::Subreddit, EntityKind::Hashtag] {
            let a = extract_from_serp(&result_set(items.clone()), kind);
            let b = extract_from_serp(&result_set(shuffled.clone()), kind);
            prop_assert_eq!(a.to_tsv(), b.to_tsv());
        }
    }

    #[test]
    fn hashtags_are_lowercase_words(text in "[ a-zA-Z0-9#_é!.]{0,80}") {
        let ex = Extractor::new(EntityKind::Hashtag);
        for tag in ex.from_record(&serde_json::json!({ "text": text }), "text") {
            prop_assert!(!tag.is_empty());
            prop_assert!(tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            prop_assert_eq!(tag.to_lowercase(), tag.clone());
        }
    }
}

#[test]
fn repeated_urls_count_once() {
    let u = "https://www.reddit.com/r/ffxiv/comments/abc/t/".to_string();
    let set = result_set(vec![
        item(u.clone(), "#Raid".into()),
        item(u, "#raid".into()),
        item("https://www.reddit.com/r/FFXIV/".into(), "#raid #Loot".into()),
    ]);
    let subs = extract_from_serp(&set, EntityKind::Subreddit);
    assert_eq!(subs.get("ffxiv"), 2);
    let tags = extract_from_serp(&set, EntityKind::Hashtag);
    assert_eq!(tags.get("raid"), 2);
    assert_eq!(tags.get("loot"), 1);
}

#[test]
fn non_english_hashtags_are_optional() {
    let set = result_set(vec![item("https://twitter.com/a/status/1".into(), "#ドラマ #drama".into())]);
    assert_eq!(extract_from_serp(&set, EntityKind::Hashtag).len(), 1);
    let all = Extractor {
        kind: EntityKind::Hashtag,
        english_only: false,
    };
    assert_eq!(all.from_serp(&set).len(), 2);
}
