mod common;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;

use common::*;
use disco::bicm::{fit_bicm, FitOptions};
use disco::community::{label_propagation, louvain_with_restarts, DEFAULT_MAX_SWEEPS, DEFAULT_RESTARTS};
use disco::graph::{build_bipartite, build_retweet_network};
use disco::pipeline::*;
use disco::projection::{validate_projection, Correction};
use disco::workflow::{run_stages, Stage};
use proptest::prelude::*;

fn open(name: &str) -> fs::File {
    fs::File::open(debate_fixture(name)).unwrap()
}

/// The chain wired by hand from library calls, without the stage runner.
fn library_chain() -> ReportTables {
    let states = read_states_csv(open("states.csv"), "states").unwrap();
    let tweets = read_tweets_jsonl(BufReader::new(open("tweets.jsonl")), "tweets").unwrap();
    let (kept, counts) = filter_tweets(tweets, &states, "en", FilterOrder::LanguageFirst).unwrap();
    let plain: Vec<TweetRecord> = kept.iter().map(|k| k.tweet.clone()).collect();
    let edges = retweet_edges(&plain);
    let g = build_bipartite(bipartite_records(&edges)).unwrap();
    let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
    let proj = validate_projection(&g, &m, 0.01, Correction::Fdr).unwrap();
    let louvain = louvain_with_restarts(&proj.to_graph(), 1.0, 0, DEFAULT_RESTARTS).unwrap();
    let net = build_retweet_network(retweet_records(&edges)).retain_components(2);
    let part = label_propagation(&net, &louvain.assignments(), 0, DEFAULT_MAX_SWEEPS).unwrap();
    let communities = part.assignments();
    let scores = read_bot_scores_csv(open("bot_scores.csv"), "scores").unwrap();
    let bots = decile_bot_classification(&scores).unwrap();
    let labels = read_labels_csv(open("labels.csv"), "labels").unwrap();
    let url_map = read_url_map_csv(open("url_map.csv"), "urls").unwrap();
    let ctx = ReportContext { states: &states, communities: &communities, labels: &labels, url_map: &url_map, bots: &bots };
    aggregate_reports(&kept, &counts, &ctx)
}

fn close(a: Option<f64>, b: f64) -> bool {
    a.is_some_and(|a| (a - b).abs() < 1e-9)
}

#[test]
fn fixture_report_matches_hand_counts() {
    let r = library_chain();
    let f = &r.filtering;
    assert_eq!((f.input, f.excluded_language, f.excluded_multi_state, f.excluded_no_state, f.kept), (10, 1, 1, 1, 7));

    let state = |n: &str| r.states.iter().find(|s| s.state == n).unwrap();
    assert_eq!((state("Pennsylvania").tweets, state("Pennsylvania").urls), (3, 3));
    assert_eq!((state("Florida").tweets, state("Florida").urls), (3, 4));
    assert_eq!((state("New Jersey").tweets, state("New Jersey").urls), (1, 2));

    let comm = |s: &str| r.communities.iter().find(|c| c.scope == s).unwrap();
    let c0 = comm("community-0");
    assert_eq!((c0.users, c0.tweets, c0.urls), (3, 3, 3));
    assert!(close(c0.tweets_swing_pct, 100.0) && close(c0.left_pct, 100.0) && close(c0.right_pct, 0.0));
    let c1 = comm("community-1");
    assert_eq!((c1.users, c1.tweets, c1.urls), (3, 3, 4));
    assert!(close(c1.right_pct, 75.0));
    let un = comm("unassigned");
    assert_eq!((un.users, un.tweets, un.urls), (1, 1, 2));
    assert!(close(un.tweets_safe_pct, 100.0) && close(un.left_pct, 50.0));
    let ds = comm("dataset");
    assert_eq!((ds.users, ds.tweets, ds.urls), (7, 7, 9));
    assert!(close(ds.tweets_swing_pct, 600.0 / 7.0));

    let rel = |s: &str, k: &str| r.reliability.iter().find(|x| x.scope == s && x.state_kind == k).unwrap();
    let d = rel("dataset", "all");
    assert!(close(d.t_pct, 400.0 / 9.0) && close(d.n_pct, 300.0 / 9.0));
    assert!(close(d.p_pct, 100.0 / 9.0) && close(d.unc_pct, 100.0 / 9.0) && close(d.s_pct, 0.0));
    let v = rel("validated", "all");
    assert!(close(v.t_pct, 300.0 / 7.0) && close(v.n_pct, 300.0 / 7.0) && close(v.p_pct, 100.0 / 7.0));
    let c1r = rel("community-1", "all");
    assert!(close(c1r.n_pct, 75.0) && close(c1r.p_pct, 25.0));
    assert_eq!(rel("validated", "safe").t_pct, None);

    let acc = |c: BotClass| r.accounts.iter().find(|a| a.scope == "dataset" && a.class == c).unwrap();
    assert_eq!((acc(BotClass::Human).users, acc(BotClass::Human).tweets, acc(BotClass::Human).urls), (2, 2, 2));
    assert_eq!((acc(BotClass::Bot).users, acc(BotClass::Bot).tweets, acc(BotClass::Bot).urls), (2, 2, 4));

    let bt = |l: &str| r.bot_traffic.iter().find(|b| b.scope == "dataset" && b.links == l).unwrap();
    let all = bt("all");
    assert_eq!(all.urls, 6);
    assert!(close(all.bot_pct, 200.0 / 3.0) && close(all.swing_bot_pct, 50.0) && close(all.safe_bot_pct, 100.0));
    assert_eq!(bt("T").urls, 3);
    assert!(close(bt("T").bot_pct, 100.0 / 3.0));
    assert_eq!(bt("N").urls, 1);
    assert!(close(bt("N").bot_pct, 100.0));

    let vir = |s: &str, k: &str, t: &str| {
        r.virality.iter().find(|v| v.scope == s && v.state_kind == k && v.tag == t).unwrap()
    };
    let va = vir("dataset", "all", "all");
    assert_eq!((va.distinct_links, va.shares), (5, 9));
    assert!(close(va.mean_shares, 1.8) && close(va.median_shares, 1.0));
    let vn = vir("community-1", "all", "N");
    assert_eq!((vn.distinct_links, vn.shares), (1, 3));
    assert!(close(vn.mean_shares, 3.0));

    assert_eq!((r.bot_classification.humans, r.bot_classification.bots), (2, 2));
}

#[test]
fn stage_runner_reproduces_committed_report() {
    let expected = fs::read(debate_fixture("expected_report.json")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run_stages(&Stage::ALL, &debate_config(dir.path().join("run"))).unwrap();
    let got = fs::read(dir.path().join("run/report/report.json")).unwrap();
    assert!(got == expected, "report.json differs from the committed expectation");

    let mut lib = serde_json::to_vec_pretty(&library_chain()).unwrap();
    lib.push(b'\n');
    assert!(lib == expected, "library chain and stage runner disagree");
}

#[test]
fn single_stratum_fixture() {
    let states = vec![StateSpec { name: "Arizona".into(), kind: StateKind::Swing }];
    let tweets: Vec<KeptTweet> = (0..4)
        .map(|i| kept(&format!("t{i}"), "a", StateKind::Swing, &["https://x.com/1", "https://y.org/2"][..i % 2 + 1]))
        .collect();
    let comm: BTreeMap<String, u32> = [("a".to_string(), 0)].into();
    let labels = DomainLabels::new(vec![label("x.com", ReliabilityTag::T)]).unwrap();
    let bots = decile_bot_classification(&scores_for(10)).unwrap();
    let url_map = UrlMap::default();
    let ctx = ReportContext { states: &states, communities: &comm, labels: &labels, url_map: &url_map, bots: &bots };
    let r = aggregate_reports(&tweets, &FilterCounts::default(), &ctx);
    let c0 = r.communities.iter().find(|c| c.scope == "community-0").unwrap();
    assert_eq!((c0.tweets, c0.urls), (4, 6));
    assert!(close(c0.tweets_swing_pct, 100.0));
    assert_eq!(c0.left_pct, None);
    assert!(r.notices.iter().any(|n| n.contains("orientation")));
    let row = r.reliability.iter().find(|x| x.scope == "community-0" && x.state_kind == "all").unwrap();
    assert!(close(row.t_pct, 100.0 * 4.0 / 6.0) && close(row.unc_pct, 100.0 * 2.0 / 6.0));
    let un = r.communities.iter().find(|c| c.scope == "unassigned").unwrap();
    assert_eq!(un.tweets, 0);
    assert_eq!(un.tweets_swing_pct, None);
}

fn kept(id: &str, author: &str, kind: StateKind, urls: &[&str]) -> KeptTweet {
    KeptTweet {
        tweet: TweetRecord {
            tweet_id: id.into(),
            author_id: author.into(),
            author_verified: false,
            text: String::new(),
            lang: "en".into(),
            urls: urls.iter().map(|u| u.to_string()).collect(),
            retweeted_author_id: None,
            retweeted_author_verified: None,
            timestamp: String::new(),
        },
        state: if kind == StateKind::Swing { "Arizona".into() } else { "Indiana".into() },
        state_kind: kind,
    }
}

fn label(d: &str, tag: ReliabilityTag) -> DomainLabel {
    DomainLabel { domain: d.into(), tag, orientation: None }
}

fn scores_for(n: usize) -> Vec<BotScoreRecord> {
    (0..n).map(|i| BotScoreRecord { user_id: format!("s{i}"), score: i as f64 / n as f64 }).collect()
}

const WORDS: [&str; 10] =
    ["Arizona", "florida", "#Michigan", "new jersey", "Indiana", "vote", "tonight", "count", "NewJersey", "the"];

fn arb_tweets() -> impl Strategy<Value = Vec<TweetRecord>> {
    prop::collection::vec((prop::collection::vec(0..WORDS.len(), 0..5), prop::bool::ANY), 0..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (w, en))| TweetRecord {
                tweet_id: i.to_string(),
                author_id: format!("u{}", i % 7),
                author_verified: false,
                text: w.iter().map(|&k| WORDS[k]).collect::<Vec<_>>().join(" "),
                lang: if en { "en".into() } else { "es".into() },
                urls: vec![],
                retweeted_author_id: None,
                retweeted_author_verified: None,
                timestamp: String::new(),
            })
            .collect()
    })
}

const URLS: [&str; 8] = [
    "https://a.com/1",
    "https://a.com/2",
    "https://b.net/x",
    "https://c.org",
    "https://d.co.uk/p",
    "https://e.info/q",
    "not a url",
    "https://b.net/y",
];

/// Random kept tweets over five authors, three of them in communities, with
/// URLs drawn from a pool labelled with every tag.
fn arb_kept(max_urls: usize) -> impl Strategy<Value = Vec<KeptTweet>> {
    prop::collection::vec((0..5usize, prop::bool::ANY, prop::collection::vec(0..URLS.len(), 0..=max_urls)), 1..40)
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (a, swing, u))| {
                    let urls: Vec<&str> = u.iter().map(|&k| URLS[k]).collect();
                    let kind = if swing { StateKind::Swing } else { StateKind::Safe };
                    kept(&i.to_string(), &format!("s{a}"), kind, &urls)
                })
                .collect()
        })
}

fn report_for(tweets: &[KeptTweet]) -> ReportTables {
    let states = vec![
        StateSpec { name: "Arizona".into(), kind: StateKind::Swing },
        StateSpec { name: "Indiana".into(), kind: StateKind::Safe },
    ];
    let comm: BTreeMap<String, u32> = [("s0".to_string(), 0), ("s1".to_string(), 0), ("s2".to_string(), 1)].into();
    let labels = DomainLabels::new(vec![
        label("a.com", ReliabilityTag::T),
        label("b.net", ReliabilityTag::N),
        label("c.org", ReliabilityTag::P),
        label("d.co.uk", ReliabilityTag::S),
    ])
    .unwrap();
    let bots = decile_bot_classification(&scores_for(20)).unwrap();
    let url_map = UrlMap::default();
    let ctx = ReportContext { states: &states, communities: &comm, labels: &labels, url_map: &url_map, bots: &bots };
    aggregate_reports(tweets, &FilterCounts::default(), &ctx)
}

proptest! {
    #[test]
    fn every_tweet_lands_in_one_bucket(tweets in arb_tweets()) {
        let states = read_states_csv(open("states.csv"), "states").unwrap();
        let (kept_a, a) = filter_tweets(tweets.clone(), &states, "en", FilterOrder::LanguageFirst).unwrap();
        let (kept_b, b) = filter_tweets(tweets.clone(), &states, "en", FilterOrder::StateFirst).unwrap();
        for c in [&a, &b] {
            prop_assert_eq!(c.excluded_language + c.excluded_multi_state + c.excluded_no_state + c.kept, tweets.len());
        }
        prop_assert_eq!(kept_a, kept_b);
    }

    #[test]
    fn reliability_shares_sum_to_100(tweets in arb_kept(3)) {
        let r = report_for(&tweets);
        for row in &r.reliability {
            let parts = [row.t_pct, row.n_pct, row.p_pct, row.s_pct, row.unc_pct];
            if row.urls == 0 {
                prop_assert!(parts.iter().all(Option::is_none));
            } else {
                let s: f64 = parts.iter().map(|p| p.unwrap()).sum();
                prop_assert!((s - 100.0).abs() < 1e-9, "{} {} sums to {s}", row.scope, row.state_kind);
            }
        }
        // subgroup counts add up to their parent
        let find = |s: &str, k: &str| r.reliability.iter().find(|x| x.scope == s && x.state_kind == k).unwrap().clone();
        for scope in ["dataset", "validated", "community-0", "community-1", "unassigned"] {
            if !r.reliability.iter().any(|x| x.scope == scope) {
                continue;
            }
            let (all, sw, sa) = (find(scope, "all"), find(scope, "swing"), find(scope, "safe"));
            prop_assert_eq!(all.tweets, sw.tweets + sa.tweets);
            prop_assert_eq!(all.urls, sw.urls + sa.urls);
        }
        let total = |s: &str| r.communities.iter().find(|c| c.scope == s).map_or(0, |c| c.tweets);
        prop_assert_eq!(total("dataset"), total("validated") + total("unassigned"));
        prop_assert_eq!(total("validated"), total("community-0") + total("community-1"));
    }

    #[test]
    fn virality_mean_is_shares_over_links(tweets in arb_kept(3)) {
        for v in report_for(&tweets).virality {
            if v.distinct_links == 0 {
                prop_assert_eq!(v.mean_shares, None);
            } else {
                let mean = v.shares as f64 / v.distinct_links as f64;
                prop_assert!((v.mean_shares.unwrap() - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_link_tweets_share_once(tweets in arb_kept(1)) {
        let r = report_for(&tweets);
        for v in r.virality.iter().filter(|v| v.tag == "all") {
            let row = r.reliability.iter().find(|x| x.scope == v.scope && x.state_kind == v.state_kind).unwrap();
            prop_assert_eq!(v.shares, row.url_tweets);
        }
    }

    #[test]
    fn decile_sets_stay_within_a_decile(scores in prop::collection::vec(0u32..=20, 10..200)) {
        let recs: Vec<BotScoreRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| BotScoreRecord { user_id: format!("u{i}"), score: s as f64 / 20.0 })
            .collect();
        let c = decile_bot_classification(&recs).unwrap();
        let cap = recs.len().div_ceil(10);
        prop_assert!(c.humans <= cap && c.bots <= cap);
        if let (Some(h), Some(b)) = (c.human_max, c.bot_min) {
            prop_assert!(h < b);
        }
        for r in &recs {
            match c.class_of(&r.user_id) {
                BotClass::Human => prop_assert!(r.score <= c.human_max.unwrap()),
                BotClass::Bot => prop_assert!(r.score >= c.bot_min.unwrap()),
                BotClass::Unclassified => {}
            }
        }
    }
}
