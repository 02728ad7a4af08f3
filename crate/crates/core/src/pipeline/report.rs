//! Aggregation of classified tweets into the report tables, and the
//! hypothesis tests run on them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::bots::{BotClass, BotScoreRecord, DecileClassification};
use super::domains::{registrable_domain, DomainLabels, Orientation, ReliabilityTag, UrlMap};
use super::states::{FilterCounts, KeptTweet, StateKind, StateSpec};
use crate::error::{Error, Result};
use crate::stats::{chi_square, ks_test, mann_whitney_u, TestResult};

/// Group of tweets a report row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    /// Every tweet that passed the language and state filters.
    Dataset,
    /// Tweets whose author carries a community label.
    Validated,
    Community(u32),
    /// Tweets whose author has no community label.
    Unassigned,
}

impl Scope {
    pub fn name(self) -> String {
        match self {
            Scope::Dataset => "dataset".into(),
            Scope::Validated => "validated".into(),
            Scope::Community(k) => format!("community-{k}"),
            Scope::Unassigned => "unassigned".into(),
        }
    }

    fn contains(self, community: Option<u32>) -> bool {
        match self {
            Scope::Dataset => true,
            Scope::Validated => community.is_some(),
            Scope::Community(k) => community == Some(k),
            Scope::Unassigned => community.is_none(),
        }
    }
}

/// Everything the aggregation needs besides the tweets themselves.
pub struct ReportContext<'a> {
    pub states: &'a [StateSpec],
    pub communities: &'a BTreeMap<String, u32>,
    pub labels: &'a DomainLabels,
    pub url_map: &'a UrlMap,
    pub bots: &'a DecileClassification,
}

#[derive(Debug, Clone)]
struct LinkInfo {
    key: String,
    tag: ReliabilityTag,
    orientation: Option<Orientation>,
}

#[derive(Debug, Clone)]
struct Row<'a> {
    tweet: &'a KeptTweet,
    community: Option<u32>,
    bot: BotClass,
    links: Vec<LinkInfo>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub state: String,
    pub kind: StateKind,
    pub tweets: usize,
    pub urls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityRow {
    pub scope: String,
    pub users: usize,
    pub tweets: usize,
    pub tweets_safe_pct: Option<f64>,
    pub tweets_swing_pct: Option<f64>,
    pub urls: usize,
    pub left_pct: Option<f64>,
    pub right_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub scope: String,
    pub state_kind: String,
    pub users: usize,
    pub tweets: usize,
    pub url_tweets: usize,
    pub urls: usize,
    pub t_pct: Option<f64>,
    pub n_pct: Option<f64>,
    pub p_pct: Option<f64>,
    pub s_pct: Option<f64>,
    pub unc_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRow {
    pub scope: String,
    pub class: BotClass,
    pub users: usize,
    pub tweets: usize,
    pub urls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotTrafficRow {
    pub scope: String,
    pub links: String,
    pub urls: usize,
    pub swing_pct: Option<f64>,
    pub safe_pct: Option<f64>,
    pub bot_pct: Option<f64>,
    pub human_pct: Option<f64>,
    pub swing_bot_pct: Option<f64>,
    pub swing_human_pct: Option<f64>,
    pub safe_bot_pct: Option<f64>,
    pub safe_human_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViralityRow {
    pub scope: String,
    pub state_kind: String,
    pub tag: String,
    pub distinct_links: usize,
    pub shares: usize,
    pub mean_shares: Option<f64>,
    pub median_shares: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotSummary {
    pub scored_users: usize,
    pub humans: usize,
    pub bots: usize,
    pub human_max_score: Option<f64>,
    pub bot_min_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub filtering: FilterCounts,
    pub unparseable_urls: usize,
    pub bot_classification: BotSummary,
    /// Tweets and URLs per state.
    pub states: Vec<StateRow>,
    /// Community characteristics: size, swing/safe split, source leaning.
    pub communities: Vec<CommunityRow>,
    /// Accounts, tweets, URLs and reliability shares per state kind.
    pub reliability: Vec<ReliabilityRow>,
    /// Human and bot accounts with their activity.
    pub accounts: Vec<AccountRow>,
    /// Bot and human shares of link traffic per reliability class.
    pub bot_traffic: Vec<BotTrafficRow>,
    /// Share counts per distinct link.
    pub virality: Vec<ViralityRow>,
    pub notices: Vec<String>,
}

fn classify_links(t: &KeptTweet, ctx: &ReportContext, unparseable: &mut usize) -> Vec<LinkInfo> {
    t.tweet
        .urls
        .iter()
        .map(|raw| {
            let resolved = ctx.url_map.resolve(raw);
            match registrable_domain(resolved) {
                Some(d) => {
                    let label = ctx.labels.get(&d);
                    LinkInfo {
                        key: resolved.to_owned(),
                        tag: label.map_or(ReliabilityTag::Unc, |l| l.tag),
                        orientation: label.and_then(|l| l.orientation),
                    }
                }
                None => {
                    *unparseable += 1;
                    LinkInfo { key: resolved.to_owned(), tag: ReliabilityTag::Unc, orientation: None }
                }
            }
        })
        .collect()
}

const KINDS: [Option<StateKind>; 3] = [None, Some(StateKind::Swing), Some(StateKind::Safe)];

fn kind_name(k: Option<StateKind>) -> &'static str {
    k.map_or("all", StateKind::as_str)
}

fn median(v: &mut [usize]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_unstable();
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] as f64 } else { (v[m - 1] + v[m]) as f64 / 2.0 })
}

/// Builds all report tables from the filtered tweets.
pub fn aggregate_reports(tweets: &[KeptTweet], filtering: &FilterCounts, ctx: &ReportContext) -> ReportTables {
    let mut unparseable = 0;
    let rows: Vec<Row> = tweets
        .iter()
        .map(|t| Row {
            tweet: t,
            community: ctx.communities.get(&t.tweet.author_id).copied(),
            bot: ctx.bots.class_of(&t.tweet.author_id),
            links: classify_links(t, ctx, &mut unparseable),
        })
        .collect();

    let labels: BTreeSet<u32> = rows.iter().filter_map(|r| r.community).collect();
    let mut scopes = vec![Scope::Dataset, Scope::Validated];
    scopes.extend(labels.iter().map(|&k| Scope::Community(k)));
    scopes.push(Scope::Unassigned);

    let mut notices = Vec::new();
    if !ctx.labels.has_orientation() {
        notices.push("domain labels carry no orientation; left/right columns omitted".to_owned());
    }
    notices.extend(ctx.bots.warnings.iter().cloned());

    let states = ctx
        .states
        .iter()
        .map(|s| {
            let of_state: Vec<&Row> = rows.iter().filter(|r| r.tweet.state == s.name).collect();
            StateRow {
                state: s.name.clone(),
                kind: s.kind,
                tweets: of_state.len(),
                urls: of_state.iter().map(|r| r.links.len()).sum(),
            }
        })
        .collect();

    let mut communities = Vec::new();
    let mut reliability = Vec::new();
    let mut accounts = Vec::new();
    let mut bot_traffic = Vec::new();
    let mut virality = Vec::new();

    for &scope in &scopes {
        let in_scope: Vec<&Row> = rows.iter().filter(|r| scope.contains(r.community)).collect();
        let name = scope.name();

        let urls: usize = in_scope.iter().map(|r| r.links.len()).sum();
        let side = |o: Orientation| {
            in_scope.iter().flat_map(|r| &r.links).filter(|l| l.orientation == Some(o)).count()
        };
        let count_kind = |k: StateKind| in_scope.iter().filter(|r| r.tweet.state_kind == k).count();
        communities.push(CommunityRow {
            scope: name.clone(),
            users: in_scope.iter().map(|r| r.tweet.tweet.author_id.as_str()).collect::<BTreeSet<_>>().len(),
            tweets: in_scope.len(),
            tweets_safe_pct: pct(count_kind(StateKind::Safe), in_scope.len()),
            tweets_swing_pct: pct(count_kind(StateKind::Swing), in_scope.len()),
            urls,
            left_pct: if ctx.labels.has_orientation() { pct(side(Orientation::Left), urls) } else { None },
            right_pct: if ctx.labels.has_orientation() { pct(side(Orientation::Right), urls) } else { None },
        });

        for kind in KINDS {
            let sub: Vec<&Row> = in_scope.iter().copied().filter(|r| kind.is_none_or(|k| r.tweet.state_kind == k)).collect();
            let links: Vec<&LinkInfo> = sub.iter().flat_map(|r| &r.links).collect();
            let tagged = |t: ReliabilityTag| pct(links.iter().filter(|l| l.tag == t).count(), links.len());
            reliability.push(ReliabilityRow {
                scope: name.clone(),
                state_kind: kind_name(kind).to_owned(),
                users: sub.iter().map(|r| r.tweet.tweet.author_id.as_str()).collect::<BTreeSet<_>>().len(),
                tweets: sub.len(),
                url_tweets: sub.iter().filter(|r| !r.links.is_empty()).count(),
                urls: links.len(),
                t_pct: tagged(ReliabilityTag::T),
                n_pct: tagged(ReliabilityTag::N),
                p_pct: tagged(ReliabilityTag::P),
                s_pct: tagged(ReliabilityTag::S),
                unc_pct: tagged(ReliabilityTag::Unc),
            });

            let tags = std::iter::once(None).chain(ReliabilityTag::ALL.into_iter().map(Some));
            for tag in tags {
                let mut shares: BTreeMap<&str, usize> = BTreeMap::new();
                for l in &links {
                    if tag.is_none_or(|t| l.tag == t) {
                        *shares.entry(l.key.as_str()).or_insert(0) += 1;
                    }
                }
                let mut counts: Vec<usize> = shares.values().copied().collect();
                let total: usize = counts.iter().sum();
                virality.push(ViralityRow {
                    scope: name.clone(),
                    state_kind: kind_name(kind).to_owned(),
                    tag: tag.map_or("all", ReliabilityTag::as_str).to_owned(),
                    distinct_links: counts.len(),
                    shares: total,
                    mean_shares: (!counts.is_empty()).then(|| total as f64 / counts.len() as f64),
                    median_shares: median(&mut counts),
                });
            }
        }

        for class in [BotClass::Human, BotClass::Bot] {
            let sub: Vec<&Row> = in_scope.iter().copied().filter(|r| r.bot == class).collect();
            accounts.push(AccountRow {
                scope: name.clone(),
                class,
                users: sub.iter().map(|r| r.tweet.tweet.author_id.as_str()).collect::<BTreeSet<_>>().len(),
                tweets: sub.len(),
                urls: sub.iter().map(|r| r.links.len()).sum(),
            });
        }

        for tag in [None, Some(ReliabilityTag::T), Some(ReliabilityTag::N)] {
            // (state kind, bot class) counts over links of classified authors
            let mut c: BTreeMap<(StateKind, BotClass), usize> = BTreeMap::new();
            for r in &in_scope {
                if r.bot == BotClass::Unclassified {
                    continue;
                }
                let n = r.links.iter().filter(|l| tag.is_none_or(|t| l.tag == t)).count();
                *c.entry((r.tweet.state_kind, r.bot)).or_insert(0) += n;
            }
            let get = |k: StateKind, b: BotClass| c.get(&(k, b)).copied().unwrap_or(0);
            let swing = get(StateKind::Swing, BotClass::Bot) + get(StateKind::Swing, BotClass::Human);
            let safe = get(StateKind::Safe, BotClass::Bot) + get(StateKind::Safe, BotClass::Human);
            let bot = get(StateKind::Swing, BotClass::Bot) + get(StateKind::Safe, BotClass::Bot);
            let total = swing + safe;
            bot_traffic.push(BotTrafficRow {
                scope: name.clone(),
                links: tag.map_or("all", ReliabilityTag::as_str).to_owned(),
                urls: total,
                swing_pct: pct(swing, total),
                safe_pct: pct(safe, total),
                bot_pct: pct(bot, total),
                human_pct: pct(total - bot, total),
                swing_bot_pct: pct(get(StateKind::Swing, BotClass::Bot), swing),
                swing_human_pct: pct(get(StateKind::Swing, BotClass::Human), swing),
                safe_bot_pct: pct(get(StateKind::Safe, BotClass::Bot), safe),
                safe_human_pct: pct(get(StateKind::Safe, BotClass::Human), safe),
            });
        }
    }

    ReportTables {
        filtering: filtering.clone(),
        unparseable_urls: unparseable,
        bot_classification: BotSummary {
            scored_users: ctx.bots.users,
            humans: ctx.bots.humans,
            bots: ctx.bots.bots,
            human_max_score: ctx.bots.human_max,
            bot_min_score: ctx.bots.bot_min,
        },
        states,
        communities,
        reliability,
        accounts,
        bot_traffic,
        virality,
        notices,
    }
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

impl ReportTables {
    /// Table name and CSV bytes for every table, in a fixed order.
    pub fn csv_tables(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = Vec::new();
        let mut push = |name, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
            let mut buf = Vec::new();
            f(&mut buf)?;
            out.push((name, buf));
            Ok(())
        };
        push("states.csv", &|b| write_rows(b, &self.states))?;
        push("communities.csv", &|b| write_rows(b, &self.communities))?;
        push("reliability.csv", &|b| write_rows(b, &self.reliability))?;
        push("accounts.csv", &|b| write_rows(b, &self.accounts))?;
        push("bot_traffic.csv", &|b| write_rows(b, &self.bot_traffic))?;
        push("virality.csv", &|b| write_rows(b, &self.virality))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub scope: String,
    pub n: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub a: String,
    pub b: String,
    pub ks: TestResult,
    pub mwu: TestResult,
    /// `U_b / (n_a n_b)`, the reverse-direction proportion.
    pub mwu_effect_reverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub scope: String,
    /// Rows swing, safe; columns T, N (link counts).
    pub table: Vec<Vec<u64>>,
    pub result: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub samples: Vec<SampleSummary>,
    pub comparisons: Vec<ComparisonResult>,
    pub chi_square: Option<ChiSquareResult>,
    pub skipped: Vec<String>,
}

/// Bot-score distribution tests between the validated dataset and its
/// `top` largest communities (by tweet count), and the chi-square test of
/// T/N link counts against state kind on the validated dataset.
///
/// Each tweet contributes its author's score; tweets by unscored authors
/// are left out of the samples.
pub fn compute_stats(
    tweets: &[KeptTweet],
    ctx: &ReportContext,
    scores: &[BotScoreRecord],
    top: usize,
) -> StatsReport {
    let score_of: BTreeMap<&str, f64> = scores.iter().map(|r| (r.user_id.as_str(), r.score)).collect();
    let community = |t: &KeptTweet| ctx.communities.get(&t.tweet.author_id).copied();

    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for t in tweets {
        if let Some(c) = community(t) {
            *sizes.entry(c).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = sizes.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut scopes = vec![Scope::Validated];
    scopes.extend(ranked.iter().take(top).map(|&(c, _)| Scope::Community(c)));

    let sample = |s: Scope| -> Vec<f64> {
        tweets
            .iter()
            .filter(|t| s.contains(community(t)))
            .filter_map(|t| score_of.get(t.tweet.author_id.as_str()).copied())
            .collect()
    };
    let samples: BTreeMap<Scope, Vec<f64>> = scopes.iter().map(|&s| (s, sample(s))).collect();

    let mut pairs = Vec::new();
    for &c in &scopes[1..] {
        pairs.push((Scope::Validated, c));
    }
    for i in 1..scopes.len() {
        for j in i + 1..scopes.len() {
            pairs.push((scopes[j], scopes[i]));
        }
    }

    let mut skipped = Vec::new();
    let mut comparisons = Vec::new();
    for (a, b) in pairs {
        let (xa, xb) = (&samples[&a], &samples[&b]);
        match (ks_test(xa, xb), mann_whitney_u(xa, xb)) {
            (Ok(ks), Ok(mwu)) => {
                let reverse = 1.0 - mwu.effect.unwrap_or(0.5);
                comparisons.push(ComparisonResult { a: a.name(), b: b.name(), ks, mwu, mwu_effect_reverse: reverse });
            }
            (Err(e), _) | (_, Err(e)) => skipped.push(format!("{} vs {}: {e}", a.name(), b.name())),
        }
    }

    let mut counts = [[0u64; 2]; 2];
    let mut unparseable = 0;
    for t in tweets.iter().filter(|t| community(t).is_some()) {
        let row = match t.state_kind {
            StateKind::Swing => 0,
            StateKind::Safe => 1,
        };
        for l in classify_links(t, ctx, &mut unparseable) {
            match l.tag {
                ReliabilityTag::T => counts[row][0] += 1,
                ReliabilityTag::N => counts[row][1] += 1,
                _ => {}
            }
        }
    }
    let table: Vec<Vec<u64>> = counts.iter().map(|r| r.to_vec()).collect();
    let chi = match chi_square(&table) {
        Ok(result) => Some(ChiSquareResult { scope: Scope::Validated.name(), table, result }),
        Err(e) => {
            skipped.push(format!("chi-square on validated T/N by state kind: {e}"));
            None
        }
    };

    StatsReport {
        samples: scopes
            .iter()
            .map(|&s| {
                let x = &samples[&s];
                SampleSummary {
                    scope: s.name(),
                    n: x.len(),
                    mean: (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64),
                }
            })
            .collect(),
        comparisons,
        chi_square: chi,
        skipped,
    }
}
