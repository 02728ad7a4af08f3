//! Tweet records and the retweet edges derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub tweet_id: String,
    pub author_id: String,
    pub author_verified: bool,
    pub text: String,
    pub lang: String,
    #[serde(default)]
    pub urls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweeted_author_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retweeted_author_verified: Option<bool>,
    #[serde(default)]
    pub timestamp: String,
}

/// Reads tweets from JSON lines, skipping blank lines. Duplicate tweet ids
/// are a schema error.
pub fn read_tweets_jsonl<R: BufRead>(input: R, path: &str) -> Result<Vec<TweetRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, line) in input.lines().enumerate() {
        let row = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TweetRecord = serde_json::from_str(&line).map_err(|e| Error::Schema {
            path: path.to_owned(),
            row,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.tweet_id.clone()) {
            return Err(Error::Schema {
                path: path.to_owned(),
                row,
                message: format!("duplicate tweet_id {:?}", rec.tweet_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_tweets_jsonl<W: Write>(mut out: W, tweets: &[TweetRecord]) -> Result<()> {
    for t in tweets {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Aggregated retweets of `author_id` by `retweeter_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetweetEdge {
    pub retweeter_id: String,
    pub author_id: String,
    pub author_verified: bool,
    pub count: i64,
    #[serde(default)]
    pub retweeter_verified: Option<bool>,
}

/// Collapses retweet tweets into one edge per ordered user pair. A tweet is
/// a retweet when it names a retweeted author.
pub fn retweet_edges(tweets: &[TweetRecord]) -> Vec<RetweetEdge> {
    let mut agg: BTreeMap<(String, String), (bool, bool, i64)> = BTreeMap::new();
    for t in tweets {
        let Some(author) = &t.retweeted_author_id else { continue };
        let e = agg
            .entry((t.author_id.clone(), author.clone()))
            .or_insert((t.retweeted_author_verified.unwrap_or(false), t.author_verified, 0));
        e.0 |= t.retweeted_author_verified.unwrap_or(false);
        e.1 |= t.author_verified;
        e.2 += 1;
    }
    agg.into_iter()
        .map(|((retweeter_id, author_id), (av, rv, count))| RetweetEdge {
            retweeter_id,
            author_id,
            author_verified: av,
            count,
            retweeter_verified: Some(rv),
        })
        .collect()
}

pub fn read_edges_csv<R: Read>(input: R, path: &str) -> Result<Vec<RetweetEdge>> {
    let mut out = Vec::new();
    for (k, r) in csv::Reader::from_reader(input).deserialize::<RetweetEdge>().enumerate() {
        out.push(r.map_err(|e| Error::Schema { path: path.to_owned(), row: k + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_edges_csv<W: Write>(out: W, edges: &[RetweetEdge]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["retweeter_id", "author_id", "author_verified", "count", "retweeter_verified"])?;
    for e in edges {
        w.write_record([
            e.retweeter_id.as_str(),
            e.author_id.as_str(),
            if e.author_verified { "true" } else { "false" },
            &e.count.to_string(),
            match e.retweeter_verified {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Users flagged verified anywhere in the edge list.
fn verified_users(edges: &[RetweetEdge]) -> BTreeSet<&str> {
    let mut v = BTreeSet::new();
    for e in edges {
        if e.author_verified {
            v.insert(e.author_id.as_str());
        }
        if e.retweeter_verified == Some(true) {
            v.insert(e.retweeter_id.as_str());
        }
    }
    v
}

/// `(verified, unverified)` pairs linked by a retweet in either direction.
/// Retweets between two verified or two unverified users carry no
/// bipartite edge. A user is verified if any record flags it so.
pub fn bipartite_records(edges: &[RetweetEdge]) -> Vec<(String, String)> {
    let verified = verified_users(edges);
    let mut pairs = BTreeSet::new();
    for e in edges {
        if e.count < 1 || e.retweeter_id == e.author_id {
            continue;
        }
        let a = verified.contains(e.author_id.as_str());
        let r = verified.contains(e.retweeter_id.as_str());
        match (a, r) {
            (true, false) => pairs.insert((e.author_id.clone(), e.retweeter_id.clone())),
            (false, true) => pairs.insert((e.retweeter_id.clone(), e.author_id.clone())),
            _ => false,
        };
    }
    pairs.into_iter().collect()
}

/// `(retweeter, author, count)` records for the directed retweet network.
pub fn retweet_records(edges: &[RetweetEdge]) -> Vec<(String, String, i64)> {
    edges.iter().map(|e| (e.retweeter_id.clone(), e.author_id.clone(), e.count)).collect()
}
