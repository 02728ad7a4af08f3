//! State-name matching and the language/state tweet filter.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::records::TweetRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Swing,
    Safe,
}

impl StateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StateKind::Swing => "swing",
            StateKind::Safe => "safe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpec {
    pub name: String,
    pub kind: StateKind,
}

pub fn read_states_csv<R: Read>(input: R, path: &str) -> Result<Vec<StateSpec>> {
    let mut out: Vec<StateSpec> = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, r) in csv::Reader::from_reader(input).deserialize::<StateSpec>().enumerate() {
        let schema = |message: String| Error::Schema { path: path.to_owned(), row: k + 1, message };
        let s = r.map_err(|e| schema(e.to_string()))?;
        if s.name.trim().is_empty() {
            return Err(schema("empty state name".into()));
        }
        if !seen.insert(s.name.to_lowercase()) {
            return Err(schema(format!("state {:?} listed twice", s.name)));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{path}: no states listed")));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateAssignment {
    One(usize),
    ExcludedMulti,
    ExcludedNone,
}

/// Case-insensitive whole-phrase matcher over a list of state names.
///
/// Text is split into alphanumeric words, so punctuation and hashtag signs
/// act as boundaries ("#Florida" matches Florida). A multi-word name also
/// matches its words run together as one token ("#NewJersey").
#[derive(Debug, Clone)]
pub struct StateMatcher {
    phrases: Vec<Vec<String>>,
    joined: Vec<String>,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl StateMatcher {
    pub fn new(states: &[StateSpec]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::invalid("no states to match"));
        }
        let phrases: Vec<Vec<String>> = states.iter().map(|s| words(&s.name)).collect();
        if let Some(k) = phrases.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("state name {:?} has no words", states[k].name)));
        }
        let joined = phrases.iter().map(|p| p.concat()).collect();
        Ok(StateMatcher { phrases, joined })
    }

    pub fn assign(&self, text: &str) -> StateAssignment {
        let toks = words(text);
        let mut found = BTreeSet::new();
        for (k, phrase) in self.phrases.iter().enumerate() {
            let hit = toks.windows(phrase.len()).any(|w| w == phrase.as_slice())
                || (phrase.len() > 1 && toks.iter().any(|t| *t == self.joined[k]));
            if hit {
                found.insert(k);
            }
        }
        match found.len() {
            0 => StateAssignment::ExcludedNone,
            1 => StateAssignment::One(*found.first().unwrap()),
            _ => StateAssignment::ExcludedMulti,
        }
    }
}

pub fn assign_state(text: &str, states: &[StateSpec]) -> Result<StateAssignment> {
    Ok(StateMatcher::new(states)?.assign(text))
}

/// Keeps records in language `lang`; returns them with the removed count.
pub fn filter_language(records: Vec<TweetRecord>, lang: &str) -> (Vec<TweetRecord>, usize) {
    let before = records.len();
    let kept: Vec<TweetRecord> = records.into_iter().filter(|r| r.lang == lang).collect();
    let removed = before - kept.len();
    (kept, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterOrder {
    #[default]
    LanguageFirst,
    StateFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterCounts {
    pub input: usize,
    pub excluded_language: usize,
    pub excluded_multi_state: usize,
    pub excluded_no_state: usize,
    pub kept: usize,
    pub language: String,
    pub order: FilterOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeptTweet {
    #[serde(flatten)]
    pub tweet: TweetRecord,
    pub state: String,
    pub state_kind: StateKind,
}

/// Applies the language and single-state filters in the given order. Every
/// input tweet is counted in exactly one exclusion bucket or kept.
pub fn filter_tweets(
    records: Vec<TweetRecord>,
    states: &[StateSpec],
    lang: &str,
    order: FilterOrder,
) -> Result<(Vec<KeptTweet>, FilterCounts)> {
    let matcher = StateMatcher::new(states)?;
    let mut counts = FilterCounts { input: records.len(), language: lang.to_owned(), order, ..Default::default() };
    let mut kept = Vec::new();
    for t in records {
        let lang_ok = t.lang == lang;
        let assignment = matcher.assign(&t.text);
        let state_excluded = match assignment {
            StateAssignment::ExcludedMulti => Some(&mut counts.excluded_multi_state),
            StateAssignment::ExcludedNone => Some(&mut counts.excluded_no_state),
            StateAssignment::One(_) => None,
        };
        match (order, lang_ok, state_excluded) {
            (FilterOrder::LanguageFirst, false, _) => counts.excluded_language += 1,
            (_, _, Some(bucket)) => *bucket += 1,
            (FilterOrder::StateFirst, false, None) => counts.excluded_language += 1,
            (_, true, None) => {
                let StateAssignment::One(k) = assignment else { unreachable!() };
                kept.push(KeptTweet { state: states[k].name.clone(), state_kind: states[k].kind, tweet: t });
            }
        }
    }
    counts.kept = kept.len();
    Ok((kept, counts))
}
