//! Bot-score ingestion and decile classification.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotScoreRecord {
    pub user_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BotClass {
    Human,
    Bot,
    Unclassified,
}

impl BotClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BotClass::Human => "human",
            BotClass::Bot => "bot",
            BotClass::Unclassified => "unclassified",
        }
    }
}

pub fn read_bot_scores_csv<R: Read>(input: R, path: &str) -> Result<Vec<BotScoreRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (k, r) in csv::Reader::from_reader(input).deserialize::<BotScoreRecord>().enumerate() {
        let schema = |message: String| Error::Schema { path: path.into(), row: k + 1, message };
        let r = r.map_err(|e| schema(e.to_string()))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(schema(format!("score {} outside [0, 1]", r.score)));
        }
        if !seen.insert(r.user_id.clone()) {
            return Err(schema(format!("user {:?} scored twice", r.user_id)));
        }
        out.push(r);
    }
    Ok(out)
}

/// Which scored users the deciles are computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BotPopulation {
    /// Scored users that carry a community label.
    #[default]
    Validated,
    /// Every user in the score file.
    Scored,
}

impl std::str::FromStr for BotPopulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "validated" => Ok(BotPopulation::Validated),
            "scored" => Ok(BotPopulation::Scored),
            _ => Err(Error::invalid(format!("unknown bot population {s:?} (expected validated or scored)"))),
        }
    }
}

/// Score records of the chosen population, in input order.
pub fn select_population(
    records: &[BotScoreRecord],
    population: BotPopulation,
    communities: &BTreeMap<String, u32>,
) -> Vec<BotScoreRecord> {
    match population {
        BotPopulation::Scored => records.to_vec(),
        BotPopulation::Validated => {
            records.iter().filter(|r| communities.contains_key(&r.user_id)).cloned().collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileClassification {
    pub classes: BTreeMap<String, BotClass>,
    pub users: usize,
    pub humans: usize,
    pub bots: usize,
    /// Highest score classified human, if any.
    pub human_max: Option<f64>,
    /// Lowest score classified bot, if any.
    pub bot_min: Option<f64>,
    pub warnings: Vec<String>,
}

impl DecileClassification {
    pub fn class_of(&self, user: &str) -> BotClass {
        self.classes.get(user).copied().unwrap_or(BotClass::Unclassified)
    }
}

/// First score decile human, last decile bot, the rest unclassified.
///
/// With `n` users and `k = floor(n / 10)`, humans are the users scoring
/// strictly below the `(k+1)`-th smallest score and bots those strictly above
/// the `(k+1)`-th largest, so users tied with a boundary value stay
/// unclassified.
pub fn decile_bot_classification(records: &[BotScoreRecord]) -> Result<DecileClassification> {
    let n = records.len();
    if n < 10 {
        return Err(Error::invalid(format!("decile classification needs at least 10 users, got {n}")));
    }
    let mut seen = BTreeSet::new();
    for r in records {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::invalid(format!("score {} of {:?} outside [0, 1]", r.score, r.user_id)));
        }
        if !seen.insert(r.user_id.as_str()) {
            return Err(Error::invalid(format!("user {:?} scored twice", r.user_id)));
        }
    }
    let mut sorted: Vec<f64> = records.iter().map(|r| r.score).collect();
    sorted.sort_by(f64::total_cmp);
    let k = n / 10;
    let (low, high) = (sorted[k], sorted[n - 1 - k]);
    let mut classes = BTreeMap::new();
    let (mut humans, mut bots) = (0, 0);
    let (mut human_max, mut bot_min): (Option<f64>, Option<f64>) = (None, None);
    for r in records {
        let c = if r.score < low {
            humans += 1;
            human_max = Some(human_max.map_or(r.score, |m| m.max(r.score)));
            BotClass::Human
        } else if r.score > high {
            bots += 1;
            bot_min = Some(bot_min.map_or(r.score, |m| m.min(r.score)));
            BotClass::Bot
        } else {
            BotClass::Unclassified
        };
        classes.insert(r.user_id.clone(), c);
    }
    let mut warnings = Vec::new();
    if humans < k || bots < k {
        let w = format!(
            "ties at the decile boundaries: {humans} human and {bots} bot users classified instead of {k} each"
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(DecileClassification { classes, users: n, humans, bots, human_max, bot_min, warnings })
}
