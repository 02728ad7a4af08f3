//! URL to registrable domain, and domain reliability labels.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Registrable domain of a URL (the label just above its public suffix),
/// lowercased. `None` when the URL has no parseable host name.
pub fn registrable_domain(raw: &str) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() || raw.chars().any(char::is_whitespace) {
        return None;
    }
    let parsed = match url::Url::parse(raw) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => url::Url::parse(&format!("http://{raw}")).ok()?,
        Err(_) => return None,
    };
    let host = match parsed.host()? {
        url::Host::Domain(d) => d.trim_end_matches('.').to_ascii_lowercase(),
        _ => return None,
    };
    if !host.contains('.') {
        return None;
    }
    psl::domain_str(&host).map(str::to_owned)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ReliabilityTag {
    T,
    N,
    P,
    S,
    #[serde(rename = "UNC")]
    Unc,
}

impl ReliabilityTag {
    pub const ALL: [ReliabilityTag; 5] =
        [ReliabilityTag::T, ReliabilityTag::N, ReliabilityTag::P, ReliabilityTag::S, ReliabilityTag::Unc];

    pub fn as_str(self) -> &'static str {
        match self {
            ReliabilityTag::T => "T",
            ReliabilityTag::N => "N",
            ReliabilityTag::P => "P",
            ReliabilityTag::S => "S",
            ReliabilityTag::Unc => "UNC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T" => Some(ReliabilityTag::T),
            "N" => Some(ReliabilityTag::N),
            "P" => Some(ReliabilityTag::P),
            "S" => Some(ReliabilityTag::S),
            "UNC" => Some(ReliabilityTag::Unc),
            _ => None,
        }
    }
}

/// Political leaning of a source, collapsed to its side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Left,
    Right,
}

impl Orientation {
    /// Accepts "left"/"right" optionally qualified ("far right",
    /// "slightly-left", ...). Centre or empty values carry no side.
    pub fn parse(s: &str) -> Result<Option<Self>> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '_'], " ");
        let last = norm.split_whitespace().last().unwrap_or("");
        match last {
            "" | "center" | "centre" | "none" => Ok(None),
            "left" => Ok(Some(Orientation::Left)),
            "right" => Ok(Some(Orientation::Right)),
            _ => Err(Error::invalid(format!("unknown orientation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainLabel {
    pub domain: String,
    pub tag: ReliabilityTag,
    pub orientation: Option<Orientation>,
}

/// Domain label table with exact lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainLabels {
    labels: BTreeMap<String, DomainLabel>,
    has_orientation: bool,
}

impl DomainLabels {
    pub fn new(labels: Vec<DomainLabel>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut has_orientation = false;
        for l in labels {
            let key = l.domain.trim().to_ascii_lowercase();
            has_orientation |= l.orientation.is_some();
            if map.insert(key.clone(), DomainLabel { domain: key.clone(), ..l }).is_some() {
                return Err(Error::invalid(format!("domain {key:?} labelled twice")));
            }
        }
        Ok(DomainLabels { labels: map, has_orientation })
    }

    /// Whether any label carries orientation metadata.
    pub fn has_orientation(&self) -> bool {
        self.has_orientation
    }

    pub fn get(&self, domain: &str) -> Option<&DomainLabel> {
        self.labels.get(domain)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn classify_reliability(domain: &str, labels: &DomainLabels) -> ReliabilityTag {
    labels.get(domain).map_or(ReliabilityTag::Unc, |l| l.tag)
}

/// Reads `domain,tag[,orientation]` rows.
pub fn read_labels_csv<R: Read>(input: R, path: &str) -> Result<DomainLabels> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(dc), Some(tc)) = (col("domain"), col("tag")) else {
        return Err(Error::Schema { path: path.into(), row: 0, message: "expected columns domain,tag".into() });
    };
    let oc = col("orientation");
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let schema = |message: String| Error::Schema { path: path.into(), row, message };
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let domain = rec.get(dc).unwrap_or("").trim();
        if domain.is_empty() {
            return Err(schema("empty domain".into()));
        }
        let tag_text = rec.get(tc).unwrap_or("");
        let tag = ReliabilityTag::parse(tag_text).ok_or_else(|| schema(format!("unknown tag {tag_text:?}")))?;
        let orientation = match oc.and_then(|c| rec.get(c)) {
            Some(o) => Orientation::parse(o).map_err(|e| schema(e.to_string()))?,
            None => None,
        };
        labels.push(DomainLabel { domain: domain.to_owned(), tag, orientation });
    }
    DomainLabels::new(labels).map_err(|e| Error::Schema { path: path.into(), row: 0, message: e.to_string() })
}

/// Offline short-URL resolution table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UrlMap {
    map: BTreeMap<String, String>,
}

impl UrlMap {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        UrlMap { map: pairs.into_iter().collect() }
    }

    pub fn resolve<'a>(&'a self, url: &'a str) -> &'a str {
        self.map.get(url).map_or(url, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

pub fn read_url_map_csv<R: Read>(input: R, path: &str) -> Result<UrlMap> {
    #[derive(Deserialize)]
    struct Row {
        short_url: String,
        resolved_url: String,
    }
    let mut pairs = Vec::new();
    for (k, r) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
        let r = r.map_err(|e| Error::Schema { path: path.into(), row: k + 1, message: e.to_string() })?;
        pairs.push((r.short_url, r.resolved_url));
    }
    Ok(UrlMap::new(pairs))
}
