//! Statistically validated projection of the bipartite network onto the
//! verified (top) layer.
//!
//! Two verified users are linked when the number of unverified users
//! retweeting both is significantly larger than the Bipartite Configuration
//! Model predicts. Under the model the co-occurrence count of `(i, j)` is a
//! Poisson-binomial variable: a sum over bottom nodes `a` of independent
//! Bernoulli(`p_ia * p_ja`) terms.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bicm::BicmModel;
use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, UndirectedGraph};

/// Layers larger than this use the Poisson approximation of the tail.
pub const DEFAULT_EXACT_THRESHOLD: usize = 20_000;
pub const DEFAULT_ALPHA: f64 = 0.01;

/// Observed co-occurrences `V_ij` of top-layer pairs `i < j` with `V_ij >= 1`,
/// sorted by `(i, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoOccurrenceTable {
    entries: Vec<(u32, u32, u32)>,
}

impl CoOccurrenceTable {
    pub fn entries(&self) -> &[(u32, u32, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: u32, j: u32) -> u32 {
        let key = (i.min(j), i.max(j));
        self.entries
            .binary_search_by(|&(a, b, _)| (a, b).cmp(&key))
            .map(|pos| self.entries[pos].2)
            .unwrap_or(0)
    }
}

/// Counts common neighbours for every pair of top nodes.
pub fn co_occurrences(g: &BipartiteGraph) -> CoOccurrenceTable {
    let n = g.top_len();
    let mut counts = vec![0u32; n];
    let mut touched = Vec::new();
    let mut entries = Vec::new();
    for i in 0..n {
        for &a in g.top_neighbors(i) {
            for &j in g.bottom_neighbors(a as usize) {
                if (j as usize) <= i {
                    continue;
                }
                if counts[j as usize] == 0 {
                    touched.push(j);
                }
                counts[j as usize] += 1;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            entries.push((i as u32, j, counts[j as usize]));
            counts[j as usize] = 0;
        }
        touched.clear();
    }
    CoOccurrenceTable { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailMethod {
    Exact,
    Poisson,
}

/// Upper tail `P(V >= observed)` of a sum of independent Bernoulli variables.
///
/// Dynamic-programming convolution that only tracks counts below `observed`
/// and accumulates the tail mass directly, so small p-values keep their
/// relative precision.
pub fn poisson_binomial_upper_tail(probs: &[f64], observed: usize) -> Result<f64> {
    if observed > probs.len() {
        return Err(Error::invalid(format!(
            "observed count {observed} exceeds the number of trials {}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("success probability {p} outside [0, 1]")));
    }
    if observed == 0 {
        return Ok(1.0);
    }
    let mut below = vec![0.0; observed];
    below[0] = 1.0;
    let mut tail = 0.0;
    let mut reachable = 0usize;
    for &q in probs {
        if q == 0.0 {
            continue;
        }
        reachable = (reachable + 1).min(observed - 1);
        tail += below[observed - 1] * q;
        for c in (1..=reachable).rev() {
            below[c] = below[c] * (1.0 - q) + below[c - 1] * q;
        }
        below[0] *= 1.0 - q;
    }
    Ok(tail.clamp(0.0, 1.0))
}

/// `P(X >= observed)` for `X ~ Poisson(rate)`.
pub fn poisson_upper_tail(rate: f64, observed: usize) -> f64 {
    if observed == 0 {
        return 1.0;
    }
    if rate <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_lr(observed as f64, rate).clamp(0.0, 1.0)
}

/// Per-bottom-node success probabilities `p_ia * p_ja` of a top pair.
pub fn pair_probabilities(m: &BicmModel, i: usize, j: usize) -> Result<Vec<f64>> {
    let ri = m.probability_row(i)?;
    let rj = m.probability_row(j)?;
    Ok(ri.iter().zip(&rj).map(|(a, b)| a * b).collect())
}

/// p-value of observing at least `observed` common neighbours of `i` and `j`.
pub fn pair_pvalue(m: &BicmModel, i: usize, j: usize, observed: usize) -> Result<f64> {
    pair_pvalue_with(m, i, j, observed, DEFAULT_EXACT_THRESHOLD).map(|(p, _)| p)
}

pub fn pair_pvalue_with(
    m: &BicmModel,
    i: usize,
    j: usize,
    observed: usize,
    exact_threshold: usize,
) -> Result<(f64, TailMethod)> {
    if observed > m.bottom_len() {
        return Err(Error::invalid(format!(
            "observed co-occurrence {observed} exceeds the bottom layer size {}",
            m.bottom_len()
        )));
    }
    let probs = pair_probabilities(m, i, j)?;
    if m.bottom_len() <= exact_threshold {
        Ok((poisson_binomial_upper_tail(&probs, observed)?, TailMethod::Exact))
    } else {
        let rate = probs.iter().sum();
        Ok((poisson_upper_tail(rate, observed), TailMethod::Poisson))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    Fdr,
    Bonferroni,
    None,
}

impl std::str::FromStr for Correction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fdr" | "bh" => Ok(Correction::Fdr),
            "bonferroni" => Ok(Correction::Bonferroni),
            "none" => Ok(Correction::None),
            other => Err(Error::invalid(format!("unknown correction {other:?}"))),
        }
    }
}

impl std::fmt::Display for Correction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Correction::Fdr => "fdr",
            Correction::Bonferroni => "bonferroni",
            Correction::None => "none",
        })
    }
}

/// Benjamini-Hochberg cutoff: the largest sorted p-value `p_(k)` with
/// `p_(k) <= k alpha / M`, or `None` when no hypothesis is rejected.
pub fn benjamini_hochberg_threshold(pvalues: &[f64], alpha: f64) -> Option<f64> {
    let m = pvalues.len() as f64;
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .enumerate()
        .rev()
        .find(|(k, &p)| p <= (*k as f64 + 1.0) * alpha / m)
        .map(|(_, &p)| p)
}

/// Realized rejection threshold: hypotheses with `p <= threshold` are kept.
pub fn correction_threshold(pvalues: &[f64], alpha: f64, correction: Correction) -> Option<f64> {
    if pvalues.is_empty() {
        return None;
    }
    match correction {
        Correction::Fdr => benjamini_hochberg_threshold(pvalues, alpha),
        Correction::Bonferroni => Some(alpha / pvalues.len() as f64),
        Correction::None => Some(alpha),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub alpha: f64,
    pub correction: Correction,
    pub exact_threshold: usize,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            alpha: DEFAULT_ALPHA,
            correction: Correction::Fdr,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidatedEdge {
    pub source: u32,
    pub target: u32,
    pub observed: u32,
    pub pvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub alpha: f64,
    pub correction: Correction,
    /// Number of hypotheses tested (pairs with at least one common neighbour).
    pub hypotheses: usize,
    /// Largest p-value that was accepted as significant.
    pub threshold: Option<f64>,
    pub tail_method: TailMethod,
}

/// Monopartite network of verified users whose links passed validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedProjection {
    pub nodes: Vec<String>,
    pub edges: Vec<ValidatedEdge>,
    pub significance: Significance,
}

pub fn validate_projection(
    g: &BipartiteGraph,
    m: &BicmModel,
    alpha: f64,
    correction: Correction,
) -> Result<ValidatedProjection> {
    validate_projection_with(g, m, &ValidationOptions { alpha, correction, ..Default::default() })
}

pub fn validate_projection_with(
    g: &BipartiteGraph,
    m: &BicmModel,
    opts: &ValidationOptions,
) -> Result<ValidatedProjection> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    if g.top_len() != m.top_len() || g.bottom_len() != m.bottom_len() {
        return Err(Error::invalid("model was not fitted on this graph"));
    }
    let table = co_occurrences(g);
    let tested: Vec<(u32, u32, u32, f64)> = table
        .entries()
        .par_iter()
        .map(|&(i, j, v)| {
            pair_pvalue_with(m, i as usize, j as usize, v as usize, opts.exact_threshold)
                .map(|(p, _)| (i, j, v, p))
        })
        .collect::<Result<_>>()?;

    let pvalues: Vec<f64> = tested.iter().map(|t| t.3).collect();
    let threshold = correction_threshold(&pvalues, opts.alpha, opts.correction);
    let edges = match threshold {
        None => Vec::new(),
        Some(th) => tested
            .iter()
            .filter(|t| t.3 <= th)
            .map(|&(source, target, observed, pvalue)| ValidatedEdge { source, target, observed, pvalue })
            .collect(),
    };
    let tail_method = if g.bottom_len() <= opts.exact_threshold {
        TailMethod::Exact
    } else {
        TailMethod::Poisson
    };
    Ok(ValidatedProjection {
        nodes: g.top_ids().to_vec(),
        edges,
        significance: Significance {
            alpha: opts.alpha,
            correction: opts.correction,
            hypotheses: tested.len(),
            threshold,
            tail_method,
        },
    })
}

impl ValidatedProjection {
    pub fn to_graph(&self) -> UndirectedGraph {
        UndirectedGraph::from_edges(self.nodes.clone(), self.edges.iter().map(|e| (e.source, e.target)))
            .expect("validated edges index the projection nodes")
    }

    /// Edge list as `source,target,pvalue` with node ids.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["source", "target", "pvalue"])?;
        for e in &self.edges {
            w.write_record([
                self.nodes[e.source as usize].as_str(),
                self.nodes[e.target as usize].as_str(),
                &e.pvalue.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
