//! Community detection: Louvain modularity optimisation on the validated
//! projection and seeded label propagation over the retweet network.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{renumber_by_size, RetweetNetwork, UndirectedGraph};

pub const DEFAULT_RESOLUTION: f64 = 1.0;
pub const DEFAULT_MAX_SWEEPS: usize = 100;
pub const DEFAULT_RESTARTS: usize = 8;

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    LouvainSeed,
    Propagated,
    Unassigned,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::LouvainSeed => "louvain-seed",
            Origin::Propagated => "propagated",
            Origin::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "louvain-seed" => Ok(Origin::LouvainSeed),
            "propagated" => Ok(Origin::Propagated),
            "unassigned" => Ok(Origin::Unassigned),
            other => Err(Error::invalid(format!("unknown origin {other:?}"))),
        }
    }
}

/// Community assignment of every node of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    nodes: Vec<String>,
    labels: Vec<Option<u32>>,
    origin: Vec<Origin>,
    /// Modularity at resolution 1 (Louvain only).
    modularity: Option<f64>,
    /// Objective value after each Louvain pass, at the run's resolution.
    passes: Vec<f64>,
    /// Number of labelled nodes after each propagation sweep.
    sweeps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub label: u32,
    pub size: usize,
    pub seeds: usize,
    pub propagated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub nodes: usize,
    pub unassigned: usize,
    pub communities: Vec<CommunitySummary>,
    pub modularity: Option<f64>,
    pub pass_objective: Vec<f64>,
    pub sweeps: usize,
}

impl Partition {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn modularity(&self) -> Option<f64> {
        self.modularity
    }

    pub fn pass_objective(&self) -> &[f64] {
        &self.passes
    }

    pub fn labeled_per_sweep(&self) -> &[usize] {
        &self.sweeps
    }

    pub fn label_of(&self, id: &str) -> Option<u32> {
        self.nodes
            .binary_search_by(|n| n.as_str().cmp(id))
            .ok()
            .and_then(|i| self.labels[i])
    }

    /// Labels as a map from node id, skipping unassigned nodes.
    pub fn assignments(&self) -> BTreeMap<String, u32> {
        self.nodes
            .iter()
            .zip(&self.labels)
            .filter_map(|(n, l)| l.map(|l| (n.clone(), l)))
            .collect()
    }

    pub fn summary(&self) -> PartitionSummary {
        let mut by_label: BTreeMap<u32, CommunitySummary> = BTreeMap::new();
        for (l, o) in self.labels.iter().zip(&self.origin) {
            if let Some(l) = l {
                let c = by_label
                    .entry(*l)
                    .or_insert(CommunitySummary { label: *l, size: 0, seeds: 0, propagated: 0 });
                c.size += 1;
                match o {
                    Origin::LouvainSeed => c.seeds += 1,
                    Origin::Propagated => c.propagated += 1,
                    Origin::Unassigned => {}
                }
            }
        }
        PartitionSummary {
            nodes: self.nodes.len(),
            unassigned: self.labels.iter().filter(|l| l.is_none()).count(),
            communities: by_label.into_values().collect(),
            modularity: self.modularity,
            pass_objective: self.passes.clone(),
            sweeps: self.sweeps.len(),
        }
    }

    /// CSV `node_id,label,origin`; unassigned nodes have an empty label.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node_id", "label", "origin"])?;
        for ((n, l), o) in self.nodes.iter().zip(&self.labels).zip(&self.origin) {
            let label = l.map(|l| l.to_string()).unwrap_or_default();
            w.write_record([n.as_str(), &label, o.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Weighted graph used by the Louvain passes. `adj[u]` holds `(v, w)` with
/// `v != u`; `self_w[u]` is the internal weight of an aggregated node summed
/// over ordered pairs.
struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
}

impl WeightedGraph {
    fn degree(&self, u: usize) -> f64 {
        self.self_w[u] + self.adj[u].iter().map(|e| e.1).sum::<f64>()
    }

    fn aggregate(&self, comm: &[usize], n_comm: usize) -> WeightedGraph {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_comm];
        let mut self_w = vec![0.0; n_comm];
        for u in 0..self.adj.len() {
            let cu = comm[u];
            self_w[cu] += self.self_w[u];
            for &(v, w) in &self.adj[u] {
                let cv = comm[v];
                if cu == cv {
                    self_w[cu] += w;
                } else {
                    *maps[cu].entry(cv).or_insert(0.0) += w;
                }
            }
        }
        WeightedGraph { adj: maps.into_iter().map(|m| m.into_iter().collect()).collect(), self_w }
    }
}

/// Modularity of `labels` on `g` at the given resolution.
pub fn modularity(g: &UndirectedGraph, labels: &[u32], resolution: f64) -> f64 {
    let m2 = 2.0 * g.edge_count() as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let n_comm = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut internal = vec![0.0; n_comm];
    let mut total = vec![0.0; n_comm];
    for u in 0..g.node_count() {
        let c = labels[u] as usize;
        total[c] += g.degree(u) as f64;
        internal[c] += g.neighbors(u).iter().filter(|&&v| labels[v as usize] as usize == c).count() as f64;
    }
    internal
        .iter()
        .zip(&total)
        .map(|(&i, &t)| i / m2 - resolution * (t / m2) * (t / m2))
        .sum()
}

/// Louvain modularity optimisation with a seeded node visit order, keeping
/// the best of [`DEFAULT_RESTARTS`] runs.
pub fn louvain(g: &UndirectedGraph, resolution: f64, seed: u64) -> Result<Partition> {
    louvain_with_restarts(g, resolution, seed, DEFAULT_RESTARTS)
}

/// Runs Louvain `restarts` times with visit orders drawn from `seed` and
/// returns the run with the largest objective (earliest run on ties).
pub fn louvain_with_restarts(g: &UndirectedGraph, resolution: f64, seed: u64, restarts: usize) -> Result<Partition> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be positive"));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut best = louvain_once(g, resolution, seeds.gen())?;
    for _ in 1..restarts {
        let run = louvain_once(g, resolution, seeds.gen())?;
        if run.pass_objective().last() > best.pass_objective().last() {
            best = run;
        }
    }
    Ok(best)
}

fn louvain_once(g: &UndirectedGraph, resolution: f64, seed: u64) -> Result<Partition> {
    if g.node_count() == 0 {
        return Err(Error::invalid("louvain needs at least one node"));
    }
    if !(resolution.is_finite() && resolution > 0.0) {
        return Err(Error::invalid(format!("resolution must be positive, got {resolution}")));
    }
    let n = g.node_count();
    let mut membership: Vec<usize> = (0..n).collect();
    let mut passes = Vec::new();

    if g.edge_count() > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = WeightedGraph {
            adj: (0..n).map(|u| g.neighbors(u).iter().map(|&v| (v as usize, 1.0)).collect()).collect(),
            self_w: vec![0.0; n],
        };
        let m2 = 2.0 * g.edge_count() as f64;
        let mut record = |membership: &[usize], n_comm: usize| {
            let labels: Vec<u32> = membership.iter().map(|&c| c as u32).collect();
            let q = modularity(g, &labels, resolution);
            log::debug!("louvain pass {}: {} communities, objective {q}", passes.len() + 1, n_comm);
            if let Some(&prev) = passes.last() {
                debug_assert!(q >= prev - 1e-9, "louvain objective decreased: {prev} -> {q}");
            }
            passes.push(q);
        };
        let mut wg = base.aggregate(&membership, n);
        loop {
            loop {
                let (comm, moved) = local_moves(&wg, (0..wg.adj.len()).collect(), resolution, m2, &mut rng);
                let (dense, n_comm) = compact(&comm);
                for c in membership.iter_mut() {
                    *c = dense[*c];
                }
                record(&membership, n_comm);
                if !moved || n_comm == wg.adj.len() {
                    break;
                }
                wg = wg.aggregate(&dense, n_comm);
            }
            // node moves on the original graph can undo early mistakes
            // that aggregation has locked in
            let (comm, moved) = local_moves(&base, membership.clone(), resolution, m2, &mut rng);
            if !moved {
                break;
            }
            let (dense, n_comm) = compact(&comm);
            membership = dense;
            record(&membership, n_comm);
            wg = base.aggregate(&membership, n_comm);
        }
    }

    let (labels, _) = renumber_by_size(&membership);
    let modularity = modularity(g, &labels, 1.0);
    Ok(Partition {
        nodes: g.nodes().to_vec(),
        labels: labels.into_iter().map(Some).collect(),
        origin: vec![Origin::LouvainSeed; n],
        modularity: Some(modularity),
        passes,
        sweeps: Vec::new(),
    })
}

fn compact(comm: &[usize]) -> (Vec<usize>, usize) {
    let (dense, sizes) = renumber_by_size(comm);
    (dense.into_iter().map(|c| c as usize).collect(), sizes.len())
}

/// One Louvain phase: move single nodes to the neighbouring community with
/// the largest modularity gain until no move helps.
fn local_moves(
    wg: &WeightedGraph,
    mut comm: Vec<usize>,
    resolution: f64,
    m2: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, bool) {
    let n = wg.adj.len();
    let degree: Vec<f64> = (0..n).map(|u| wg.degree(u)).collect();
    let mut tot = vec![0.0; n];
    for u in 0..n {
        tot[comm[u]] += degree[u];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &u in &order {
            let cu = comm[u];
            for &(v, w) in &wg.adj[u] {
                let c = comm[v];
                if link[c] == 0.0 {
                    touched.push(c);
                }
                link[c] += w;
            }
            tot[cu] -= degree[u];
            let gain = |c: usize, link: &[f64]| link[c] - resolution * tot[c] * degree[u] / m2;
            let mut best = cu;
            let mut best_gain = gain(cu, &link);
            for &c in &touched {
                let g = gain(c, &link);
                if g > best_gain + GAIN_EPS {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += degree[u];
            if best != cu {
                comm[u] = best;
                moved = true;
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    (comm, moved_any)
}

/// Asynchronous label propagation with frozen seeds.
///
/// Arcs are read as undirected with summed weights. Each sweep visits the
/// non-seed nodes in a freshly shuffled order; a node adopts the label with
/// the largest incident weight, keeps its current label when that label is
/// among the maximal ones, and otherwise picks uniformly among them.
/// Relabelling is asynchronous, but a node that receives its first label
/// during a sweep only counts as a labelled neighbour from the next sweep,
/// so labels advance one hop per sweep from the seeds.
pub fn label_propagation(
    net: &RetweetNetwork,
    seeds: &BTreeMap<String, u32>,
    seed: u64,
    max_sweeps: usize,
) -> Result<Partition> {
    if seeds.is_empty() {
        return Err(Error::invalid("label propagation needs at least one seed"));
    }
    if max_sweeps == 0 {
        return Err(Error::invalid("max_sweeps must be positive"));
    }
    let missing: Vec<&str> = seeds.keys().filter(|id| net.index_of(id).is_none()).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "{} seed node(s) absent from the retweet network: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let n = net.node_count();
    let mut labels: Vec<Option<u32>> = vec![None; n];
    let mut origin = vec![Origin::Unassigned; n];
    for (id, &l) in seeds {
        let i = net.index_of(id).expect("checked above");
        labels[i] = Some(l);
        origin[i] = Origin::LouvainSeed;
    }
    let neighbors = net.undirected_neighbors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).filter(|&i| origin[i] != Origin::LouvainSeed).collect();
    let mut sweeps = Vec::new();
    let mut weights: BTreeMap<u32, u64> = BTreeMap::new();
    let mut visible: Vec<bool> = labels.iter().map(Option::is_some).collect();
    let mut fresh = Vec::new();
    let mut stable = false;
    while sweeps.len() < max_sweeps {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &u in &order {
            weights.clear();
            for &(v, w) in &neighbors[u] {
                if !visible[v as usize] {
                    continue;
                }
                if let Some(l) = labels[v as usize] {
                    *weights.entry(l).or_insert(0) += w;
                }
            }
            let Some(&top) = weights.values().max() else { continue };
            let best: Vec<u32> = weights.iter().filter(|e| *e.1 == top).map(|e| *e.0).collect();
            if labels[u].is_some_and(|l| best.contains(&l)) {
                continue;
            }
            let pick = if best.len() == 1 { best[0] } else { best[rng.gen_range(0..best.len())] };
            if labels[u].is_none() {
                fresh.push(u);
            }
            labels[u] = Some(pick);
            origin[u] = Origin::Propagated;
            changed = true;
        }
        for u in fresh.drain(..) {
            visible[u] = true;
        }
        sweeps.push(labels.iter().filter(|l| l.is_some()).count());
        if !changed {
            stable = true;
            break;
        }
    }
    if !stable {
        log::warn!("label propagation stopped after {max_sweeps} sweeps without stabilising");
    }
    Ok(Partition {
        nodes: net.nodes().to_vec(),
        labels,
        origin,
        modularity: None,
        passes: Vec::new(),
        sweeps,
    })
}

/// Reads a partition CSV written by [`Partition::write_csv`].
pub fn read_partition_csv<R: std::io::Read>(input: R) -> Result<Partition> {
    #[derive(Deserialize)]
    struct Row {
        node_id: String,
        label: Option<u32>,
        origin: String,
    }
    let mut rows: Vec<(String, Option<u32>, Origin)> = Vec::new();
    for (k, r) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
        let r = r?;
        let o = Origin::parse(&r.origin).map_err(|e| Error::Schema {
            path: "partition".into(),
            row: k + 1,
            message: e.to_string(),
        })?;
        rows.push((r.node_id, r.label, o));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("partition lists a node twice"));
    }
    Ok(Partition {
        nodes: rows.iter().map(|r| r.0.clone()).collect(),
        labels: rows.iter().map(|r| r.1).collect(),
        origin: rows.iter().map(|r| r.2).collect(),
        modularity: None,
        passes: Vec::new(),
        sweeps: Vec::new(),
    })
}
