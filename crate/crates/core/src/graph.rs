//! Interaction networks built from retweet records.
//!
//! Node ids are opaque strings. Every container here assigns dense `u32`
//! indices in sorted-id order, so anything computed downstream on indices is
//! reproducible regardless of record order.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary two-layer network: verified users on the top layer, unverified
/// users on the bottom layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    top_ids: Vec<String>,
    bottom_ids: Vec<String>,
    top_adj: Vec<Vec<u32>>,
    bottom_adj: Vec<Vec<u32>>,
    n_edges: usize,
}

/// Builds a bipartite graph from `(verified, unverified)` records.
///
/// Repeated records collapse to a single edge. An id that shows up on both
/// layers is rejected.
pub fn build_bipartite<I, S>(records: I) -> Result<BipartiteGraph>
where
    I: IntoIterator<Item = (S, S)>,
    S: AsRef<str>,
{
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for (top, bottom) in records {
        let (top, bottom) = (top.as_ref(), bottom.as_ref());
        if top == bottom {
            return Err(Error::invalid(format!(
                "record ({top}, {bottom}) places the same id on both layers"
            )));
        }
        pairs.insert((top.to_owned(), bottom.to_owned()));
    }

    let top_set: BTreeSet<&str> = pairs.iter().map(|(t, _)| t.as_str()).collect();
    let bottom_set: BTreeSet<&str> = pairs.iter().map(|(_, b)| b.as_str()).collect();
    let both: Vec<&str> = top_set.intersection(&bottom_set).copied().collect();
    if !both.is_empty() {
        return Err(Error::invalid(format!(
            "ids present on both layers: {}",
            both.join(", ")
        )));
    }

    let top_ids: Vec<String> = top_set.into_iter().map(str::to_owned).collect();
    let bottom_ids: Vec<String> = bottom_set.into_iter().map(str::to_owned).collect();
    let edges: Vec<(u32, u32)> = {
        let top_index = index_of(&top_ids);
        let bottom_index = index_of(&bottom_ids);
        pairs
            .iter()
            .map(|(t, b)| (top_index[t.as_str()], bottom_index[b.as_str()]))
            .collect()
    };
    BipartiteGraph::from_index_edges(top_ids, bottom_ids, edges)
}

fn index_of(ids: &[String]) -> BTreeMap<&str, u32> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect()
}

impl BipartiteGraph {
    /// Builds a graph over explicit layers, which may include isolated nodes.
    ///
    /// Layer ids must be strictly increasing and disjoint; edges index into
    /// them. Duplicate edges collapse.
    pub fn from_index_edges<I>(top_ids: Vec<String>, bottom_ids: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        check_sorted_unique(&top_ids, "top")?;
        check_sorted_unique(&bottom_ids, "bottom")?;
        let bottom_set: BTreeSet<&str> = bottom_ids.iter().map(String::as_str).collect();
        if let Some(id) = top_ids.iter().find(|id| bottom_set.contains(id.as_str())) {
            return Err(Error::invalid(format!("id {id} present on both layers")));
        }

        let mut top_adj = vec![Vec::new(); top_ids.len()];
        let mut bottom_adj = vec![Vec::new(); bottom_ids.len()];
        for (t, b) in edges {
            let (ti, bi) = (t as usize, b as usize);
            if ti >= top_ids.len() {
                return Err(Error::IndexOutOfRange { index: ti, len: top_ids.len() });
            }
            if bi >= bottom_ids.len() {
                return Err(Error::IndexOutOfRange { index: bi, len: bottom_ids.len() });
            }
            top_adj[ti].push(b);
            bottom_adj[bi].push(t);
        }
        for adj in top_adj.iter_mut().chain(bottom_adj.iter_mut()) {
            adj.sort_unstable();
            adj.dedup();
        }
        let n_edges = top_adj.iter().map(Vec::len).sum();
        let g = BipartiteGraph { top_ids, bottom_ids, top_adj, bottom_adj, n_edges };
        debug_assert!(g.degree_sequence().is_conserved());
        Ok(g)
    }

    pub fn top_len(&self) -> usize {
        self.top_ids.len()
    }

    pub fn bottom_len(&self) -> usize {
        self.bottom_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }

    pub fn top_ids(&self) -> &[String] {
        &self.top_ids
    }

    pub fn bottom_ids(&self) -> &[String] {
        &self.bottom_ids
    }

    /// Sorted bottom indices adjacent to top node `i`.
    pub fn top_neighbors(&self, i: usize) -> &[u32] {
        &self.top_adj[i]
    }

    /// Sorted top indices adjacent to bottom node `a`.
    pub fn bottom_neighbors(&self, a: usize) -> &[u32] {
        &self.bottom_adj[a]
    }

    pub fn has_edge(&self, i: usize, a: usize) -> bool {
        self.top_adj
            .get(i)
            .is_some_and(|adj| adj.binary_search(&(a as u32)).is_ok())
    }

    pub fn top_index(&self, id: &str) -> Option<usize> {
        self.top_ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    pub fn bottom_index(&self, id: &str) -> Option<usize> {
        self.bottom_ids.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    /// Edges as `(top, bottom)` index pairs in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.top_adj
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().map(move |&a| (i as u32, a)))
    }

    pub fn degree_sequence(&self) -> DegreeSequence {
        DegreeSequence {
            top: self.top_adj.iter().map(|a| a.len() as u32).collect(),
            bottom: self.bottom_adj.iter().map(|a| a.len() as u32).collect(),
        }
    }
}

fn check_sorted_unique(ids: &[String], layer: &str) -> Result<()> {
    if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "{layer} layer ids must be strictly increasing, found {:?} before {:?}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Per-node degrees of both layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSequence {
    pub top: Vec<u32>,
    pub bottom: Vec<u32>,
}

impl DegreeSequence {
    /// Checked constructor: both layers must account for the same number of edges.
    pub fn new(top: Vec<u32>, bottom: Vec<u32>) -> Result<Self> {
        let ds = DegreeSequence { top, bottom };
        if !ds.is_conserved() {
            return Err(Error::invalid(format!(
                "degree sums differ: top {} vs bottom {}",
                ds.top.iter().map(|&k| k as u64).sum::<u64>(),
                ds.bottom.iter().map(|&k| k as u64).sum::<u64>()
            )));
        }
        Ok(ds)
    }

    pub fn edge_count(&self) -> u64 {
        self.top.iter().map(|&k| k as u64).sum()
    }

    pub fn is_conserved(&self) -> bool {
        self.top.iter().map(|&k| k as u64).sum::<u64>()
            == self.bottom.iter().map(|&k| k as u64).sum::<u64>()
    }
}

pub fn degree_sequence(g: &BipartiteGraph) -> DegreeSequence {
    g.degree_sequence()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arc {
    pub retweeter: u32,
    pub author: u32,
    pub weight: u64,
}

/// Directed weighted retweet network over all users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetweetNetwork {
    nodes: Vec<String>,
    arcs: Vec<Arc>,
    dropped_self_loops: usize,
    rejected_rows: usize,
}

/// Aggregates `(retweeter, author, count)` records into a retweet network.
///
/// Counts for the same ordered pair are summed. Self-retweets are dropped
/// and counted; rows with a non-positive count are rejected, logged and
/// counted.
pub fn build_retweet_network<I, S>(records: I) -> RetweetNetwork
where
    I: IntoIterator<Item = (S, S, i64)>,
    S: AsRef<str>,
{
    let mut agg: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut nodes: BTreeSet<String> = BTreeSet::new();
    let mut dropped_self_loops = 0;
    let mut rejected_rows = 0;
    for (row, (from, to, count)) in records.into_iter().enumerate() {
        let (from, to) = (from.as_ref(), to.as_ref());
        if count < 1 {
            log::warn!("retweet record {row} ({from} -> {to}) has non-positive count {count}; rejected");
            rejected_rows += 1;
            continue;
        }
        if from == to {
            dropped_self_loops += 1;
            continue;
        }
        nodes.insert(from.to_owned());
        nodes.insert(to.to_owned());
        *agg.entry((from.to_owned(), to.to_owned())).or_insert(0) += count as u64;
    }
    let nodes: Vec<String> = nodes.into_iter().collect();
    let index = index_of(&nodes);
    let arcs = agg
        .iter()
        .map(|((f, t), &w)| Arc {
            retweeter: index[f.as_str()],
            author: index[t.as_str()],
            weight: w,
        })
        .collect();
    RetweetNetwork { nodes, arcs, dropped_self_loops, rejected_rows }
}

impl RetweetNetwork {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    pub fn rejected_rows(&self) -> usize {
        self.rejected_rows
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.binary_search_by(|x| x.as_str().cmp(id)).ok()
    }

    /// Neighbour lists ignoring direction; weights of `u -> v` and `v -> u`
    /// are summed. Lists are sorted by neighbour index.
    pub fn undirected_neighbors(&self) -> Vec<Vec<(u32, u64)>> {
        let mut maps: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); self.nodes.len()];
        for arc in &self.arcs {
            *maps[arc.retweeter as usize].entry(arc.author).or_insert(0) += arc.weight;
            *maps[arc.author as usize].entry(arc.retweeter).or_insert(0) += arc.weight;
        }
        maps.into_iter().map(|m| m.into_iter().collect()).collect()
    }

    /// Weakly connected component id per node, numbered by descending size
    /// (ties by smallest member), together with the component sizes.
    pub fn components(&self) -> (Vec<u32>, Vec<usize>) {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for arc in &self.arcs {
            let a = find(&mut parent, arc.retweeter as usize);
            let b = find(&mut parent, arc.author as usize);
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let roots: Vec<usize> = (0..n).map(|x| find(&mut parent, x)).collect();
        renumber_by_size(&roots)
    }

    /// Sub-network keeping only weakly connected components with at least
    /// `min_size` nodes.
    pub fn retain_components(&self, min_size: usize) -> RetweetNetwork {
        let (comp, sizes) = self.components();
        let keep: Vec<bool> = comp.iter().map(|&c| sizes[c as usize] >= min_size).collect();
        let nodes: Vec<String> =
            self.nodes.iter().zip(&keep).filter(|(_, &k)| k).map(|(n, _)| n.clone()).collect();
        let mut remap = vec![u32::MAX; self.nodes.len()];
        let mut next = 0;
        for (old, &k) in keep.iter().enumerate() {
            if k {
                remap[old] = next;
                next += 1;
            }
        }
        let arcs = self
            .arcs
            .iter()
            .filter(|a| keep[a.retweeter as usize])
            .map(|a| Arc { retweeter: remap[a.retweeter as usize], author: remap[a.author as usize], weight: a.weight })
            .collect();
        RetweetNetwork {
            nodes,
            arcs,
            dropped_self_loops: self.dropped_self_loops,
            rejected_rows: self.rejected_rows,
        }
    }
}

/// Maps arbitrary group keys to contiguous ids ordered by descending group
/// size, ties broken by the first node carrying the key.
pub(crate) fn renumber_by_size(keys: &[usize]) -> (Vec<u32>, Vec<usize>) {
    let mut stats: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (node, &k) in keys.iter().enumerate() {
        let e = stats.entry(k).or_insert((0, node));
        e.0 += 1;
    }
    let mut order: Vec<(usize, usize, usize)> =
        stats.into_iter().map(|(k, (size, first))| (k, size, first)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut remap = BTreeMap::new();
    let mut sizes = Vec::with_capacity(order.len());
    for (new, &(k, size, _)) in order.iter().enumerate() {
        remap.insert(k, new as u32);
        sizes.push(size);
    }
    (keys.iter().map(|k| remap[k]).collect(), sizes)
}

/// Simple undirected, unweighted graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndirectedGraph {
    nodes: Vec<String>,
    adj: Vec<Vec<u32>>,
    n_edges: usize,
}

impl UndirectedGraph {
    pub fn from_edges<I>(nodes: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let n = nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            let (u, v) = (u as usize, v as usize);
            for x in [u, v] {
                if x >= n {
                    return Err(Error::IndexOutOfRange { index: x, len: n });
                }
            }
            if u == v {
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let n_edges = adj.iter().map(Vec::len).sum::<usize>() / 2;
        Ok(UndirectedGraph { nodes, adj, n_edges })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.n_edges
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, a)| {
            a.iter().filter(move |&&v| (u as u32) < v).map(move |&v| (u as u32, v))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_records_give_empty_graph() {
        let g = build_bipartite(Vec::<(&str, &str)>::new()).unwrap();
        assert_eq!((g.top_len(), g.bottom_len(), g.edge_count()), (0, 0, 0));
        let ds = g.degree_sequence();
        assert!(ds.top.is_empty() && ds.bottom.is_empty());
    }

    #[test]
    fn duplicate_records_collapse() {
        let g = build_bipartite([("v1", "u1"), ("v1", "u1")]).unwrap();
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn small_fixture_degrees() {
        let recs = [("v1", "u1"), ("v1", "u2"), ("v2", "u1"), ("v3", "u2")];
        let g = build_bipartite(recs).unwrap();
        assert_eq!((g.top_len(), g.bottom_len(), g.edge_count()), (3, 2, 4));
        let ds = degree_sequence(&g);
        assert_eq!(ds.top, vec![2, 1, 1]);
        assert_eq!(ds.bottom, vec![2, 2]);
        assert_eq!(ds.edge_count(), 4);
        assert!(ds.is_conserved());
    }

    #[test]
    fn complete_two_by_three() {
        let mut recs = vec![];
        for t in ["a", "b"] {
            for b in ["x", "y", "z"] {
                recs.push((t, b));
            }
        }
        let ds = build_bipartite(recs).unwrap().degree_sequence();
        assert_eq!(ds.top, vec![3, 3]);
        assert_eq!(ds.bottom, vec![2, 2, 2]);
    }

    #[test]
    fn same_id_on_both_layers_is_rejected() {
        assert!(build_bipartite([("a", "a")]).is_err());
        let err = build_bipartite([("a", "b"), ("b", "c")]).unwrap_err();
        assert!(err.to_string().contains('b'), "{err}");
    }

    #[test]
    fn node_order_is_sorted_by_id() {
        let g = build_bipartite([("z", "q"), ("a", "p"), ("m", "r")]).unwrap();
        assert_eq!(g.top_ids(), ["a", "m", "z"]);
        assert_eq!(g.bottom_ids(), ["p", "q", "r"]);
        assert!(g.has_edge(2, 1));
        assert_eq!(g.top_index("m"), Some(1));
    }

    #[test]
    fn degree_sequence_rejects_unbalanced() {
        assert!(DegreeSequence::new(vec![1, 1], vec![1]).is_err());
        assert!(DegreeSequence::new(vec![0], vec![0]).is_ok());
    }

    #[test]
    fn retweet_aggregation() {
        let net = build_retweet_network([("a", "b", 1), ("a", "b", 2)]);
        assert_eq!(net.arcs(), [Arc { retweeter: 0, author: 1, weight: 3 }]);
    }

    #[test]
    fn retweet_self_loop_dropped() {
        let net = build_retweet_network([("a", "a", 5)]);
        assert_eq!(net.node_count(), 0);
        assert!(net.arcs().is_empty());
        assert_eq!(net.dropped_self_loops(), 1);
    }

    #[test]
    fn retweet_chain_and_rejections() {
        let net = build_retweet_network([("a", "b", 1), ("b", "c", 1), ("c", "d", 0), ("d", "e", -2)]);
        assert_eq!(net.arcs().len(), 2);
        assert_eq!(net.rejected_rows(), 2);
        assert_eq!(net.nodes(), ["a", "b", "c"]);
    }

    #[test]
    fn components_are_sized_descending() {
        let net = build_retweet_network([("x", "y", 1), ("a", "b", 1), ("b", "c", 1)]);
        let (comp, sizes) = net.components();
        assert_eq!(sizes, vec![3, 2]);
        assert_eq!(comp, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn undirected_neighbors_sum_both_directions() {
        let net = build_retweet_network([("a", "b", 2), ("b", "a", 3)]);
        let nb = net.undirected_neighbors();
        assert_eq!(nb[0], vec![(1, 5)]);
        assert_eq!(nb[1], vec![(0, 5)]);
    }
}
