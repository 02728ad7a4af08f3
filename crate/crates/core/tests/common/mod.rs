//! Shared fixtures and independent oracles for the integration suites.
#![allow(dead_code)]

use disco::graph::{BipartiteGraph, UndirectedGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    let w = n.max(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0w$}")).collect()
}

/// Erdos-Renyi style bipartite graph with edge density `p`.
pub fn random_bipartite(n_top: usize, n_bottom: usize, p: f64, seed: u64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n_top {
        for a in 0..n_bottom {
            if rng.gen::<f64>() < p {
                edges.push((i as u32, a as u32));
            }
        }
    }
    BipartiteGraph::from_index_edges(ids("t", n_top), ids("b", n_bottom), edges).unwrap()
}

/// Bipartite graph with heterogeneous (rank-one) connection probabilities,
/// closer to real retweet data than a uniform density.
pub fn heterogeneous_bipartite(n_top: usize, n_bottom: usize, density: f64, seed: u64) -> BipartiteGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wt: Vec<f64> = (0..n_top).map(|_| rng.gen_range(0.2..1.8)).collect();
    let wb: Vec<f64> = (0..n_bottom).map(|_| rng.gen_range(0.2..1.8)).collect();
    let mut edges = Vec::new();
    for i in 0..n_top {
        for a in 0..n_bottom {
            if rng.gen::<f64>() < (density * wt[i] * wb[a]).min(1.0) {
                edges.push((i as u32, a as u32));
            }
        }
    }
    BipartiteGraph::from_index_edges(ids("t", n_top), ids("b", n_bottom), edges).unwrap()
}

/// Dense 0/1 biadjacency matrix.
pub fn biadjacency(g: &BipartiteGraph) -> Vec<Vec<u8>> {
    let mut m = vec![vec![0u8; g.bottom_len()]; g.top_len()];
    for (i, a) in g.edges() {
        m[i as usize][a as usize] = 1;
    }
    m
}

/// Independent BiCM oracle: plain Newton-Raphson on the full, ungrouped
/// likelihood equations in multiplicative form, with one bottom multiplier
/// pinned. Only valid for interior degree sequences (no 0 or full degrees).
pub fn newton_oracle(top: &[u32], bottom: &[u32]) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (top.len(), bottom.len());
    let e: f64 = top.iter().map(|&k| k as f64).sum();
    let mut x: Vec<f64> = top.iter().map(|&k| k as f64 / e.sqrt()).collect();
    let mut y: Vec<f64> = bottom.iter().map(|&d| d as f64 / e.sqrt()).collect();
    for _ in 0..200 {
        // unknowns: x_0..x_{n-1}, y_0..y_{m-2}; y_{m-1} pinned.
        let dim = n + m - 1;
        let mut jac = vec![vec![0.0; dim]; dim];
        let mut f = vec![0.0; dim];
        for i in 0..n {
            let mut s = 0.0;
            for a in 0..m {
                let q = x[i] * y[a];
                s += q / (1.0 + q);
                let dq = 1.0 / ((1.0 + q) * (1.0 + q));
                jac[i][i] += y[a] * dq;
                if a < m - 1 {
                    jac[i][n + a] = x[i] * dq;
                }
            }
            f[i] = s - top[i] as f64;
        }
        for a in 0..m - 1 {
            let mut s = 0.0;
            for i in 0..n {
                let q = x[i] * y[a];
                s += q / (1.0 + q);
                let dq = 1.0 / ((1.0 + q) * (1.0 + q));
                jac[n + a][n + a] += x[i] * dq;
                jac[n + a][i] = y[a] * dq;
            }
            f[n + a] = s - bottom[a] as f64;
        }
        let step = gauss_solve(jac, f);
        // keep multipliers positive
        let mut t = 1.0;
        loop {
            let ok = (0..n).all(|i| x[i] - t * step[i] > 0.0)
                && (0..m - 1).all(|a| y[a] - t * step[n + a] > 0.0);
            if ok {
                break;
            }
            t *= 0.5;
        }
        for i in 0..n {
            x[i] -= t * step[i];
        }
        for a in 0..m - 1 {
            y[a] -= t * step[n + a];
        }
    }
    (x, y)
}

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// P(V >= v) for a sum of independent Bernoullis, by full enumeration of
/// the 2^n outcomes.
pub fn enumerate_upper_tail(probs: &[f64], v: usize) -> f64 {
    let n = probs.len();
    let mut tail = 0.0;
    for mask in 0u32..(1 << n) {
        if (mask.count_ones() as usize) < v {
            continue;
        }
        let mut w = 1.0;
        for (k, &p) in probs.iter().enumerate() {
            w *= if mask >> k & 1 == 1 { p } else { 1.0 - p };
        }
        tail += w;
    }
    tail
}

/// Full Poisson-binomial pmf via the textbook O(n^2) convolution.
pub fn poisson_binomial_pmf(probs: &[f64]) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for &p in probs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (k, &w) in pmf.iter().enumerate() {
            next[k] += w * (1.0 - p);
            next[k + 1] += w * p;
        }
        pmf = next;
    }
    pmf
}

/// Naive Benjamini-Hochberg: indices of rejected hypotheses.
pub fn naive_bh(pvalues: &[f64], alpha: f64) -> Vec<usize> {
    let m = pvalues.len();
    let mut sorted: Vec<f64> = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cutoff = None;
    for k in 1..=m {
        if sorted[k - 1] <= k as f64 * alpha / m as f64 {
            cutoff = Some(sorted[k - 1]);
        }
    }
    match cutoff {
        None => vec![],
        Some(c) => (0..m).filter(|&i| pvalues[i] <= c).collect(),
    }
}

/// Modularity straight from the definition, summing over all node pairs.
pub fn modularity_by_definition(g: &UndirectedGraph, labels: &[u32]) -> f64 {
    let n = g.node_count();
    let m2 = 2.0 * g.edge_count() as f64;
    if m2 == 0.0 {
        return 0.0;
    }
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                continue;
            }
            let a = if g.neighbors(i).contains(&(j as u32)) { 1.0 } else { 0.0 };
            q += a - (g.degree(i) * g.degree(j)) as f64 / m2;
        }
    }
    q / m2
}

pub fn karate_club() -> UndirectedGraph {
    const EDGES: [(u32, u32); 78] = [
        (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 10), (0, 11),
        (0, 12), (0, 13), (0, 17), (0, 19), (0, 21), (0, 31), (1, 2), (1, 3), (1, 7), (1, 13),
        (1, 17), (1, 19), (1, 21), (1, 30), (2, 3), (2, 7), (2, 8), (2, 9), (2, 13), (2, 27),
        (2, 28), (2, 32), (3, 7), (3, 12), (3, 13), (4, 6), (4, 10), (5, 6), (5, 10), (5, 16),
        (6, 16), (8, 30), (8, 32), (8, 33), (9, 33), (13, 33), (14, 32), (14, 33), (15, 32),
        (15, 33), (18, 32), (18, 33), (19, 33), (20, 32), (20, 33), (22, 32), (22, 33),
        (23, 25), (23, 27), (23, 29), (23, 32), (23, 33), (24, 25), (24, 27), (24, 31),
        (25, 31), (26, 29), (26, 33), (27, 33), (28, 31), (28, 33), (29, 32), (29, 33),
        (30, 32), (30, 33), (31, 32), (31, 33), (32, 33),
    ];
    UndirectedGraph::from_edges(ids("k", 34), EDGES).unwrap()
}

/// Two 5-cliques (nodes 0-4 and 5-9) joined by the edge 4-5.
pub fn two_cliques() -> UndirectedGraph {
    let mut edges = vec![(4, 5)];
    for base in [0u32, 5] {
        for i in 0..5 {
            for j in i + 1..5 {
                edges.push((base + i, base + j));
            }
        }
    }
    UndirectedGraph::from_edges(ids("n", 10), edges).unwrap()
}

/// Independent modularity oracle: alternates greedy agglomeration (merge
/// the pair of communities with the largest gain) with single-node moves to
/// any community or a fresh one, until neither improves modularity. Every
/// candidate is scored by the definition directly.
pub fn greedy_modularity_oracle(g: &UndirectedGraph) -> (Vec<u32>, f64) {
    let n = g.node_count();
    let mut labels: Vec<u32> = (0..n as u32).collect();
    let q = |l: &[u32]| modularity_by_definition(g, l);
    loop {
        let start = q(&labels);
        loop {
            let current = q(&labels);
            let mut best = (0.0, 0, 0);
            let mut comms: Vec<u32> = labels.clone();
            comms.sort_unstable();
            comms.dedup();
            for (x, &a) in comms.iter().enumerate() {
                for &b in &comms[x + 1..] {
                    let trial: Vec<u32> = labels.iter().map(|&l| if l == b { a } else { l }).collect();
                    let gain = q(&trial) - current;
                    if gain > best.0 + 1e-12 {
                        best = (gain, a, b);
                    }
                }
            }
            if best.0 <= 0.0 {
                break;
            }
            for l in labels.iter_mut() {
                if *l == best.2 {
                    *l = best.1;
                }
            }
        }
        loop {
            let mut improved = false;
            for v in 0..n {
                let current = q(&labels);
                let mut cands: Vec<u32> = labels.clone();
                cands.push(n as u32 + v as u32);
                cands.sort_unstable();
                cands.dedup();
                let old = labels[v];
                let mut best = (current + 1e-12, old);
                for c in cands {
                    labels[v] = c;
                    let t = q(&labels);
                    if t > best.0 {
                        best = (t, c);
                    }
                }
                labels[v] = best.1;
                improved |= best.1 != old;
            }
            if !improved {
                break;
            }
        }
        if q(&labels) <= start + 1e-12 {
            break;
        }
    }
    anneal(g, labels)
}

/// Seeded simulated annealing over single-node moves, starting from `labels`
/// and returning the best partition visited.
fn anneal(g: &UndirectedGraph, mut labels: Vec<u32>) -> (Vec<u32>, f64) {
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut current = modularity_by_definition(g, &labels);
    let mut best = (labels.clone(), current);
    let steps = 60_000;
    for s in 0..steps {
        let temp = 0.02 * (1e-4f64).powf(s as f64 / steps as f64);
        let v = rng.gen_range(0..n);
        let old = labels[v];
        labels[v] = rng.gen_range(0..n as u32);
        let t = modularity_by_definition(g, &labels);
        if t >= current || rng.gen::<f64>() < ((t - current) / temp).exp() {
            current = t;
            if t > best.1 {
                best = (labels.clone(), t);
            }
        } else {
            labels[v] = old;
        }
    }
    best
}

/// Planted two-block bipartite graph: tops `0..block_tops` and the next
/// `block_tops` belong to blocks 0 and 1; bottoms split the same way.
/// Returns the graph and the block of every top node.
pub fn planted_two_block(
    block_tops: usize,
    block_bottoms: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> (BipartiteGraph, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nt, nb) = (2 * block_tops, 2 * block_bottoms);
    let mut edges = Vec::new();
    for i in 0..nt {
        for a in 0..nb {
            let same = i / block_tops == a / block_bottoms;
            if rng.gen::<f64>() < if same { p_in } else { p_out } {
                edges.push((i as u32, a as u32));
            }
        }
    }
    let g = BipartiteGraph::from_index_edges(ids("t", nt), ids("b", nb), edges).unwrap();
    (g, (0..nt).map(|i| i / block_tops).collect())
}

/// Brute-force validation: every pair's p-value from the full pmf
/// convolution, then naive BH. Returns the kept pairs.
pub fn oracle_validation(
    g: &BipartiteGraph,
    m: &disco::bicm::BicmModel,
    alpha: f64,
) -> Vec<(u32, u32)> {
    let adj = biadjacency(g);
    let mut pairs = Vec::new();
    let mut pvalues = Vec::new();
    for i in 0..g.top_len() {
        for j in i + 1..g.top_len() {
            let v: usize = (0..g.bottom_len()).map(|a| (adj[i][a] & adj[j][a]) as usize).sum();
            if v == 0 {
                continue;
            }
            let probs: Vec<f64> = (0..g.bottom_len())
                .map(|a| m.edge_probability(i, a).unwrap() * m.edge_probability(j, a).unwrap())
                .collect();
            let pmf = poisson_binomial_pmf(&probs);
            pairs.push((i as u32, j as u32));
            pvalues.push(pmf[v..].iter().sum::<f64>().min(1.0));
        }
    }
    naive_bh(&pvalues, alpha).into_iter().map(|k| pairs[k]).collect()
}

/// D by definition: sup over pooled points of |F_a - F_b|.
pub fn ks_by_definition(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&x| {
            let fa = a.iter().filter(|&&v| v <= x).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|&&v| v <= x).count() as f64 / b.len() as f64;
            (fa - fb).abs()
        })
        .fold(0.0, f64::max)
}

/// U_a by pair counting.
pub fn u_by_pairs(a: &[f64], b: &[f64]) -> f64 {
    let mut u = 0.0;
    for &x in a {
        for &y in b {
            u += if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 };
        }
    }
    u
}

/// Exact two-sided permutation p-values by bitmask enumeration of group
/// labels over the pooled values.
pub fn permutation_pvalues(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let (n, n_a) = (pool.len(), a.len());
    let mean = (a.len() * b.len()) as f64 / 2.0;
    let d_obs = ks_by_definition(a, b);
    let u_dev = (u_by_pairs(a, b) - mean).abs();
    let (mut ks_hits, mut u_hits, mut total) = (0, 0, 0);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n_a {
            continue;
        }
        let (mut xa, mut xb) = (Vec::new(), Vec::new());
        for (k, &v) in pool.iter().enumerate() {
            if mask >> k & 1 == 1 { xa.push(v) } else { xb.push(v) }
        }
        total += 1;
        if ks_by_definition(&xa, &xb) >= d_obs - 1e-12 {
            ks_hits += 1;
        }
        if (u_by_pairs(&xa, &xb) - mean).abs() >= u_dev - 1e-12 {
            u_hits += 1;
        }
    }
    (ks_hits as f64 / total as f64, u_hits as f64 / total as f64)
}

pub fn debate_fixture(name: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/debate").join(name)
}

/// Stage-runner config for the committed 10-tweet fixture. Its projection
/// has no links and it scores fewer than ten community members, so the
/// propagation is seeded from every verified user and the deciles run over
/// the whole score file.
pub fn debate_config(out: std::path::PathBuf) -> disco::workflow::RunConfig {
    let mut cfg = disco::workflow::RunConfig::new(out);
    cfg.tweets = Some(debate_fixture("tweets.jsonl"));
    cfg.states = Some(debate_fixture("states.csv"));
    cfg.labels = Some(debate_fixture("labels.csv"));
    cfg.url_map = Some(debate_fixture("url_map.csv"));
    cfg.bot_scores = Some(debate_fixture("bot_scores.csv"));
    cfg.seed_scope = disco::workflow::SeedScope::All;
    cfg.bot_population = disco::pipeline::BotPopulation::Scored;
    cfg
}
