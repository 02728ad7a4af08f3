//! Bipartite Configuration Model.
//!
//! The maximum-entropy ensemble of bipartite graphs whose expected degrees
//! match an observed degree sequence. Every pair `(i, a)` is an independent
//! Bernoulli variable with probability `x_i y_a / (1 + x_i y_a)`, where the
//! multipliers solve the likelihood equations
//!
//! ```text
//! k_i = sum_a x_i y_a / (1 + x_i y_a)      d_a = sum_i x_i y_a / (1 + x_i y_a)
//! ```
//!
//! Degree sequences on the boundary of the realizable polytope (isolated
//! nodes, nodes linked to the whole opposite layer, and more generally any
//! tight Gale-Ryser cut) force some probabilities to exactly 0 or 1, which no
//! finite multiplier can express. Those pairs are split off into frozen
//! blocks before solving, leaving independent interior subproblems ("free
//! blocks") with finite multipliers.
//!
//! Each free block is solved on its reduced system: nodes with equal degree
//! share a multiplier, so the number of unknowns is the number of distinct
//! degrees per layer. The solver runs the classic fixed-point map and falls
//! back to Newton's method with a backtracking line search on the
//! log-likelihood when the fixed point stalls.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, DegreeSequence};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Largest reduced system (unknowns) for which the dense Newton fallback is used.
const NEWTON_MAX_UNKNOWNS: usize = 2_500;
/// Fixed-point iterations between stall checks.
const STALL_WINDOW: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Target for the maximum relative degree residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Solve on the reduced system (one unknown per distinct degree). With
    /// `false` every node carries its own unknown.
    pub group_degrees: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, group_degrees: true }
    }
}

/// Rectangle of node pairs whose probability is pinned to 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenBlock {
    pub top: Vec<u32>,
    pub bottom: Vec<u32>,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub iterations: usize,
    pub newton_steps: usize,
    pub tolerance: f64,
    pub max_iter: usize,
    pub grouped: bool,
    pub free_blocks: usize,
    /// Unknowns of the largest reduced system solved.
    pub max_unknowns: usize,
}

/// Fitted model: per-node multipliers plus the frozen structure.
///
/// Nodes outside every free block (isolated, full-degree or otherwise
/// degenerate) carry multiplier 0; their probabilities come from the frozen
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BicmModel {
    top_multipliers: Vec<f64>,
    bottom_multipliers: Vec<f64>,
    top_block: Vec<Option<u32>>,
    bottom_block: Vec<Option<u32>>,
    frozen_blocks: Vec<FrozenBlock>,
    top_frozen: Vec<Vec<u32>>,
    bottom_frozen: Vec<Vec<u32>>,
    fit_residual: f64,
    solver: SolverInfo,
}

/// Fits the model to `ds`.
pub fn fit_bicm(ds: &DegreeSequence, opts: FitOptions) -> Result<BicmModel> {
    if !(opts.tol > 0.0) || !opts.tol.is_finite() {
        return Err(Error::invalid(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if opts.max_iter == 0 {
        return Err(Error::invalid("max_iter must be positive"));
    }
    if !ds.is_conserved() {
        return Err(Error::invalid("degree sequence violates conservation"));
    }
    let (n_top, n_bottom) = (ds.top.len(), ds.bottom.len());
    if let Some((i, &k)) = ds.top.iter().enumerate().find(|(_, &k)| k as usize > n_bottom) {
        return Err(Error::invalid(format!(
            "top node {i} has degree {k} but the bottom layer has {n_bottom} nodes"
        )));
    }
    if let Some((a, &d)) = ds.bottom.iter().enumerate().find(|(_, &d)| d as usize > n_top) {
        return Err(Error::invalid(format!(
            "bottom node {a} has degree {d} but the top layer has {n_top} nodes"
        )));
    }

    let decomposition = decompose(ds)?;

    let mut top_multipliers = vec![0.0; n_top];
    let mut bottom_multipliers = vec![0.0; n_bottom];
    let mut top_block = vec![None; n_top];
    let mut bottom_block = vec![None; n_bottom];
    let mut solver = SolverInfo {
        iterations: 0,
        newton_steps: 0,
        tolerance: opts.tol,
        max_iter: opts.max_iter,
        grouped: opts.group_degrees,
        free_blocks: decomposition.free.len(),
        max_unknowns: 0,
    };
    let mut fit_residual: f64 = 0.0;

    for (block_id, sub) in decomposition.free.iter().enumerate() {
        let system = ReducedSystem::new(ds, sub, opts.group_degrees);
        solver.max_unknowns = solver.max_unknowns.max(system.unknowns());
        let sol = system.solve(opts)?;
        solver.iterations += sol.iterations;
        solver.newton_steps += sol.newton_steps;
        fit_residual = fit_residual.max(sol.residual);
        for (&node, &class) in sub.rows.iter().zip(&system.row_class) {
            top_multipliers[node as usize] = sol.theta[class].exp();
            top_block[node as usize] = Some(block_id as u32);
        }
        for (&node, &class) in sub.cols.iter().zip(&system.col_class) {
            bottom_multipliers[node as usize] = sol.phi[class].exp();
            bottom_block[node as usize] = Some(block_id as u32);
        }
    }

    Ok(BicmModel::assemble(
        top_multipliers,
        bottom_multipliers,
        top_block,
        bottom_block,
        decomposition.frozen,
        fit_residual,
        solver,
    ))
}

// ---------------------------------------------------------------------------
// Degeneracy decomposition

#[derive(Debug, Clone)]
struct SubProblem {
    rows: Vec<u32>,
    cols: Vec<u32>,
    row_deg: Vec<u32>,
    col_deg: Vec<u32>,
}

struct Decomposition {
    frozen: Vec<FrozenBlock>,
    free: Vec<SubProblem>,
}

fn non_graphical() -> Error {
    Error::invalid("degree sequence is not realizable by any bipartite graph")
}

fn decompose(ds: &DegreeSequence) -> Result<Decomposition> {
    let mut frozen = Vec::new();
    let mut free = Vec::new();
    let mut work = vec![SubProblem {
        rows: (0..ds.top.len() as u32).collect(),
        cols: (0..ds.bottom.len() as u32).collect(),
        row_deg: ds.top.clone(),
        col_deg: ds.bottom.clone(),
    }];

    while let Some(mut sub) = work.pop() {
        peel(&mut sub, &mut frozen)?;
        if sub.rows.is_empty() || sub.cols.is_empty() {
            if sub.row_deg.iter().chain(&sub.col_deg).any(|&d| d != 0) {
                return Err(non_graphical());
            }
            continue;
        }
        match tight_cut(&sub)? {
            None => free.push(sub),
            Some((s_rows, u_cols)) => {
                let (p1, p2) = split(sub, &s_rows, &u_cols, &mut frozen);
                // Push in reverse so subproblems are processed in creation order.
                work.push(p2);
                work.push(p1);
            }
        }
    }
    Ok(Decomposition { frozen, free })
}

/// Repeatedly removes empty and full rows/columns, recording frozen blocks.
fn peel(sub: &mut SubProblem, frozen: &mut Vec<FrozenBlock>) -> Result<()> {
    loop {
        let mut changed = false;
        let n_cols = sub.cols.len() as u32;

        let (zero_rows, full_rows) = classify(&sub.rows, &sub.row_deg, n_cols);
        if n_cols > 0 && (!zero_rows.is_empty() || !full_rows.is_empty()) {
            push_block(frozen, zero_rows.clone(), sub.cols.clone(), false);
            push_block(frozen, full_rows.clone(), sub.cols.clone(), true);
            let nfull = full_rows.len() as u32;
            for d in sub.col_deg.iter_mut() {
                *d = d.checked_sub(nfull).ok_or_else(non_graphical)?;
            }
            retain_rows(sub, |k| k != 0 && k != n_cols);
            changed = true;
        }

        let n_rows_now = sub.rows.len() as u32;
        let (zero_cols, full_cols) = classify(&sub.cols, &sub.col_deg, n_rows_now);
        if n_rows_now > 0 && (!zero_cols.is_empty() || !full_cols.is_empty()) {
            push_block(frozen, sub.rows.clone(), zero_cols, false);
            push_block(frozen, sub.rows.clone(), full_cols.clone(), true);
            let nfull = full_cols.len() as u32;
            for k in sub.row_deg.iter_mut() {
                *k = k.checked_sub(nfull).ok_or_else(non_graphical)?;
            }
            retain_cols(sub, |d| d != 0 && d != n_rows_now);
            changed = true;
        }

        if !changed || sub.rows.is_empty() || sub.cols.is_empty() {
            return Ok(());
        }
    }
}

fn classify(nodes: &[u32], deg: &[u32], full: u32) -> (Vec<u32>, Vec<u32>) {
    let mut zero = Vec::new();
    let mut fulls = Vec::new();
    for (&n, &d) in nodes.iter().zip(deg) {
        if d == 0 {
            zero.push(n);
        } else if d == full {
            fulls.push(n);
        }
    }
    (zero, fulls)
}

fn push_block(frozen: &mut Vec<FrozenBlock>, top: Vec<u32>, bottom: Vec<u32>, value: bool) {
    if !top.is_empty() && !bottom.is_empty() {
        frozen.push(FrozenBlock { top, bottom, value });
    }
}

fn retain_rows(sub: &mut SubProblem, keep: impl Fn(u32) -> bool) {
    let (rows, degs): (Vec<u32>, Vec<u32>) = sub
        .rows
        .iter()
        .zip(&sub.row_deg)
        .filter(|(_, &k)| keep(k))
        .map(|(&r, &k)| (r, k))
        .unzip();
    sub.rows = rows;
    sub.row_deg = degs;
}

fn retain_cols(sub: &mut SubProblem, keep: impl Fn(u32) -> bool) {
    let (cols, degs): (Vec<u32>, Vec<u32>) = sub
        .cols
        .iter()
        .zip(&sub.col_deg)
        .filter(|(_, &d)| keep(d))
        .map(|(&c, &d)| (c, d))
        .unzip();
    sub.cols = cols;
    sub.col_deg = degs;
}

/// Finds the smallest `k` at which the Gale-Ryser inequality
/// `sum_{i<=k} k_(i) <= sum_a min(d_a, k)` holds with equality. At such a
/// cut the `k` largest rows are linked to every column of degree `>= k` and
/// no other row touches the remaining columns.
fn tight_cut(sub: &SubProblem) -> Result<Option<(Vec<u32>, Vec<u32>)>> {
    let n_rows = sub.rows.len();
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.sort_by(|&a, &b| sub.row_deg[b].cmp(&sub.row_deg[a]).then(sub.rows[a].cmp(&sub.rows[b])));

    // count_ge[k] = #{a : d_a >= k}
    let mut count_ge = vec![0u64; n_rows + 2];
    for &d in &sub.col_deg {
        count_ge[(d as usize).min(n_rows + 1)] += 1;
    }
    for k in (0..=n_rows).rev() {
        count_ge[k] += count_ge[k + 1];
    }

    let mut lhs = 0u64;
    let mut rhs = 0u64;
    for k in 1..=n_rows {
        lhs += sub.row_deg[order[k - 1]] as u64;
        rhs += count_ge[k];
        if lhs > rhs {
            return Err(non_graphical());
        }
        if lhs == rhs && k < n_rows {
            let s_rows = order[..k].iter().map(|&i| sub.rows[i]).collect();
            let u_cols = sub
                .cols
                .iter()
                .zip(&sub.col_deg)
                .filter(|(_, &d)| d as usize >= k)
                .map(|(&c, _)| c)
                .collect();
            return Ok(Some((s_rows, u_cols)));
        }
    }
    Ok(None)
}

fn split(
    sub: SubProblem,
    s_rows: &[u32],
    u_cols: &[u32],
    frozen: &mut Vec<FrozenBlock>,
) -> (SubProblem, SubProblem) {
    let in_s = |r: &u32| s_rows.contains(r);
    let in_u = |c: &u32| u_cols.contains(c);
    let u_len = u_cols.len() as u32;
    let k = s_rows.len() as u32;

    let mut p1 = SubProblem { rows: vec![], cols: vec![], row_deg: vec![], col_deg: vec![] };
    let mut p2 = p1.clone();
    for (&r, &deg) in sub.rows.iter().zip(&sub.row_deg) {
        if in_s(&r) {
            p1.rows.push(r);
            p1.row_deg.push(deg - u_len);
        } else {
            p2.rows.push(r);
            p2.row_deg.push(deg);
        }
    }
    for (&c, &deg) in sub.cols.iter().zip(&sub.col_deg) {
        if in_u(&c) {
            p2.cols.push(c);
            p2.col_deg.push(deg - k);
        } else {
            p1.cols.push(c);
            p1.col_deg.push(deg);
        }
    }
    push_block(frozen, p1.rows.clone(), p2.cols.clone(), true);
    push_block(frozen, p2.rows.clone(), p1.cols.clone(), false);
    (p1, p2)
}

// ---------------------------------------------------------------------------
// Reduced-system solver

struct ReducedSystem {
    /// Residual degree of each row class.
    row_deg: Vec<f64>,
    row_mult: Vec<f64>,
    /// Normaliser for the relative residual: max(1, full degree).
    row_norm: Vec<f64>,
    col_deg: Vec<f64>,
    col_mult: Vec<f64>,
    col_norm: Vec<f64>,
    row_class: Vec<usize>,
    col_class: Vec<usize>,
}

struct Solution {
    theta: Vec<f64>,
    phi: Vec<f64>,
    residual: f64,
    iterations: usize,
    newton_steps: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn group(nodes: &[u32], residual: &[u32], full: &[u32], grouped: bool) -> (Vec<usize>, Vec<(u32, u32, f64)>) {
    // class key: (residual degree, full degree); within a free block equal
    // residual degree implies equal full degree, the pair is kept for clarity.
    let mut classes: Vec<(u32, u32, f64)> = Vec::new();
    let mut class_of = Vec::with_capacity(nodes.len());
    if grouped {
        let mut keys: std::collections::BTreeMap<(u32, u32), usize> = Default::default();
        for (&n, &r) in nodes.iter().zip(residual) {
            let key = (r, full[n as usize]);
            let id = *keys.entry(key).or_insert_with(|| {
                classes.push((r, full[n as usize], 0.0));
                classes.len() - 1
            });
            classes[id].2 += 1.0;
            class_of.push(id);
        }
    } else {
        for (&n, &r) in nodes.iter().zip(residual) {
            classes.push((r, full[n as usize], 1.0));
            class_of.push(classes.len() - 1);
        }
    }
    (class_of, classes)
}

impl ReducedSystem {
    fn new(ds: &DegreeSequence, sub: &SubProblem, grouped: bool) -> Self {
        let (row_class, rows) = group(&sub.rows, &sub.row_deg, &ds.top, grouped);
        let (col_class, cols) = group(&sub.cols, &sub.col_deg, &ds.bottom, grouped);
        ReducedSystem {
            row_deg: rows.iter().map(|c| c.0 as f64).collect(),
            row_norm: rows.iter().map(|c| (c.1 as f64).max(1.0)).collect(),
            row_mult: rows.iter().map(|c| c.2).collect(),
            col_deg: cols.iter().map(|c| c.0 as f64).collect(),
            col_norm: cols.iter().map(|c| (c.1 as f64).max(1.0)).collect(),
            col_mult: cols.iter().map(|c| c.2).collect(),
            row_class,
            col_class,
        }
    }

    fn unknowns(&self) -> usize {
        self.row_deg.len() + self.col_deg.len()
    }

    fn expected_rows(&self, theta: &[f64], phi: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .map(|&t| phi.iter().zip(&self.col_mult).map(|(&p, &m)| m * sigmoid(t + p)).sum())
            .collect()
    }

    fn expected_cols(&self, theta: &[f64], phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .map(|&p| theta.iter().zip(&self.row_mult).map(|(&t, &m)| m * sigmoid(t + p)).sum())
            .collect()
    }

    fn residual(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let er = self.expected_rows(theta, phi);
        let ec = self.expected_cols(theta, phi);
        let r = er
            .iter()
            .zip(&self.row_deg)
            .zip(&self.row_norm)
            .map(|((e, k), n)| (e - k).abs() / n);
        let c = ec
            .iter()
            .zip(&self.col_deg)
            .zip(&self.col_norm)
            .map(|((e, d), n)| (e - d).abs() / n);
        r.chain(c).fold(0.0, f64::max)
    }

    fn log_likelihood(&self, theta: &[f64], phi: &[f64]) -> f64 {
        let mut ll = 0.0;
        for ((&t, &k), &m) in theta.iter().zip(&self.row_deg).zip(&self.row_mult) {
            ll += m * k * t;
        }
        for ((&p, &d), &m) in phi.iter().zip(&self.col_deg).zip(&self.col_mult) {
            ll += m * d * p;
        }
        for (&t, &mr) in theta.iter().zip(&self.row_mult) {
            for (&p, &mc) in phi.iter().zip(&self.col_mult) {
                ll -= mr * mc * softplus(t + p);
            }
        }
        ll
    }

    fn solve(&self, opts: FitOptions) -> Result<Solution> {
        let edges: f64 = self.row_deg.iter().zip(&self.row_mult).map(|(k, m)| k * m).sum();
        let scale = edges.sqrt().ln();
        let mut theta: Vec<f64> = self.row_deg.iter().map(|k| k.ln() - scale).collect();
        let mut phi: Vec<f64> = self.col_deg.iter().map(|d| d.ln() - scale).collect();

        let mut trajectory = Vec::new();
        let mut residual = self.residual(&theta, &phi);
        trajectory.push(residual);
        let mut iterations = 0;
        let mut newton_steps = 0;
        let mut use_newton = false;
        let mut damping = 1.0;
        let mut window_start = residual;

        while residual > opts.tol {
            if iterations >= opts.max_iter {
                return Err(Error::NonConvergence { iterations, trajectory });
            }
            iterations += 1;

            if use_newton {
                match self.newton_step(&mut theta, &mut phi) {
                    Some(()) => newton_steps += 1,
                    None => {
                        // Line search failed: numerical floor reached.
                        residual = self.residual(&theta, &phi);
                        trajectory.push(residual);
                        if residual <= opts.tol {
                            break;
                        }
                        return Err(Error::NonConvergence { iterations, trajectory });
                    }
                }
            } else {
                let (t_new, p_new) = self.fixed_point_step(&theta, &phi, damping);
                let r_new = self.residual(&t_new, &p_new);
                if r_new > residual && damping > 1.0 / 64.0 {
                    damping *= 0.5;
                } else {
                    theta = t_new;
                    phi = p_new;
                }
            }
            residual = self.residual(&theta, &phi);
            trajectory.push(residual);

            if !use_newton && iterations % STALL_WINDOW == 0 {
                let stalled = residual > 0.5 * window_start;
                if stalled && self.unknowns() <= NEWTON_MAX_UNKNOWNS {
                    log::debug!("fixed point stalled at residual {residual:.3e}; switching to Newton");
                    use_newton = true;
                }
                window_start = residual;
            }
        }

        Ok(Solution { theta, phi, residual, iterations, newton_steps })
    }

    /// One sweep of `x_i <- k_i / sum_a y_a / (1 + x_i y_a)` followed by the
    /// symmetric column update, in log space.
    fn fixed_point_step(&self, theta: &[f64], phi: &[f64], damping: f64) -> (Vec<f64>, Vec<f64>) {
        let er = self.expected_rows(theta, phi);
        let t_new: Vec<f64> = theta
            .iter()
            .zip(&er)
            .zip(&self.row_deg)
            .map(|((&t, &e), &k)| t + damping * (k / e).ln())
            .collect();
        let ec = self.expected_cols(&t_new, phi);
        let p_new = phi
            .iter()
            .zip(&ec)
            .zip(&self.col_deg)
            .map(|((&p, &e), &d)| p + damping * (d / e).ln())
            .collect();
        (t_new, p_new)
    }

    /// Newton step on the concave log-likelihood with the gauge fixed by
    /// holding the last column parameter. Returns `None` when no ascent step
    /// can be found.
    fn newton_step(&self, theta: &mut [f64], phi: &mut [f64]) -> Option<()> {
        let (na, nb) = (theta.len(), phi.len());
        let n = na + nb - 1;
        let mut grad = DVector::<f64>::zeros(n);
        let mut hess = DMatrix::<f64>::zeros(n, n);

        for a in 0..na {
            let (mr, k) = (self.row_mult[a], self.row_deg[a]);
            let mut exp_deg = 0.0;
            let mut curv = 0.0;
            for b in 0..nb {
                let p = sigmoid(theta[a] + phi[b]);
                let s = p * (1.0 - p);
                exp_deg += self.col_mult[b] * p;
                curv += self.col_mult[b] * s;
                if b < nb - 1 {
                    let h = mr * self.col_mult[b] * s;
                    hess[(a, na + b)] = h;
                    hess[(na + b, a)] = h;
                }
            }
            grad[a] = mr * (k - exp_deg);
            hess[(a, a)] = mr * curv;
        }
        for b in 0..nb - 1 {
            let (mc, d) = (self.col_mult[b], self.col_deg[b]);
            let mut exp_deg = 0.0;
            let mut curv = 0.0;
            for a in 0..na {
                let p = sigmoid(theta[a] + phi[b]);
                exp_deg += self.row_mult[a] * p;
                curv += self.row_mult[a] * p * (1.0 - p);
            }
            grad[na + b] = mc * (d - exp_deg);
            hess[(na + b, na + b)] = mc * curv;
        }

        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess.lu().solve(&grad)?,
        };
        let slope = grad.dot(&step);
        if !(slope > 0.0) {
            return None;
        }

        let base = self.log_likelihood(theta, phi);
        let mut t = 1.0;
        for _ in 0..60 {
            let t_try: Vec<f64> = (0..na).map(|a| theta[a] + t * step[a]).collect();
            let mut p_try = phi.to_vec();
            for b in 0..nb - 1 {
                p_try[b] += t * step[na + b];
            }
            let ll = self.log_likelihood(&t_try, &p_try);
            if ll >= base + 1e-4 * t * slope || (ll >= base && t < 1e-6) {
                theta.copy_from_slice(&t_try);
                phi.copy_from_slice(&p_try);
                return Some(());
            }
            t *= 0.5;
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Model accessors

impl BicmModel {
    fn assemble(
        top_multipliers: Vec<f64>,
        bottom_multipliers: Vec<f64>,
        top_block: Vec<Option<u32>>,
        bottom_block: Vec<Option<u32>>,
        frozen_blocks: Vec<FrozenBlock>,
        fit_residual: f64,
        solver: SolverInfo,
    ) -> Self {
        let mut top_frozen = vec![Vec::new(); top_multipliers.len()];
        let mut bottom_frozen = vec![Vec::new(); bottom_multipliers.len()];
        for (id, block) in frozen_blocks.iter().enumerate() {
            for &t in &block.top {
                top_frozen[t as usize].push(id as u32);
            }
            for &b in &block.bottom {
                bottom_frozen[b as usize].push(id as u32);
            }
        }
        BicmModel {
            top_multipliers,
            bottom_multipliers,
            top_block,
            bottom_block,
            frozen_blocks,
            top_frozen,
            bottom_frozen,
            fit_residual,
            solver,
        }
    }

    pub fn top_len(&self) -> usize {
        self.top_multipliers.len()
    }

    pub fn bottom_len(&self) -> usize {
        self.bottom_multipliers.len()
    }

    pub fn top_multipliers(&self) -> &[f64] {
        &self.top_multipliers
    }

    pub fn bottom_multipliers(&self) -> &[f64] {
        &self.bottom_multipliers
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn solver(&self) -> &SolverInfo {
        &self.solver
    }

    pub fn frozen_blocks(&self) -> &[FrozenBlock] {
        &self.frozen_blocks
    }

    /// Every frozen pair with its pinned value.
    pub fn frozen_edges(&self) -> impl Iterator<Item = (u32, u32, bool)> + '_ {
        self.frozen_blocks.iter().flat_map(|b| {
            b.top
                .iter()
                .flat_map(move |&t| b.bottom.iter().map(move |&a| (t, a, b.value)))
        })
    }

    /// Frozen value of `(i, a)` if the pair is pinned.
    pub fn frozen_value(&self, i: usize, a: usize) -> Option<bool> {
        let (ti, ba) = (&self.top_frozen[i], &self.bottom_frozen[a]);
        ti.iter()
            .find(|id| ba.contains(id))
            .map(|&id| self.frozen_blocks[id as usize].value)
    }

    #[inline]
    pub(crate) fn prob_unchecked(&self, i: usize, a: usize) -> f64 {
        match (self.top_block[i], self.bottom_block[a]) {
            (Some(x), Some(y)) if x == y => {
                let z = self.top_multipliers[i] * self.bottom_multipliers[a];
                z / (1.0 + z)
            }
            _ => match self.frozen_value(i, a) {
                Some(true) => 1.0,
                _ => 0.0,
            },
        }
    }

    /// Probability of the edge `(i, a)` under the model.
    pub fn edge_probability(&self, i: usize, a: usize) -> Result<f64> {
        if i >= self.top_len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.top_len() });
        }
        if a >= self.bottom_len() {
            return Err(Error::IndexOutOfRange { index: a, len: self.bottom_len() });
        }
        Ok(self.prob_unchecked(i, a))
    }

    /// All probabilities of top node `i`.
    pub fn probability_row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.top_len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.top_len() });
        }
        Ok((0..self.bottom_len()).map(|a| self.prob_unchecked(i, a)).collect())
    }

    /// Expected degrees of both layers, summed pair by pair.
    pub fn expected_degrees(&self) -> (Vec<f64>, Vec<f64>) {
        let mut top = vec![0.0; self.top_len()];
        let mut bottom = vec![0.0; self.bottom_len()];
        for (i, ti) in top.iter_mut().enumerate() {
            for (a, ba) in bottom.iter_mut().enumerate() {
                let p = self.prob_unchecked(i, a);
                *ti += p;
                *ba += p;
            }
        }
        (top, bottom)
    }

    /// Copy of the model with new multipliers for the free nodes. Used to
    /// probe the likelihood surface around the fitted point.
    pub fn with_multipliers(&self, top: Vec<f64>, bottom: Vec<f64>) -> Result<BicmModel> {
        if top.len() != self.top_len() || bottom.len() != self.bottom_len() {
            return Err(Error::invalid("multiplier vectors do not match the layer sizes"));
        }
        let free_ok = |m: &[f64], blocks: &[Option<u32>]| {
            m.iter().zip(blocks).all(|(&x, b)| b.is_none() || (x > 0.0 && x.is_finite()))
        };
        if !free_ok(&top, &self.top_block) || !free_ok(&bottom, &self.bottom_block) {
            return Err(Error::invalid("free-node multipliers must be positive and finite"));
        }
        let mut m = self.clone();
        m.top_multipliers = top;
        m.bottom_multipliers = bottom;
        Ok(m)
    }

    /// Draws one graph with each pair linked independently. Node ids are
    /// zero-padded indices (`t000`, `b000`, ...), so sorted order equals
    /// index order.
    pub fn sample_graph(&self, seed: u64) -> BipartiteGraph {
        let w = self.top_len().max(self.bottom_len()).max(1).to_string().len();
        let top_ids = (0..self.top_len()).map(|i| format!("t{i:0w$}")).collect();
        let bottom_ids = (0..self.bottom_len()).map(|a| format!("b{a:0w$}")).collect();
        BipartiteGraph::from_index_edges(top_ids, bottom_ids, self.sample_edges(seed))
            .expect("sampled ids are sorted and disjoint")
    }

    /// Like [`BicmModel::sample_graph`] but reusing the node ids of `like`.
    pub fn sample_like(&self, like: &BipartiteGraph, seed: u64) -> Result<BipartiteGraph> {
        self.check_dims(like)?;
        BipartiteGraph::from_index_edges(
            like.top_ids().to_vec(),
            like.bottom_ids().to_vec(),
            self.sample_edges(seed),
        )
    }

    fn sample_edges(&self, seed: u64) -> Vec<(u32, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..self.top_len() {
            for a in 0..self.bottom_len() {
                let p = self.prob_unchecked(i, a);
                if p >= 1.0 || (p > 0.0 && rng.gen::<f64>() < p) {
                    edges.push((i as u32, a as u32));
                }
            }
        }
        edges
    }

    fn check_dims(&self, g: &BipartiteGraph) -> Result<()> {
        if g.top_len() != self.top_len() || g.bottom_len() != self.bottom_len() {
            return Err(Error::invalid(format!(
                "graph is {}x{} but the model is {}x{}",
                g.top_len(),
                g.bottom_len(),
                self.top_len(),
                self.bottom_len()
            )));
        }
        Ok(())
    }

    /// Log-probability of observing `g` under the model. Returns negative
    /// infinity when `g` contradicts a frozen pair.
    pub fn log_likelihood(&self, g: &BipartiteGraph) -> Result<f64> {
        self.check_dims(g)?;
        let mut ll = 0.0;
        let mut row = vec![false; self.bottom_len()];
        for i in 0..self.top_len() {
            for &a in g.top_neighbors(i) {
                row[a as usize] = true;
            }
            for (a, &linked) in row.iter().enumerate() {
                match (self.top_block[i], self.bottom_block[a]) {
                    (Some(x), Some(y)) if x == y => {
                        let z = self.top_multipliers[i] * self.bottom_multipliers[a];
                        ll -= z.ln_1p();
                        if linked {
                            ll += z.ln();
                        }
                    }
                    _ => {
                        let pinned = self.frozen_value(i, a).unwrap_or(false);
                        if pinned != linked {
                            return Ok(f64::NEG_INFINITY);
                        }
                    }
                }
            }
            for &a in g.top_neighbors(i) {
                row[a as usize] = false;
            }
        }
        Ok(ll)
    }
}

pub fn edge_probability(m: &BicmModel, i: usize, a: usize) -> Result<f64> {
    m.edge_probability(i, a)
}

pub fn sample_graph(m: &BicmModel, seed: u64) -> BipartiteGraph {
    m.sample_graph(seed)
}

pub fn log_likelihood(m: &BicmModel, g: &BipartiteGraph) -> Result<f64> {
    m.log_likelihood(g)
}

// ---------------------------------------------------------------------------
// Serialization

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    top_size: usize,
    bottom_size: usize,
    top_multipliers: Vec<f64>,
    bottom_multipliers: Vec<f64>,
    top_block: Vec<Option<u32>>,
    bottom_block: Vec<Option<u32>>,
    frozen_blocks: Vec<FrozenBlock>,
    fit_residual: f64,
    solver: SolverInfo,
}

impl Serialize for BicmModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelDocument {
            top_size: self.top_len(),
            bottom_size: self.bottom_len(),
            top_multipliers: self.top_multipliers.clone(),
            bottom_multipliers: self.bottom_multipliers.clone(),
            top_block: self.top_block.clone(),
            bottom_block: self.bottom_block.clone(),
            frozen_blocks: self.frozen_blocks.clone(),
            fit_residual: self.fit_residual,
            solver: self.solver.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BicmModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = ModelDocument::deserialize(d)?;
        let sizes_ok = doc.top_multipliers.len() == doc.top_size
            && doc.top_block.len() == doc.top_size
            && doc.bottom_multipliers.len() == doc.bottom_size
            && doc.bottom_block.len() == doc.bottom_size;
        if !sizes_ok {
            return Err(D::Error::custom("model arrays do not match the declared layer sizes"));
        }
        let in_range = doc.frozen_blocks.iter().all(|b| {
            b.top.iter().all(|&t| (t as usize) < doc.top_size)
                && b.bottom.iter().all(|&a| (a as usize) < doc.bottom_size)
        });
        if !in_range {
            return Err(D::Error::custom("frozen block references a node outside the layers"));
        }
        Ok(BicmModel::assemble(
            doc.top_multipliers,
            doc.bottom_multipliers,
            doc.top_block,
            doc.bottom_block,
            doc.frozen_blocks,
            doc.fit_residual,
            doc.solver,
        ))
    }
}
