//! Chi-square, Kolmogorov-Smirnov and Mann-Whitney U tests.
//!
//! Two-sample tests switch to exact permutation p-values when the pooled
//! sample is small enough to enumerate every split.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Largest pooled size for which [`ks_test`] enumerates permutations.
pub const KS_EXACT_MAX: usize = 12;
/// Largest pooled size for which [`mann_whitney_u`] enumerates permutations.
pub const MWU_EXACT_MAX: usize = 10;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Asymptotic,
}

/// Which p-value route a two-sample test should take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Route {
    #[default]
    Auto,
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Common-language effect size `U_a / (n_a n_b)` (Mann-Whitney only).
    pub effect: Option<f64>,
    /// Sample sizes; for chi-square `n_a` is the grand total and `n_b` is 0.
    pub n_a: usize,
    pub n_b: usize,
    pub method: Method,
    /// Degrees of freedom (chi-square only).
    pub dof: Option<usize>,
}

/// Pearson chi-square test of independence on an `r x c` table.
pub fn chi_square(table: &[Vec<u64>]) -> Result<TestResult> {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::invalid("contingency table is empty"));
    }
    if let Some(k) = table.iter().position(|row| row.len() != c) {
        return Err(Error::invalid(format!("row {k} has {} columns, expected {c}", table[k].len())));
    }
    if r < 2 || c < 2 {
        return Err(Error::invalid(format!("a {r}x{c} table has no degrees of freedom")));
    }
    let rows: Vec<f64> = table.iter().map(|row| row.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|row| row[j]).sum::<u64>() as f64).collect();
    if let Some(k) = rows.iter().position(|&s| s == 0.0) {
        return Err(Error::invalid(format!("row {k} of the contingency table sums to zero")));
    }
    if let Some(k) = cols.iter().position(|&s| s == 0.0) {
        return Err(Error::invalid(format!("column {k} of the contingency table sums to zero")));
    }
    let total: f64 = rows.iter().sum();
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] * cols[j] / total;
            stat += (o as f64 - e).powi(2) / e;
        }
    }
    let dof = (r - 1) * (c - 1);
    let p = if stat <= 0.0 { 1.0 } else { gamma_ur(dof as f64 / 2.0, stat / 2.0) };
    Ok(TestResult {
        statistic: stat,
        p_value: p.clamp(0.0, 1.0),
        effect: None,
        n_a: total as usize,
        n_b: 0,
        method: Method::Asymptotic,
        dof: Some(dof),
    })
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("both samples must be nonempty"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

fn pick_method(route: Route, n: usize, exact_max: usize) -> Method {
    match route {
        Route::Auto if n <= exact_max => Method::Exact,
        Route::Auto | Route::Asymptotic => Method::Asymptotic,
        Route::Exact => Method::Exact,
    }
}

/// Calls `f` with a membership mask (true = sample a) for every way of
/// choosing `n_a` of `n` pooled positions.
fn for_each_split(n: usize, n_a: usize, mut f: impl FnMut(&[bool])) {
    fn rec(pos: usize, left: usize, mask: &mut Vec<bool>, f: &mut dyn FnMut(&[bool])) {
        let n = mask.len();
        if left == 0 {
            f(mask);
            return;
        }
        if n - pos < left {
            return;
        }
        mask[pos] = true;
        rec(pos + 1, left - 1, mask, f);
        mask[pos] = false;
        rec(pos + 1, left, mask, f);
    }
    let mut mask = vec![false; n];
    rec(0, n_a, &mut mask, &mut f);
}

/// Sorted pooled values with the size of each run of tied values.
fn pooled(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut runs = Vec::new();
    let mut k = 0;
    while k < all.len() {
        let mut e = k + 1;
        while e < all.len() && all[e] == all[k] {
            e += 1;
        }
        runs.push(e - k);
        k = e;
    }
    (all, runs)
}

/// KS statistic from the tie runs of the pooled sorted sample and a mask
/// marking which pooled positions belong to sample a.
fn ks_from_mask(runs: &[usize], mask: &[bool], n_a: usize, n_b: usize) -> f64 {
    let (mut ca, mut cb, mut pos, mut d) = (0usize, 0usize, 0usize, 0.0f64);
    for &len in runs {
        for &in_a in &mask[pos..pos + len] {
            if in_a {
                ca += 1;
            } else {
                cb += 1;
            }
        }
        pos += len;
        d = d.max((ca as f64 / n_a as f64 - cb as f64 / n_b as f64).abs());
    }
    d
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Jacobi-transformed series, fast for small lambda
        let t = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * t).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test (two-sided).
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    ks_test_with(a, b, Route::Auto)
}

pub fn ks_test_with(a: &[f64], b: &[f64], route: Route) -> Result<TestResult> {
    check_samples(a, b)?;
    let (n_a, n_b) = (a.len(), b.len());
    let (all, runs) = pooled(a, b);
    let observed_mask = membership_mask(&all, &runs, a);
    let d = ks_from_mask(&runs, &observed_mask, n_a, n_b);
    let method = pick_method(route, n_a + n_b, KS_EXACT_MAX);
    let p = match method {
        Method::Exact => {
            let (mut hit, mut total) = (0u64, 0u64);
            for_each_split(n_a + n_b, n_a, |mask| {
                total += 1;
                if ks_from_mask(&runs, mask, n_a, n_b) >= d - TIE_EPS {
                    hit += 1;
                }
            });
            hit as f64 / total as f64
        }
        Method::Asymptotic => {
            let en = (n_a as f64 * n_b as f64 / (n_a + n_b) as f64).sqrt();
            kolmogorov_survival(d * en)
        }
    };
    Ok(TestResult { statistic: d, p_value: p, effect: None, n_a, n_b, method, dof: None })
}

/// Mask over the pooled sorted sample assigning, within each tie run, as
/// many positions to sample a as it has values there.
fn membership_mask(all: &[f64], runs: &[usize], a: &[f64]) -> Vec<bool> {
    let mut sorted_a = a.to_vec();
    sorted_a.sort_by(f64::total_cmp);
    let mut mask = vec![false; all.len()];
    let (mut pos, mut ia) = (0usize, 0usize);
    for &len in runs {
        let v = all[pos];
        let mut k = 0;
        while ia < sorted_a.len() && sorted_a[ia] == v {
            mask[pos + k] = true;
            k += 1;
            ia += 1;
        }
        pos += len;
    }
    mask
}

/// Midranks (1-based) of the pooled sorted sample.
fn midranks(runs: &[usize]) -> Vec<f64> {
    let mut ranks = Vec::new();
    let mut start = 0usize;
    for &len in runs {
        let r = start as f64 + (len as f64 + 1.0) / 2.0;
        ranks.extend(std::iter::repeat(r).take(len));
        start += len;
    }
    ranks
}

fn u_from_mask(ranks: &[f64], mask: &[bool], n_a: usize) -> f64 {
    let r_a: f64 = ranks.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r).sum();
    r_a - (n_a * (n_a + 1)) as f64 / 2.0
}

/// Mann-Whitney U test (two-sided) with midranks for ties.
///
/// The statistic is `U_a`, the number of pairs with `a_i > b_j` plus half
/// the ties.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(a, b, Route::Auto)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], route: Route) -> Result<TestResult> {
    check_samples(a, b)?;
    let (n_a, n_b) = (a.len(), b.len());
    let n = n_a + n_b;
    let (all, runs) = pooled(a, b);
    let ranks = midranks(&runs);
    let u = u_from_mask(&ranks, &membership_mask(&all, &runs, a), n_a);
    let nn = (n_a * n_b) as f64;
    let mean = nn / 2.0;
    let method = pick_method(route, n, MWU_EXACT_MAX);
    let p = match method {
        Method::Exact => {
            let dev = (u - mean).abs();
            let (mut hit, mut total) = (0u64, 0u64);
            for_each_split(n, n_a, |mask| {
                total += 1;
                if (u_from_mask(&ranks, mask, n_a) - mean).abs() >= dev - TIE_EPS {
                    hit += 1;
                }
            });
            hit as f64 / total as f64
        }
        Method::Asymptotic => {
            let nf = n as f64;
            let ties: f64 = runs.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
            let var = nn / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
            if var <= 0.0 {
                1.0
            } else {
                let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
                erfc(z / std::f64::consts::SQRT_2).min(1.0)
            }
        }
    };
    Ok(TestResult {
        statistic: u,
        p_value: p.clamp(0.0, 1.0),
        effect: Some(u / nn),
        n_a,
        n_b,
        method,
        dof: None,
    })
}
