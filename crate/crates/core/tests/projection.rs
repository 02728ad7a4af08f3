mod common;

use common::*;
use disco::bicm::{fit_bicm, FitOptions};
use disco::graph::build_bipartite;
use disco::projection::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn co_occurrences_match_direct_summation() {
    let g = build_bipartite([
        ("v1", "u1"), ("v1", "u2"), ("v1", "u3"),
        ("v2", "u2"), ("v2", "u3"), ("v2", "u4"),
        ("v3", "u1"), ("v3", "u4"),
        ("v4", "u3"),
    ])
    .unwrap();
    let adj = biadjacency(&g);
    let table = co_occurrences(&g);
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            let v: u32 = (0..4).map(|a| (adj[i][a] & adj[j][a]) as u32).sum();
            assert_eq!(table.get(i as u32, j as u32), v, "({i},{j})");
        }
    }
    assert!(table.entries().iter().all(|e| e.2 >= 1));
}

#[test]
fn tail_matches_enumeration_on_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(0..=12);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
        for v in 0..=n {
            let got = poisson_binomial_upper_tail(&probs, v).unwrap();
            let want = enumerate_upper_tail(&probs, v);
            assert!((got - want).abs() <= 1e-12, "{probs:?} v={v}: {got} vs {want}");
        }
    }
}

#[test]
fn single_saturated_pair_is_validated() {
    // Two tops share their 3 neighbours among 40 bottoms; the remaining tops
    // keep the expected overlap tiny.
    let mut records = vec![("a", "b00"), ("a", "b01"), ("a", "b02"), ("z", "b00"), ("z", "b01"), ("z", "b02")];
    let bottoms: Vec<String> = (3..40).map(|k| format!("b{k:02}")).collect();
    let fillers: Vec<String> = (0..37).map(|k| format!("f{k:02}")).collect();
    for (f, b) in fillers.iter().zip(&bottoms) {
        records.push((f.as_str(), b.as_str()));
    }
    let g = build_bipartite(records).unwrap();
    let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
    let vp = validate_projection(&g, &m, 0.01, Correction::Fdr).unwrap();
    assert_eq!(vp.significance.hypotheses, 1);
    assert_eq!(vp.edges.len(), 1);
    let e = vp.edges[0];
    assert_eq!((vp.nodes[e.source as usize].as_str(), vp.nodes[e.target as usize].as_str()), ("a", "z"));
    let probs = pair_probabilities(&m, e.source as usize, e.target as usize).unwrap();
    let want = poisson_binomial_pmf(&probs)[3..].iter().sum::<f64>();
    assert!((e.pvalue - want).abs() < 1e-12);
    assert!(e.pvalue < 0.01);
}

#[test]
fn planted_blocks_are_recovered() {
    for seed in 0..3 {
        let (g, block) = planted_two_block(10, 300, 0.5, 0.02, seed);
        let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
        let vp = validate_projection(&g, &m, 0.01, Correction::Fdr).unwrap();
        let got: Vec<(u32, u32)> = vp.edges.iter().map(|e| (e.source, e.target)).collect();
        let mut want = oracle_validation(&g, &m, 0.01);
        want.sort_unstable();
        assert_eq!(got, want, "seed {seed}");
        let th = vp.significance.threshold.unwrap();
        assert!(vp.edges.iter().all(|e| e.pvalue <= th));
        assert!(got.iter().all(|&(i, j)| block[i as usize] == block[j as usize]), "seed {seed}");
        let within = 2 * 10 * 9 / 2;
        assert!(got.len() as f64 >= 0.95 * within as f64, "seed {seed}: {}", got.len());
    }
}

#[test]
fn output_is_independent_of_thread_count() {
    let (g, _) = planted_two_block(8, 60, 0.4, 0.05, 9);
    let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&validate_projection(&g, &m, 0.05, Correction::Fdr).unwrap()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn popular_node_is_not_validated_by_degree_alone() {
    // One hub attached to most bottoms, everyone attaching independently:
    // no pair carries real affinity, so the hub's pairs pass at rate <= alpha.
    let alpha = 0.05;
    let (mut tested, mut passed) = (0usize, 0usize);
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n_bottom = 80;
        let mut edges = Vec::new();
        for a in 0..n_bottom {
            if rng.gen::<f64>() < 0.8 {
                edges.push((0u32, a as u32));
            }
        }
        for i in 1..20u32 {
            let p = rng.gen_range(0.05..0.3);
            for a in 0..n_bottom {
                if rng.gen::<f64>() < p {
                    edges.push((i, a as u32));
                }
            }
        }
        let g = disco::graph::BipartiteGraph::from_index_edges(ids("t", 20), ids("b", n_bottom), edges).unwrap();
        let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
        let vp = validate_projection(&g, &m, alpha, Correction::None).unwrap();
        tested += co_occurrences(&g).entries().iter().filter(|e| e.0 == 0).count();
        passed += vp.edges.iter().filter(|e| e.source == 0).count();
    }
    let rate = passed as f64 / tested as f64;
    assert!(tested > 500);
    assert!(rate <= alpha, "hub validation rate {rate} ({passed}/{tested})");
}

#[test]
fn json_and_csv_exports() {
    let (g, _) = planted_two_block(5, 40, 0.6, 0.02, 2);
    let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
    let vp = validate_projection(&g, &m, 0.01, Correction::Bonferroni).unwrap();
    let json = serde_json::to_string(&vp).unwrap();
    let back: ValidatedProjection = serde_json::from_str(&json).unwrap();
    assert_eq!(back, vp);
    let mut buf = Vec::new();
    vp.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("source,target,pvalue"));
    assert_eq!(lines.count(), vp.edges.len());
}

proptest! {
    #[test]
    fn tail_is_nonincreasing(probs in prop::collection::vec(0.0f64..=1.0, 0..40)) {
        let mut prev = 1.0;
        for v in 0..=probs.len() {
            let p = poisson_binomial_upper_tail(&probs, v).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            // exact in real arithmetic; tails for different v are separate
            // floating sums, so allow rounding at the last few ulps
            prop_assert!(p <= prev + 4.0 * f64::EPSILON, "v={v}: {p} > {prev}");
            prev = p;
        }
    }

    #[test]
    fn tail_matches_pmf_convolution(probs in prop::collection::vec(0.0f64..=1.0, 1..60), frac in 0.0f64..1.0) {
        let v = (frac * probs.len() as f64) as usize;
        let want: f64 = poisson_binomial_pmf(&probs)[v..].iter().sum();
        let got = poisson_binomial_upper_tail(&probs, v).unwrap();
        prop_assert!((got - want.min(1.0)).abs() <= 1e-12);
    }

    #[test]
    fn bh_matches_naive(pvalues in prop::collection::vec(0.0f64..=1.0, 1..80), alpha in 0.001f64..0.3) {
        let kept: Vec<usize> = match benjamini_hochberg_threshold(&pvalues, alpha) {
            None => vec![],
            Some(th) => (0..pvalues.len()).filter(|&k| pvalues[k] <= th).collect(),
        };
        prop_assert_eq!(kept, naive_bh(&pvalues, alpha));
    }

    #[test]
    fn pvalue_monotone_on_fitted_models(seed in 0u64..500) {
        let g = random_bipartite(6, 15, 0.4, seed);
        let m = fit_bicm(&g.degree_sequence(), FitOptions::default()).unwrap();
        let mut prev = 1.0;
        for v in 0..=15 {
            let p = pair_pvalue(&m, 0, 1, v).unwrap();
            prop_assert!(p <= prev + 4.0 * f64::EPSILON);
            prev = p;
        }
        prop_assert!(pair_pvalue(&m, 0, 1, 16).is_err());
    }
}
