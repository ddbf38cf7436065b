//! Property checks shared by the invariant suite and the acceptance run.
//! Each returns `Err` with the shrunk counterexample on failure.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stgcl::eval::metrics;
use stgcl::graph::normalized_adjacency;
use stgcl::losses::{info_bn, info_nce, reward_r2};
use stgcl::numcore::ParamStore;
use stgcl::poi::{attention_weights, self_attention, AttentionParams};
use stgcl::views::{candidate_pairs, generate_views, sparsify, NoiseConfig, VgaeParams, ViewConfig};
use stgcl::{Tape, Tensor};

pub fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn edge_list(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2..=max_nodes).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = pairs.len();
        prop::collection::vec(any::<bool>(), m)
            .prop_map(move |keep| (n, pairs.iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).collect()))
    })
}

/// Softmax and every attention head are row-stochastic.
pub fn attention_rows_sum_to_one(cases: u32) -> Result<(), String> {
    run(cases, (1usize..6, any::<u64>()), |(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, 4, 2, &mut rng).unwrap();
        let e = Tensor::randn(&[n, 4], 0.0, 2.0, &mut rng);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = tape.constant(e.clone());
        let mut mats = attention_weights(x, &params, &p).unwrap();
        mats.push(x.softmax_rows().unwrap());
        for a in mats {
            let a = a.value();
            for r in 0..a.rows() {
                let s: f64 = a.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
                prop_assert!(a.row(r).iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
        Ok(())
    })
}

/// Permuting the regions permutes the attention output the same way.
pub fn attention_is_permutation_equivariant(cases: u32) -> Result<(), String> {
    run(cases, (2usize..6, any::<u64>()).prop_flat_map(|(n, s)| (Just(s), Just(Vec::from_iter(0..n)).prop_shuffle())), |(seed, perm)| {
        let n = perm.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, 4, 2, &mut rng).unwrap();
        let e = Tensor::randn(&[n, 4], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = self_attention(tape.constant(e.clone()), &params, &p).unwrap().value();
        let permuted = tape.constant(e).gather_rows(&perm).unwrap();
        let out_p = self_attention(permuted, &params, &p).unwrap().value();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in out_p.row(i).iter().zip(out.row(src)) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
        Ok(())
    })
}

/// The normalised adjacency is symmetric, has entries in [0, 1] and never
/// increases a vector's norm.
pub fn adjacency_symmetric_and_bounded(cases: u32) -> Result<(), String> {
    run(cases, (edge_list(9), any::<u64>()), |((n, edges), seed)| {
        let a = normalized_adjacency(n, &edges);
        prop_assert!(a.is_symmetric());
        let d = a.to_dense();
        prop_assert!(d.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn(&[n, 1], 0.0, 1.0, &mut rng);
        let y = a.matmul(&x).unwrap();
        let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm(&y) <= norm(&x) * (1.0 + 1e-12));
        Ok(())
    })
}

/// Sparsification yields a 0/1 symmetric adjacency equal to the threshold rule.
pub fn sparsification_is_binary(cases: u32) -> Result<(), String> {
    let strategy = (edge_list(8), 0.05f64..0.95)
        .prop_flat_map(|((n, e), eps)| (Just(n), Just(e.clone()), Just(eps), prop::collection::vec(-4.0f64..4.0, e.len())));
    run(cases, strategy, |(n, pairs, eps, scores)| {
        let t = Tensor::matrix(pairs.len(), 1, scores.clone()).unwrap();
        let kept = sparsify(&t, &pairs, eps).unwrap();
        let mut dense = vec![vec![0u8; n]; n];
        for &(u, v) in &kept {
            dense[u][v] += 1;
            dense[v][u] += 1;
        }
        for (k, &(u, v)) in pairs.iter().enumerate() {
            let want = 1.0 / (1.0 + (-scores[k]).exp()) >= eps;
            prop_assert_eq!(dense[u][v] == 1, want);
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert!(dense[i][j] <= 1 && dense[i][j] == dense[j][i]);
            }
        }
        Ok(())
    })
}

/// Both views contain every seed, and view edges stay inside the node set.
pub fn seeds_in_both_views(cases: u32) -> Result<(), String> {
    run(cases, (edge_list(12), any::<u64>()), |((n, edges), seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samplers: Vec<(ParamStore, VgaeParams)> = (0..2)
            .map(|_| {
                let mut s = ParamStore::new();
                let p = VgaeParams::init(&mut s, 4, &mut rng);
                (s, p)
            })
            .collect();
        let h = Tensor::randn(&[n, 4], 0.0, 1.0, &mut rng);
        let cand = candidate_pairs(n, &edges, 2, &mut rng);
        let cfg = ViewConfig {
            walk_len: 3,
            walks_per_seed: 2,
            noise: NoiseConfig { mu: 0.0, sigma: 1.0 },
            ..ViewConfig::default()
        };
        let mut r = [1u64, 2, 3, 4, 5].map(|k| ChaCha8Rng::seed_from_u64(seed ^ k));
        let [a, b, c, d, e] = &mut r;
        let pair = generate_views(
            &h,
            [(&samplers[0].0, &samplers[0].1), (&samplers[1].0, &samplers[1].1)],
            &cand,
            &cfg,
            [a, b],
            c,
            [d, e],
        )
        .unwrap();
        prop_assert!(!pair.seeds.is_empty());
        for v in &pair.views {
            for s in &pair.seeds {
                prop_assert!(v.nodes.binary_search(s).is_ok());
            }
            prop_assert!(v.edges.iter().all(|&(u, w)| u < w && w < v.nodes.len()));
        }
        Ok(())
    })
}

/// RMSE dominates MAE and all metrics are non-negative.
pub fn rmse_at_least_mae(cases: u32) -> Result<(), String> {
    let strategy = (1usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-50.0f64..50.0, n), prop::collection::vec(-50.0f64..50.0, n))
    });
    run(cases, strategy, |(p, t)| {
        let m = metrics(&p, &t).unwrap();
        prop_assert!(m.mae >= 0.0 && m.mape >= 0.0);
        prop_assert!(m.rmse >= m.mae - 1e-12 * m.mae.max(1.0), "{m:?}");
        Ok(())
    })
}

/// Cosine-based losses and the alignment reward ignore positive rescaling
/// of the embeddings.
pub fn cosine_losses_scale_invariant(cases: u32) -> Result<(), String> {
    let strategy = (2usize..6).prop_flat_map(|n| (matrix(n, 3), matrix(n, 3), matrix(n, 3), matrix(n, 3), 0.05f64..20.0, 0.05f64..20.0));
    run(cases, strategy, |(a, b, c, d, s1, s2)| {
        let tape = Tape::new();
        let k = |t: &Tensor| tape.constant(t.clone());
        let ks = |t: &Tensor, s: f64| tape.constant(t.clone()).scale(s);
        let nce = info_nce(k(&a), k(&b), 0.5).unwrap().value().item();
        let nce_s = info_nce(ks(&a, s1), ks(&b, s2), 0.5).unwrap().value().item();
        prop_assert!((nce - nce_s).abs() <= 1e-9 * nce.abs().max(1.0));
        let bn = info_bn(k(&a), k(&b), k(&c), k(&d), 0.5).unwrap().value().item();
        let bn_s = info_bn(ks(&a, s1), ks(&b, s2), ks(&c, s2), ks(&d, s1), 0.5).unwrap().value().item();
        prop_assert!((bn - bn_s).abs() <= 1e-9 * bn.abs().max(1.0));
        let r = reward_r2(&a, &b).unwrap();
        let r_s = reward_r2(&a.scale(s1), &b.scale(s2)).unwrap();
        prop_assert!((r - r_s).abs() < 1e-12);
        Ok(())
    })
}

/// Every invariant, by name.
pub fn all_invariants(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("attention row sums", attention_rows_sum_to_one(cases)),
        ("attention equivariance", attention_is_permutation_equivariant(cases)),
        ("adjacency symmetry and range", adjacency_symmetric_and_bounded(cases)),
        ("binary sparsification", sparsification_is_binary(cases)),
        ("seed inclusion", seeds_in_both_views(cases)),
        ("rmse >= mae", rmse_at_least_mae(cases)),
        ("cosine scale invariance", cosine_losses_scale_invariant(cases)),
    ]
}

/// Every connected labelled simple graph on `n` nodes, as edge lists.
pub fn connected_graphs(n: usize) -> Vec<Vec<(usize, usize)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    (0u32..1 << pairs.len())
        .map(|mask| {
            pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &p)| p)
                .collect::<Vec<_>>()
        })
        .filter(|edges| is_connected(n, edges))
        .collect()
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &(a, b) in edges {
            let next = if a == u { b } else if b == u { a } else { continue };
            if !seen[next] {
                seen[next] = true;
                stack.push(next);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Per-node message passing written without matrices: for each relation,
/// node `i` receives `W h_j / sqrt(deg_i deg_j)` from itself and each
/// neighbour, with degrees counting the self-loop.
pub fn encode_oracle(n: usize, relations: &[Vec<(usize, usize)>], h0: &[Vec<f64>], weights: &[Vec<Tensor>]) -> Vec<Vec<f64>> {
    let d = h0[0].len();
    let mut total: Vec<Vec<f64>> = h0.to_vec();
    let mut h: Vec<Vec<f64>> = h0.to_vec();
    for layer in weights {
        let mut next = vec![vec![0.0; d]; n];
        for (rel, edges) in relations.iter().enumerate() {
            let w = &layer[rel];
            let mut nbrs: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
            for &(u, v) in edges {
                nbrs[u].push(v);
                nbrs[v].push(u);
            }
            for i in 0..n {
                for &j in &nbrs[i] {
                    let c = 1.0 / ((nbrs[i].len() * nbrs[j].len()) as f64).sqrt();
                    for a in 0..d {
                        let wh: f64 = (0..d).map(|b| w.row(a)[b] * h[j][b]).sum();
                        next[i][a] += c * wh;
                    }
                }
            }
        }
        for row in next.iter_mut() {
            row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        for i in 0..n {
            for a in 0..d {
                total[i][a] += next[i][a];
            }
        }
        h = next;
    }
    total
}

/// Largest gap between `encode` and the per-node oracle over every
/// connected graph with up to `max_nodes` nodes, with one relation and with
/// the edges split over two relations in several ways.
pub fn encoder_oracle_gap(max_nodes: usize) -> (usize, f64) {
    use std::sync::Arc;
    use stgcl::encoder::{encode, EncoderParams};
    use stgcl::graph::RelationType;

    let dim = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let params = EncoderParams::init(&mut store, dim, 2, &mut rng);
    let rels = [RelationType::Poi, RelationType::Distance];
    let weights: Vec<Vec<Tensor>> = params
        .weights
        .iter()
        .map(|l| rels.iter().map(|r| store.get(l[r.index()]).clone()).collect())
        .collect();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in 1..=max_nodes {
        let h0 = Tensor::randn(&[n, dim], 0.0, 1.0, &mut rng);
        let h0_rows: Vec<Vec<f64>> = (0..n).map(|i| h0.row(i).to_vec()).collect();
        for edges in connected_graphs(n) {
            // One relation, then three two-relation splits: alternating,
            // duplicated into both, and a seeded random assignment.
            let mut splits: Vec<Vec<Vec<(usize, usize)>>> = vec![vec![edges.clone()]];
            let alt: [Vec<(usize, usize)>; 2] = [0, 1].map(|k| edges.iter().copied().skip(k).step_by(2).collect());
            splits.push(alt.to_vec());
            splits.push(vec![edges.clone(), edges.clone()]);
            let coin: Vec<bool> = edges.iter().map(|_| rand::Rng::random(&mut rng)).collect();
            splits.push(
                [true, false]
                    .iter()
                    .map(|&side| edges.iter().zip(&coin).filter(|(_, &c)| c == side).map(|(&e, _)| e).collect())
                    .collect(),
            );
            for split in splits {
                let relations: Vec<(RelationType, Arc<stgcl::numcore::CsrMatrix>)> = split
                    .iter()
                    .enumerate()
                    .map(|(k, e)| (rels[k], Arc::new(normalized_adjacency(n, e))))
                    .collect();
                let tape = Tape::new();
                let p = store.bind(&tape);
                let got = encode(&relations, tape.constant(h0.clone()), &params, &p).unwrap().value();
                let layer_w: Vec<Vec<Tensor>> = weights.iter().map(|l| l[..split.len()].to_vec()).collect();
                let want = encode_oracle(n, &split, &h0_rows, &layer_w);
                for i in 0..n {
                    for a in 0..dim {
                        worst = worst.max((got.row(i)[a] - want[i][a]).abs());
                    }
                }
                checked += 1;
            }
        }
    }
    (checked, worst)
}

/// `-Σ_i log(exp(cos(a_i,b_i)/τ) / Σ_j exp(cos(a_i,b_j)/τ))` by explicit loops.
pub fn contrast_oracle(a: &Tensor, b: &Tensor, tau: f64) -> f64 {
    let cos = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (nx * ny)
    };
    let mut total = 0.0;
    for i in 0..a.rows() {
        let mut denom = 0.0;
        for j in 0..b.rows() {
            denom += (cos(a.row(i), b.row(j)) / tau).exp();
        }
        total -= ((cos(a.row(i), b.row(i)) / tau).exp() / denom).ln();
    }
    total
}

/// Largest gap of InfoNCE and InfoBN against the loop oracles over random
/// inputs.
pub fn contrastive_oracle_gap(trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for k in 0..trials {
        let n = 2 + k % 7;
        let m: Vec<Tensor> = (0..4).map(|_| Tensor::randn(&[n, 5], 0.0, 1.0, &mut rng)).collect();
        let tau = 0.2 + 0.1 * (k % 8) as f64;
        let tape = Tape::new();
        let v: Vec<_> = m.iter().map(|t| tape.constant(t.clone())).collect();
        let nce = info_nce(v[0], v[1], tau).unwrap().value().item();
        worst = worst.max((nce - contrast_oracle(&m[0], &m[1], tau)).abs());
        let bn = info_bn(v[0], v[1], v[2], v[3], tau).unwrap().value().item();
        let want = contrast_oracle(&m[0], &m[1], tau) + contrast_oracle(&m[2], &m[3], tau);
        worst = worst.max((bn - want).abs());
    }
    worst
}
