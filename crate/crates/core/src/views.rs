//! Learned contrastive views: twin variational samplers score candidate node
//! pairs, the scores are thresholded into a decoded graph, and random walks
//! from a shared seed set cut a subgraph view out of each decoded graph.

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::normalized_adjacency;
use crate::nn::Mlp;
use crate::numcore::{Bound, CsrMatrix, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    /// Probability threshold for keeping a scored pair.
    pub eps: f64,
    pub walk_len: usize,
    pub walks_per_seed: usize,
    pub seed_frac: f64,
    pub neg_per_node: usize,
    pub noise: NoiseConfig,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            eps: 0.5,
            walk_len: 8,
            walks_per_seed: 4,
            seed_frac: 0.25,
            neg_per_node: 5,
            noise: NoiseConfig { mu: 0.0, sigma: 1.0 },
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!("view.eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.seed_frac > 0.0 && self.seed_frac <= 1.0) {
            return Err(Error::Config(format!("view.seed_frac must lie in (0, 1], got {}", self.seed_frac)));
        }
        if !(self.noise.sigma >= 0.0) || !self.noise.mu.is_finite() {
            return Err(Error::Config(format!(
                "view noise needs finite mu and sigma >= 0, got ({}, {})",
                self.noise.mu, self.noise.sigma
            )));
        }
        Ok(())
    }
}

/// One variational sampler. Each sampler owns its own [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VgaeParams {
    pub mean: Mlp,
    pub std: Mlp,
    pub score: Mlp,
}

impl VgaeParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, rng: &mut R) -> Self {
        VgaeParams {
            mean: Mlp::init(store, "vgae.mean", (dim, dim, dim), rng),
            std: Mlp::init(store, "vgae.std", (dim, dim, dim), rng),
            score: Mlp::init(store, "vgae.score", (dim, dim, 1), rng),
        }
    }
}

/// I.i.d. Gaussian noise matrix.
pub fn draw_noise<R: Rng + ?Sized>(shape: &[usize], cfg: NoiseConfig, rng: &mut R) -> Tensor {
    if cfg.sigma == 0.0 {
        return Tensor::full(shape, cfg.mu);
    }
    let normal = Normal::new(cfg.mu, cfg.sigma).expect("validated noise");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect()).expect("shape matches")
}

/// `noise ⊙ std(H) + mean(H)`.
pub fn vgae_encode<'t>(h: Var<'t>, params: &VgaeParams, noise: &Tensor, p: &Bound<'t>) -> Result<Var<'t>> {
    let mean = params.mean.forward(p, h)?;
    let std = params.std.forward(p, h)?;
    let noise = h.tape().constant(noise.clone());
    noise.mul(std)?.add(mean)
}

/// Raw score `score(h̃_u ⊙ h̃_v)` for each pair (`m x 1`).
pub fn score_edges<'t>(h_tilde: Var<'t>, params: &VgaeParams, pairs: &[(usize, usize)], p: &Bound<'t>) -> Result<Var<'t>> {
    let n = h_tilde.shape()[0];
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::Contract(format!("candidate pair ({u}, {v}) outside {n} nodes")));
    }
    let us: Vec<usize> = pairs.iter().map(|e| e.0).collect();
    let vs: Vec<usize> = pairs.iter().map(|e| e.1).collect();
    let prod = h_tilde.gather_rows(&us)?.mul(h_tilde.gather_rows(&vs)?)?;
    params.score.forward(p, prod)
}

/// Scored pairs: every graph edge plus sampled non-edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidates {
    pub pairs: Vec<(usize, usize)>,
    pub is_edge: Vec<bool>,
}

/// All `edges` (as positives) plus up to `per_node` uniformly drawn
/// non-edges for each node. Pairs are unique and stored `u < v`.
pub fn candidate_pairs<R: Rng + ?Sized>(n: usize, edges: &[(usize, usize)], per_node: usize, rng: &mut R) -> Candidates {
    let edge_set: HashSet<(usize, usize)> = edges.iter().map(|&(u, v)| (u.min(v), u.max(v))).collect();
    let mut pairs: Vec<(usize, usize)> = edge_set.iter().copied().collect();
    pairs.sort_unstable();
    let mut is_edge = vec![true; pairs.len()];
    let mut negatives = BTreeSet::new();
    if n >= 2 {
        for u in 0..n {
            let mut got = 0;
            let mut tries = 0;
            while got < per_node && tries < 20 * per_node.max(1) {
                tries += 1;
                let v = rng.random_range(0..n);
                let key = (u.min(v), u.max(v));
                if v == u || edge_set.contains(&key) || !negatives.insert(key) {
                    continue;
                }
                got += 1;
            }
        }
    }
    pairs.extend(negatives.iter().copied());
    is_edge.resize(pairs.len(), false);
    Candidates { pairs, is_edge }
}

/// Keeps pair `k` iff `sigmoid(scores[k]) >= eps`.
pub fn sparsify(scores: &Tensor, pairs: &[(usize, usize)], eps: f64) -> Result<Vec<(usize, usize)>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!("sparsify threshold must lie in (0, 1), got {eps}")));
    }
    if scores.len() != pairs.len() {
        return Err(Error::Shape {
            op: "sparsify",
            left: scores.shape().to_vec(),
            right: vec![pairs.len()],
        });
    }
    Ok(pairs
        .iter()
        .zip(scores.data())
        .filter(|(_, &s)| sigmoid(s) >= eps)
        .map(|(&e, _)| e)
        .collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Subgraph on a subset of graph nodes. `nodes` is sorted ascending and
/// maps local to global indices; `edges` use local indices, `u < v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveView {
    pub nodes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub seeds: Vec<usize>,
}

impl ContrastiveView {
    /// View over `nodes` (global ids) keeping the `edges` (global ids) whose
    /// endpoints are both present.
    pub fn induced(nodes: BTreeSet<usize>, edges: &[(usize, usize)], seeds: Vec<usize>) -> Self {
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let local = |g: usize| nodes.binary_search(&g).ok();
        let mut out: Vec<(usize, usize)> = edges
            .iter()
            .filter_map(|&(u, v)| match (local(u), local(v)) {
                (Some(a), Some(b)) if a != b => Some((a.min(b), a.max(b))),
                _ => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        ContrastiveView { nodes, edges: out, seeds }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.nodes.binary_search(&global).ok()
    }

    pub fn adjacency(&self) -> Arc<CsrMatrix> {
        Arc::new(normalized_adjacency(self.nodes.len(), &self.edges))
    }

    /// Same nodes with `round(rate * |E|)` uniformly chosen edges removed.
    pub fn drop_edges<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Result<ContrastiveView> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("edge drop rate must lie in [0, 1), got {rate}")));
        }
        let n_drop = (rate * self.edges.len() as f64).round() as usize;
        if n_drop == 0 {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.edges.len()).collect();
        order.shuffle(rng);
        let mut keep: Vec<usize> = order[n_drop..].to_vec();
        keep.sort_unstable();
        Ok(ContrastiveView {
            nodes: self.nodes.clone(),
            edges: keep.into_iter().map(|k| self.edges[k]).collect(),
            seeds: self.seeds.clone(),
        })
    }
}

/// Uniformly samples `max(2, ceil(frac * n))` distinct seed nodes, sorted.
pub fn sample_seeds<R: Rng + ?Sized>(n: usize, frac: f64, rng: &mut R) -> Vec<usize> {
    let k = ((frac * n as f64).ceil() as usize).max(2).min(n);
    let mut s = index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

/// Union of nodes visited by `walks_per_seed` uniform walks of `walk_len`
/// steps from each seed, with the induced edges. A walk stops early at a
/// node without neighbours.
pub fn random_walk_sample<R: Rng + ?Sized>(
    n: usize,
    edges: &[(usize, usize)],
    seeds: &[usize],
    walk_len: usize,
    walks_per_seed: usize,
    rng: &mut R,
) -> Result<ContrastiveView> {
    if seeds.is_empty() {
        return Err(Error::Contract("random walk needs at least one seed".into()));
    }
    if let Some(&s) = seeds.iter().find(|&&s| s >= n) {
        return Err(Error::Contract(format!("seed {s} outside {n} nodes")));
    }
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u != v {
            nbrs[u].push(v);
            nbrs[v].push(u);
        }
    }
    for l in nbrs.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let mut visited: BTreeSet<usize> = seeds.iter().copied().collect();
    for &s in seeds {
        for _ in 0..walks_per_seed {
            let mut at = s;
            for _ in 0..walk_len {
                let opts = &nbrs[at];
                if opts.is_empty() {
                    break;
                }
                at = opts[rng.random_range(0..opts.len())];
                visited.insert(at);
            }
        }
    }
    Ok(ContrastiveView::induced(visited, edges, seeds.to_vec()))
}

/// Binary cross-entropy of raw scores against edge labels, summed:
/// `-Σ_edges log σ(p) - Σ_non-edges log(1 - σ(p))`.
pub fn reconstruction_loss<'t>(scores: Var<'t>, is_edge: &[bool]) -> Result<Var<'t>> {
    let m = scores.shape()[0];
    if m != is_edge.len() {
        return Err(Error::Shape {
            op: "reconstruction_loss",
            left: scores.shape(),
            right: vec![is_edge.len()],
        });
    }
    let signs = Tensor::matrix(m, 1, is_edge.iter().map(|&e| if e { 1.0 } else { -1.0 }).collect())?;
    let signed = scores.mul(scores.tape().constant(signs))?;
    Ok(signed.log_sigmoid().sum().scale(-1.0))
}

/// Everything the sampler step needs to replay one view's decode.
#[derive(Debug, Clone)]
pub struct DecodedGraph {
    pub noise: Tensor,
    pub scores: Tensor,
    pub edges: Vec<(usize, usize)>,
}

/// Noise, scores and thresholded edges for one sampler over `candidates`.
pub fn decode<R: Rng + ?Sized>(
    h: &Tensor,
    store: &ParamStore,
    params: &VgaeParams,
    candidates: &Candidates,
    cfg: &ViewConfig,
    rng: &mut R,
) -> Result<DecodedGraph> {
    let noise = draw_noise(h.shape(), cfg.noise, rng);
    let tape = Tape::new();
    let p = store.bind(&tape);
    let h_tilde = vgae_encode(tape.constant(h.clone()), params, &noise, &p)?;
    let scores = score_edges(h_tilde, params, &candidates.pairs, &p)?.value();
    let edges = sparsify(&scores, &candidates.pairs, cfg.eps)?;
    Ok(DecodedGraph {
        noise,
        scores: (*scores).clone(),
        edges,
    })
}

/// Two views from two samplers sharing one seed set.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub views: [ContrastiveView; 2],
    pub decoded: [DecodedGraph; 2],
    pub seeds: Vec<usize>,
}

/// Decodes a graph per sampler, then walks both from the same seeds.
#[allow(clippy::too_many_arguments)]
pub fn generate_views<R: Rng + ?Sized>(
    h: &Tensor,
    samplers: [(&ParamStore, &VgaeParams); 2],
    candidates: &Candidates,
    cfg: &ViewConfig,
    noise_rngs: [&mut R; 2],
    seed_rng: &mut R,
    walk_rngs: [&mut R; 2],
) -> Result<ViewPair> {
    cfg.validate()?;
    let n = h.rows();
    let [nr0, nr1] = noise_rngs;
    let d0 = decode(h, samplers[0].0, samplers[0].1, candidates, cfg, nr0)?;
    let d1 = decode(h, samplers[1].0, samplers[1].1, candidates, cfg, nr1)?;
    let seeds = sample_seeds(n, cfg.seed_frac, seed_rng);
    let [wr0, wr1] = walk_rngs;
    let v0 = random_walk_sample(n, &d0.edges, &seeds, cfg.walk_len, cfg.walks_per_seed, wr0)?;
    let v1 = random_walk_sample(n, &d1.edges, &seeds, cfg.walk_len, cfg.walks_per_seed, wr1)?;
    Ok(ViewPair {
        views: [v0, v1],
        decoded: [d0, d1],
        seeds,
    })
}

/// View over every node with a `rate` share of `edges` dropped uniformly.
pub fn edge_drop_view<R: Rng + ?Sized>(n: usize, edges: &[(usize, usize)], rate: f64, rng: &mut R) -> Result<ContrastiveView> {
    let full = ContrastiveView::induced((0..n).collect(), edges, (0..n).collect());
    full.drop_edges(rate, rng)
}
