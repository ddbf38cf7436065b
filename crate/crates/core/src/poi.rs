//! POI context embeddings: skip-gram category table, pooled region features,
//! perceptron projection and region-wise multi-head self-attention.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoiMatrix;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numcore::{Bound, ParamId, ParamStore, Tensor, Var};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Per-region repetition cap for a category token.
    pub window_cap: u64,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 96,
            window_cap: 20,
            negatives: 5,
            epochs: 10,
            lr: 0.025,
            seed: 0,
        }
    }
}

/// `C x d_sg` category vectors; frozen after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEmbeddingTable {
    pub table: Tensor,
}

impl CategoryEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn n_categories(&self) -> usize {
        self.table.rows()
    }
}

/// One sentence per region: each category id repeated `min(count, cap)`
/// times, categories in index order. Regions without POIs emit nothing.
pub fn build_corpus(poi: &PoiMatrix, cap: u64) -> Vec<Vec<usize>> {
    (0..poi.n_regions())
        .map(|r| {
            poi.row(r)
                .iter()
                .enumerate()
                .flat_map(|(c, &n)| std::iter::repeat_n(c, n.min(cap) as usize))
                .collect::<Vec<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Negative-sampling skip-gram where every sentence is one context window.
///
/// Each epoch visits every token once in random order and pairs it with one
/// context position drawn uniformly from the rest of its sentence, which is
/// an unbiased sample of the whole-sentence window. Negatives follow the
/// unigram distribution raised to 0.75; the learning rate decays linearly.
///
/// With a small vocabulary where every category co-occurs with every other,
/// all vectors share one dominant direction, so the returned rows are
/// centered across categories (when there are at least two).
pub fn train_skipgram(poi: &PoiMatrix, cfg: &SkipGramConfig) -> Result<CategoryEmbeddingTable> {
    if cfg.dim == 0 {
        return Err(Error::Config("skip-gram dimension must be positive".into()));
    }
    let corpus = build_corpus(poi, cfg.window_cap);
    if corpus.is_empty() {
        return Err(Error::Validation("empty POI corpus".into()));
    }
    let c_n = poi.n_categories();
    let d = cfg.dim;
    let mut rng = rng::stream(cfg.seed, Stream::SkipGram);

    let mut freq = vec![0.0f64; c_n];
    for s in &corpus {
        for &c in s {
            freq[c] += 1.0;
        }
    }
    let noise = WeightedIndex::new(freq.iter().map(|f| f.powf(0.75))).expect("corpus has tokens");

    let mut center: Vec<f64> = (0..c_n * d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect();
    let mut context = vec![0.0f64; c_n * d];
    let mut grad = vec![0.0f64; d];

    let positions: Vec<(usize, usize)> = corpus
        .iter()
        .enumerate()
        .flat_map(|(s, sent)| (0..sent.len()).map(move |i| (s, i)))
        .collect();
    let total_steps = (cfg.epochs * positions.len()).max(1) as f64;
    let mut step = 0usize;
    let mut order = positions.clone();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &(s, i) in &order {
            let sent = &corpus[s];
            let lr = cfg.lr * (1.0 - step as f64 / total_steps).max(1e-4);
            step += 1;
            if sent.len() < 2 {
                continue;
            }
            let mut j = rng.random_range(0..sent.len() - 1);
            if j >= i {
                j += 1;
            }
            let w = sent[i];
            let pos = sent[j];
            grad.iter_mut().for_each(|g| *g = 0.0);
            for k in 0..=cfg.negatives {
                let (target, label) = if k == 0 {
                    (pos, 1.0)
                } else {
                    let t = noise.sample(&mut rng);
                    if t == pos {
                        continue;
                    }
                    (t, 0.0)
                };
                let vw = &center[w * d..(w + 1) * d];
                let uc = &mut context[target * d..(target + 1) * d];
                let dot: f64 = vw.iter().zip(uc.iter()).map(|(a, b)| a * b).sum();
                let g = lr * (label - sigmoid(dot));
                for q in 0..d {
                    grad[q] += g * uc[q];
                    uc[q] += g * vw[q];
                }
            }
            for (v, g) in center[w * d..(w + 1) * d].iter_mut().zip(&grad) {
                *v += g;
            }
        }
    }
    if c_n >= 2 {
        for q in 0..d {
            let mean = (0..c_n).map(|c| center[c * d + q]).sum::<f64>() / c_n as f64;
            (0..c_n).for_each(|c| center[c * d + q] -= mean);
        }
    }
    Ok(CategoryEmbeddingTable {
        table: Tensor::matrix(c_n, d, center)?,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Count-weighted mean of category rows per region (`I x d_sg`); regions
/// with no POIs get the zero vector.
pub fn pool_regions(table: &CategoryEmbeddingTable, poi: &PoiMatrix) -> Result<Tensor> {
    if table.n_categories() != poi.n_categories() {
        return Err(Error::Shape {
            op: "pool_regions",
            left: vec![table.n_categories(), table.dim()],
            right: vec![poi.n_regions(), poi.n_categories()],
        });
    }
    let d = table.dim();
    let mut out = Tensor::zeros(&[poi.n_regions(), d]);
    for r in 0..poi.n_regions() {
        let row = poi.row(r);
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        let dst = out.row_mut(r);
        for (c, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let w = n as f64 / total as f64;
            for (o, t) in dst.iter_mut().zip(table.table.row(c)) {
                *o += w * t;
            }
        }
    }
    Ok(out)
}

/// Pooled region features passed through the projection perceptron.
pub fn project_regions<'t>(pooled: Var<'t>, mlp: &Mlp, p: &Bound<'t>) -> Result<Var<'t>> {
    mlp.forward(p, pooled)
}

/// Per-head query, key and value maps, each `(d/H) x d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "embedding dimension {dim} is not divisible by {heads} attention heads"
            )));
        }
        let dh = dim / heads;
        let mut mk = |kind: &str, h: usize| store.add(format!("attn.{kind}{h}"), Tensor::glorot(dh, dim, rng));
        let mut query = Vec::with_capacity(heads);
        let mut key = Vec::with_capacity(heads);
        let mut value = Vec::with_capacity(heads);
        for h in 0..heads {
            query.push(mk("q", h));
            key.push(mk("k", h));
            value.push(mk("v", h));
        }
        Ok(AttentionParams { query, key, value, dim })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads()
    }
}

/// Row-stochastic attention matrix of every head (`I x I` each).
pub fn attention_weights<'t>(e: Var<'t>, params: &AttentionParams, p: &Bound<'t>) -> Result<Vec<Var<'t>>> {
    let scale = 1.0 / (params.head_dim() as f64).sqrt();
    (0..params.heads())
        .map(|h| {
            let q = e.matmul_nt(p[params.query[h]])?;
            let k = e.matmul_nt(p[params.key[h]])?;
            q.matmul_nt(k)?.scale(scale).softmax_rows()
        })
        .collect()
}

/// Multi-head self-attention across regions followed by a residual add.
pub fn self_attention<'t>(e: Var<'t>, params: &AttentionParams, p: &Bound<'t>) -> Result<Var<'t>> {
    let shape = e.shape();
    if shape.len() != 2 || shape[1] != params.dim {
        return Err(Error::Shape {
            op: "self_attention",
            left: shape,
            right: vec![params.dim],
        });
    }
    let alphas = attention_weights(e, params, p)?;
    let heads = alphas
        .into_iter()
        .enumerate()
        .map(|(h, a)| a.matmul(e.matmul_nt(p[params.value[h]])?))
        .collect::<Result<Vec<_>>>()?;
    Var::concat_cols(&heads)?.add(e)
}

/// Trainable part of the POI stage: projection perceptron plus attention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoiEncoder {
    pub mlp: Mlp,
    pub attention: AttentionParams,
}

impl PoiEncoder {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_sg: usize,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let attention_ok = heads > 0 && dim % heads == 0;
        if !attention_ok {
            return Err(Error::Config(format!(
                "embedding dimension {dim} is not divisible by {heads} attention heads"
            )));
        }
        let mlp = Mlp::init(store, "poi_mlp", (d_sg, dim, dim), rng);
        let attention = AttentionParams::init(store, dim, heads, rng)?;
        Ok(PoiEncoder { mlp, attention })
    }

    /// Region embeddings `E` (`I x d`) from pooled skip-gram features.
    pub fn forward<'t>(&self, pooled: Var<'t>, p: &Bound<'t>) -> Result<Var<'t>> {
        let projected = project_regions(pooled, &self.mlp, p)?;
        self_attention(projected, &self.attention, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{cosine, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poi(rows: Vec<Vec<u64>>) -> PoiMatrix {
        let c = rows[0].len();
        PoiMatrix::new(rows, (0..c).map(|k| format!("cat_{k}")).collect()).unwrap()
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let p = poi(vec![vec![0, 0], vec![0, 0]]);
        let err = train_skipgram(&p, &SkipGramConfig::default()).unwrap_err();
        assert!(err.to_string().contains("empty POI corpus"));
    }

    #[test]
    fn single_category_table_is_finite_and_deterministic() {
        let p = poi(vec![vec![7]]);
        let cfg = SkipGramConfig { dim: 8, ..Default::default() };
        let a = train_skipgram(&p, &cfg).unwrap();
        assert!(a.table.is_finite());
        assert_eq!(a, train_skipgram(&p, &cfg).unwrap());
    }

    #[test]
    fn corpus_caps_repeats() {
        let p = poi(vec![vec![2, 0, 30]]);
        let c = build_corpus(&p, 20);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].len(), 22);
        assert_eq!(&c[0][..3], &[0, 0, 2]);
    }

    #[test]
    fn pooling_single_category_equals_table_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = CategoryEmbeddingTable {
            table: Tensor::randn(&[3, 4], 0.0, 1.0, &mut rng),
        };
        let p = poi(vec![vec![0, 5, 0], vec![0, 0, 0], vec![0, 1, 0]]);
        let pooled = pool_regions(&table, &p).unwrap();
        assert_eq!(pooled.row(0), table.table.row(1));
        assert_eq!(pooled.row(2), table.table.row(1));
        assert!(pooled.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_mlp_passes_nonnegative_pooled_through() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::init(&mut store, "m", (4, 4, 4), &mut rng);
        *store.get_mut(mlp.w1) = Tensor::eye(4);
        *store.get_mut(mlp.w2) = Tensor::eye(4);
        let x = Tensor::randn(&[3, 4], 0.0, 1.0, &mut rng).map(f64::abs);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let out = project_regions(tape.constant(x.clone()), &mlp, &b).unwrap().value();
        assert_eq!(*out, x);
    }

    #[test]
    fn projection_matches_explicit_arithmetic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::init(&mut store, "m", (2, 3, 2), &mut rng);
        *store.get_mut(mlp.b1) = Tensor::randn(&[1, 3], 0.0, 0.5, &mut rng);
        *store.get_mut(mlp.b2) = Tensor::randn(&[1, 2], 0.0, 0.5, &mut rng);
        let table = CategoryEmbeddingTable {
            table: Tensor::randn(&[3, 2], 0.0, 1.0, &mut rng),
        };
        let p = poi(vec![vec![1, 2, 0], vec![0, 0, 4], vec![3, 1, 1]]);

        let tape = Tape::new();
        let b = store.bind(&tape);
        let pooled = tape.constant(pool_regions(&table, &p).unwrap());
        let got = project_regions(pooled, &mlp, &b).unwrap().value();

        let (w1, b1, w2, b2) = (store.get(mlp.w1), store.get(mlp.b1), store.get(mlp.w2), store.get(mlp.b2));
        for r in 0..3 {
            let row = p.row(r);
            let total: f64 = row.iter().map(|&v| v as f64).sum();
            let mut x = [0.0; 2];
            for c in 0..3 {
                for q in 0..2 {
                    x[q] += row[c] as f64 / total * table.table.get(c, q);
                }
            }
            let mut h = [0.0; 3];
            for j in 0..3 {
                h[j] = (b1.get(0, j) + x[0] * w1.get(0, j) + x[1] * w1.get(1, j)).max(0.0);
            }
            for o in 0..2 {
                let y = b2.get(0, o) + (0..3).map(|j| h[j] * w2.get(j, o)).sum::<f64>();
                assert!((got.get(r, o) - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn heads_must_divide_dimension() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            AttentionParams::init(&mut store, 10, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_region_attention_is_value_plus_residual() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let attn = AttentionParams::init(&mut store, 4, 2, &mut rng).unwrap();
        let e = Tensor::randn(&[1, 4], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let out = self_attention(tape.constant(e.clone()), &attn, &b).unwrap().value();
        let mut want = Vec::new();
        for h in 0..2 {
            want.extend(e.matmul_nt(store.get(attn.value[h])).unwrap().into_data());
        }
        for q in 0..4 {
            assert!((out.data()[q] - want[q] - e.data()[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_attend_uniformly() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let attn = AttentionParams::init(&mut store, 4, 2, &mut rng).unwrap();
        let row = Tensor::randn(&[1, 4], 0.0, 1.0, &mut rng);
        let e = Tensor::from_rows(&vec![row.data().to_vec(); 5]).unwrap();
        let tape = Tape::new();
        let b = store.bind(&tape);
        for a in attention_weights(tape.constant(e), &attn, &b).unwrap() {
            assert!(a.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn two_region_single_head_matches_closed_form() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let attn = AttentionParams::init(&mut store, 3, 1, &mut rng).unwrap();
        let e = Tensor::randn(&[2, 3], 0.0, 1.0, &mut rng);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let out = self_attention(tape.constant(e.clone()), &attn, &b).unwrap().value();

        let (q, k, v) = (
            store.get(attn.query[0]),
            store.get(attn.key[0]),
            store.get(attn.value[0]),
        );
        let apply = |m: &Tensor, x: &[f64]| -> Vec<f64> {
            (0..3).map(|r| (0..3).map(|c| m.get(r, c) * x[c]).sum()).collect()
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..2 {
            let qi = apply(q, e.row(i));
            let s0 = dot(&qi, &apply(k, e.row(0))) / 3f64.sqrt();
            let s1 = dot(&qi, &apply(k, e.row(1))) / 3f64.sqrt();
            // Two-term softmax: a0 = 1 / (1 + exp(s1 - s0)).
            let a0 = 1.0 / (1.0 + (s1 - s0).exp());
            let (v0, v1) = (apply(v, e.row(0)), apply(v, e.row(1)));
            for c in 0..3 {
                let want = a0 * v0[c] + (1.0 - a0) * v1[c] + e.get(i, c);
                assert!((out.get(i, c) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn two_cliques_separate() {
        // Categories 0..3 co-occur only with each other, as do 3..6.
        let mut rows = Vec::new();
        for r in 0..20u64 {
            let mut row = vec![0u64; 6];
            let base = if r % 2 == 0 { 0 } else { 3 };
            for c in 0..3 {
                row[base + c] = 1 + (r + c as u64) % 4;
            }
            rows.push(row);
        }
        let p = poi(rows);
        let cfg = SkipGramConfig { dim: 16, epochs: 30, ..Default::default() };
        let t = train_skipgram(&p, &cfg).unwrap().table;
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for a in 0..6 {
            for b in a + 1..6 {
                let c = cosine(t.row(a), t.row(b));
                if (a < 3) == (b < 3) {
                    intra.push(c);
                } else {
                    inter.push(c);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&intra) > mean(&inter), "intra {} inter {}", mean(&intra), mean(&inter));
    }
}
