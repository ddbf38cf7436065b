//! Finite-difference gradient checks for every differentiable stage of the
//! model, each evaluated at freshly drawn random points.

use std::sync::Arc;

use rand::Rng;

use crate::encoder::{encode, EncoderParams};
use crate::error::Result;
use crate::graph::{normalized_adjacency, RelationType};
use crate::losses::{info_bn, info_nce, overall_loss};
use crate::numcore::gradcheck::max_relative_error;
use crate::numcore::{Bound, CsrMatrix, ParamStore, Tape, Tensor, Var};
use crate::poi::{AttentionParams, PoiEncoder};
use crate::rng::{self, Stream};
use crate::views::{reconstruction_loss, score_edges, vgae_encode, VgaeParams};

/// Entries probed per input tensor at each point.
const ENTRIES_PER_INPUT: usize = 24;
const NODES: usize = 5;
const DIM: usize = 4;
const TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub module: &'static str,
    pub points: usize,
    pub max_rel_error: f64,
}

/// Names of the checked stages, in report order.
pub const MODULES: [&str; 8] = [
    "poi_projection",
    "attention",
    "encoder",
    "vgae_encode",
    "reconstruction",
    "info_nce",
    "info_bn",
    "overall_loss",
];

/// Worst relative error per stage over `points` random draws.
pub fn gradient_suite(points: usize, seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = rng::stream(seed, Stream::Init);
    let mut worst = [0.0f64; MODULES.len()];
    for _ in 0..points {
        let errs = [
            check_poi_projection(&mut rng)?,
            check_attention(&mut rng)?,
            check_encoder(&mut rng)?,
            check_vgae(&mut rng)?,
            check_reconstruction(&mut rng)?,
            check_nce(&mut rng)?,
            check_bn(&mut rng)?,
            check_overall(&mut rng)?,
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    Ok(MODULES
        .iter()
        .zip(worst)
        .map(|(&module, max_rel_error)| GradReport {
            module,
            points,
            max_rel_error,
        })
        .collect())
}

/// Reduces a matrix output to a scalar through a fixed random weighting.
fn project<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    Ok(out.mul(out.tape().constant(weights.clone()))?.sum())
}

/// Checks `f(params, extra inputs)` where the store's tensors come first.
fn check_with_store<F>(store: &ParamStore, extra: Vec<Tensor>, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &Bound<'t>, &[Var<'t>]) -> Result<Var<'t>>,
{
    let n = store.len();
    let mut inputs = store.values().to_vec();
    inputs.extend(extra);
    max_relative_error(
        &inputs,
        |tape, vars| {
            let bound = Bound::from_vars(vars[..n].to_vec());
            f(tape, &bound, &vars[n..])
        },
        ENTRIES_PER_INPUT,
    )
}

fn randomize_biases<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).ends_with(".b1") || store.name(id).ends_with(".b2") {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::randn(&shape, 0.0, 0.3, rng);
        }
    }
}

fn check_poi_projection<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let mut store = ParamStore::new();
    let enc = PoiEncoder::init(&mut store, 3, DIM, 2, rng)?;
    randomize_biases(&mut store, rng);
    let pooled = Tensor::randn(&[NODES, 3], 0.0, 1.0, rng);
    let w = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    check_with_store(&store, vec![pooled], |_, p, x| project(enc.forward(x[0], p)?, &w))
}

fn check_attention<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let mut store = ParamStore::new();
    let params = AttentionParams::init(&mut store, DIM, 2, rng)?;
    let e = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let w = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    check_with_store(&store, vec![e], |_, p, x| {
        project(crate::poi::self_attention(x[0], &params, p)?, &w)
    })
}

fn random_adjacency<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Arc<CsrMatrix> {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|_| rng.random::<f64>() < 0.5)
        .collect();
    Arc::new(normalized_adjacency(n, &edges))
}

fn check_encoder<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let mut store = ParamStore::new();
    let params = EncoderParams::init(&mut store, DIM, 2, rng);
    let relations = vec![
        (RelationType::Poi, random_adjacency(NODES, rng)),
        (RelationType::Distance, random_adjacency(NODES, rng)),
    ];
    let h0 = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let w = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    check_with_store(&store, vec![h0], |_, p, x| project(encode(&relations, x[0], &params, p)?, &w))
}

fn check_vgae<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let mut store = ParamStore::new();
    let params = VgaeParams::init(&mut store, DIM, rng);
    randomize_biases(&mut store, rng);
    let h = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let noise = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let w = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    check_with_store(&store, vec![h], |_, p, x| project(vgae_encode(x[0], &params, &noise, p)?, &w))
}

fn check_reconstruction<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let mut store = ParamStore::new();
    let params = VgaeParams::init(&mut store, DIM, rng);
    randomize_biases(&mut store, rng);
    let h = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let noise = Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng);
    let pairs: Vec<(usize, usize)> = (0..NODES).flat_map(|u| (u + 1..NODES).map(move |v| (u, v))).collect();
    let labels: Vec<bool> = pairs.iter().map(|_| rng.random::<bool>()).collect();
    check_with_store(&store, vec![h], |_, p, x| {
        let ht = vgae_encode(x[0], &params, &noise, p)?;
        reconstruction_loss(score_edges(ht, &params, &pairs, p)?, &labels)
    })
}

fn check_nce<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let inputs = [0, 1].map(|_| Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng));
    max_relative_error(&inputs, |_, x| info_nce(x[0], x[1], TAU), ENTRIES_PER_INPUT)
}

fn check_bn<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let inputs = [0, 1, 2, 3].map(|_| Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng));
    max_relative_error(&inputs, |_, x| info_bn(x[0], x[1], x[2], x[3], TAU), ENTRIES_PER_INPUT)
}

fn check_overall<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let beta = rng.random::<f64>();
    let inputs = [0, 1, 2, 3].map(|_| Tensor::randn(&[NODES, DIM], 0.0, 1.0, rng));
    max_relative_error(
        &inputs,
        |_, x| {
            let nce = info_nce(x[0], x[2], TAU)?;
            let bn = info_bn(x[0], x[1], x[2], x[3], TAU)?;
            overall_loss(nce, bn, beta)
        },
        ENTRIES_PER_INPUT,
    )
}
