//! Relation-aware message passing with multi-order aggregation.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, RelationType};
use crate::numcore::{add_all, Bound, CsrMatrix, ParamId, ParamStore, Tensor, Var};

/// `weights[l][γ]` is the `d x d` map of relation `γ` at layer `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub weights: Vec<[ParamId; 4]>,
    pub dim: usize,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, layers: usize, rng: &mut R) -> Self {
        let weights = (0..layers)
            .map(|l| {
                RelationType::ALL.map(|rel| store.add(format!("encoder.l{l}.{}", rel.name()), Tensor::glorot(dim, dim, rng)))
            })
            .collect();
        EncoderParams { weights, dim }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

/// Row map from region embeddings to graph nodes: slot copies of region `i`
/// read row `i`.
pub fn feature_rows(graph: &HeteroGraph) -> Vec<usize> {
    (0..graph.n_nodes())
        .map(|v| if v < graph.n_regions() { v } else { (v - graph.n_regions()) / graph.n_slots() })
        .collect()
}

/// Initial node features `H^(0)`: every node starts from its region's row.
pub fn init_features<'t>(e: Var<'t>, graph: &HeteroGraph) -> Result<Var<'t>> {
    let rows = e.shape()[0];
    if rows != graph.n_regions() {
        return Err(Error::Shape {
            op: "init_features",
            left: e.shape(),
            right: vec![graph.n_regions()],
        });
    }
    e.gather_rows(&feature_rows(graph))
}

/// `H = Σ_{l=0..L} H^(l)` with `H^(l) = ReLU(Σ_γ Â_γ H^(l-1) W_γᵀ)`.
pub fn encode<'t>(
    relations: &[(RelationType, Arc<CsrMatrix>)],
    h0: Var<'t>,
    params: &EncoderParams,
    p: &Bound<'t>,
) -> Result<Var<'t>> {
    if relations.is_empty() {
        return Err(Error::Contract("encode needs at least one relation".into()));
    }
    let mut h = h0;
    let mut orders = vec![h0];
    for layer in &params.weights {
        let msgs = relations
            .iter()
            .map(|(rel, adj)| h.spmm(adj)?.matmul_nt(p[layer[rel.index()]]))
            .collect::<Result<Vec<_>>>()?;
        h = add_all(&msgs)?.relu();
        orders.push(h);
    }
    add_all(&orders)
}

/// Encodes the fused graph with all four relation banks.
pub fn encode_graph<'t>(graph: &HeteroGraph, h0: Var<'t>, params: &EncoderParams, p: &Bound<'t>) -> Result<Var<'t>> {
    encode(&graph.relations(), h0, params, p)
}

/// Encodes a relation-agnostic graph through the mobility weight bank.
pub fn encode_untyped<'t>(adj: &Arc<CsrMatrix>, h0: Var<'t>, params: &EncoderParams, p: &Bound<'t>) -> Result<Var<'t>> {
    encode(&[(RelationType::Mobility, Arc::clone(adj))], h0, params, p)
}
