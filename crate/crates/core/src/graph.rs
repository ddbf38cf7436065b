//! View graphs (POI similarity, mobility, distance) and their fusion into the
//! heterogeneous region graph over base and time-slot nodes.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{DistanceMatrix, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::numcore::{cosine, CsrMatrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationType {
    Poi,
    Mobility,
    Distance,
    TemporalSelf,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::Poi,
        RelationType::Mobility,
        RelationType::Distance,
        RelationType::TemporalSelf,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationType::Poi => "POI",
            RelationType::Mobility => "MOBILITY",
            RelationType::Distance => "DISTANCE",
            RelationType::TemporalSelf => "TEMPORAL_SELF",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Base(usize),
    Slot(usize, usize),
}

/// Undirected simple graph over [`NodeRef`]s; edges are stored with the
/// smaller endpoint first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewGraph {
    edges: BTreeSet<(NodeRef, NodeRef)>,
}

impl ViewGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `{u, v}`; self-edges are ignored.
    pub fn insert(&mut self, u: NodeRef, v: NodeRef) -> bool {
        if u == v {
            return false;
        }
        self.edges.insert(if u < v { (u, v) } else { (v, u) })
    }

    pub fn contains(&self, u: NodeRef, v: NodeRef) -> bool {
        self.edges.contains(&if u < v { (u, v) } else { (v, u) })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeRef, NodeRef)> + '_ {
        self.edges.iter().copied()
    }
}

/// Base nodes `i` and `j` are linked iff the cosine of their embeddings
/// exceeds `threshold`.
pub fn build_poi_graph(embeddings: &Tensor, threshold: f64) -> ViewGraph {
    let n = embeddings.rows();
    let mut g = ViewGraph::new();
    for i in 0..n {
        for j in i + 1..n {
            if cosine(embeddings.row(i), embeddings.row(j)) > threshold {
                g.insert(NodeRef::Base(i), NodeRef::Base(j));
            }
        }
    }
    g
}

/// One undirected edge `Slot(src, t_start)`–`Slot(dst, t_end)` per distinct
/// trip; trips that start and end in the same slot node add nothing.
pub fn build_mobility_graph(trajectories: &[TrajectoryRecord], n_regions: usize, n_slots: usize) -> Result<ViewGraph> {
    let mut g = ViewGraph::new();
    for (k, t) in trajectories.iter().enumerate() {
        if t.source.0 >= n_regions || t.dest.0 >= n_regions {
            return Err(Error::Validation(format!("trajectory {k}: region index out of range")));
        }
        if t.t_start.0 >= n_slots || t.t_end.0 >= n_slots {
            return Err(Error::Validation(format!(
                "trajectory {k}: time slot out of range for {n_slots} slots"
            )));
        }
        g.insert(
            NodeRef::Slot(t.source.0, t.t_start.0),
            NodeRef::Slot(t.dest.0, t.t_end.0),
        );
    }
    Ok(g)
}

/// Base nodes closer than `threshold_km` are linked.
pub fn build_distance_graph(dist: &DistanceMatrix, threshold_km: f64) -> Result<ViewGraph> {
    if !(threshold_km > 0.0) {
        return Err(Error::Config(format!("distance threshold must be positive, got {threshold_km}")));
    }
    let n = dist.n_regions();
    let mut g = ViewGraph::new();
    for i in 0..n {
        for j in i + 1..n {
            if dist.km(i, j) < threshold_km {
                g.insert(NodeRef::Base(i), NodeRef::Base(j));
            }
        }
    }
    Ok(g)
}

/// `D^{-1/2} (A + I) D^{-1/2}` for an undirected edge list over `n` nodes,
/// with `D` the degree of `A + I`.
pub fn normalized_adjacency(n: usize, edges: &[(usize, usize)]) -> CsrMatrix {
    let mut deg = vec![1.0f64; n];
    for &(u, v) in edges {
        deg[u] += 1.0;
        deg[v] += 1.0;
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut trips = Vec::with_capacity(n + 2 * edges.len());
    for (i, &s) in inv.iter().enumerate() {
        trips.push((i, i, s * s));
    }
    for &(u, v) in edges {
        let w = inv[u] * inv[v];
        trips.push((u, v, w));
        trips.push((v, u, w));
    }
    CsrMatrix::from_triplets(n, n, trips)
}

/// Fused multi-relation graph on the unified index: `Base(i) -> i`,
/// `Slot(i, t) -> I + i*T + t`.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    n_regions: usize,
    n_slots: usize,
    edges: [Vec<(usize, usize)>; 4],
    adjacency: [Arc<CsrMatrix>; 4],
}

impl HeteroGraph {
    pub fn fuse(g_poi: &ViewGraph, g_mob: &ViewGraph, g_dist: &ViewGraph, n_regions: usize, n_slots: usize) -> Result<Self> {
        let mut edges: [Vec<(usize, usize)>; 4] = Default::default();
        let index = |node: NodeRef| -> Result<usize> { node_index(node, n_regions, n_slots) };
        for (rel, g) in [
            (RelationType::Poi, g_poi),
            (RelationType::Mobility, g_mob),
            (RelationType::Distance, g_dist),
        ] {
            for (u, v) in g.edges() {
                let (a, b) = (index(u)?, index(v)?);
                edges[rel.index()].push((a.min(b), a.max(b)));
            }
        }
        let temporal = &mut edges[RelationType::TemporalSelf.index()];
        for i in 0..n_regions {
            for t in 0..n_slots {
                temporal.push((i, n_regions + i * n_slots + t));
            }
        }
        Ok(Self::from_edges(n_regions, n_slots, edges))
    }

    /// Builds from per-relation index-pair edge lists (each pair `u < v`).
    pub fn from_edges(n_regions: usize, n_slots: usize, mut edges: [Vec<(usize, usize)>; 4]) -> Self {
        let n = n_regions + n_regions * n_slots;
        for e in edges.iter_mut() {
            e.sort_unstable();
            e.dedup();
        }
        let adjacency = std::array::from_fn(|r| Arc::new(normalized_adjacency(n, &edges[r])));
        HeteroGraph {
            n_regions,
            n_slots,
            edges,
            adjacency,
        }
    }

    /// Same graph with one relation's edges removed.
    pub fn without(&self, rel: RelationType) -> Self {
        let mut edges = self.edges.clone();
        edges[rel.index()].clear();
        Self::from_edges(self.n_regions, self.n_slots, edges)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn n_nodes(&self) -> usize {
        self.n_regions + self.n_regions * self.n_slots
    }

    pub fn node_index(&self, node: NodeRef) -> Result<usize> {
        node_index(node, self.n_regions, self.n_slots)
    }

    pub fn node_ref(&self, index: usize) -> NodeRef {
        if index < self.n_regions {
            NodeRef::Base(index)
        } else {
            let k = index - self.n_regions;
            NodeRef::Slot(k / self.n_slots, k % self.n_slots)
        }
    }

    pub fn edges(&self, rel: RelationType) -> &[(usize, usize)] {
        &self.edges[rel.index()]
    }

    pub fn adjacency(&self, rel: RelationType) -> &Arc<CsrMatrix> {
        &self.adjacency[rel.index()]
    }

    /// `(relation, normalized adjacency)` for every relation, in order.
    pub fn relations(&self) -> Vec<(RelationType, Arc<CsrMatrix>)> {
        RelationType::ALL
            .into_iter()
            .map(|r| (r, Arc::clone(self.adjacency(r))))
            .collect()
    }

    /// Relation-agnostic union of all edges, sorted and deduplicated.
    pub fn union_edges(&self) -> Vec<(usize, usize)> {
        let mut all: Vec<(usize, usize)> = self.edges.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// One JSON object per edge.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let describe = |node: NodeRef| match node {
            NodeRef::Base(r) => ("base", r, None),
            NodeRef::Slot(r, t) => ("slot", r, Some(t)),
        };
        for rel in RelationType::ALL {
            for &(u, v) in self.edges(rel) {
                let (uk, ur, us) = describe(self.node_ref(u));
                let (vk, vr, vs) = describe(self.node_ref(v));
                let line = serde_json::json!({
                    "relation": rel.name(),
                    "u_kind": uk, "u_region": ur, "u_slot": us,
                    "v_kind": vk, "v_region": vr, "v_slot": vs,
                });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

fn node_index(node: NodeRef, n_regions: usize, n_slots: usize) -> Result<usize> {
    match node {
        NodeRef::Base(i) if i < n_regions => Ok(i),
        NodeRef::Slot(i, t) if i < n_regions && t < n_slots => Ok(n_regions + i * n_slots + t),
        other => Err(Error::Validation(format!(
            "node {other:?} outside {n_regions} regions x {n_slots} slots"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RegionId, TimeSlotId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trip(s: usize, d: usize, t0: usize, t1: usize) -> TrajectoryRecord {
        TrajectoryRecord {
            source: RegionId(s),
            dest: RegionId(d),
            t_start: TimeSlotId(t0),
            t_end: TimeSlotId(t1),
        }
    }

    #[test]
    fn poi_graph_thresholds() {
        let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(build_poi_graph(&e, 1.0).is_empty());
        let g = build_poi_graph(&e, 0.5);
        assert_eq!(g.len(), 1);
        assert!(g.contains(NodeRef::Base(1), NodeRef::Base(0)));
    }

    #[test]
    fn poi_graph_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = Tensor::randn(&[4, 3], 0.0, 1.0, &mut rng);
        let g = build_poi_graph(&e, 0.3);
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let (a, b) = (e.row(i), e.row(j));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert_eq!(g.contains(NodeRef::Base(i), NodeRef::Base(j)), dot / (na * nb) > 0.3);
            }
        }
    }

    #[test]
    fn mobility_graph_single_record() {
        assert!(build_mobility_graph(&[], 2, 4).unwrap().is_empty());
        let g = build_mobility_graph(&[trip(0, 1, 2, 3)], 2, 4).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(NodeRef::Slot(0, 2), NodeRef::Slot(1, 3))]);
        assert!(build_mobility_graph(&[trip(0, 1, 2, 4)], 2, 4).is_err());
    }

    #[test]
    fn distance_graph_extremes() {
        let dist = DistanceMatrix::from_centroids(vec![(0.0, 0.0), (0.0, 0.01), (0.0, 0.02)]);
        assert_eq!(build_distance_graph(&dist, 1e9).unwrap().len(), 3);
        assert!(build_distance_graph(&dist, 0.5).unwrap().is_empty());
        assert!(matches!(build_distance_graph(&dist, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn fuse_minimal() {
        let empty = ViewGraph::new();
        let g = HeteroGraph::fuse(&empty, &empty, &empty, 1, 1).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.edges(RelationType::TemporalSelf), &[(0, 1)]);
        // Isolated node under POI: only its self-loop.
        assert_eq!(g.adjacency(RelationType::Poi).get(0, 0), 1.0);
    }

    #[test]
    fn path_normalization_closed_form() {
        let a = normalized_adjacency(3, &[(0, 1), (1, 2)]);
        // Degrees with self-loops: 2, 3, 2.
        let d = [2.0f64, 3.0, 2.0];
        for (i, j) in [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)] {
            let want = 1.0 / (d[i] * d[j]).sqrt();
            assert!((a.get(i, j) - want).abs() < 1e-15);
            assert_eq!(a.get(i, j), a.get(j, i));
        }
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn jsonl_dump_has_one_line_per_edge() {
        let mut mob = ViewGraph::new();
        mob.insert(NodeRef::Slot(0, 0), NodeRef::Slot(1, 1));
        let g = HeteroGraph::fuse(&ViewGraph::new(), &mob, &ViewGraph::new(), 2, 2).unwrap();
        let mut buf = Vec::new();
        g.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["relation"], "MOBILITY");
        assert_eq!(first["v_slot"], 1);
        let last: serde_json::Value = serde_json::from_str(lines[4]).unwrap();
        assert_eq!(last["u_kind"], "base");
        assert!(last["u_slot"].is_null());
    }
}
