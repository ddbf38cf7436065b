//! End-to-end training: per epoch, generate two views, take one contrastive
//! step on the encoder, score the views, then take one reward-weighted
//! reconstruction step on both samplers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::encoder::{encode_graph, encode_untyped, init_features, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{build_distance_graph, build_mobility_graph, build_poi_graph, HeteroGraph, RelationType};
use crate::losses::{
    combined_reward, info_bn, info_nce_views, overall_loss, reward_r1, reward_r2, sampler_objective, shared_rows,
};
use crate::numcore::{AdamState, Bound, ParamStore, Tape, Tensor, Var};
use crate::poi::{pool_regions, train_skipgram, CategoryEmbeddingTable, PoiEncoder};
use crate::rng::{self, StdRng, Stream};
use crate::views::{
    candidate_pairs, edge_drop_view, generate_views, reconstruction_loss, score_edges, vgae_encode, Candidates,
    ContrastiveView, DecodedGraph, VgaeParams,
};

/// Edge-drop rate of the uniform augmentation arm.
pub const RANDOM_AUG_DROP: f64 = 0.2;

/// How the two contrastive views are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Augmentation {
    /// Learned samplers with random-walk subgraphs.
    Learned,
    /// Independent uniform edge drops of the fused graph.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub augmentation: Augmentation,
    /// Replaces the computed sampler reward when set.
    pub fixed_reward: Option<f64>,
    /// Relations left out of the fused graph.
    pub drop_relations: Vec<RelationType>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            augmentation: Augmentation::Learned,
            fixed_reward: None,
            drop_relations: Vec::new(),
        }
    }
}

/// Frozen preprocessing shared by every run on one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: CategoryEmbeddingTable,
    /// Count-weighted category vectors per region, `I x d_sg`.
    pub pooled: Tensor,
    pub graph: HeteroGraph,
}

/// Skip-gram table, pooled features and the fused graph. POI edges compare
/// the frozen pooled vectors, since the graph is fixed before training.
pub fn prepare(dataset: &Dataset, cfg: &RunConfig) -> Result<Prepared> {
    dataset.validate()?;
    let table = train_skipgram(&dataset.poi, &cfg.skipgram_config())?;
    let pooled = pool_regions(&table, &dataset.poi)?;
    let (i, t) = (dataset.n_regions(), dataset.n_slots);
    let g_poi = build_poi_graph(&pooled, cfg.graph.eps_poi);
    let g_mob = build_mobility_graph(&dataset.trajectories, i, t)?;
    let g_dist = build_distance_graph(&dataset.dist, cfg.graph.eps_dist_km)?;
    let graph = HeteroGraph::fuse(&g_poi, &g_mob, &g_dist, i, t)?;
    Ok(Prepared { table, pooled, graph })
}

/// One sampler with its own parameters and optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub store: ParamStore,
    pub params: VgaeParams,
    pub adam: AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub nce: f64,
    pub bn: f64,
    pub loss: f64,
    pub reward: f64,
    pub rec1: f64,
    pub rec2: f64,
    pub view_nodes: [usize; 2],
    pub shared_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Streams {
    noise: [StdRng; 2],
    walks: [StdRng; 2],
    seeds: StdRng,
    candidates: StdRng,
    edge_drop: StdRng,
    augment: [StdRng; 2],
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            noise: [0, 1].map(|v| rng::view_stream(seed, Stream::Noise, v)),
            walks: [0, 1].map(|v| rng::view_stream(seed, Stream::Walks, v)),
            seeds: rng::stream(seed, Stream::Seeds),
            candidates: rng::stream(seed, Stream::Candidates),
            edge_drop: rng::stream(seed, Stream::EdgeDrop),
            augment: [0, 1].map(|v| rng::view_stream(seed, Stream::Augment, v)),
        }
    }
}

/// Every learnable group plus optimiser and RNG state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub config: RunConfig,
    pub options: TrainOptions,
    pub encoder_store: ParamStore,
    pub poi: PoiEncoder,
    pub encoder: EncoderParams,
    pub encoder_adam: AdamState,
    pub samplers: [Sampler; 2],
    pub history: Vec<EpochStats>,
    streams: Streams,
}

pub struct Trainer {
    cfg: RunConfig,
    options: TrainOptions,
    prepared: Prepared,
    graph: HeteroGraph,
    union_edges: Vec<(usize, usize)>,
    encoder_store: ParamStore,
    poi: PoiEncoder,
    encoder: EncoderParams,
    encoder_adam: AdamState,
    samplers: [Sampler; 2],
    history: Vec<EpochStats>,
    streams: Streams,
}

/// Forward pieces of the encoder tape.
struct EncodedViews<'t> {
    nce: Var<'t>,
    bn: Var<'t>,
    loss: Var<'t>,
    shared: [Tensor; 2],
}

impl Trainer {
    pub fn new(prepared: Prepared, cfg: &RunConfig, options: TrainOptions) -> Result<Self> {
        cfg.validate()?;
        if prepared.pooled.cols() != cfg.skipgram.dim {
            return Err(Error::Shape {
                op: "trainer",
                left: prepared.pooled.shape().to_vec(),
                right: vec![cfg.skipgram.dim],
            });
        }
        let mut init = rng::stream(cfg.seed, Stream::Init);
        let d = cfg.model.dim;
        let mut encoder_store = ParamStore::new();
        let poi = PoiEncoder::init(&mut encoder_store, cfg.skipgram.dim, d, cfg.model.heads, &mut init)?;
        let encoder = EncoderParams::init(&mut encoder_store, d, cfg.model.layers, &mut init);
        let encoder_adam = AdamState::new(&encoder_store, cfg.train.lr, cfg.train.weight_decay);
        let samplers = [(); 2].map(|_| {
            let mut store = ParamStore::new();
            let params = VgaeParams::init(&mut store, d, &mut init);
            let adam = AdamState::new(&store, cfg.train.lr, cfg.train.weight_decay);
            Sampler { store, params, adam }
        });
        let mut graph = prepared.graph.clone();
        for &rel in &options.drop_relations {
            graph = graph.without(rel);
        }
        Ok(Trainer {
            union_edges: graph.union_edges(),
            graph,
            cfg: cfg.clone(),
            options,
            prepared,
            encoder_store,
            poi,
            encoder,
            encoder_adam,
            samplers,
            history: Vec::new(),
            streams: Streams::new(cfg.seed),
        })
    }

    pub fn from_checkpoint(prepared: Prepared, ck: Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(prepared, &ck.config, ck.options.clone())?;
        if t.encoder_store.n_scalars() != ck.encoder_store.n_scalars() {
            return Err(Error::Format("checkpoint does not match the configured model".into()));
        }
        t.encoder_store = ck.encoder_store;
        t.poi = ck.poi;
        t.encoder = ck.encoder;
        t.encoder_adam = ck.encoder_adam;
        t.samplers = ck.samplers;
        t.history = ck.history;
        t.streams = ck.streams;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.history.len(),
            config: self.cfg.clone(),
            options: self.options.clone(),
            encoder_store: self.encoder_store.clone(),
            poi: self.poi.clone(),
            encoder: self.encoder.clone(),
            encoder_adam: self.encoder_adam.clone(),
            samplers: self.samplers.clone(),
            history: self.history.clone(),
            streams: self.streams.clone(),
        }
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub fn history(&self) -> &[EpochStats] {
        &self.history
    }

    pub fn encoder_store(&self) -> &ParamStore {
        &self.encoder_store
    }

    pub fn samplers(&self) -> &[Sampler; 2] {
        &self.samplers
    }

    fn initial_features<'t>(&self, tape: &'t Tape, p: &Bound<'t>) -> Result<Var<'t>> {
        let pooled = tape.constant(self.prepared.pooled.clone());
        let e = self.poi.forward(pooled, p)?;
        init_features(e, &self.graph)
    }

    /// Node embeddings `H` of the fused graph under current parameters.
    pub fn node_embeddings(&self) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.encoder_store.bind(&tape);
        let h0 = self.initial_features(&tape, &p)?;
        Ok((*encode_graph(&self.graph, h0, &self.encoder, &p)?.value()).clone())
    }

    /// Base-node rows of `H`.
    pub fn region_embeddings(&self) -> Result<Tensor> {
        let h = self.node_embeddings()?;
        h.select_rows(&(0..self.graph.n_regions()).collect::<Vec<_>>())
    }

    fn encode_views<'t>(
        &self,
        tape: &'t Tape,
        views: &[ContrastiveView; 2],
        augmented: &[ContrastiveView; 2],
    ) -> Result<(EncodedViews<'t>, Bound<'t>)> {
        let p = self.encoder_store.bind(tape);
        let h0 = self.initial_features(tape, &p)?;
        let enc = |v: &ContrastiveView| -> Result<Var<'t>> {
            encode_untyped(&v.adjacency(), h0.gather_rows(&v.nodes)?, &self.encoder, &p)
        };
        let h1 = enc(&views[0])?;
        let h2 = enc(&views[1])?;
        let h1_aug = enc(&augmented[0])?;
        let h2_aug = enc(&augmented[1])?;
        let tau = self.cfg.loss.tau;
        let nce = info_nce_views(h1, h2, &views[0], &views[1], tau)?;
        let bn = info_bn(h1, h1_aug, h2, h2_aug, tau)?;
        let loss = overall_loss(nce, bn, self.cfg.loss.beta)?;
        let (r1, r2) = shared_rows(&views[0], &views[1]);
        let shared = [h1.value().select_rows(&r1)?, h2.value().select_rows(&r2)?];
        Ok((EncodedViews { nce, bn, loss, shared }, p))
    }

    fn make_views(&mut self, h: &Tensor) -> Result<(Option<(Candidates, [DecodedGraph; 2])>, [ContrastiveView; 2])> {
        let n = self.graph.n_nodes();
        match self.options.augmentation {
            Augmentation::Learned => {
                let cand = candidate_pairs(n, &self.union_edges, self.cfg.view.neg_per_node, &mut self.streams.candidates);
                let [s0, s1] = &self.samplers;
                let [n0, n1] = &mut self.streams.noise;
                let [w0, w1] = &mut self.streams.walks;
                let pair = generate_views(
                    h,
                    [(&s0.store, &s0.params), (&s1.store, &s1.params)],
                    &cand,
                    &self.cfg.view,
                    [n0, n1],
                    &mut self.streams.seeds,
                    [w0, w1],
                )?;
                Ok((Some((cand, pair.decoded)), pair.views))
            }
            Augmentation::Random => {
                let [a0, a1] = &mut self.streams.augment;
                let v0 = edge_drop_view(n, &self.union_edges, RANDOM_AUG_DROP, a0)?;
                let v1 = edge_drop_view(n, &self.union_edges, RANDOM_AUG_DROP, a1)?;
                Ok((None, [v0, v1]))
            }
        }
    }

    /// Runs one epoch and returns its statistics.
    pub fn step(&mut self) -> Result<EpochStats> {
        let epoch = self.history.len() + 1;
        let h = self.node_embeddings()?;
        let (decoded, views) = self.make_views(&h)?;
        let drop = self.cfg.loss.infobn_drop;
        let augmented = [
            views[0].drop_edges(drop, &mut self.streams.edge_drop)?,
            views[1].drop_edges(drop, &mut self.streams.edge_drop)?,
        ];

        // Contrastive step on the encoder, POI projection and attention.
        let sampler_sums = self.samplers.each_ref().map(|s| s.store.checksum());
        let (nce, bn, loss) = {
            let tape = Tape::new();
            let (ev, p) = self.encode_views(&tape, &views, &augmented)?;
            let (nce, bn, loss) = (ev.nce.value().item(), ev.bn.value().item(), ev.loss.value().item());
            for (name, v) in [("L_NCE", nce), ("L_BN", bn), ("L", loss)] {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("epoch {epoch}: {name} = {v}")));
                }
            }
            let grads = p.grads(&tape.backward(ev.loss)?);
            self.encoder_adam
                .step(&mut self.encoder_store, &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}: encoder step: {e}")))?;
            (nce, bn, loss)
        };
        if self.samplers.each_ref().map(|s| s.store.checksum()) != sampler_sums {
            return Err(Error::Contract("encoder step modified sampler parameters".into()));
        }

        // Reward from the updated encoder on the same views.
        let reward = {
            let tape = Tape::new();
            let (ev, _) = self.encode_views(&tape, &views, &augmented)?;
            let r1 = reward_r1(ev.loss.value().item(), self.cfg.loss.eps_prime, self.cfg.loss.xi);
            let r2 = reward_r2(&ev.shared[0], &ev.shared[1])?;
            self.options
                .fixed_reward
                .unwrap_or_else(|| combined_reward(r1, r2, self.cfg.loss.w1))
        };

        // Reward-weighted reconstruction step on both samplers.
        let (mut rec1, mut rec2) = (0.0, 0.0);
        if let Some((cand, decoded)) = decoded {
            let encoder_sum = self.encoder_store.checksum();
            let tape = Tape::new();
            let hv = tape.constant(h);
            let bounds = self.samplers.each_ref().map(|s| s.store.bind(&tape));
            let recs = [0, 1].map(|k| -> Result<Var<'_>> {
                let s = &self.samplers[k];
                let h_tilde = vgae_encode(hv, &s.params, &decoded[k].noise, &bounds[k])?;
                reconstruction_loss(score_edges(h_tilde, &s.params, &cand.pairs, &bounds[k])?, &cand.is_edge)
            });
            let [r0, r1] = recs;
            let (r0, r1) = (r0?, r1?);
            rec1 = r0.value().item();
            rec2 = r1.value().item();
            if !(rec1.is_finite() && rec2.is_finite()) {
                return Err(Error::NonFinite(format!("epoch {epoch}: L_Rec = ({rec1}, {rec2})")));
            }
            let objective = sampler_objective(reward, r0, r1)?;
            let grads = tape.backward(objective)?;
            for (s, b) in self.samplers.iter_mut().zip(&bounds) {
                s.adam
                    .step(&mut s.store, &b.grads(&grads))
                    .map_err(|e| Error::NonFinite(format!("epoch {epoch}: sampler step: {e}")))?;
            }
            if self.encoder_store.checksum() != encoder_sum {
                return Err(Error::Contract("sampler step modified encoder parameters".into()));
            }
        }

        let stats = EpochStats {
            epoch,
            nce,
            bn,
            loss,
            reward,
            rec1,
            rec2,
            view_nodes: [views[0].len(), views[1].len()],
            shared_nodes: shared_rows(&views[0], &views[1]).0.len(),
        };
        self.history.push(stats);
        Ok(stats)
    }

    /// Runs the remaining configured epochs, writing checkpoints to
    /// `checkpoint_dir` at the configured cadence.
    pub fn run(&mut self, checkpoint_dir: Option<&Path>) -> Result<()> {
        while self.history.len() < self.cfg.train.epochs {
            self.step()?;
            let every = self.cfg.train.checkpoint_every;
            if let (Some(dir), true) = (checkpoint_dir, every > 0) {
                if self.history.len() % every == 0 {
                    save_checkpoint(&self.checkpoint(), &dir.join("checkpoint.json"))?;
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<TrainedModel> {
        Ok(TrainedModel {
            embeddings: self.region_embeddings()?,
            node_embeddings: self.node_embeddings()?,
            history: self.history.clone(),
            config_hash: self.cfg.hash(),
            checkpoint: self.checkpoint(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Base-node rows of `node_embeddings`.
    pub embeddings: Tensor,
    pub node_embeddings: Tensor,
    pub history: Vec<EpochStats>,
    pub config_hash: u64,
    pub checkpoint: Checkpoint,
}

/// Preprocesses and trains for the configured epochs.
pub fn train(dataset: &Dataset, cfg: &RunConfig, options: TrainOptions) -> Result<TrainedModel> {
    let prepared = prepare(dataset, cfg)?;
    let mut t = Trainer::new(prepared, cfg, options)?;
    t.run(None)?;
    t.finish()
}

/// One row per epoch: `epoch,L_NCE,L_BN,L,reward,L_Rec1,L_Rec2`.
pub fn write_loss_csv<W: Write>(history: &[EpochStats], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["epoch", "L_NCE", "L_BN", "L", "reward", "L_Rec1", "L_Rec2"]).map_err(fmt)?;
    for s in history {
        wr.write_record([
            s.epoch.to_string(),
            s.nce.to_string(),
            s.bn.to_string(),
            s.loss.to_string(),
            s.reward.to_string(),
            s.rec1.to_string(),
            s.rec2.to_string(),
        ])
        .map_err(fmt)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec(ck).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

const MAGIC: &[u8; 4] = b"ASTE";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub version: u32,
    pub n_regions: u64,
    pub dim: u64,
    pub config_hash: u64,
    pub checksum: u64,
}

fn payload_checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Writes `magic, version, I, d, config hash, payload checksum` followed by
/// row-major little-endian f64s.
pub fn export_embeddings(embeddings: &Tensor, config_hash: u64, path: &Path) -> Result<()> {
    let (i, d) = embeddings.require_matrix("export_embeddings")?;
    let payload: Vec<u8> = embeddings.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(i as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u64).to_le_bytes());
    buf.extend_from_slice(&config_hash.to_le_bytes());
    buf.extend_from_slice(&payload_checksum(&payload).to_le_bytes());
    buf.extend_from_slice(&payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: &Path) -> Result<(EmbeddingHeader, Tensor)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return Err(bad("not an embedding file"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
    let header = EmbeddingHeader {
        version: u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")),
        n_regions: u64_at(8),
        dim: u64_at(16),
        config_hash: u64_at(24),
        checksum: u64_at(32),
    };
    if header.version != EMBEDDING_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    let payload = &buf[HEADER_LEN..];
    let want_len = header.n_regions.checked_mul(header.dim).and_then(|n| n.checked_mul(8));
    if want_len != Some(payload.len() as u64) || payload_checksum(payload) != header.checksum {
        return Err(Error::Checksum { path: path.to_path_buf() });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, Tensor::matrix(header.n_regions as usize, header.dim as usize, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SynthConfig};

    fn small() -> (Dataset, RunConfig) {
        let mut cfg = RunConfig::default();
        cfg.model.dim = 8;
        cfg.model.heads = 2;
        cfg.model.layers = 2;
        cfg.skipgram.dim = 8;
        cfg.skipgram.epochs = 2;
        cfg.train.epochs = 3;
        let ds = synth_dataset(&SynthConfig {
            n_regions: 6,
            n_categories: 4,
            n_slots: 2,
            n_trips: 40,
            n_clusters: 2,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        (ds, cfg)
    }

    #[test]
    fn single_epoch_smoke() {
        let (ds, mut cfg) = small();
        cfg.train.epochs = 1;
        let m = train(&ds, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(m.history.len(), 1);
        assert_eq!(m.embeddings.shape(), &[6, 8]);
        for r in 0..6 {
            assert_eq!(m.embeddings.row(r), m.node_embeddings.row(r));
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let (ds, cfg) = small();
        let a = train(&ds, &cfg, TrainOptions::default()).unwrap();
        let b = train(&ds, &cfg, TrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.embeddings, b.embeddings);
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted() {
        let (ds, cfg) = small();
        let full = train(&ds, &cfg, TrainOptions::default()).unwrap();

        let prepared = prepare(&ds, &cfg).unwrap();
        let mut t = Trainer::new(prepared.clone(), &cfg, TrainOptions::default()).unwrap();
        t.step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        save_checkpoint(&t.checkpoint(), &path).unwrap();
        let mut resumed = Trainer::from_checkpoint(prepared, load_checkpoint(&path).unwrap()).unwrap();
        resumed.run(None).unwrap();
        let m = resumed.finish().unwrap();
        assert_eq!(m.history, full.history);
        assert_eq!(m.embeddings, full.embeddings);
    }

    #[test]
    fn random_augmentation_and_fixed_reward_run() {
        let (ds, cfg) = small();
        let opts = TrainOptions {
            augmentation: Augmentation::Random,
            ..Default::default()
        };
        let m = train(&ds, &cfg, opts).unwrap();
        assert!(m.history.iter().all(|s| s.rec1 == 0.0));
        let opts = TrainOptions {
            fixed_reward: Some(1.0),
            ..Default::default()
        };
        let m = train(&ds, &cfg, opts).unwrap();
        assert!(m.history.iter().all(|s| s.reward == 1.0));
    }

    #[test]
    fn embedding_file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let e = Tensor::from_rows(&[vec![1.5, -0.25], vec![f64::MIN_POSITIVE, 3.0]]).unwrap();
        export_embeddings(&e, 0xDEAD_BEEF, &path).unwrap();
        let (h, back) = load_embeddings(&path).unwrap();
        assert_eq!(back, e);
        assert_eq!((h.n_regions, h.dim, h.config_hash, h.version), (2, 2, 0xDEAD_BEEF, 1));

        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Checksum { .. })));
    }
}
