//! Run configuration: every tunable with its default, loadable from
//! `key = value` files.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::poi::SkipGramConfig;
use crate::views::ViewConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Cosine threshold for POI edges.
    pub eps_poi: f64,
    /// Distance threshold for distance edges, km.
    pub eps_dist_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// L1 weight of the probe.
    pub lambda: f64,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub skipgram: SkipGramConfig,
    pub model: ModelConfig,
    pub graph: GraphConfig,
    pub view: ViewConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            skipgram: SkipGramConfig::default(),
            model: ModelConfig {
                dim: 96,
                heads: 4,
                layers: 3,
            },
            graph: GraphConfig {
                eps_poi: 0.5,
                eps_dist_km: 2.5,
            },
            view: ViewConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig {
                epochs: 50,
                lr: 0.0005,
                weight_decay: 0.01,
                checkpoint_every: 0,
            },
            eval: EvalConfig { lambda: 0.1, folds: 5 },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for {key}: {e}")))
}

macro_rules! config_keys {
    ($($key:literal => $($field:ident).+ : $ty:ty),* $(,)?) => {
        impl RunConfig {
            /// Every accepted key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse::<$ty>(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in canonical order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.to_string())),*]
            }
        }
    };
}

config_keys! {
    "seed" => seed: u64,
    "synth.regions" => synth.n_regions: usize,
    "synth.categories" => synth.n_categories: usize,
    "synth.slots" => synth.n_slots: usize,
    "synth.trips" => synth.n_trips: usize,
    "synth.noise_rate" => synth.noise_rate: f64,
    "synth.skew" => synth.skew_exponent: f64,
    "synth.clusters" => synth.n_clusters: usize,
    "poi.d_sg" => skipgram.dim: usize,
    "poi.window_cap" => skipgram.window_cap: u64,
    "poi.negatives" => skipgram.negatives: usize,
    "poi.epochs" => skipgram.epochs: usize,
    "poi.lr" => skipgram.lr: f64,
    "attn.heads" => model.heads: usize,
    "model.dim" => model.dim: usize,
    "model.layers" => model.layers: usize,
    "graph.eps_poi" => graph.eps_poi: f64,
    "graph.eps_dist_km" => graph.eps_dist_km: f64,
    "view.eps" => view.eps: f64,
    "view.walk_len" => view.walk_len: usize,
    "view.walks_per_seed" => view.walks_per_seed: usize,
    "view.seed_frac" => view.seed_frac: f64,
    "view.neg_per_node" => view.neg_per_node: usize,
    "view.noise_mu" => view.noise.mu: f64,
    "view.noise_sigma" => view.noise.sigma: f64,
    "loss.beta" => loss.beta: f64,
    "loss.tau" => loss.tau: f64,
    "loss.eps_prime" => loss.eps_prime: f64,
    "loss.xi" => loss.xi: f64,
    "loss.w1" => loss.w1: f64,
    "loss.infobn_drop" => loss.infobn_drop: f64,
    "train.epochs" => train.epochs: usize,
    "train.lr" => train.lr: f64,
    "train.weight_decay" => train.weight_decay: f64,
    "train.checkpoint_every" => train.checkpoint_every: usize,
    "eval.lambda" => eval.lambda: f64,
    "eval.folds" => eval.folds: usize,
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unspecified keys
    /// keep their defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_config_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_config_prefix(&e))))
    }

    /// Canonical `key = value` text covering every key.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Digest of the canonical text, truncated to 64 bits.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Synthetic-data settings with the master seed applied.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Skip-gram settings with the master seed applied.
    pub fn skipgram_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            seed: self.seed,
            ..self.skipgram.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0 {
            return Err(Error::Config(format!(
                "model.dim {} must be a positive multiple of attn.heads {}",
                m.dim, m.heads
            )));
        }
        if self.skipgram.dim == 0 {
            return Err(Error::Config("poi.d_sg must be positive".into()));
        }
        if !(self.graph.eps_dist_km > 0.0) {
            return Err(Error::Config(format!(
                "graph.eps_dist_km must be positive, got {}",
                self.graph.eps_dist_km
            )));
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if !(self.train.lr > 0.0) || !(self.train.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "train.lr must be positive and train.weight_decay non-negative, got {} and {}",
                self.train.lr, self.train.weight_decay
            )));
        }
        if !(self.eval.lambda >= 0.0) {
            return Err(Error::Config(format!("eval.lambda must be >= 0, got {}", self.eval.lambda)));
        }
        if self.eval.folds < 2 {
            return Err(Error::Config("eval.folds must be at least 2".into()));
        }
        self.view.validate()?;
        self.loss.validate()
    }
}

fn strip_config_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
