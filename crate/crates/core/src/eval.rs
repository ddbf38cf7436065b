//! Linear probes on frozen embeddings, error metrics, ablation arms,
//! density-stratified robustness and pairwise similarity.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{crime_density, Dataset, RegionId, Task};
use crate::error::{Error, Result};
use crate::graph::RelationType;
use crate::numcore::{cosine, Tensor};
use crate::rng::{self, Stream};
use crate::trainer::{prepare, Augmentation, Prepared, TrainOptions, TrainedModel, Trainer};

/// Largest coordinate change at which coordinate descent stops.
pub const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
}

/// MAE, RMSE and MAPE with denominator `max(|truth|, 1)`.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "metrics need equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len() as f64;
    let (mut ae, mut se, mut pe) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let d = (p - t).abs();
        ae += d;
        se += d * d;
        pe += d / t.abs().max(1.0);
    }
    Ok(Metrics {
        mae: ae / n,
        mape: pe / n,
        rmse: (se / n).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Objective after each full sweep.
    pub objectives: Vec<f64>,
}

impl LassoFit {
    pub fn predict(&self, x: &Tensor) -> Vec<f64> {
        (0..x.rows())
            .map(|r| self.intercept + x.row(r).iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Minimises `1/(2n) ||y - b - Xw||² + λ ||w||₁` by cyclic coordinate
/// descent with an unpenalised intercept.
pub fn lasso_fit(x: &Tensor, y: &[f64], lambda: f64) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lasso penalty must be >= 0, got {lambda}")));
    }
    let (n, p) = x.require_matrix("lasso_fit")?;
    if n != y.len() || n < 2 {
        return Err(Error::Contract(format!("lasso needs >= 2 rows matching {} targets, got {n}", y.len())));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / nf).collect();
    let y_mean = y.iter().sum::<f64>() / nf;
    // Centred columns, column-major.
    let cols: Vec<Vec<f64>> = (0..p).map(|j| (0..n).map(|i| x.get(i, j) - x_mean[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut w = vec![0.0; p];
    let objective = |resid: &[f64], w: &[f64]| {
        resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut objectives = Vec::new();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho = col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / nf + sq[j] * w[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (r, a) in resid.iter_mut().zip(col) {
                    *r -= delta * a;
                }
                w[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        objectives.push(objective(&resid, &w));
        if max_delta < LASSO_TOL {
            break;
        }
    }
    let intercept = y_mean - x_mean.iter().zip(&w).map(|(m, v)| m * v).sum::<f64>();
    Ok(LassoFit {
        weights: w,
        intercept,
        objectives,
    })
}

/// Column means and standard deviations (zero spread maps to 1).
fn standardizer(x: &Tensor, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let p = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; p];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; p];
    for &r in rows {
        for ((s, v), m) in sd.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let sd = sd.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
    (mean, sd)
}

fn standardized_rows(x: &Tensor, rows: &[usize], mean: &[f64], sd: &[f64]) -> Result<Tensor> {
    let data = rows
        .iter()
        .flat_map(|&r| x.row(r).iter().zip(mean).zip(sd).map(|((v, m), s)| (v - m) / s))
        .collect();
    Tensor::matrix(rows.len(), x.cols(), data)
}

/// Out-of-fold Lasso predictions under k-fold cross-validation. Features
/// are standardised with training-fold statistics.
pub fn probe_predictions(x: &Tensor, y: &[f64], folds: usize, lambda: f64, seed: u64) -> Result<Vec<f64>> {
    let n = x.rows();
    if folds < 2 || n < folds {
        return Err(Error::Contract(format!("{folds}-fold probe needs at least {folds} rows, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, Stream::Probe));
    let mut pred = vec![0.0; n];
    for f in 0..folds {
        let test: Vec<usize> = order.iter().copied().skip(f).step_by(folds).collect();
        let train: Vec<usize> = order.iter().copied().filter(|r| !test.contains(r)).collect();
        let (mean, sd) = standardizer(x, &train);
        let fit = lasso_fit(
            &standardized_rows(x, &train, &mean, &sd)?,
            &train.iter().map(|&r| y[r]).collect::<Vec<_>>(),
            lambda,
        )?;
        let out = fit.predict(&standardized_rows(x, &test, &mean, &sd)?);
        for (&r, p) in test.iter().zip(out) {
            pred[r] = p;
        }
    }
    Ok(pred)
}

/// Out-of-fold predictions and truth for one task, per region.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProbe {
    pub task: Task,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub metrics: Metrics,
}

/// Probes every task present in `dataset`.
pub fn evaluate(embeddings: &Tensor, dataset: &Dataset, cfg: &RunConfig) -> Result<Vec<TaskProbe>> {
    let tasks = dataset.targets.tasks();
    if tasks.is_empty() {
        return Err(Error::UnsupportedTask("dataset has no targets to probe".into()));
    }
    tasks
        .into_iter()
        .map(|task| {
            let truth = dataset.region_targets(task)?;
            let pred = probe_predictions(embeddings, &truth, cfg.eval.folds, cfg.eval.lambda, cfg.seed)?;
            let m = metrics(&pred, &truth)?;
            Ok(TaskProbe {
                task,
                pred,
                truth,
                metrics: m,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    Full,
    NoGp,
    NoGd,
    NoInfomin,
    RandomAug,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoGp,
        AblationVariant::NoGd,
        AblationVariant::NoInfomin,
        AblationVariant::RandomAug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "FULL",
            AblationVariant::NoGp => "NO_GP",
            AblationVariant::NoGd => "NO_GD",
            AblationVariant::NoInfomin => "NO_INFOMIN",
            AblationVariant::RandomAug => "RANDOM_AUG",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name().eq_ignore_ascii_case(s))
    }

    pub fn options(self) -> TrainOptions {
        let mut o = TrainOptions::default();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoGp => o.drop_relations.push(RelationType::Poi),
            AblationVariant::NoGd => o.drop_relations.push(RelationType::Distance),
            AblationVariant::NoInfomin => o.fixed_reward = Some(1.0),
            AblationVariant::RandomAug => o.augmentation = Augmentation::Random,
        }
        o
    }
}

/// One trained arm with its probe results.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub variant: AblationVariant,
    pub seed: u64,
    pub model: TrainedModel,
    pub probes: Vec<TaskProbe>,
}

impl ArmResult {
    pub fn mean_mae(&self) -> f64 {
        self.probes.iter().map(|p| p.metrics.mae).sum::<f64>() / self.probes.len() as f64
    }

    pub fn rows(&self) -> Vec<MetricsRow> {
        self.probes
            .iter()
            .map(|p| MetricsRow {
                variant: self.variant.name().to_string(),
                task: p.task.name().to_string(),
                seed: self.seed,
                metrics: p.metrics,
            })
            .collect()
    }
}

/// Trains `variant` from prepared inputs and probes the result.
pub fn run_arm(prepared: &Prepared, dataset: &Dataset, variant: AblationVariant, cfg: &RunConfig) -> Result<ArmResult> {
    let mut t = Trainer::new(prepared.clone(), cfg, variant.options())?;
    t.run(None)?;
    let model = t.finish()?;
    let probes = evaluate(&model.embeddings, dataset, cfg)?;
    Ok(ArmResult {
        variant,
        seed: cfg.seed,
        model,
        probes,
    })
}

/// Trains and probes `variant` with `cfg.seed`.
pub fn run_ablation(dataset: &Dataset, variant: AblationVariant, cfg: &RunConfig) -> Result<ArmResult> {
    run_arm(&prepare(dataset, cfg)?, dataset, variant, cfg)
}

/// Every `(seed, variant)` arm on `jobs` worker threads; results follow
/// seed-major, variant-minor order regardless of scheduling.
pub fn ablation_study(
    dataset: &Dataset,
    variants: &[AblationVariant],
    seeds: &[u64],
    cfg: &RunConfig,
    jobs: usize,
) -> Result<Vec<ArmResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| {
        let prepared: Vec<(RunConfig, Prepared)> = seeds
            .par_iter()
            .map(|&s| {
                let c = RunConfig { seed: s, ..cfg.clone() };
                let p = prepare(dataset, &c)?;
                Ok((c, p))
            })
            .collect::<Result<_>>()?;
        let arms: Vec<(usize, AblationVariant)> = (0..seeds.len())
            .flat_map(|k| variants.iter().map(move |&v| (k, v)))
            .collect();
        arms.par_iter()
            .map(|&(k, v)| run_arm(&prepared[k].1, dataset, v, &prepared[k].0))
            .collect()
    })
}

/// Mean probe metrics of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub metrics: Metrics,
}

/// Trains the full model once per value of `param` and averages the probe
/// metrics over tasks. Rows follow the order of `values`.
pub fn sweep(dataset: &Dataset, cfg: &RunConfig, param: &str, values: &[String], jobs: usize) -> Result<Vec<SweepRow>> {
    let configs = values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(param, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    let arms: Vec<ArmResult> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| run_ablation(dataset, AblationVariant::Full, c))
            .collect::<Result<_>>()
    })?;
    Ok(values
        .iter()
        .zip(arms)
        .map(|(v, arm)| {
            let k = arm.probes.len() as f64;
            let mean = |f: fn(&Metrics) -> f64| arm.probes.iter().map(|p| f(&p.metrics)).sum::<f64>() / k;
            SweepRow {
                param: param.to_string(),
                value: v.clone(),
                metrics: Metrics {
                    mae: mean(|m| m.mae),
                    mape: mean(|m| m.mape),
                    rmse: mean(|m| m.rmse),
                },
            }
        })
        .collect())
}

/// Crime-density strata; regions with density 0 belong to none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityBin {
    /// (0, 0.25]
    VerySparse,
    /// (0.25, 0.5]
    Sparse,
    /// (0.5, 1]
    Dense,
}

impl DensityBin {
    pub const ALL: [DensityBin; 3] = [DensityBin::VerySparse, DensityBin::Sparse, DensityBin::Dense];

    pub fn of(density: f64) -> Option<Self> {
        if density <= 0.0 {
            None
        } else if density <= 0.25 {
            Some(DensityBin::VerySparse)
        } else if density <= 0.5 {
            Some(DensityBin::Sparse)
        } else {
            Some(DensityBin::Dense)
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DensityBin::VerySparse => "(0,0.25]",
            DensityBin::Sparse => "(0.25,0.5]",
            DensityBin::Dense => "(0.5,1]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub bin: DensityBin,
    pub task: Task,
    pub n_regions: usize,
    pub metrics: Metrics,
}

/// Bin of every region by crime density.
pub fn density_bins(dataset: &Dataset) -> Result<Vec<Option<DensityBin>>> {
    (0..dataset.n_regions())
        .map(|r| Ok(DensityBin::of(crime_density(dataset, RegionId(r))?)))
        .collect()
}

/// Metrics of existing probe predictions restricted to each populated bin.
pub fn robustness_by_density(dataset: &Dataset, probes: &[TaskProbe]) -> Result<Vec<BinMetrics>> {
    let bins = density_bins(dataset)?;
    let mut out = Vec::new();
    for bin in DensityBin::ALL {
        let members: Vec<usize> = (0..bins.len()).filter(|&r| bins[r] == Some(bin)).collect();
        if members.is_empty() {
            continue;
        }
        for p in probes {
            let pred: Vec<f64> = members.iter().map(|&r| p.pred[r]).collect();
            let truth: Vec<f64> = members.iter().map(|&r| p.truth[r]).collect();
            out.push(BinMetrics {
                bin,
                task: p.task,
                n_regions: members.len(),
                metrics: metrics(&pred, &truth)?,
            });
        }
    }
    Ok(out)
}

/// Cosine similarity of each region pair's embeddings.
pub fn pair_similarity(embeddings: &Tensor, pairs: &[(RegionId, RegionId)]) -> Result<Vec<f64>> {
    let n = embeddings.rows();
    pairs
        .iter()
        .map(|&(a, b)| {
            if a.0 >= n || b.0 >= n {
                return Err(Error::Contract(format!("region pair ({}, {}) outside {n} regions", a.0, b.0)));
            }
            Ok(cosine(embeddings.row(a.0), embeddings.row(b.0)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub task: String,
    pub seed: u64,
    pub metrics: Metrics,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["variant", "task", "seed", "mae", "mape", "rmse"]).map_err(fmt)?;
    for r in rows {
        let m = r.metrics;
        wr.write_record([
            r.variant.clone(),
            r.task.clone(),
            r.seed.to_string(),
            m.mae.to_string(),
            m.mape.to_string(),
            m.rmse.to_string(),
        ])
        .map_err(fmt)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_bins_csv<W: Write>(rows: &[BinMetrics], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["bin", "task", "mae", "mape", "rmse"]).map_err(fmt)?;
    for r in rows {
        let m = r.metrics;
        wr.write_record([
            r.bin.label().to_string(),
            r.task.name().to_string(),
            m.mae.to_string(),
            m.mape.to_string(),
            m.rmse.to_string(),
        ])
        .map_err(fmt)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_similarity_csv<W: Write>(pairs: &[(RegionId, RegionId)], cos: &[f64], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["region_a", "region_b", "cosine"]).map_err(fmt)?;
    for (&(a, b), c) in pairs.iter().zip(cos) {
        wr.write_record([a.0.to_string(), b.0.to_string(), c.to_string()]).map_err(fmt)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let fmt = |e: csv::Error| Error::Format(e.to_string());
    wr.write_record(["param", "value", "mae", "mape", "rmse"]).map_err(fmt)?;
    for r in rows {
        let m = r.metrics;
        wr.write_record([
            r.param.clone(),
            r.value.clone(),
            m.mae.to_string(),
            m.mape.to_string(),
            m.rmse.to_string(),
        ])
        .map_err(fmt)?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}
