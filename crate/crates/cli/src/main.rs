use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use stgcl::checks::gradient_suite;
use stgcl::config::RunConfig;
use stgcl::data::{load_dataset_with_slots, synth_dataset, Dataset, RegionId};
use stgcl::eval::{
    ablation_study, evaluate, pair_similarity, robustness_by_density, sweep, write_bins_csv, write_metrics_csv,
    write_similarity_csv, write_sweep_csv, AblationVariant, MetricsRow,
};
use stgcl::trainer::{
    export_embeddings, load_checkpoint, load_embeddings, prepare, save_checkpoint, write_loss_csv, Trainer,
};
use stgcl::Tensor;

/// Largest tolerated relative gradient error.
const GRADCHECK_TOL: f64 = 1e-4;

const EMBEDDINGS_FILE: &str = "embeddings.bin";
const CHECKPOINT_FILE: &str = "checkpoint.json";
const CONFIG_FILE: &str = "config.txt";
const DATA_REF_FILE: &str = "data.txt";

#[derive(Parser)]
#[command(name = "stgcl", version, about = "Contrastive region representation learning on heterogeneous region graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` config file; unspecified keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for multi-arm commands.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Config override `key=value`; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered city.
    Synth,
    /// Validate raw CSVs and store them as a dataset directory.
    Ingest {
        #[arg(long)]
        poi: PathBuf,
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        #[arg(long)]
        targets: Option<PathBuf>,
        /// Number of time slots; inferred from the files when omitted.
        #[arg(long)]
        slots: Option<usize>,
    },
    /// Build the fused region graph and write it as JSON lines.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model variant.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "FULL")]
        variant: String,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Export trained region embeddings as CSV.
    Embed {
        #[arg(long)]
        model: PathBuf,
    },
    /// Probe trained embeddings on every available task.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory; defaults to the one the model was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and probe several variants over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "FULL,NO_GP,NO_GD,NO_INFOMIN,RANDOM_AUG")]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Probe metrics per crime-density bin.
    Robustness {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Cosine similarity of chosen region pairs.
    Case {
        #[arg(long)]
        model: PathBuf,
        /// Pairs as `a:b`, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        pairs: Vec<String>,
    },
    /// Compare analytic and finite-difference gradients of every stage.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Train and probe once per value of one config key.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let summary: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error: {}", summary.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` is not of the form key=value"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out).with_context(|| format!("cannot create {}", c.out.display()))?;
    Ok(&c.out)
}

fn parse_variant(s: &str) -> Result<AblationVariant> {
    AblationVariant::parse(s).with_context(|| {
        let known: Vec<_> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant `{s}` (expected one of {})", known.join(", "))
    })
}

/// Dataset named by `--data`, or the one recorded in the model directory.
fn model_dataset(model: &Path, data: Option<&Path>) -> Result<Dataset> {
    let dir = match data {
        Some(d) => d.to_path_buf(),
        None => {
            let p = model.join(DATA_REF_FILE);
            let text = fs::read_to_string(&p).with_context(|| format!("cannot read {}; pass --data", p.display()))?;
            PathBuf::from(text.trim())
        }
    };
    Ok(Dataset::load_dir(&dir)?)
}

fn model_embeddings(model: &Path) -> Result<Tensor> {
    Ok(load_embeddings(&model.join(EMBEDDINGS_FILE))?.1)
}

/// Config the model was trained with, so probes reuse its seed and settings.
fn model_config(model: &Path, fallback: RunConfig) -> Result<RunConfig> {
    let p = model.join(CONFIG_FILE);
    if p.exists() {
        Ok(RunConfig::load(&p)?)
    } else {
        Ok(fallback)
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let cfg = load_config(c)?;
    match &cli.command {
        Command::Synth => {
            let ds = synth_dataset(&cfg.synth_config())?;
            ds.save_dir(out_dir(c)?)?;
        }
        Command::Ingest {
            poi,
            trajectories,
            centroids,
            targets,
            slots,
        } => {
            let ds = load_dataset_with_slots(poi, trajectories, centroids, targets.as_deref(), *slots)?;
            ds.save_dir(out_dir(c)?)?;
        }
        Command::BuildGraph { data } => {
            let ds = Dataset::load_dir(data)?;
            let prepared = prepare(&ds, &cfg)?;
            let path = out_dir(c)?.join("graph.jsonl");
            let mut w = create(&path)?;
            prepared
                .graph
                .write_jsonl(&mut w)
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        Command::Train { data, variant, resume } => {
            let variant = parse_variant(variant)?;
            let ds = Dataset::load_dir(data)?;
            let out = out_dir(c)?;
            let prepared = prepare(&ds, &cfg)?;
            let mut trainer = match resume {
                Some(p) => {
                    let ck = load_checkpoint(p)?;
                    if ck.options != variant.options() {
                        bail!("checkpoint {} was trained with different variant options", p.display());
                    }
                    Trainer::from_checkpoint(prepared, ck)?
                }
                None => Trainer::new(prepared, &cfg, variant.options())?,
            };
            trainer.run(Some(out))?;
            let model = trainer.finish()?;
            write_loss_csv(&model.history, create(&out.join("loss.csv"))?)?;
            export_embeddings(&model.embeddings, model.config_hash, &out.join(EMBEDDINGS_FILE))?;
            save_checkpoint(&model.checkpoint, &out.join(CHECKPOINT_FILE))?;
            let trained_cfg = &model.checkpoint.config;
            fs::write(out.join(CONFIG_FILE), trained_cfg.to_text()).context("cannot write config.txt")?;
            let data_abs = fs::canonicalize(data).unwrap_or_else(|_| data.clone());
            fs::write(out.join(DATA_REF_FILE), format!("{}\n", data_abs.display())).context("cannot write data.txt")?;
        }
        Command::Embed { model } => {
            let e = model_embeddings(model)?;
            let path = out_dir(c)?.join("embeddings.csv");
            let mut wr = csv::Writer::from_writer(create(&path)?);
            let mut header = vec!["region".to_string()];
            header.extend((0..e.cols()).map(|k| format!("e{k}")));
            wr.write_record(&header)?;
            for r in 0..e.rows() {
                let mut rec = vec![r.to_string()];
                rec.extend(e.row(r).iter().map(f64::to_string));
                wr.write_record(&rec)?;
            }
            wr.flush()?;
        }
        Command::Eval { model, data } => {
            let ds = model_dataset(model, data.as_deref())?;
            let mcfg = model_config(model, cfg.clone())?;
            let probes = evaluate(&model_embeddings(model)?, &ds, &mcfg)?;
            let rows: Vec<MetricsRow> = probes
                .iter()
                .map(|p| MetricsRow {
                    variant: "model".into(),
                    task: p.task.name().into(),
                    seed: mcfg.seed,
                    metrics: p.metrics,
                })
                .collect();
            write_metrics_csv(&rows, create(&out_dir(c)?.join("metrics.csv"))?)?;
        }
        Command::Ablate { data, variants, seeds } => {
            let variants = variants.iter().map(|v| parse_variant(v)).collect::<Result<Vec<_>>>()?;
            let ds = Dataset::load_dir(data)?;
            let arms = ablation_study(&ds, &variants, seeds, &cfg, c.jobs)?;
            let rows: Vec<MetricsRow> = arms.iter().flat_map(|a| a.rows()).collect();
            write_metrics_csv(&rows, create(&out_dir(c)?.join("metrics.csv"))?)?;
        }
        Command::Robustness { model, data } => {
            let ds = model_dataset(model, data.as_deref())?;
            let mcfg = model_config(model, cfg.clone())?;
            let probes = evaluate(&model_embeddings(model)?, &ds, &mcfg)?;
            let bins = robustness_by_density(&ds, &probes)?;
            write_bins_csv(&bins, create(&out_dir(c)?.join("bins.csv"))?)?;
        }
        Command::Case { model, pairs } => {
            let pairs = pairs
                .iter()
                .map(|p| {
                    let (a, b) = p.split_once(':').with_context(|| format!("pair `{p}` is not of the form a:b"))?;
                    let a: usize = a.trim().parse().with_context(|| format!("bad region in pair `{p}`"))?;
                    let b: usize = b.trim().parse().with_context(|| format!("bad region in pair `{p}`"))?;
                    Ok((RegionId(a), RegionId(b)))
                })
                .collect::<Result<Vec<_>>>()?;
            let cos = pair_similarity(&model_embeddings(model)?, &pairs)?;
            write_similarity_csv(&pairs, &cos, create(&out_dir(c)?.join("similarity.csv"))?)?;
        }
        Command::Gradcheck { points } => {
            let reports = gradient_suite(*points, cfg.seed)?;
            let mut failed = Vec::new();
            for r in &reports {
                let ok = r.max_rel_error < GRADCHECK_TOL;
                println!(
                    "{:<16} points={} max_rel_error={:.3e} {}",
                    r.module,
                    r.points,
                    r.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
                if !ok {
                    failed.push(r.module);
                }
            }
            if !failed.is_empty() {
                bail!("gradient check failed for {}", failed.join(", "));
            }
        }
        Command::Sweep { data, param, values } => {
            let ds = Dataset::load_dir(data)?;
            let rows = sweep(&ds, &cfg, param, values, c.jobs)?;
            write_sweep_csv(&rows, create(&out_dir(c)?.join("sweep.csv"))?)?;
        }
    }
    Ok(())
}
