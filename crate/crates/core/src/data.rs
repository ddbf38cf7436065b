//! Raw region data: POI counts, trajectory records, centroid distances and
//! optional downstream targets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Mean Earth radius used for haversine distances.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const POI_FILE: &str = "poi.csv";
pub const TRAJ_FILE: &str = "trajectories.csv";
pub const CENTROID_FILE: &str = "centroids.csv";
pub const TARGETS_FILE: &str = "targets.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeSlotId(pub usize);

/// `I x C` matrix of POI counts per region and category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiMatrix {
    counts: Vec<u64>,
    n_regions: usize,
    category_names: Vec<String>,
}

impl PoiMatrix {
    pub fn new(counts: Vec<Vec<u64>>, category_names: Vec<String>) -> Result<Self> {
        let c = category_names.len();
        if c == 0 {
            return Err(Error::Validation("POI matrix needs at least one category".into()));
        }
        let mut flat = Vec::with_capacity(counts.len() * c);
        for (i, row) in counts.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Validation(format!(
                    "POI row {i} has {} counts but there are {c} categories",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Ok(PoiMatrix {
            counts: flat,
            n_regions: counts.len(),
            category_names,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_categories(&self) -> usize {
        self.category_names.len()
    }

    pub fn category_names(&self) -> &[String] {
        &self.category_names
    }

    pub fn row(&self, region: usize) -> &[u64] {
        let c = self.n_categories();
        &self.counts[region * c..(region + 1) * c]
    }

    pub fn get(&self, region: usize, category: usize) -> u64 {
        self.row(region)[category]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// One trip `(r_s, r_d, t_s, t_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub source: RegionId,
    pub dest: RegionId,
    pub t_start: TimeSlotId,
    pub t_end: TimeSlotId,
}

/// Pairwise great-circle distances between region centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    km: Vec<f64>,
    centroids: Vec<(f64, f64)>,
}

impl DistanceMatrix {
    /// Haversine distances; each pair is computed once and mirrored so the
    /// matrix is exactly symmetric.
    pub fn from_centroids(centroids: Vec<(f64, f64)>) -> Self {
        let n = centroids.len();
        let mut km = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = haversine_km(centroids[i], centroids[j]);
                km[i * n + j] = d;
                km[j * n + i] = d;
            }
        }
        DistanceMatrix { km, centroids }
    }

    pub fn n_regions(&self) -> usize {
        self.centroids.len()
    }

    pub fn km(&self, i: usize, j: usize) -> f64 {
        self.km[i * self.n_regions() + j]
    }

    pub fn centroids(&self) -> &[(f64, f64)] {
        &self.centroids
    }
}

/// Great-circle distance between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Crime,
    Traffic,
    HousePrice,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Crime, Task::Traffic, Task::HousePrice];

    pub fn name(self) -> &'static str {
        match self {
            Task::Crime => "crime",
            Task::Traffic => "traffic",
            Task::HousePrice => "house_price",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }

    pub fn is_static(self) -> bool {
        matches!(self, Task::HousePrice)
    }
}

/// Downstream labels. Per-slot tasks are `I x T`, row-major.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub crime: Option<Vec<f64>>,
    pub traffic: Option<Vec<f64>>,
    pub house_price: Option<Vec<f64>>,
}

impl Targets {
    pub fn get(&self, task: Task) -> Option<&Vec<f64>> {
        match task {
            Task::Crime => self.crime.as_ref(),
            Task::Traffic => self.traffic.as_ref(),
            Task::HousePrice => self.house_price.as_ref(),
        }
    }

    fn slot_mut(&mut self, task: Task) -> &mut Option<Vec<f64>> {
        match task {
            Task::Crime => &mut self.crime,
            Task::Traffic => &mut self.traffic,
            Task::HousePrice => &mut self.house_price,
        }
    }

    pub fn tasks(&self) -> Vec<Task> {
        Task::ALL.into_iter().filter(|&t| self.get(t).is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub poi: PoiMatrix,
    pub trajectories: Vec<TrajectoryRecord>,
    pub dist: DistanceMatrix,
    pub n_slots: usize,
    pub targets: Targets,
}

impl Dataset {
    pub fn n_regions(&self) -> usize {
        self.poi.n_regions()
    }

    pub fn validate(&self) -> Result<()> {
        let i = self.n_regions();
        if i == 0 {
            return Err(Error::Validation("dataset has no regions".into()));
        }
        if self.n_slots == 0 {
            return Err(Error::Validation("dataset needs at least one time slot".into()));
        }
        if self.dist.n_regions() != i {
            return Err(Error::Validation(format!(
                "dimension mismatch: POI matrix has {i} regions, centroids have {}",
                self.dist.n_regions()
            )));
        }
        for (k, t) in self.trajectories.iter().enumerate() {
            check_trajectory(t, i, self.n_slots).map_err(|m| Error::Validation(format!("trajectory {k}: {m}")))?;
        }
        for task in Task::ALL {
            if let Some(v) = self.targets.get(task) {
                let want = if task.is_static() { i } else { i * self.n_slots };
                if v.len() != want {
                    return Err(Error::Validation(format!(
                        "dimension mismatch: {} targets have {} values, expected {want} ({i} regions x {} slots)",
                        task.name(),
                        v.len(),
                        if task.is_static() { 1 } else { self.n_slots }
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!("{} targets contain NaN or infinity", task.name())));
                }
            }
        }
        Ok(())
    }

    /// Per-region scalar label used by the probes; per-slot tasks are
    /// averaged over slots.
    pub fn region_targets(&self, task: Task) -> Result<Vec<f64>> {
        let v = self
            .targets
            .get(task)
            .ok_or_else(|| Error::UnsupportedTask(format!("dataset has no {} targets", task.name())))?;
        if task.is_static() {
            return Ok(v.clone());
        }
        let t = self.n_slots;
        Ok(v.chunks(t).map(|c| c.iter().sum::<f64>() / t as f64).collect())
    }

    /// Writes the four CSV files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };

        let mut s = String::from("region");
        for k in 0..self.poi.n_categories() {
            s.push_str(&format!(",cat_{k}"));
        }
        s.push('\n');
        for r in 0..self.n_regions() {
            s.push_str(&r.to_string());
            for c in self.poi.row(r) {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        write(POI_FILE, s)?;

        let mut s = String::from("src,dst,t_start,t_end\n");
        for t in &self.trajectories {
            s.push_str(&format!("{},{},{},{}\n", t.source.0, t.dest.0, t.t_start.0, t.t_end.0));
        }
        write(TRAJ_FILE, s)?;

        let mut s = String::from("region,lat,lon\n");
        for (r, (lat, lon)) in self.dist.centroids().iter().enumerate() {
            s.push_str(&format!("{r},{lat},{lon}\n"));
        }
        write(CENTROID_FILE, s)?;

        let mut s = String::from("region,task,slot,value\n");
        for task in self.targets.tasks() {
            let v = self.targets.get(task).expect("listed task");
            if task.is_static() {
                for (r, x) in v.iter().enumerate() {
                    s.push_str(&format!("{r},{},-1,{x}\n", task.name()));
                }
            } else {
                for (k, x) in v.iter().enumerate() {
                    let (r, t) = (k / self.n_slots, k % self.n_slots);
                    s.push_str(&format!("{r},{},{t},{x}\n", task.name()));
                }
            }
        }
        write(TARGETS_FILE, s)
    }

    /// Loads a directory written by [`Dataset::save_dir`]; the targets file
    /// is optional.
    pub fn load_dir(dir: &Path) -> Result<Dataset> {
        let targets = dir.join(TARGETS_FILE);
        load_dataset(
            &dir.join(POI_FILE),
            &dir.join(TRAJ_FILE),
            &dir.join(CENTROID_FILE),
            targets.exists().then_some(targets.as_path()),
        )
    }
}

fn check_trajectory(t: &TrajectoryRecord, n_regions: usize, n_slots: usize) -> std::result::Result<(), String> {
    if t.source.0 >= n_regions || t.dest.0 >= n_regions {
        return Err(format!(
            "region index out of range: ({}, {}) with {n_regions} regions",
            t.source.0, t.dest.0
        ));
    }
    if t.t_start > t.t_end {
        return Err(format!("t_start {} after t_end {}", t.t_start.0, t.t_end.0));
    }
    if t.t_end.0 >= n_slots {
        return Err(format!("time slot {} out of range for {n_slots} slots", t.t_end.0));
    }
    Ok(())
}

struct CsvRows {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_csv(path: &Path, expected: Option<&[&str]>) -> Result<CsvRows> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if let Some(exp) = expected {
        if header != exp {
            return Err(parse_err(1, format!("expected header `{}`, found `{}`", exp.join(","), header.join(","))));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(CsvRows {
        path: path.to_path_buf(),
        header,
        rows,
    })
}

impl CsvRows {
    fn field<T: std::str::FromStr>(&self, line: u64, row: &[String], k: usize) -> Result<T> {
        let name = &self.header[k];
        row[k].parse().map_err(|_| Error::Parse {
            path: self.path.clone(),
            line,
            msg: format!("cannot parse {name} value `{}`", row[k]),
        })
    }
}

/// Reads and validates the CSV inputs. The number of time slots is one more
/// than the largest slot referenced by any trajectory or target.
pub fn load_dataset(
    poi_path: &Path,
    traj_path: &Path,
    centroid_path: &Path,
    targets_path: Option<&Path>,
) -> Result<Dataset> {
    load_dataset_with_slots(poi_path, traj_path, centroid_path, targets_path, None)
}

/// As [`load_dataset`], with an explicit slot count that must cover every
/// slot in the files.
pub fn load_dataset_with_slots(
    poi_path: &Path,
    traj_path: &Path,
    centroid_path: &Path,
    targets_path: Option<&Path>,
    n_slots: Option<usize>,
) -> Result<Dataset> {
    let poi_rows = read_csv(poi_path, None)?;
    if poi_rows.header.first().map(String::as_str) != Some("region") || poi_rows.header.len() < 2 {
        return Err(Error::Parse {
            path: poi_path.to_path_buf(),
            line: 1,
            msg: "expected header `region,cat_0,...`".into(),
        });
    }
    let n_cat = poi_rows.header.len() - 1;
    let mut counts: Vec<Option<Vec<u64>>> = vec![None; poi_rows.rows.len()];
    for (line, row) in &poi_rows.rows {
        let r: usize = poi_rows.field(*line, row, 0)?;
        if r >= counts.len() {
            return Err(Error::Parse {
                path: poi_path.to_path_buf(),
                line: *line,
                msg: format!("region index out of range: {r} with {} rows", counts.len()),
            });
        }
        let vals = (1..=n_cat).map(|k| poi_rows.field(*line, row, k)).collect::<Result<Vec<u64>>>()?;
        counts[r] = Some(vals);
    }
    let counts = counts
        .into_iter()
        .enumerate()
        .map(|(r, c)| c.ok_or_else(|| Error::Validation(format!("POI row for region {r} missing"))))
        .collect::<Result<Vec<_>>>()?;
    let poi = PoiMatrix::new(counts, poi_rows.header[1..].to_vec())?;
    let n_regions = poi.n_regions();

    let cent_rows = read_csv(centroid_path, Some(&["region", "lat", "lon"]))?;
    let mut centroids: Vec<Option<(f64, f64)>> = vec![None; cent_rows.rows.len()];
    for (line, row) in &cent_rows.rows {
        let r: usize = cent_rows.field(*line, row, 0)?;
        let lat: f64 = cent_rows.field(*line, row, 1)?;
        let lon: f64 = cent_rows.field(*line, row, 2)?;
        if r >= centroids.len() {
            return Err(Error::Parse {
                path: centroid_path.to_path_buf(),
                line: *line,
                msg: format!("region index out of range: {r}"),
            });
        }
        centroids[r] = Some((lat, lon));
    }
    let centroids = centroids
        .into_iter()
        .enumerate()
        .map(|(r, c)| c.ok_or_else(|| Error::Validation(format!("centroid for region {r} missing"))))
        .collect::<Result<Vec<_>>>()?;
    if centroids.len() != n_regions {
        return Err(Error::Validation(format!(
            "dimension mismatch: POI matrix has {n_regions} regions, centroids have {}",
            centroids.len()
        )));
    }

    let traj_rows = read_csv(traj_path, Some(&["src", "dst", "t_start", "t_end"]))?;
    let mut trajectories = Vec::with_capacity(traj_rows.rows.len());
    let mut max_slot = 0usize;
    for (line, row) in &traj_rows.rows {
        let rec = TrajectoryRecord {
            source: RegionId(traj_rows.field(*line, row, 0)?),
            dest: RegionId(traj_rows.field(*line, row, 1)?),
            t_start: TimeSlotId(traj_rows.field(*line, row, 2)?),
            t_end: TimeSlotId(traj_rows.field(*line, row, 3)?),
        };
        check_trajectory(&rec, n_regions, usize::MAX).map_err(|msg| Error::Parse {
            path: traj_path.to_path_buf(),
            line: *line,
            msg,
        })?;
        max_slot = max_slot.max(rec.t_end.0);
        trajectories.push(rec);
    }

    let mut raw_targets: Vec<(u64, usize, Task, i64, f64)> = Vec::new();
    if let Some(tp) = targets_path {
        let rows = read_csv(tp, Some(&["region", "task", "slot", "value"]))?;
        for (line, row) in &rows.rows {
            let r: usize = rows.field(*line, row, 0)?;
            let task = Task::parse(&row[1]).ok_or_else(|| Error::Parse {
                path: tp.to_path_buf(),
                line: *line,
                msg: format!("unknown task `{}`", row[1]),
            })?;
            let slot: i64 = rows.field(*line, row, 2)?;
            let value: f64 = rows.field(*line, row, 3)?;
            if r >= n_regions {
                return Err(Error::Parse {
                    path: tp.to_path_buf(),
                    line: *line,
                    msg: format!("region index out of range: {r} with {n_regions} regions"),
                });
            }
            if task.is_static() != (slot == -1) || slot < -1 {
                return Err(Error::Parse {
                    path: tp.to_path_buf(),
                    line: *line,
                    msg: format!("invalid slot {slot} for task {}", task.name()),
                });
            }
            if slot >= 0 {
                max_slot = max_slot.max(slot as usize);
            }
            raw_targets.push((*line, r, task, slot, value));
        }
    }
    let n_slots = match n_slots {
        Some(t) if t <= max_slot => {
            return Err(Error::Validation(format!(
                "time slot {max_slot} out of range for {t} slots"
            )))
        }
        Some(t) => t,
        None => max_slot + 1,
    };

    let mut targets = Targets::default();
    let mut filled: Vec<(Task, Vec<bool>)> = Vec::new();
    for (line, r, task, slot, value) in raw_targets {
        let len = if task.is_static() { n_regions } else { n_regions * n_slots };
        let vec = targets.slot_mut(task).get_or_insert_with(|| vec![f64::NAN; len]);
        let k = if task.is_static() { r } else { r * n_slots + slot as usize };
        vec[k] = value;
        let pos = match filled.iter().position(|(t, _)| *t == task) {
            Some(p) => p,
            None => {
                filled.push((task, vec![false; len]));
                filled.len() - 1
            }
        };
        if std::mem::replace(&mut filled[pos].1[k], true) {
            return Err(Error::Parse {
                path: targets_path.expect("targets were read").to_path_buf(),
                line,
                msg: format!("duplicate {} target for region {r} slot {slot}", task.name()),
            });
        }
    }
    for (task, f) in &filled {
        if let Some(k) = f.iter().position(|x| !x) {
            return Err(Error::Validation(format!(
                "{} targets incomplete: no value for entry {k}",
                task.name()
            )));
        }
    }

    let ds = Dataset {
        poi,
        trajectories,
        dist: DistanceMatrix::from_centroids(centroids),
        n_slots,
        targets,
    };
    ds.validate()?;
    Ok(ds)
}

/// Parameters for [`synth_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_regions: usize,
    pub n_categories: usize,
    pub n_slots: usize,
    pub n_trips: usize,
    pub noise_rate: f64,
    pub skew_exponent: f64,
    pub n_clusters: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_regions: 60,
            n_categories: 12,
            n_slots: 4,
            n_trips: 3000,
            noise_rate: 0.1,
            skew_exponent: 1.0,
            n_clusters: 3,
            seed: 0,
        }
    }
}

/// Grid spacing between neighbouring synthetic region centroids.
const SYNTH_SPACING_KM: f64 = 1.0;
/// Share of non-noise trips that stay inside the source's cluster.
const SYNTH_INTRA_CLUSTER: f64 = 0.9;
/// Share of each cluster's POI profile that is common to all clusters.
const SYNTH_SHARED_POI: f64 = 0.6;

/// Synthetic city with latent clusters.
///
/// Regions sit on a jittered grid and clusters are contiguous column bands.
/// POI counts are Poisson draws from a cluster profile mixed with a shared
/// profile. Trip sources and destinations follow power-law region rates
/// (`rate ∝ rank^-skew`), destinations mostly within the source's cluster,
/// and a `noise_rate` share of trips is rewired uniformly. Targets are a
/// linear function of the cluster plus Gaussian noise.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_clusters == 0 || cfg.n_regions < cfg.n_clusters {
        return Err(Error::Config(format!(
            "need regions ({}) >= clusters ({}) >= 1",
            cfg.n_regions, cfg.n_clusters
        )));
    }
    if cfg.n_categories == 0 || cfg.n_slots == 0 {
        return Err(Error::Config("categories and slots must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return Err(Error::Config(format!("noise_rate {} outside [0, 1]", cfg.noise_rate)));
    }
    if !(cfg.skew_exponent >= 0.0 && cfg.skew_exponent.is_finite()) {
        return Err(Error::Config(format!("skew_exponent {} must be >= 0", cfg.skew_exponent)));
    }

    let mut rng = rng::stream(cfg.seed, Stream::Synth);
    let n = cfg.n_regions;
    let k = cfg.n_clusters;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Layout and clusters.
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let (lat0, lon0) = (40.75f64, -73.98f64);
    let deg_lat = SYNTH_SPACING_KM / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
    let deg_lon = deg_lat / lat0.to_radians().cos();
    let mut centroids = Vec::with_capacity(n);
    let mut cluster = Vec::with_capacity(n);
    for r in 0..n {
        let (row, col) = (r / grid_cols, r % grid_cols);
        let jy: f64 = rng.random_range(-0.2..0.2);
        let jx: f64 = rng.random_range(-0.2..0.2);
        centroids.push((lat0 + (row as f64 + jy) * deg_lat, lon0 + (col as f64 + jx) * deg_lon));
        cluster.push((col * k / grid_cols).min(k - 1));
    }
    // Column bands can leave a cluster empty when the grid is narrow.
    for c in 0..k {
        if !cluster.contains(&c) {
            cluster[c] = c;
        }
    }

    // POIs.
    let c_n = cfg.n_categories;
    let shared: Vec<f64> = (0..c_n).map(|_| (0.5 * std_normal.sample(&mut rng) as f64).exp()).collect();
    let shared_sum: f64 = shared.iter().sum();
    let profiles: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let w: Vec<f64> = (0..c_n).map(|_| (1.5 * std_normal.sample(&mut rng) as f64).exp()).collect();
            let s: f64 = w.iter().sum();
            w.iter()
                .zip(&shared)
                .map(|(a, b)| (1.0 - SYNTH_SHARED_POI) * a / s + SYNTH_SHARED_POI * b / shared_sum)
                .collect()
        })
        .collect();
    let poi_mass = 3.0 * c_n as f64;
    let mut counts = Vec::with_capacity(n);
    for &cl in &cluster {
        let row = profiles[cl]
            .iter()
            .map(|&p| {
                let lam = poi_mass * p;
                if lam <= 0.0 {
                    0
                } else {
                    Poisson::new(lam).expect("positive rate").sample(&mut rng) as u64
                }
            })
            .collect();
        counts.push(row);
    }
    let names = (0..c_n).map(|c| format!("cat_{c}")).collect();
    let poi = PoiMatrix::new(counts, names)?;

    // Trips.
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(&mut rng);
    let rate: Vec<f64> = ranks.iter().map(|&r| (r as f64).powf(-cfg.skew_exponent)).collect();
    let members: Vec<Vec<usize>> = (0..k).map(|c| (0..n).filter(|&r| cluster[r] == c).collect()).collect();
    let draw = |rng: &mut rng::StdRng, pool: &[usize]| -> usize {
        let total: f64 = pool.iter().map(|&r| rate[r]).sum();
        let mut u = rng.random::<f64>() * total;
        for &r in pool {
            u -= rate[r];
            if u < 0.0 {
                return r;
            }
        }
        *pool.last().expect("non-empty pool")
    };
    let all: Vec<usize> = (0..n).collect();
    let mut trajectories = Vec::with_capacity(cfg.n_trips);
    for _ in 0..cfg.n_trips {
        let src = draw(&mut rng, &all);
        let dst = if rng.random::<f64>() < SYNTH_INTRA_CLUSTER {
            draw(&mut rng, &members[cluster[src]])
        } else {
            draw(&mut rng, &all)
        };
        let t0 = rng.random_range(0..cfg.n_slots);
        let t1 = (t0 + rng.random_range(0..2usize)).min(cfg.n_slots - 1);
        trajectories.push((src, dst, t0, t1));
    }
    let n_noisy = (cfg.noise_rate * cfg.n_trips as f64).round() as usize;
    let mut idx: Vec<usize> = (0..cfg.n_trips).collect();
    idx.shuffle(&mut rng);
    for &t in idx.iter().take(n_noisy) {
        trajectories[t].0 = rng.random_range(0..n);
        trajectories[t].1 = rng.random_range(0..n);
    }
    let trajectories = trajectories
        .into_iter()
        .map(|(s, d, t0, t1)| TrajectoryRecord {
            source: RegionId(s),
            dest: RegionId(d),
            t_start: TimeSlotId(t0),
            t_end: TimeSlotId(t1),
        })
        .collect();

    // Targets: evenly spaced cluster levels, shuffled per task.
    let levels = |rng: &mut rng::StdRng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..k)
            .map(|c| if k == 1 { 0.5 } else { c as f64 / (k - 1) as f64 })
            .collect();
        v.shuffle(rng);
        v
    };
    let crime_lv = levels(&mut rng);
    let traffic_lv = levels(&mut rng);
    let house_lv = levels(&mut rng);
    let t_n = cfg.n_slots;
    let mut crime = Vec::with_capacity(n * t_n);
    let mut traffic = Vec::with_capacity(n * t_n);
    let mut house = Vec::with_capacity(n);
    for &cl in &cluster {
        let region_shift = 0.5 * std_normal.sample(&mut rng);
        for _ in 0..t_n {
            let mu = 2.5 * crime_lv[cl] - 0.8 + region_shift;
            let z: f64 = std_normal.sample(&mut rng);
            crime.push((mu + z).round().max(0.0));
            let z: f64 = std_normal.sample(&mut rng);
            traffic.push((3.0 + 4.0 * traffic_lv[cl] + z).max(0.0));
        }
        let z: f64 = std_normal.sample(&mut rng);
        house.push(5.0 + 10.0 * house_lv[cl] + z);
    }

    let ds = Dataset {
        poi,
        trajectories,
        dist: DistanceMatrix::from_centroids(centroids),
        n_slots: t_n,
        targets: Targets {
            crime: Some(crime),
            traffic: Some(traffic),
            house_price: Some(house),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Latent cluster of each synthetic region; recomputes the layout rule of
/// [`synth_dataset`].
pub fn synth_clusters(cfg: &SynthConfig) -> Vec<usize> {
    let n = cfg.n_regions;
    let k = cfg.n_clusters.max(1);
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let mut cluster: Vec<usize> = (0..n).map(|r| ((r % grid_cols) * k / grid_cols).min(k - 1)).collect();
    for c in 0..k.min(n) {
        if !cluster.contains(&c) {
            cluster[c] = c;
        }
    }
    cluster
}

/// Fraction of time slots with a non-zero crime count for `region`.
pub fn crime_density(dataset: &Dataset, region: RegionId) -> Result<f64> {
    let crime = dataset
        .targets
        .crime
        .as_ref()
        .ok_or_else(|| Error::UnsupportedTask("dataset has no crime targets".into()))?;
    if region.0 >= dataset.n_regions() {
        return Err(Error::Contract(format!("region index out of range: {}", region.0)));
    }
    let t = dataset.n_slots;
    let seq = &crime[region.0 * t..(region.0 + 1) * t];
    Ok(seq.iter().filter(|&&v| v != 0.0).count() as f64 / t as f64)
}
