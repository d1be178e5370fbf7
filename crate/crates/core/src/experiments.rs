//! Experiment drivers shared by the `mfmc-lab` binary and the test suites.
//!
//! Every driver takes a fully resolved config, writes its CSVs and a single
//! `manifest.json` into an output directory, and returns its rows.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{
    default_rho_grid, gaussian_dtc3, gaussian_mi_multidim, gaussian_pair_third_mi3, sandwich_bounds,
};
use crate::data::{
    csv_writer, sample_data_a, sample_data_b, sample_equicorrelated, sample_gaussian_pairs,
    sample_latent_class_trimodal, write_matrix_csv, LatentClassConfig,
};
use crate::error::{Error, Result};
use crate::gram::{columns, dtc_with_bounds, Bandwidth, KernelConfig, RenyiOrder};
use crate::objectives::tsd_log;
use crate::training::mfmc::probe_encoders;
use crate::training::{train_bimodal_estimator, train_mfmc, EstimatorKind, ObjectiveKind, RunManifest, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Independent child seed for `(base, tag)`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(tag);
    rng.next_u64()
}

/// Median of the finite values; `NaN` when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// The single JSON document each subcommand writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub software_version: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<RunManifest>,
    pub wall_ms: f64,
}

impl ExperimentManifest {
    fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            runs: Vec::new(),
            wall_ms: 0.0,
        })
    }

    fn finish(mut self, dir: &Path, start: Instant) -> Result<()> {
        self.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

fn create_csv(dir: &Path, name: &str, manifest: &mut ExperimentManifest) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    manifest.outputs.push(name.to_string());
    Ok(csv_writer(BufWriter::new(File::create(path)?)))
}

fn fmt_bool(b: bool) -> String {
    b.to_string()
}

// ---------------------------------------------------------------------------
// bounds-gaussian

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsGaussianConfig {
    pub rho_grid: Vec<f64>,
}

impl Default for BoundsGaussianConfig {
    fn default() -> Self {
        Self { rho_grid: default_rho_grid() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsGaussianRow {
    pub rho: f64,
    pub dtc: f64,
    pub lower: f64,
    pub upper: f64,
    pub mi_pair_third: f64,
}

/// Closed-form DTC and sandwich bounds of the 3-variable equicorrelated Gaussian, in nats.
pub fn bounds_gaussian(grid: &[f64]) -> Result<Vec<BoundsGaussianRow>> {
    if grid.is_empty() {
        return Err(Error::Config("rho grid is empty".into()));
    }
    grid.iter()
        .map(|&rho| {
            let dtc = gaussian_dtc3(rho)?;
            let t = gaussian_pair_third_mi3(rho)?;
            let b = sandwich_bounds(&[t, t, t])?;
            Ok(BoundsGaussianRow { rho, dtc, lower: b.lower, upper: b.upper, mi_pair_third: t })
        })
        .collect()
}

pub fn run_bounds_gaussian(cfg: &BoundsGaussianConfig, out_dir: &Path) -> Result<Vec<BoundsGaussianRow>> {
    let start = Instant::now();
    let rows = bounds_gaussian(&cfg.rho_grid)?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("bounds-gaussian", cfg)?;
    let mut w = create_csv(out_dir, "bounds_gaussian.csv", &mut manifest)?;
    w.write_record(["rho", "dtc", "lower", "upper", "mi_pair_third"])?;
    for r in &rows {
        w.write_record([r.rho, r.dtc, r.lower, r.upper, r.mi_pair_third].map(|v| v.to_string()))?;
    }
    w.flush()?;
    manifest.summary = serde_json::json!({
        "rows": rows.len(),
        "all_bounds_hold": rows.iter().all(|r| r.lower <= r.dtc && r.dtc <= r.upper),
        "units": "nats",
    });
    manifest.finish(out_dir, start)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// bounds-synthetic

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    DataA,
    DataB,
}

impl SyntheticFamily {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticFamily::DataA => "data-a",
            SyntheticFamily::DataB => "data-b",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            SyntheticFamily::DataA => "data_a",
            SyntheticFamily::DataB => "data_b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSyntheticConfig {
    pub families: Vec<SyntheticFamily>,
    pub m_grid: Vec<usize>,
    pub n: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub bandwidth: Bandwidth,
}

impl Default for BoundsSyntheticConfig {
    fn default() -> Self {
        Self {
            families: vec![SyntheticFamily::DataA, SyntheticFamily::DataB],
            m_grid: (3..=8).collect(),
            n: 500,
            alpha: 1.01,
            seeds: (0..5).collect(),
            bandwidth: Bandwidth::Median,
        }
    }
}

impl BoundsSyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_grid.is_empty() || self.m_grid.iter().any(|m| !(3..=12).contains(m)) {
            return Err(Error::Config(format!("m grid must be a non-empty subset of 3..=12, got {:?}", self.m_grid)));
        }
        if self.n < 50 {
            return Err(Error::Config(format!("n must be >= 50, got {}", self.n)));
        }
        if self.seeds.is_empty() || self.families.is_empty() {
            return Err(Error::Config("need at least one seed and one family".into()));
        }
        RenyiOrder::new(self.alpha)?;
        if let Bandwidth::Fixed(b) = self.bandwidth {
            KernelConfig::fixed(b)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub family: SyntheticFamily,
    pub m: usize,
    pub seed: u64,
    pub dtc_hat: f64,
    pub lower_hat: f64,
    pub upper_hat: f64,
    pub bound_ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: SyntheticFamily,
    pub cells: usize,
    pub bound_ok: usize,
    pub bound_rate: f64,
    /// `(m, median DTC estimate over seeds)`, in bits.
    pub median_dtc: Vec<(usize, f64)>,
}

impl FamilySummary {
    /// `(max − min) / mean` of the per-m medians.
    pub fn relative_spread(&self) -> f64 {
        let v: Vec<f64> = self.median_dtc.iter().map(|p| p.1).collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (max - min) / mean
    }

    pub fn weakly_decreasing(&self) -> bool {
        self.median_dtc.windows(2).all(|w| w[1].1 <= w[0].1)
    }
}

fn synthetic_cell(family: SyntheticFamily, m: usize, seed: u64, cfg: &BoundsSyntheticConfig) -> SyntheticRow {
    let data_seed = derive_seed(seed, m as u64);
    let result = (|| {
        let sample = match family {
            SyntheticFamily::DataA => sample_data_a(m, cfg.n, data_seed)?,
            SyntheticFamily::DataB => sample_data_b(m, cfg.n, data_seed)?,
        };
        let vars = columns(&sample.values);
        let refs: Vec<_> = vars.iter().collect();
        dtc_with_bounds(&refs, RenyiOrder::new(cfg.alpha)?, &KernelConfig { bandwidth: cfg.bandwidth })
    })();
    match result {
        Ok(est) => SyntheticRow {
            family,
            m,
            seed,
            dtc_hat: est.dtc,
            lower_hat: est.lower,
            upper_hat: est.upper,
            bound_ok: est.bound_ok(),
            error: None,
        },
        Err(e) => SyntheticRow {
            family,
            m,
            seed,
            dtc_hat: f64::NAN,
            lower_hat: f64::NAN,
            upper_hat: f64::NAN,
            bound_ok: false,
            error: Some(e.to_string()),
        },
    }
}

/// Gram-entropy DTC estimates and bounds for each `(family, m, seed)` cell.
/// Estimator failures become `NaN` rows rather than errors.
pub fn bounds_synthetic(cfg: &BoundsSyntheticConfig) -> Result<(Vec<SyntheticRow>, Vec<FamilySummary>)> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &family in &cfg.families {
        for &m in &cfg.m_grid {
            for &seed in &cfg.seeds {
                cells.push((family, m, seed));
            }
        }
    }
    let rows: Vec<SyntheticRow> = cells.par_iter().map(|&(f, m, s)| synthetic_cell(f, m, s, cfg)).collect();
    let summaries = cfg
        .families
        .iter()
        .map(|&family| {
            let fam: Vec<&SyntheticRow> = rows.iter().filter(|r| r.family == family).collect();
            let ok = fam.iter().filter(|r| r.bound_ok).count();
            FamilySummary {
                family,
                cells: fam.len(),
                bound_ok: ok,
                bound_rate: ok as f64 / fam.len() as f64,
                median_dtc: cfg
                    .m_grid
                    .iter()
                    .map(|&m| {
                        let v: Vec<f64> = fam.iter().filter(|r| r.m == m).map(|r| r.dtc_hat).collect();
                        (m, median(&v))
                    })
                    .collect(),
            }
        })
        .collect();
    Ok((rows, summaries))
}

pub fn run_bounds_synthetic(
    cfg: &BoundsSyntheticConfig,
    out_dir: &Path,
) -> Result<(Vec<SyntheticRow>, Vec<FamilySummary>)> {
    let start = Instant::now();
    let (rows, summaries) = bounds_synthetic(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("bounds-synthetic", cfg)?;
    for s in &summaries {
        let mut w = create_csv(out_dir, &format!("bounds_{}.csv", s.family.file_stem()), &mut manifest)?;
        w.write_record(["m", "seed", "dtc_hat", "lower_hat", "upper_hat", "bound_ok"])?;
        for r in rows.iter().filter(|r| r.family == s.family) {
            w.write_record([
                r.m.to_string(),
                r.seed.to_string(),
                r.dtc_hat.to_string(),
                r.lower_hat.to_string(),
                r.upper_hat.to_string(),
                fmt_bool(r.bound_ok),
            ])?;
        }
        w.write_record(["summary", "", "", "", "", &s.bound_rate.to_string()])?;
        w.flush()?;
    }
    let failures: Vec<_> = rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| serde_json::json!({"family": r.family, "m": r.m, "seed": r.seed, "error": e}))
        })
        .collect();
    manifest.summary = serde_json::json!({ "families": summaries, "failures": failures, "units": "bits" });
    manifest.finish(out_dir, start)?;
    Ok((rows, summaries))
}

// ---------------------------------------------------------------------------
// estimator-compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorCompareConfig {
    pub rho_grid: Vec<f64>,
    pub dims: usize,
    pub eval_samples: usize,
    pub train: TrainConfig,
}

impl Default for EstimatorCompareConfig {
    fn default() -> Self {
        Self {
            rho_grid: vec![0.0, 0.3, 0.6, 0.9],
            dims: 20,
            eval_samples: 2000,
            train: TrainConfig { centered: true, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub rho: f64,
    pub true_mi: f64,
    pub fmca_estimate: f64,
    pub infonce_estimate: f64,
    pub infonce_ceiling: f64,
}

pub fn run_estimator_compare(cfg: &EstimatorCompareConfig, out_dir: &Path) -> Result<Vec<EstimatorRow>> {
    let start = Instant::now();
    cfg.train.validate()?;
    if cfg.rho_grid.is_empty() {
        return Err(Error::Config("rho grid is empty".into()));
    }
    if cfg.eval_samples < cfg.train.batch_size {
        return Err(Error::Config("eval_samples must be at least one batch".into()));
    }
    for &rho in &cfg.rho_grid {
        gaussian_mi_multidim(cfg.dims, rho)?;
    }
    let jobs: Vec<(usize, EstimatorKind)> =
        (0..cfg.rho_grid.len()).flat_map(|i| [(i, EstimatorKind::FmcaTrace), (i, EstimatorKind::Infonce)]).collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(i, kind)| train_bimodal_estimator(cfg.dims, cfg.rho_grid[i], kind, &cfg.train, cfg.eval_samples))
        .collect::<Result<Vec<_>>>()?;

    let ceiling = (cfg.train.batch_size as f64).ln();
    let mut rows = Vec::with_capacity(cfg.rho_grid.len());
    for (i, &rho) in cfg.rho_grid.iter().enumerate() {
        let fmca = &outcomes[2 * i];
        let nce = &outcomes[2 * i + 1];
        rows.push(EstimatorRow {
            rho,
            true_mi: gaussian_mi_multidim(cfg.dims, rho)?,
            fmca_estimate: fmca.final_estimate,
            infonce_estimate: nce.final_estimate,
            infonce_ceiling: ceiling,
        });
    }

    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("estimator-compare", cfg)?;
    let mut w = create_csv(out_dir, "estimator_compare.csv", &mut manifest)?;
    w.write_record(["rho", "true_mi", "fmca_estimate", "infonce_estimate", "infonce_ceiling"])?;
    for r in &rows {
        w.write_record(
            [r.rho, r.true_mi, r.fmca_estimate, r.infonce_estimate, r.infonce_ceiling].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    let mut t = create_csv(out_dir, "estimator_trajectories.csv", &mut manifest)?;
    t.write_record(["rho", "estimator", "iteration", "estimate"])?;
    for (&(i, kind), o) in jobs.iter().zip(&outcomes) {
        for &(it, v) in &o.trajectory {
            t.write_record([cfg.rho_grid[i].to_string(), kind.name().to_string(), it.to_string(), v.to_string()])?;
        }
    }
    t.flush()?;
    let aborted: Vec<_> = jobs
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.manifest.aborted())
        .map(|(&(i, kind), o)| serde_json::json!({"rho": cfg.rho_grid[i], "estimator": kind, "status": o.manifest.status}))
        .collect();
    // The CSV reports Σσ; the log form of the same final spectrum rides along here.
    let fmca_tsd_log: Vec<Option<f64>> = (0..cfg.rho_grid.len())
        .map(|i| outcomes[2 * i].final_spectrum.as_ref().and_then(|s| tsd_log(s).ok()))
        .collect();
    manifest.summary = serde_json::json!({
        "fmca_tsd_log": fmca_tsd_log,
        "fmca_strictly_increasing": rows.windows(2).all(|w| w[1].fmca_estimate > w[0].fmca_estimate),
        "infonce_below_ceiling": rows.iter().all(|r| r.infonce_estimate <= r.infonce_ceiling),
        "aborted": aborted,
        "units": "nats for true_mi and infonce; fmca reports the sum of correlation strengths",
    });
    manifest.runs = outcomes.into_iter().map(|o| o.manifest).collect();
    manifest.finish(out_dir, start)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// ablation

/// One ablation configuration: an objective and an optional ridge override,
/// written `objective[:ridge]` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub objective: ObjectiveKind,
    pub ridge: Option<f64>,
}

impl AblationArm {
    pub fn label(&self) -> String {
        match self.ridge {
            Some(r) => format!("{}:{}", self.objective, r),
            None => self.objective.to_string(),
        }
    }
}

impl std::str::FromStr for AblationArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, ridge) = match s.split_once(':') {
            Some((n, r)) => {
                let ridge: f64 = r.parse().map_err(|_| Error::Config(format!("bad ridge in `{s}`")))?;
                if !(ridge >= 0.0 && ridge.is_finite()) {
                    return Err(Error::Config(format!("ridge must be >= 0 in `{s}`")));
                }
                (n, Some(ridge))
            }
            None => (s, None),
        };
        Ok(Self { objective: name.parse()?, ridge })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub arms: Vec<AblationArm>,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub data: LatentClassConfig,
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            arms: vec![
                AblationArm { objective: ObjectiveKind::MfmcTrace, ridge: None },
                AblationArm { objective: ObjectiveKind::MfmcLogdet, ridge: Some(0.0) },
                AblationArm { objective: ObjectiveKind::MfmcLogdet, ridge: None },
                AblationArm { objective: ObjectiveKind::HighOrderInfonce, ridge: None },
            ],
            seeds: (0..5).collect(),
            samples: 4000,
            data: LatentClassConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub objective: ObjectiveKind,
    pub ridge: f64,
    pub seed: u64,
    pub final_loss: f64,
    pub best_probe_acc: f64,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub arm: String,
    pub runs: usize,
    pub diverged: usize,
    pub median_final_loss: f64,
    pub median_best_probe_acc: f64,
}

/// Latent-class dataset for a seed; shared by the ablation and probe drivers.
fn latent_dataset(data: &LatentClassConfig, samples: usize, seed: u64) -> Result<crate::data::TriModalLabeled> {
    sample_latent_class_trimodal(data, samples, derive_seed(seed, 1))
}

fn run_path(arm: &AblationArm, seed: u64) -> PathBuf {
    PathBuf::from("runs").join(format!("{}-seed{seed}.csv", arm.label().replace(':', "-ridge")))
}

pub fn run_ablation(cfg: &AblationConfig, out_dir: &Path) -> Result<(Vec<AblationRow>, Vec<AblationSummary>)> {
    let start = Instant::now();
    cfg.train.validate()?;
    if cfg.arms.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one objective and one seed".into()));
    }
    let jobs: Vec<(AblationArm, u64)> =
        cfg.arms.iter().flat_map(|&arm| cfg.seeds.iter().map(move |&s| (arm, s))).collect();
    let outcomes: Vec<RunManifest> = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let data = latent_dataset(&cfg.data, cfg.samples, seed)?;
            let train = TrainConfig {
                objective: arm.objective,
                ridge: arm.ridge.unwrap_or(cfg.train.ridge),
                seed,
                ..cfg.train.clone()
            };
            Ok(train_mfmc(&data, &train)?.manifest)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<AblationRow> = jobs
        .iter()
        .zip(&outcomes)
        .map(|(&(arm, seed), m)| AblationRow {
            arm: arm.label(),
            objective: arm.objective,
            ridge: arm.ridge.unwrap_or(cfg.train.ridge),
            seed,
            final_loss: m.final_loss().unwrap_or(f64::NAN),
            best_probe_acc: m.best_probe().unwrap_or(f64::NAN),
            diverged: m.aborted(),
            diverged_at: m.aborted_at(),
        })
        .collect();
    let summaries: Vec<AblationSummary> = cfg
        .arms
        .iter()
        .map(|arm| {
            let label = arm.label();
            let arm_rows: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == label).collect();
            AblationSummary {
                runs: arm_rows.len(),
                diverged: arm_rows.iter().filter(|r| r.diverged).count(),
                median_final_loss: median(&arm_rows.iter().map(|r| r.final_loss).collect::<Vec<_>>()),
                median_best_probe_acc: median(&arm_rows.iter().map(|r| r.best_probe_acc).collect::<Vec<_>>()),
                arm: label,
            }
        })
        .collect();

    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("ablation", cfg)?;
    let mut w = create_csv(out_dir, "ablation.csv", &mut manifest)?;
    w.write_record(["objective", "ridge", "seed", "final_loss", "best_probe_acc", "diverged", "diverged_at"])?;
    for r in &rows {
        w.write_record([
            r.arm.clone(),
            r.ridge.to_string(),
            r.seed.to_string(),
            r.final_loss.to_string(),
            r.best_probe_acc.to_string(),
            fmt_bool(r.diverged),
            r.diverged_at.map(|i| i.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let mut s = create_csv(out_dir, "ablation_summary.csv", &mut manifest)?;
    s.write_record(["objective", "runs", "diverged", "median_final_loss", "median_best_probe_acc"])?;
    for r in &summaries {
        s.write_record([
            r.arm.clone(),
            r.runs.to_string(),
            r.diverged.to_string(),
            r.median_final_loss.to_string(),
            r.median_best_probe_acc.to_string(),
        ])?;
    }
    s.flush()?;
    for ((arm, seed), m) in jobs.iter().zip(&outcomes) {
        let path = run_path(arm, *seed);
        let name = path.to_string_lossy().into_owned();
        let file = create_csv(out_dir, &name, &mut manifest)?.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        m.write_metrics_csv(file)?;
    }
    manifest.summary = serde_json::to_value(&summaries)?;
    manifest.runs = outcomes;
    manifest.finish(out_dir, start)?;
    Ok((rows, summaries))
}

// ---------------------------------------------------------------------------
// probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeCommandConfig {
    pub samples: usize,
    pub data: LatentClassConfig,
    pub train: TrainConfig,
}

impl Default for ProbeCommandConfig {
    fn default() -> Self {
        Self { samples: 4000, data: LatentClassConfig::default(), train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: [f64; 3],
    pub chance: f64,
    pub diverged: bool,
}

pub fn run_probe(cfg: &ProbeCommandConfig, out_dir: &Path) -> Result<ProbeReport> {
    let start = Instant::now();
    let data = latent_dataset(&cfg.data, cfg.samples, cfg.train.seed)?;
    let outcome = train_mfmc(&data, &cfg.train)?;
    let accuracy = probe_encoders(&outcome.model, &data, &cfg.train)?;
    let report = ProbeReport { accuracy, chance: 1.0 / cfg.data.classes as f64, diverged: outcome.diverged() };
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("probe", cfg)?;
    let mut w = create_csv(out_dir, "probe.csv", &mut manifest)?;
    w.write_record(["encoder", "input_dim", "accuracy", "chance"])?;
    for (m, acc) in accuracy.iter().enumerate() {
        w.write_record([
            (m + 1).to_string(),
            cfg.data.dims[m].to_string(),
            acc.to_string(),
            report.chance.to_string(),
        ])?;
    }
    w.flush()?;
    let file =
        create_csv(out_dir, "metrics.csv", &mut manifest)?.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    outcome.manifest.write_metrics_csv(file)?;
    manifest.summary = serde_json::to_value(&report)?;
    manifest.runs = vec![outcome.manifest];
    manifest.finish(out_dir, start)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// dump-data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DumpFamily {
    Equicorrelated,
    DataA,
    DataB,
    GaussianPairs,
    LatentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpConfig {
    pub family: DumpFamily,
    pub m: usize,
    pub rho: f64,
    pub dims: usize,
    pub n: usize,
    pub seed: u64,
    pub latent: LatentClassConfig,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self {
            family: DumpFamily::Equicorrelated,
            m: 3,
            rho: 0.5,
            dims: 20,
            n: 1000,
            seed: 0,
            latent: LatentClassConfig::default(),
        }
    }
}

pub fn run_dump_data(cfg: &DumpConfig, out_dir: &Path) -> Result<()> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ExperimentManifest::new("dump-data", cfg)?;
    let (names, values) = match cfg.family {
        DumpFamily::Equicorrelated => {
            let s = sample_equicorrelated(cfg.m, cfg.rho, cfg.n, cfg.seed)?;
            (s.column_names("x"), s.values)
        }
        DumpFamily::DataA => {
            let s = sample_data_a(cfg.m, cfg.n, cfg.seed)?;
            (s.column_names("x"), s.values)
        }
        DumpFamily::DataB => {
            let s = sample_data_b(cfg.m, cfg.n, cfg.seed)?;
            (s.column_names("x"), s.values)
        }
        DumpFamily::GaussianPairs => {
            let (x, y) = sample_gaussian_pairs(cfg.dims, cfg.rho, cfg.n, cfg.seed)?;
            let mut names = x.column_names("x");
            names.extend(y.column_names("y"));
            let mut v = nalgebra::DMatrix::zeros(cfg.n, 2 * cfg.dims);
            v.columns_mut(0, cfg.dims).copy_from(&x.values);
            v.columns_mut(cfg.dims, cfg.dims).copy_from(&y.values);
            (names, v)
        }
        DumpFamily::LatentClass => {
            let d = sample_latent_class_trimodal(&cfg.latent, cfg.n, cfg.seed)?;
            let total: usize = d.dims().iter().sum();
            let mut names = Vec::with_capacity(total + 1);
            let mut v = nalgebra::DMatrix::zeros(cfg.n, total + 1);
            let mut col = 0;
            for (m, block) in d.modalities.iter().enumerate() {
                for j in 0..block.ncols() {
                    names.push(format!("m{}_{}", m + 1, j + 1));
                }
                v.columns_mut(col, block.ncols()).copy_from(block);
                col += block.ncols();
            }
            names.push("label".into());
            for (i, &y) in d.labels.iter().enumerate() {
                v[(i, total)] = y as f64;
            }
            (names, v)
        }
    };
    let name = "data.csv";
    manifest.outputs.push(name.into());
    write_matrix_csv(BufWriter::new(File::create(out_dir.join(name))?), &names, &values)?;
    manifest.summary = serde_json::json!({"rows": values.nrows(), "columns": values.ncols()});
    manifest.finish(out_dir, start)?;
    Ok(())
}
