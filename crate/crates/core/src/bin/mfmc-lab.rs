use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

use mfmc_core::experiments::{
    run_ablation, run_bounds_gaussian, run_bounds_synthetic, run_dump_data, run_estimator_compare, run_probe,
    AblationArm, AblationConfig, BoundsGaussianConfig, BoundsSyntheticConfig, DumpConfig, EstimatorCompareConfig,
    ProbeCommandConfig,
};
use mfmc_core::training::ObjectiveKind;
use mfmc_core::{Error, Result};

/// Dependence bounds, estimator comparisons and objective ablations on
/// synthetic multimodal data.
#[derive(Debug, Parser)]
#[command(name = "mfmc-lab", version)]
struct Cli {
    /// Base seed; replaces the seed list's start where a command takes several.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory receiving the CSVs and manifest.json.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// JSON file with command parameters; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form DTC and bounds of the equicorrelated Gaussian.
    BoundsGaussian {
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
    },
    /// Matrix-entropy DTC estimates and bounds on Data A / Data B.
    BoundsSynthetic {
        #[arg(long, value_delimiter = ',')]
        family: Option<Vec<Family>>,
        #[arg(long = "m", value_delimiter = ',')]
        m_grid: Option<Vec<usize>>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Kernel width, or `median` for the median heuristic.
        #[arg(long)]
        bandwidth: Option<String>,
    },
    /// FMCA against InfoNCE as mutual-information estimators on paired Gaussians.
    EstimatorCompare {
        #[arg(long, value_delimiter = ',')]
        rho: Option<Vec<f64>>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        eval_samples: Option<usize>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Tri-modal objectives trained side by side on the latent-class family.
    Ablation {
        /// Objectives, each optionally with a ridge: `mfmc-logdet:0`.
        #[arg(long, value_delimiter = ',')]
        objectives: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Per-encoder linear-probe accuracy after tri-modal pretraining.
    Probe {
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write a generator's samples to data.csv.
    DumpData {
        #[arg(long, value_enum)]
        family: Option<DumpFamily>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        data: DataFlags,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Family {
    DataA,
    DataB,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DumpFamily {
    Equicorrelated,
    DataA,
    DataB,
    GaussianPairs,
    LatentClass,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    batch_norm: Option<bool>,
    #[arg(long)]
    centered: Option<bool>,
}

impl TrainFlags {
    fn overrides(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "iterations", self.iterations);
        put(&mut m, "batch_size", self.batch_size);
        put(&mut m, "embed_dim", self.embed_dim);
        put(&mut m, "hidden", self.hidden);
        put(&mut m, "ridge", self.ridge);
        put(&mut m, "temperature", self.temperature);
        put(&mut m, "eval_interval", self.eval_interval);
        put(&mut m, "batch_norm", self.batch_norm);
        put(&mut m, "centered", self.centered);
        if let Some(lr) = self.learning_rate {
            m.insert("adam".into(), json!({ "learning_rate": lr }));
        }
        Value::Object(m)
    }
}

#[derive(Debug, Args)]
struct DataFlags {
    /// Number of latent classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Noise standard deviation around each class anchor.
    #[arg(long)]
    noise: Option<f64>,
}

impl DataFlags {
    fn overrides(&self) -> Value {
        let mut m = Map::new();
        put(&mut m, "classes", self.classes);
        put(&mut m, "noise", self.noise);
        Value::Object(m)
    }
}

fn put<T: Serialize>(map: &mut Map<String, Value>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then flags.
fn resolve<C: Serialize + DeserializeOwned + Default>(file: Option<&Value>, flags: Value) -> Result<C> {
    let mut v = serde_json::to_value(C::default())?;
    if let Some(f) = file {
        merge(&mut v, f.clone());
    }
    merge(&mut v, flags);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

fn read_config(path: Option<&Path>) -> Result<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    if !v.is_object() {
        return Err(Error::Config(format!("{} must hold a JSON object", path.display())));
    }
    Ok(Some(v))
}

/// Seed list for multi-seed commands: `--seeds` wins; otherwise `--seed S`
/// shifts the configured list to start at `S`.
fn seed_list(
    explicit: &Option<Vec<u64>>,
    base: Option<u64>,
    file: Option<&Value>,
    default_len: usize,
) -> Option<Vec<u64>> {
    if let Some(s) = explicit {
        return Some(s.clone());
    }
    let base = base?;
    let len = file.and_then(|f| f.get("seeds")).and_then(Value::as_array).map_or(default_len, Vec::len);
    Some((0..len as u64).map(|i| base + i).collect())
}

fn with<T: Serialize>(mut obj: Value, key: &str, value: Option<T>) -> Value {
    if let (Value::Object(m), Some(v)) = (&mut obj, value) {
        m.insert(key.to_string(), serde_json::to_value(v).expect("flag values serialize"));
    }
    obj
}

fn train_overrides(train: &TrainFlags, seed: Option<u64>, objective: Option<ObjectiveKind>) -> Value {
    let t = with(train.overrides(), "seed", seed);
    with(t, "objective", objective)
}

fn parse_bandwidth(s: &str) -> Result<Value> {
    if s.eq_ignore_ascii_case("median") {
        return Ok(json!("median"));
    }
    let b: f64 = s.parse().map_err(|_| Error::Config(format!("bandwidth must be a number or `median`, got `{s}`")))?;
    Ok(json!({ "fixed": b }))
}

fn run(cli: Cli) -> Result<bool> {
    let file = read_config(cli.config.as_deref())?;
    let file = file.as_ref();
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::BoundsGaussian { rho } => {
            let cfg: BoundsGaussianConfig = resolve(file, with(json!({}), "rho_grid", rho))?;
            let rows = run_bounds_gaussian(&cfg, out)?;
            log::info!("wrote {} rows", rows.len());
            Ok(true)
        }
        Command::BoundsSynthetic { family, m_grid, n, alpha, seeds, bandwidth } => {
            let default_len = BoundsSyntheticConfig::default().seeds.len();
            let mut flags = json!({});
            flags = with(flags, "families", family);
            flags = with(flags, "m_grid", m_grid);
            flags = with(flags, "n", n);
            flags = with(flags, "alpha", alpha);
            flags = with(flags, "seeds", seed_list(&seeds, cli.seed, file, default_len));
            flags = with(flags, "bandwidth", bandwidth.as_deref().map(parse_bandwidth).transpose()?);
            let cfg: BoundsSyntheticConfig = resolve(file, flags)?;
            let (_, summaries) = run_bounds_synthetic(&cfg, out)?;
            for s in &summaries {
                log::info!("{}: {}/{} cells bounded", s.family.name(), s.bound_ok, s.cells);
            }
            Ok(true)
        }
        Command::EstimatorCompare { rho, dims, eval_samples, train } => {
            let mut flags = json!({ "train": train_overrides(&train, cli.seed, None) });
            flags = with(flags, "rho_grid", rho);
            flags = with(flags, "dims", dims);
            flags = with(flags, "eval_samples", eval_samples);
            let cfg: EstimatorCompareConfig = resolve(file, flags)?;
            let rows = run_estimator_compare(&cfg, out)?;
            Ok(rows.iter().all(|r| r.fmca_estimate.is_finite() && r.infonce_estimate.is_finite()))
        }
        Command::Ablation { objectives, seeds, samples, data, train } => {
            let arms = objectives
                .map(|v| v.iter().map(|s| s.parse::<AblationArm>()).collect::<Result<Vec<_>>>())
                .transpose()?;
            let default_len = AblationConfig::default().seeds.len();
            let mut flags = json!({ "train": train.overrides(), "data": data.overrides() });
            flags = with(flags, "arms", arms);
            flags = with(flags, "seeds", seed_list(&seeds, cli.seed, file, default_len));
            flags = with(flags, "samples", samples);
            let cfg: AblationConfig = resolve(file, flags)?;
            let (_, summaries) = run_ablation(&cfg, out)?;
            for s in &summaries {
                log::info!(
                    "{}: median probe {:.4}, {}/{} diverged",
                    s.arm,
                    s.median_best_probe_acc,
                    s.diverged,
                    s.runs
                );
            }
            Ok(true)
        }
        Command::Probe { objective, samples, data, train } => {
            let objective = objective.map(|s| s.parse::<ObjectiveKind>()).transpose()?;
            let mut flags = json!({ "train": train_overrides(&train, cli.seed, objective), "data": data.overrides() });
            flags = with(flags, "samples", samples);
            let cfg: ProbeCommandConfig = resolve(file, flags)?;
            let report = run_probe(&cfg, out)?;
            log::info!("probe accuracy {:?} (chance {})", report.accuracy, report.chance);
            Ok(!report.diverged)
        }
        Command::DumpData { family, m, rho, dims, n, data } => {
            let mut flags = json!({ "latent": data.overrides() });
            flags = with(flags, "family", family);
            flags = with(flags, "m", m);
            flags = with(flags, "rho", rho);
            flags = with(flags, "dims", dims);
            flags = with(flags, "n", n);
            flags = with(flags, "seed", cli.seed);
            let cfg: DumpConfig = resolve(file, flags)?;
            run_dump_data(&cfg, out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("some runs did not complete; see manifest.json");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
