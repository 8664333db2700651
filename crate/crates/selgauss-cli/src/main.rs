//! Configuration-driven experiment runner for the selection Gaussian library.
//!
//! Verbs: simulate-prior, invert, fit, replicate-study, casestudy. Every
//! command reads one JSON config (schema_version 1, unknown fields rejected),
//! is deterministic given (config, seed), and writes its outputs atomically.
//! Exit codes: 0 success, 2 config error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;

use selgauss::inference::fit_mle;
use selgauss::inversion::{
    posterior_model, predict, simulate_posterior, write_predictions_csv, GaussLinearLikelihood,
    MapOptions, PredictOptions,
};
use selgauss::model::{expand_stationary, simulate_prior, StationaryPriorSpec};
use selgauss::normal::std_inv_cdf;
use selgauss::seismic::{run_case_study, CaseStudyConfig, Wavelet};
use selgauss::tmvn::SamplerConfig;
use selgauss::{
    replicate_study, write_replicates_csv, GridSpec, InferenceConfig, ReplicateRow, Theta,
};

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "selgauss", version, about = "Selection Gaussian field experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap (computation is single-threaded; accepted for
    /// interface stability).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates prior realizations with marginal histogram and QQ data.
    SimulatePrior(CommonArgs),
    /// Posterior realizations and E/MED/MAP predictions with intervals.
    Invert(CommonArgs),
    /// Maximum likelihood fit of the stationary parameters to one field.
    Fit(CommonArgs),
    /// Simulate-and-refit study over grid sizes with a summary table.
    ReplicateStudy(CommonArgs),
    /// Synthetic seismic case study comparing selection and Gaussian priors.
    Casestudy(CommonArgs),
}

/// Config-stage failures exit 2, run-stage failures exit 3.
enum Failure {
    Config(String),
    Numerical(String),
}

impl From<selgauss::Error> for Failure {
    fn from(e: selgauss::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SimulatePrior(args) => run(args, cmd_simulate_prior),
        Command::Invert(args) => run(args, cmd_invert),
        Command::Fit(args) => run(args, cmd_fit),
        Command::ReplicateStudy(args) => run(args, cmd_replicate_study),
        Command::Casestudy(args) => run(args, cmd_casestudy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run<C: for<'de> Deserialize<'de> + HasCommon>(
    args: &CommonArgs,
    cmd: fn(C, &Path) -> Result<(), Failure>,
) -> Result<(), Failure> {
    if args.threads == 0 {
        return Err(Failure::Config("--threads must be >= 1".into()));
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let mut config: C = serde_json::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if config.schema_version() != SCHEMA_VERSION {
        return Err(Failure::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            config.schema_version()
        )));
    }
    if let Some(seed) = args.seed {
        config.set_seed(seed);
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| config.out_dir().to_path_buf());
    if out.as_os_str().is_empty() {
        return Err(Failure::Config("no output directory (config `out` or --out)".into()));
    }
    std::fs::create_dir_all(&out).map_err(|e| Failure::Config(format!("{}: {e}", out.display())))?;
    cmd(config, &out)
}

trait HasCommon {
    fn schema_version(&self) -> u32;
    fn set_seed(&mut self, seed: u64);
    fn out_dir(&self) -> &Path;
}

macro_rules! impl_common {
    ($ty:ty) => {
        impl HasCommon for $ty {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
            fn set_seed(&mut self, seed: u64) {
                self.seed = seed;
            }
            fn out_dir(&self) -> &Path {
                Path::new(&self.out)
            }
        }
    };
}

/// Writes via a temp file in the target directory, then renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Failure::Numerical(e.to_string()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Failure::Numerical(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| Failure::Numerical(e.to_string()))?;
    Ok(())
}

fn write_samples_csv(samples: &[DVector<f64>], path: &Path) -> Result<(), Failure> {
    let dim = samples.first().map_or(0, |s| s.len());
    let mut body = (0..dim).map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    body.push('\n');
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| format!("{v:.17e}")).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    write_atomic(path, body.as_bytes())
}

// ---------------------------------------------------------------- simulate-prior

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulatePriorConfig {
    schema_version: u32,
    model: StationaryPriorSpec,
    #[serde(default = "default_n_samples")]
    n_samples: usize,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: String,
    #[serde(default = "default_n_bins")]
    n_bins: usize,
    #[serde(default = "default_n_qq")]
    n_qq: usize,
}
impl_common!(SimulatePriorConfig);

fn default_n_samples() -> usize {
    500
}
fn default_n_bins() -> usize {
    61
}
fn default_n_qq() -> usize {
    256
}

fn cmd_simulate_prior(config: SimulatePriorConfig, out: &Path) -> Result<(), Failure> {
    if config.n_samples == 0 || config.n_bins == 0 || config.n_qq == 0 {
        return Err(Failure::Config("sample/bin/qq counts must be > 0".into()));
    }
    let model = expand_stationary(&config.model).map_err(|e| Failure::Config(e.to_string()))?;
    let sim = simulate_prior(&model, config.n_samples, &config.sampler, config.seed)?;
    write_samples_csv(&sim.samples, &out.join("realizations.csv"))?;

    let mut pooled: Vec<f64> = sim.samples.iter().flat_map(|s| s.iter().copied()).collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));

    // marginal histogram over the pooled node values
    let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
    let width = ((hi - lo) / config.n_bins as f64).max(1e-300);
    let mut counts = vec![0usize; config.n_bins];
    for &v in &pooled {
        let b = (((v - lo) / width) as usize).min(config.n_bins - 1);
        counts[b] += 1;
    }
    let mut hist = String::from("bin_left,bin_right,count,density\n");
    for (b, &c) in counts.iter().enumerate() {
        let left = lo + b as f64 * width;
        hist.push_str(&format!(
            "{:.17e},{:.17e},{},{:.17e}\n",
            left,
            left + width,
            c,
            c as f64 / (pooled.len() as f64 * width)
        ));
    }
    write_atomic(&out.join("marginal_hist.csv"), hist.as_bytes())?;

    // QQ against the Gaussian with the pooled mean and variance; an inactive
    // selection set puts the points on the identity line up to sampling noise
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut qq = String::from("p,gaussian_quantile,empirical_quantile\n");
    for i in 0..config.n_qq {
        let p = (i as f64 + 0.5) / config.n_qq as f64;
        let emp = {
            let h = p * (n - 1.0);
            let k = (h.floor() as usize).min(pooled.len() - 2);
            pooled[k] + (h - k as f64) * (pooled[k + 1] - pooled[k])
        };
        qq.push_str(&format!(
            "{:.6},{:.17e},{:.17e}\n",
            p,
            mean + sd * std_inv_cdf(p),
            emp
        ));
    }
    write_atomic(&out.join("qq.csv"), qq.as_bytes())?;

    let summary = serde_json::json!({
        "seed": sim.seed,
        "n_samples": config.n_samples,
        "n_nodes": model.n_r(),
        "acceptance_rate": sim.acceptance_rate,
    });
    write_atomic(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Failure::Numerical(e.to_string()))?
            .as_bytes(),
    )
}

// ------------------------------------------------------------------------ invert

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Observations {
    /// Zero-based node indices.
    indices: Vec<usize>,
    values: Vec<f64>,
    /// Observation noise variance; omitted means exact observations.
    #[serde(default)]
    variance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapOptionsConfig {
    #[serde(default = "default_map_grid")]
    n_grid: usize,
    #[serde(default = "default_map_span")]
    span: f64,
    #[serde(default = "default_map_mc")]
    mc_samples: usize,
    #[serde(default = "default_map_tol")]
    refine_tol: f64,
}

fn default_map_grid() -> usize {
    201
}
fn default_map_span() -> f64 {
    5.0
}
fn default_map_mc() -> usize {
    300
}
fn default_map_tol() -> f64 {
    1e-6
}

impl Default for MapOptionsConfig {
    fn default() -> Self {
        Self {
            n_grid: default_map_grid(),
            span: default_map_span(),
            mc_samples: default_map_mc(),
            refine_tol: default_map_tol(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InvertConfig {
    schema_version: u32,
    model: StationaryPriorSpec,
    observations: Observations,
    #[serde(default = "default_n_samples")]
    n_samples: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    map: MapOptionsConfig,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: String,
}
impl_common!(InvertConfig);

fn default_alpha() -> f64 {
    0.2
}

fn cmd_invert(config: InvertConfig, out: &Path) -> Result<(), Failure> {
    let obs = &config.observations;
    if obs.indices.len() != obs.values.len() || obs.indices.is_empty() {
        return Err(Failure::Config(format!(
            "{} observation indices with {} values",
            obs.indices.len(),
            obs.values.len()
        )));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Failure::Config(format!("alpha = {}", config.alpha)));
    }
    let model = expand_stationary(&config.model).map_err(|e| Failure::Config(e.to_string()))?;
    let n = model.n_r();
    if obs.indices.iter().any(|&i| i >= n) {
        return Err(Failure::Config(format!(
            "observation index out of range for {n} nodes"
        )));
    }
    let lik = match obs.variance {
        None => GaussLinearLikelihood::exact_observations(&obs.indices, n)
            .map_err(|e| Failure::Config(e.to_string()))?,
        Some(v) if v > 0.0 => {
            let mut h = nalgebra::DMatrix::zeros(obs.indices.len(), n);
            for (row, &i) in obs.indices.iter().enumerate() {
                h[(row, i)] = 1.0;
            }
            let cov = nalgebra::DMatrix::from_diagonal_element(
                obs.indices.len(),
                obs.indices.len(),
                v,
            );
            GaussLinearLikelihood::new(h, cov).map_err(|e| Failure::Config(e.to_string()))?
        }
        Some(v) => return Err(Failure::Config(format!("variance = {v} must be > 0"))),
    };
    let d = DVector::from_vec(obs.values.clone());
    let post = posterior_model(&model, &lik, &d)?;

    let sim = simulate_posterior(&post, config.n_samples, &config.sampler, config.seed)?;
    write_samples_csv(&sim.samples, &out.join("posterior_realizations.csv"))?;

    let opts = PredictOptions {
        alpha: config.alpha,
        n_samples: config.n_samples,
        sampler: config.sampler.clone(),
        seed: config.seed,
        map: MapOptions {
            n_grid: config.map.n_grid,
            span: config.map.span,
            mc_samples: config.map.mc_samples,
            refine_tol: config.map.refine_tol,
        },
    };
    let pred = predict(&post, &opts)?;
    write_predictions_csv(&pred, &out.join("predictions.csv"))
        .map_err(|e| Failure::Numerical(e.to_string()))?;

    let summary = serde_json::json!({
        "seed": config.seed,
        "n_samples": config.n_samples,
        "alpha": config.alpha,
        "acceptance_rate": sim.acceptance_rate,
        "gaussian_reduced": post.is_gaussian_reduced(),
    });
    write_atomic(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| Failure::Numerical(e.to_string()))?
            .as_bytes(),
    )
}

// --------------------------------------------------------------------------- fit

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    schema_version: u32,
    grid: GridSpec,
    /// Inline field values in grid node order.
    #[serde(default)]
    data: Option<Vec<f64>>,
    /// Alternative: one value per line (optional header), grid node order.
    #[serde(default)]
    data_csv: Option<String>,
    #[serde(default)]
    inference: InferenceConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: String,
}
impl_common!(FitConfig);

fn cmd_fit(config: FitConfig, out: &Path) -> Result<(), Failure> {
    let values = match (&config.data, &config.data_csv) {
        (Some(v), None) => v.clone(),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{path}: {e}")))?;
            let mut vals = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                match line.parse::<f64>() {
                    Ok(v) => vals.push(v),
                    Err(_) if ln == 0 => continue, // header row
                    Err(e) => {
                        return Err(Failure::Config(format!("{path} line {}: {e}", ln + 1)))
                    }
                }
            }
            vals
        }
        _ => {
            return Err(Failure::Config(
                "exactly one of `data` and `data_csv` is required".into(),
            ))
        }
    };
    if values.len() != config.grid.n_nodes() {
        return Err(Failure::Config(format!(
            "{} data values for a grid of {} nodes",
            values.len(),
            config.grid.n_nodes()
        )));
    }
    let inference = InferenceConfig {
        seed: config.seed,
        ..config.inference
    };
    let fit = fit_mle(&DVector::from_vec(values), &config.grid, &inference)?;
    fit.write_json(&out.join("fit.json"))
        .map_err(|e| Failure::Numerical(e.to_string()))
}

// --------------------------------------------------------------- replicate-study

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplicateStudyConfig {
    schema_version: u32,
    theta_true: Theta,
    /// Grid dimension lists, e.g. [[8, 8], [16, 16]].
    grids: Vec<Vec<usize>>,
    #[serde(default = "default_n_replicates")]
    n_replicates: usize,
    #[serde(default)]
    inference: InferenceConfig,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: String,
}
impl_common!(ReplicateStudyConfig);

fn default_n_replicates() -> usize {
    50
}

fn cmd_replicate_study(config: ReplicateStudyConfig, out: &Path) -> Result<(), Failure> {
    if config.n_replicates == 0 || config.grids.is_empty() {
        return Err(Failure::Config("need at least one grid and one replicate".into()));
    }
    let grids: Vec<GridSpec> = config
        .grids
        .iter()
        .map(|dims| GridSpec::new(dims.clone()))
        .collect::<selgauss::Result<_>>()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let rows = replicate_study(
        &config.theta_true,
        config.inference.family,
        &grids,
        config.n_replicates,
        &config.sampler,
        &config.inference,
        config.seed,
    )?;
    write_replicates_csv(&rows, &out.join("replicates.csv"))
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    write_replicate_summary(&rows, &out.join("summary.csv"))
}

/// Per grid size and parameter: replicate mean and central 90% interval.
fn write_replicate_summary(rows: &[ReplicateRow], path: &Path) -> Result<(), Failure> {
    let mut body = String::from("grid_size,param,mean,q05,q95\n");
    let mut sizes: Vec<String> = rows.iter().map(|r| r.grid_size.clone()).collect();
    sizes.dedup();
    for size in sizes {
        let group: Vec<&ReplicateRow> = rows.iter().filter(|r| r.grid_size == size).collect();
        for (param, get) in [
            ("mu", (|r: &ReplicateRow| r.mu) as fn(&ReplicateRow) -> f64),
            ("sigma2", |r| r.sigma2),
            ("d", |r| r.d),
            ("gamma", |r| r.gamma),
            ("a", |r| r.a),
        ] {
            let mut vals: Vec<f64> = group.iter().map(|r| get(r)).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let q = |p: f64| {
                let h = p * (vals.len() - 1) as f64;
                let k = (h.floor() as usize).min(vals.len().saturating_sub(2));
                if vals.len() == 1 {
                    vals[0]
                } else {
                    vals[k] + (h - k as f64) * (vals[k + 1] - vals[k])
                }
            };
            body.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e}\n",
                size,
                param,
                mean,
                q(0.05),
                q(0.95)
            ));
        }
    }
    write_atomic(path, body.as_bytes())
}

// --------------------------------------------------------------------- casestudy

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseStudyCliConfig {
    schema_version: u32,
    case: CaseStudyConfig,
    /// Optional per-angle wavelet CSVs replacing the configured kernels.
    #[serde(default)]
    wavelet_csv: Option<Vec<String>>,
    /// Overrides case.seed when present (as does --seed).
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out: String,
}

impl HasCommon for CaseStudyCliConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }
    fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }
    fn out_dir(&self) -> &Path {
        Path::new(&self.out)
    }
}

fn cmd_casestudy(config: CaseStudyCliConfig, out: &Path) -> Result<(), Failure> {
    let mut case = config.case;
    if let Some(seed) = config.seed {
        case.seed = seed;
    }
    if let Some(paths) = &config.wavelet_csv {
        if paths.len() != case.forward.angles_deg.len() {
            return Err(Failure::Config(format!(
                "{} wavelet files for {} angles",
                paths.len(),
                case.forward.angles_deg.len()
            )));
        }
        case.forward.wavelets = paths
            .iter()
            .map(|p| Wavelet::from_csv(Path::new(p)))
            .collect::<selgauss::Result<_>>()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    case.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let report = run_case_study(&case)?;
    report
        .write_json(&out.join("report.json"))
        .map_err(|e| Failure::Numerical(e.to_string()))?;
    report
        .write_table_csv(&out.join("table.csv"))
        .map_err(|e| Failure::Numerical(e.to_string()))
}
