//! Bayesian inversion under a Gauss-linear likelihood d | r ~ N(H r, Sigma_d_r).
//!
//! The selection Gaussian prior is conjugate: the posterior is again selection
//! Gaussian with the same selection set, and its basis/auxiliary moments come
//! from conditioning the joint Gaussian of (r, nu, d) on d.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gauss::chol_with_jitter;
use crate::model::{FieldSimulation, SelectionGaussianModel};
use crate::mvnprob::{FrozenStream, PreparedEstimator};
use crate::normal::std_inv_cdf;
use crate::optim::golden_section_max;
use crate::selset::SelectionSet;
use crate::tmvn::{sample_tmvn, write_atomic, SamplerConfig};

/// Noise variance used when observations are declared exact.
pub const EXACT_OBS_VARIANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GaussLinearLikelihood {
    /// n_d x n_r forward operator H.
    pub h: DMatrix<f64>,
    /// n_d x n_d observation error covariance.
    pub sigma_d_r: DMatrix<f64>,
}

impl GaussLinearLikelihood {
    pub fn new(h: DMatrix<f64>, sigma_d_r: DMatrix<f64>) -> Result<Self> {
        if sigma_d_r.nrows() != h.nrows() || sigma_d_r.ncols() != h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "H is {}x{} but noise covariance is {}x{}",
                h.nrows(),
                h.ncols(),
                sigma_d_r.nrows(),
                sigma_d_r.ncols()
            )));
        }
        Ok(Self { h, sigma_d_r })
    }

    /// Exact observations of the listed nodes, modeled with a tiny nugget so
    /// the observation covariance stays invertible.
    pub fn exact_observations(observed_idx: &[usize], n_r: usize) -> Result<Self> {
        let k = observed_idx.len();
        let mut h = DMatrix::zeros(k, n_r);
        for (row, &i) in observed_idx.iter().enumerate() {
            if i >= n_r {
                return Err(Error::ParamDomain(format!("observed index {i} out of range")));
            }
            h[(row, i)] = 1.0;
        }
        Self::new(h, DMatrix::identity(k, k) * EXACT_OBS_VARIANCE)
    }
}

/// Posterior selection Gaussian model in conditioned form: basis and auxiliary
/// moments given d, plus their cross covariance.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    pub mu_r_d: DVector<f64>,
    pub sigma_r_d: DMatrix<f64>,
    pub mu_nu_d: DVector<f64>,
    pub sigma_nu_d: DMatrix<f64>,
    /// Cov(r, nu | d), n x q.
    pub gamma_r_nu_d: DMatrix<f64>,
    pub selection: SelectionSet,
}

impl PosteriorModel {
    pub fn n_r(&self) -> usize {
        self.mu_r_d.len()
    }

    pub fn q(&self) -> usize {
        self.mu_nu_d.len()
    }

    pub fn is_gaussian_reduced(&self) -> bool {
        self.selection.is_full() || self.gamma_r_nu_d.iter().all(|&g| g == 0.0)
    }

    /// Rewrites the posterior in the generic model parameterization so density
    /// evaluation reuses the prior-side machinery.
    pub fn to_selection_model(&self) -> Result<SelectionGaussianModel> {
        let chol_r = chol_with_jitter(&self.sigma_r_d)?;
        let x = chol_r.solve(&self.gamma_r_nu_d); // Sigma_r_d^-1 Cov(r, nu | d)
        let gamma = x.transpose(); // q x n
        let cond = &self.sigma_nu_d - &gamma * &self.gamma_r_nu_d;
        let cond = (&cond + cond.transpose()) * 0.5;
        SelectionGaussianModel::new(
            self.mu_r_d.clone(),
            self.sigma_r_d.clone(),
            self.mu_nu_d.clone(),
            gamma,
            cond,
            self.selection.clone(),
        )
    }
}

/// Conditions the joint Gaussian of (r, nu, d) on the data vector.
pub fn posterior_model(
    prior: &SelectionGaussianModel,
    lik: &GaussLinearLikelihood,
    d: &DVector<f64>,
) -> Result<PosteriorModel> {
    let n = prior.n_r();
    if lik.h.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "H has {} columns for n_r = {}",
            lik.h.ncols(),
            n
        )));
    }
    if d.len() != lik.h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "d of length {} for {} observation rows",
            d.len(),
            lik.h.nrows()
        )));
    }

    let c_rd = &prior.sigma_r * lik.h.transpose(); // n x n_d
    let c_nud = &prior.gamma_nu_r * &c_rd; // q x n_d
    let s = &lik.h * &c_rd + &lik.sigma_d_r;
    let s = (&s + s.transpose()) * 0.5;
    let chol_s = chol_with_jitter(&s)
        .map_err(|_| Error::LinAlg("singular marginal data covariance".into()))?;

    let innov = d - &lik.h * &prior.mu_r;
    let w = chol_s.solve(&innov);
    let mu_r_d = &prior.mu_r + &c_rd * &w;
    let mu_nu_d = &prior.mu_nu + &c_nud * &w;

    let gain_r = chol_s.solve(&c_rd.transpose()); // n_d x n
    let sigma_r_d = &prior.sigma_r - &c_rd * &gain_r;
    let sigma_r_d = (&sigma_r_d + sigma_r_d.transpose()) * 0.5;
    let gain_nu = chol_s.solve(&c_nud.transpose()); // n_d x q
    let sigma_nu_d = prior.sigma_nu() - &c_nud * &gain_nu;
    let sigma_nu_d = (&sigma_nu_d + sigma_nu_d.transpose()) * 0.5;
    let gamma_r_nu_d = prior.cross_cov_nu_r().transpose() - &c_rd * &gain_nu;

    Ok(PosteriorModel {
        mu_r_d,
        sigma_r_d,
        mu_nu_d,
        sigma_nu_d,
        gamma_r_nu_d,
        selection: prior.selection.clone(),
    })
}

/// Draws posterior realizations of r: nu is sampled on the selection set from
/// its posterior law, then r is completed from its Gaussian law given (nu, d).
pub fn simulate_posterior(
    post: &PosteriorModel,
    n_samples: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<FieldSimulation> {
    let n = post.n_r();
    let chol_r = chol_with_jitter(&post.sigma_r_d)?.unpack();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x517C_C1B7_2722_0A95);

    if post.is_gaussian_reduced() {
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut x = post.mu_r_d.clone();
            for i in 0..n {
                for k in 0..=i {
                    x[i] += chol_r[(i, k)] * z[k];
                }
            }
            samples.push(x);
        }
        return Ok(FieldSimulation {
            samples,
            acceptance_rate: 1.0,
            seed,
        });
    }

    let chain = sample_tmvn(
        &post.mu_nu_d,
        &post.sigma_nu_d,
        &post.selection,
        n_samples,
        sampler,
        seed,
    )?;
    let chol_nu = chol_with_jitter(&post.sigma_nu_d)?;
    // Sigma_{r | nu, d} = Sigma_r_d - K Sigma_nu_d^-1 K' with K = Cov(r, nu | d)
    let x = chol_nu.solve(&post.gamma_r_nu_d.transpose()); // q x n
    let sigma_cond = &post.sigma_r_d - &post.gamma_r_nu_d * &x;
    let sigma_cond = (&sigma_cond + sigma_cond.transpose()) * 0.5;
    let chol_cond = chol_with_jitter(&sigma_cond)?.unpack();

    let mut samples = Vec::with_capacity(n_samples);
    for nu_s in &chain.samples {
        let shift = chol_nu.solve(&(nu_s - &post.mu_nu_d));
        let mut r = &post.mu_r_d + &post.gamma_r_nu_d * shift;
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..n {
            for k in 0..=i {
                r[i] += chol_cond[(i, k)] * z[k];
            }
        }
        samples.push(r);
    }
    Ok(FieldSimulation {
        samples,
        acceptance_rate: chain.acceptance_rate,
        seed,
    })
}

/// Settings for the per-node maximum a posteriori search.
#[derive(Debug, Clone)]
pub struct MapOptions {
    /// Bracketing grid points over mu_i +/- span * sd_i.
    pub n_grid: usize,
    pub span: f64,
    /// Frozen Monte Carlo draws per marginal density evaluation.
    pub mc_samples: usize,
    /// Golden-section tolerance, in units of the marginal std deviation.
    pub refine_tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            n_grid: 201,
            span: 5.0,
            mc_samples: 300,
            refine_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictOptions {
    /// Two-sided interval level: central (1 - alpha) interval.
    pub alpha: f64,
    /// Posterior realizations behind E, MED, and the interval quantiles.
    pub n_samples: usize,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub map: MapOptions,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            n_samples: 500,
            sampler: SamplerConfig::default(),
            seed: 0,
            map: MapOptions::default(),
        }
    }
}

/// Per-node predictors and central prediction interval.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub e: DVector<f64>,
    pub med: DVector<f64>,
    pub map: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub alpha: f64,
    pub acceptance_rate: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let k = (h.floor() as usize).min(n - 2);
    let frac = h - k as f64;
    sorted[k] + frac * (sorted[k + 1] - sorted[k])
}

/// Computes E, MED, and MAP predictors with a central (1 - alpha) interval.
///
/// When the posterior reduces to a Gaussian, all three predictors equal the
/// posterior mean and the interval is the exact Gaussian quantile interval;
/// no simulation is used.
pub fn predict(post: &PosteriorModel, opts: &PredictOptions) -> Result<Prediction> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::ParamDomain(format!("alpha = {} outside (0, 1)", opts.alpha)));
    }
    let n = post.n_r();

    if post.is_gaussian_reduced() {
        let z = std_inv_cdf(1.0 - 0.5 * opts.alpha);
        let sd = DVector::from_fn(n, |i, _| post.sigma_r_d[(i, i)].max(0.0).sqrt());
        return Ok(Prediction {
            e: post.mu_r_d.clone(),
            med: post.mu_r_d.clone(),
            map: post.mu_r_d.clone(),
            lower: DVector::from_fn(n, |i, _| post.mu_r_d[i] - z * sd[i]),
            upper: DVector::from_fn(n, |i, _| post.mu_r_d[i] + z * sd[i]),
            alpha: opts.alpha,
            acceptance_rate: 1.0,
        });
    }

    let sim = simulate_posterior(post, opts.n_samples, &opts.sampler, opts.seed)?;
    let mut e = DVector::zeros(n);
    let mut med = DVector::zeros(n);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    let mut col = vec![0.0f64; sim.samples.len()];
    for i in 0..n {
        for (j, s) in sim.samples.iter().enumerate() {
            col[j] = s[i];
        }
        e[i] = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        med[i] = empirical_quantile(&col, 0.5);
        lower[i] = empirical_quantile(&col, 0.5 * opts.alpha);
        upper[i] = empirical_quantile(&col, 1.0 - 0.5 * opts.alpha);
    }

    let map = map_predictor(post, &opts.map, opts.seed)?;
    Ok(Prediction {
        e,
        med,
        map,
        lower,
        upper,
        alpha: opts.alpha,
        acceptance_rate: sim.acceptance_rate,
    })
}

/// Per-node mode of the univariate marginal posterior density: a bracketing
/// grid scan refined by golden-section search, with frozen Monte Carlo draws
/// so the objective is smooth in r.
fn map_predictor(post: &PosteriorModel, opts: &MapOptions, seed: u64) -> Result<DVector<f64>> {
    let n = post.n_r();
    let q = post.q();
    let base_stream = FrozenStream::new(seed, opts.mc_samples, q);
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mu_i = post.mu_r_d[i];
        let var_i = post.sigma_r_d[(i, i)];
        if !(var_i > 0.0) {
            out[i] = mu_i;
            continue;
        }
        let sd_i = var_i.sqrt();
        let g = post.gamma_r_nu_d.row(i).transpose(); // Cov(nu, r_i | d)
        let sigma_cond = &post.sigma_nu_d - &g * g.transpose() / var_i;
        let sigma_cond = (&sigma_cond + sigma_cond.transpose()) * 0.5;
        // common random numbers, rotated so that component offsets relative
        // to node i line up: nodes whose marginal problems are translates of
        // one another then produce matching argmax values
        let stream = base_stream.rotated(q - i % q);
        let prepared = PreparedEstimator::new(&sigma_cond, &post.selection, &stream)?;
        let mut objective = |r: f64| -> f64 {
            let mean = &post.mu_nu_d + &g * ((r - mu_i) / var_i);
            match prepared.log_prob(&mean) {
                Ok((lp, _)) => lp - 0.5 * (r - mu_i) * (r - mu_i) / var_i,
                Err(_) => f64::NEG_INFINITY,
            }
        };

        let lo = mu_i - opts.span * sd_i;
        let hi = mu_i + opts.span * sd_i;
        let m = opts.n_grid.max(3);
        let h = (hi - lo) / (m - 1) as f64;
        let mut best_k = 0;
        let mut best_v = f64::NEG_INFINITY;
        for k in 0..m {
            let v = objective(lo + k as f64 * h);
            if v > best_v {
                best_v = v;
                best_k = k;
            }
        }
        let a = lo + h * best_k.saturating_sub(1) as f64;
        let b = lo + h * (best_k + 1).min(m - 1) as f64;
        let (x, _) = golden_section_max(&mut objective, a, b, opts.refine_tol * sd_i.max(1e-12));
        out[i] = x;
    }
    Ok(out)
}

/// CSV with one row per node: node, E, MED, MAP, lower, upper.
pub fn write_predictions_csv(pred: &Prediction, path: &Path) -> Result<()> {
    let mut body = String::from("node,E,MED,MAP,lower,upper\n");
    for i in 0..pred.e.len() {
        body.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            i, pred.e[i], pred.med[i], pred.map[i], pred.lower[i], pred.upper[i]
        ));
    }
    write_atomic(path, body.as_bytes())
}
