//! Selection Gaussian model: a basis Gaussian field r coupled to an auxiliary
//! Gaussian vector nu, conditioned on nu falling in a product selection set A.
//!
//! Parameterization: basis law N(mu_r, Sigma_r), conditional auxiliary law
//! nu | r ~ N(mu_nu + Gamma (r - mu_r), Sigma_nu_r). The marginal auxiliary
//! covariance is Sigma_nu = Gamma Sigma_r Gamma' + Sigma_nu_r.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corr::{build_correlation_matrix, CorrelationSpec};
use crate::error::{Error, Result};
use crate::gauss::{chol_with_jitter, log_gaussian_pdf, GaussianParams};
use crate::grid::GridSpec;
use crate::mvnprob::{estimate_mvn_prob_with_stream, FrozenStream, MeanShift};
use crate::selset::{IntervalUnion, SelectionSet};
use crate::tmvn::{sample_tmvn, SamplerConfig};

/// Coupling strength gamma is clamped to +/- (1 - GAMMA_CLAMP_MARGIN) so
/// Sigma_nu_r stays positive definite at the parameter boundary.
pub const GAMMA_CLAMP_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct SelectionGaussianModel {
    pub mu_r: DVector<f64>,
    pub sigma_r: DMatrix<f64>,
    pub mu_nu: DVector<f64>,
    /// q x n coupling matrix Gamma.
    pub gamma_nu_r: DMatrix<f64>,
    /// q x q conditional covariance of nu given r.
    pub sigma_nu_r: DMatrix<f64>,
    pub selection: SelectionSet,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    mu_r: Vec<f64>,
    sigma_r: Vec<Vec<f64>>,
    mu_nu: Vec<f64>,
    gamma_nu_r: Vec<Vec<f64>>,
    sigma_nu_r: Vec<Vec<f64>>,
    selection: SelectionSet,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidModel(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

impl TryFrom<ModelJson> for SelectionGaussianModel {
    type Error = Error;
    fn try_from(j: ModelJson) -> Result<Self> {
        SelectionGaussianModel::new(
            DVector::from_vec(j.mu_r),
            from_rows(&j.sigma_r, "sigma_r")?,
            DVector::from_vec(j.mu_nu),
            from_rows(&j.gamma_nu_r, "gamma_nu_r")?,
            from_rows(&j.sigma_nu_r, "sigma_nu_r")?,
            j.selection,
        )
    }
}

impl From<SelectionGaussianModel> for ModelJson {
    fn from(m: SelectionGaussianModel) -> Self {
        ModelJson {
            mu_r: m.mu_r.iter().copied().collect(),
            sigma_r: to_rows(&m.sigma_r),
            mu_nu: m.mu_nu.iter().copied().collect(),
            gamma_nu_r: to_rows(&m.gamma_nu_r),
            sigma_nu_r: to_rows(&m.sigma_nu_r),
            selection: m.selection,
        }
    }
}

impl SelectionGaussianModel {
    pub fn new(
        mu_r: DVector<f64>,
        sigma_r: DMatrix<f64>,
        mu_nu: DVector<f64>,
        gamma_nu_r: DMatrix<f64>,
        sigma_nu_r: DMatrix<f64>,
        selection: SelectionSet,
    ) -> Result<Self> {
        let n = mu_r.len();
        let q = mu_nu.len();
        // symmetry checks ride along with GaussianParams validation
        GaussianParams::new(mu_r.clone(), sigma_r.clone())?;
        GaussianParams::new(mu_nu.clone(), sigma_nu_r.clone())?;
        if gamma_nu_r.nrows() != q || gamma_nu_r.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "gamma_nu_r is {}x{}, expected {}x{}",
                gamma_nu_r.nrows(),
                gamma_nu_r.ncols(),
                q,
                n
            )));
        }
        if selection.dim() != q {
            return Err(Error::DimensionMismatch(format!(
                "selection set of dim {} for q = {}",
                selection.dim(),
                q
            )));
        }
        Ok(Self {
            mu_r,
            sigma_r,
            mu_nu,
            gamma_nu_r,
            sigma_nu_r,
            selection,
        })
    }

    pub fn n_r(&self) -> usize {
        self.mu_r.len()
    }

    pub fn q(&self) -> usize {
        self.mu_nu.len()
    }

    /// Marginal auxiliary covariance Sigma_nu = Gamma Sigma_r Gamma' + Sigma_nu_r.
    pub fn sigma_nu(&self) -> DMatrix<f64> {
        let m = &self.gamma_nu_r * &self.sigma_r * self.gamma_nu_r.transpose() + &self.sigma_nu_r;
        (&m + m.transpose()) * 0.5
    }

    /// Cross covariance Cov(nu, r) = Gamma Sigma_r (q x n).
    pub fn cross_cov_nu_r(&self) -> DMatrix<f64> {
        &self.gamma_nu_r * &self.sigma_r
    }

    /// True when the model collapses to its basis Gaussian: the selection set
    /// is the full space or the coupling is identically zero.
    pub fn is_gaussian_reduced(&self) -> bool {
        self.selection.is_full() || self.gamma_nu_r.iter().all(|&g| g == 0.0)
    }
}

/// Monte Carlo settings for density evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            seed: 0,
        }
    }
}

/// log f(r) and its Monte Carlo standard error.
///
/// Both set probabilities are estimated from the same frozen stream, so when
/// the model is Gaussian-reduced they cancel exactly and the result carries no
/// Monte Carlo error.
pub fn log_selection_density(
    model: &SelectionGaussianModel,
    r: &DVector<f64>,
    cfg: &DensityConfig,
) -> Result<(f64, f64)> {
    if r.len() != model.n_r() {
        return Err(Error::DimensionMismatch(format!(
            "r of length {} for n_r = {}",
            r.len(),
            model.n_r()
        )));
    }
    let base = log_gaussian_pdf(
        r,
        &GaussianParams::new(model.mu_r.clone(), model.sigma_r.clone())?,
    )?;
    if model.selection.is_full() {
        return Ok((base, 0.0));
    }
    let sigma_nu = model.sigma_nu();
    let mu_cond = &model.mu_nu + &model.gamma_nu_r * (r - &model.mu_r);
    let stream = FrozenStream::new(cfg.seed, cfg.n_samples, model.q());
    // zero shift keeps the diagonal conditional term exact (constant weights)
    let num = estimate_mvn_prob_with_stream(
        &mu_cond,
        &model.sigma_nu_r,
        &model.selection,
        &MeanShift::Zero,
        &stream,
    )?;
    let den = estimate_mvn_prob_with_stream(
        &model.mu_nu,
        &sigma_nu,
        &model.selection,
        &MeanShift::Zero,
        &stream,
    )?;
    let se = (num.rel_std_error.powi(2) + den.rel_std_error.powi(2)).sqrt();
    Ok((base + num.log_value - den.log_value, se))
}

/// Univariate marginal density f(r_i) and its Monte Carlo standard error.
pub fn marginal_density(
    model: &SelectionGaussianModel,
    i: usize,
    r_i: f64,
    cfg: &DensityConfig,
) -> Result<(f64, f64)> {
    if i >= model.n_r() {
        return Err(Error::ParamDomain(format!("node index {i} out of range")));
    }
    let mu_i = model.mu_r[i];
    let var_i = model.sigma_r[(i, i)];
    if !(var_i > 0.0) {
        return Err(Error::InvalidModel(format!(
            "non-positive marginal variance at node {i}"
        )));
    }
    let base = crate::normal::std_pdf((r_i - mu_i) / var_i.sqrt()).ln() - 0.5 * var_i.ln();
    if model.selection.is_full() {
        return Ok((base.exp(), 0.0));
    }
    // g = Cov(nu, r_i)
    let g = model.cross_cov_nu_r().column(i).into_owned();
    let sigma_nu = model.sigma_nu();
    let mu_cond = &model.mu_nu + &g * ((r_i - mu_i) / var_i);
    let sigma_cond = &sigma_nu - &g * g.transpose() / var_i;
    let sigma_cond = (&sigma_cond + sigma_cond.transpose()) * 0.5;
    let stream = FrozenStream::new(cfg.seed, cfg.n_samples, model.q());
    let num = estimate_mvn_prob_with_stream(
        &mu_cond,
        &sigma_cond,
        &model.selection,
        &MeanShift::Zero,
        &stream,
    )?;
    let den = estimate_mvn_prob_with_stream(
        &model.mu_nu,
        &sigma_nu,
        &model.selection,
        &MeanShift::Zero,
        &stream,
    )?;
    let density = (base + num.log_value - den.log_value).exp();
    let se = density * (num.rel_std_error.powi(2) + den.rel_std_error.powi(2)).sqrt();
    Ok((density, se))
}

/// Result of prior (or posterior) simulation of the basis field.
#[derive(Debug, Clone)]
pub struct FieldSimulation {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    pub seed: u64,
}

/// Draws realizations of r from the selection Gaussian prior.
///
/// nu is sampled on the selection set first; r is then completed by residual
/// substitution: r = r* + Sigma_r Gamma' Sigma_nu^-1 (nu - nu*) with (r*, nu*)
/// an unconditional joint draw. This avoids forming the n x n conditional
/// covariance per sample.
pub fn simulate_prior(
    model: &SelectionGaussianModel,
    n_samples: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<FieldSimulation> {
    let n = model.n_r();
    let chol_r = chol_with_jitter(&model.sigma_r)?.unpack();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);

    let draw_base = |rng: &mut ChaCha20Rng| -> DVector<f64> {
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mut x = model.mu_r.clone();
        for i in 0..n {
            for k in 0..=i {
                x[i] += chol_r[(i, k)] * z[k];
            }
        }
        x
    };

    if model.is_gaussian_reduced() {
        let samples = (0..n_samples).map(|_| draw_base(&mut rng)).collect();
        return Ok(FieldSimulation {
            samples,
            acceptance_rate: 1.0,
            seed,
        });
    }

    let q = model.q();
    let sigma_nu = model.sigma_nu();
    let chain = sample_tmvn(&model.mu_nu, &sigma_nu, &model.selection, n_samples, sampler, seed)?;
    let chol_nu = chol_with_jitter(&sigma_nu)?;
    let chol_e = chol_with_jitter(&model.sigma_nu_r)?.unpack();
    let b = &model.sigma_r * model.gamma_nu_r.transpose(); // n x q

    let mut samples = Vec::with_capacity(n_samples);
    for nu_s in &chain.samples {
        let r_star = draw_base(&mut rng);
        let mut nu_star = &model.mu_nu + &model.gamma_nu_r * (&r_star - &model.mu_r);
        let w: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..q {
            for k in 0..=i {
                nu_star[i] += chol_e[(i, k)] * w[k];
            }
        }
        let sol = chol_nu.solve(&(nu_s - nu_star));
        samples.push(r_star + &b * sol);
    }
    Ok(FieldSimulation {
        samples,
        acceptance_rate: chain.acceptance_rate,
        seed,
    })
}

/// Stationary specification: constant mean, variance-scaled correlation, one
/// coupling coefficient, and one per-component selection union replicated over
/// the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryPriorSpec {
    pub mu: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub corr: CorrelationSpec,
    pub grid: GridSpec,
    pub a_set: IntervalUnion,
}

/// Expands a stationary spec into the general model form:
/// Sigma_r = sigma^2 C, Gamma = (gamma/sigma) I, Sigma_nu_r = (1-gamma^2) I.
pub fn expand_stationary(spec: &StationaryPriorSpec) -> Result<SelectionGaussianModel> {
    if !(spec.sigma2 > 0.0) {
        return Err(Error::ParamDomain(format!("sigma2 = {} must be > 0", spec.sigma2)));
    }
    if !(spec.gamma.abs() <= 1.0) {
        return Err(Error::ParamDomain(format!(
            "gamma = {} outside [-1, 1]",
            spec.gamma
        )));
    }
    let max_gamma = 1.0 - GAMMA_CLAMP_MARGIN;
    let gamma = spec.gamma.clamp(-max_gamma, max_gamma);
    let c = build_correlation_matrix(&spec.grid, &spec.corr)?;
    let n = spec.grid.n_nodes();
    let sigma = spec.sigma2.sqrt();
    SelectionGaussianModel::new(
        DVector::from_element(n, spec.mu),
        c * spec.sigma2,
        DVector::zeros(n),
        DMatrix::identity(n, n) * (gamma / sigma),
        DMatrix::identity(n, n) * (1.0 - gamma * gamma),
        SelectionSet::replicated(spec.a_set.clone(), n)?,
    )
}
