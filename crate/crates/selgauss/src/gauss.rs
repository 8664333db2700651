//! Dense Gaussian primitives: jittered Cholesky factorization, partitioned
//! conditioning and log-density evaluation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::normal::LN_2PI;

/// Mean/covariance pair for a dense Gaussian block.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with {}x{} covariance",
                n,
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidModel(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Cholesky factorization with escalating jitter.
///
/// If plain factorization fails, eps*I is added with eps stepping
/// 1e-12 -> 1e-8 by factors of 10 (scaled by the largest diagonal entry);
/// beyond that the matrix is treated as genuinely non-PSD.
pub fn chol_with_jitter(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if cov.nrows() == 0 {
        return Ok(Cholesky::new(DMatrix::zeros(0, 0)).expect("empty cholesky"));
    }
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch);
    }
    let scale = (0..cov.nrows())
        .map(|i| cov[(i, i)].abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let mut eps = 1e-12;
    while eps <= 1e-8 {
        let mut m = cov.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += eps * scale;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch);
        }
        eps *= 10.0;
    }
    Err(Error::LinAlg(format!(
        "covariance of dimension {} not factorizable after max jitter",
        cov.nrows()
    )))
}

/// log phi_n(x; mu, Sigma) via the triangular factor (no explicit determinant).
pub fn log_gaussian_pdf(x: &DVector<f64>, params: &GaussianParams) -> Result<f64> {
    let n = params.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x of length {} for {}-dim Gaussian",
            x.len(),
            n
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let chol = chol_with_jitter(&params.cov)?;
    let l = chol.l_dirty();
    let mut log_det_half = 0.0;
    for i in 0..n {
        log_det_half += l[(i, i)].ln();
    }
    let centered = x - &params.mean;
    let z = chol.solve(&centered); // Sigma^{-1} (x - mu)
    let quad = centered.dot(&z);
    Ok(-0.5 * (n as f64) * LN_2PI - log_det_half - 0.5 * quad)
}

/// Conditions a joint Gaussian on exact values at `observed_idx`.
///
/// Returns the conditional law of the remaining components, in their original
/// relative order, via the partitioned (Schur complement) formulas.
pub fn condition_gaussian(
    joint: &GaussianParams,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<GaussianParams> {
    let n = joint.dim();
    if observed_idx.len() != observed_vals.len() {
        return Err(Error::DimensionMismatch(
            "observed index/value length mismatch".into(),
        ));
    }
    let mut seen = vec![false; n];
    for &i in observed_idx {
        if i >= n {
            return Err(Error::ParamDomain(format!("observed index {i} out of range")));
        }
        if seen[i] {
            return Err(Error::ParamDomain(format!("duplicate observed index {i}")));
        }
        seen[i] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    let m = free.len();
    let k = observed_idx.len();
    if m == 0 {
        return GaussianParams::new(DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    if k == 0 {
        return Ok(joint.clone());
    }

    let sigma_oo = DMatrix::from_fn(k, k, |a, b| joint.cov[(observed_idx[a], observed_idx[b])]);
    let sigma_fo = DMatrix::from_fn(m, k, |a, b| joint.cov[(free[a], observed_idx[b])]);
    let sigma_ff = DMatrix::from_fn(m, m, |a, b| joint.cov[(free[a], free[b])]);
    let mu_o = DVector::from_fn(k, |a, _| joint.mean[observed_idx[a]]);
    let mu_f = DVector::from_fn(m, |a, _| joint.mean[free[a]]);

    let chol = chol_with_jitter(&sigma_oo)?;
    let innov = observed_vals - mu_o;
    let w = chol.solve(&innov); // Sigma_oo^{-1} (v - mu_o)
    let mean = mu_f + &sigma_fo * w;
    let gain = chol.solve(&sigma_fo.transpose()); // Sigma_oo^{-1} Sigma_of
    let cov = sigma_ff - &sigma_fo * gain;
    // symmetrize away factorization round-off
    let cov = (&cov + cov.transpose()) * 0.5;
    GaussianParams::new(mean, cov)
}
