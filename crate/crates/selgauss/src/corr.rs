use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Spatial correlation families used by the stationary prior models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum CorrelationSpec {
    /// rho(tau) = exp{ -sum_k tau_k^2 / d_k^2 } with per-axis ranges d_k.
    SecondOrderExponential { ranges: Vec<f64> },
    /// rho(tau) = exp{ -|tau| / d } with a single range d.
    Exponential { range: f64 },
}

impl CorrelationSpec {
    pub fn iso_second_order(range: f64, n_axes: usize) -> Self {
        Self::SecondOrderExponential {
            ranges: vec![range; n_axes],
        }
    }

    pub fn validate(&self, n_axes: usize) -> Result<()> {
        match self {
            Self::SecondOrderExponential { ranges } => {
                if ranges.len() != n_axes {
                    return Err(Error::DimensionMismatch(format!(
                        "{} ranges for {} axes",
                        ranges.len(),
                        n_axes
                    )));
                }
                if ranges.iter().any(|&d| !(d > 0.0)) {
                    return Err(Error::ParamDomain("correlation range must be > 0".into()));
                }
            }
            Self::Exponential { range } => {
                if !(*range > 0.0) {
                    return Err(Error::ParamDomain("correlation range must be > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Correlation at lag `tau` (node units).
    pub fn rho(&self, tau: &[f64]) -> f64 {
        match self {
            Self::SecondOrderExponential { ranges } => {
                let s: f64 = tau
                    .iter()
                    .zip(ranges)
                    .map(|(t, d)| (t / d) * (t / d))
                    .sum();
                (-s).exp()
            }
            Self::Exponential { range } => {
                let norm: f64 = tau.iter().map(|t| t * t).sum::<f64>().sqrt();
                (-norm / range).exp()
            }
        }
    }
}

/// Builds the n_r x n_r correlation matrix C with C[i][j] = rho(x_i - x_j).
pub fn build_correlation_matrix(grid: &GridSpec, spec: &CorrelationSpec) -> Result<DMatrix<f64>> {
    spec.validate(grid.dims.len())?;
    let n = grid.n_nodes();
    let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.coords(i)).collect();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        c[(i, i)] = 1.0;
        for j in 0..i {
            let tau: Vec<f64> = coords[i]
                .iter()
                .zip(&coords[j])
                .map(|(a, b)| a - b)
                .collect();
            let v = spec.rho(&tau);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}
