//! Sequential importance-sampling estimator of Phi_n(A; mu, Sigma) for
//! product selection sets, with an optional mean shift in the importance
//! density.
//!
//! Components are processed in fixed index order. All accumulation happens in
//! log scale: for large n the set probability itself underflows f64, so the
//! log value and a relative standard error are first-class outputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::chol_with_jitter;
use crate::selset::SelectionSet;

/// Result of one probability estimation.
#[derive(Debug, Clone)]
pub struct ProbEstimate {
    /// Probability in [0, 1]; may underflow to 0 for large n (see `log_value`).
    pub value: f64,
    /// Standard error of `value` (sample std dev of weights / sqrt(N)).
    pub std_error: f64,
    /// log of the estimate, finite whenever any weight was nonzero.
    pub log_value: f64,
    /// Relative standard error, i.e. std_error / value.
    pub rel_std_error: f64,
    pub n_samples: usize,
    pub mean_shift: DVector<f64>,
}

/// Mean-shift policy for the importance density.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanShift {
    #[default]
    Auto,
    Zero,
    #[serde(skip)]
    Fixed(DVector<f64>),
}

/// Frozen uniform-draw stream: the underlying uniforms are fixed at
/// construction so repeated estimates across different (mu, Sigma, A) share
/// the same randomness. Required to keep optimization objectives smooth.
#[derive(Debug, Clone)]
pub struct FrozenStream {
    n_samples: usize,
    dim: usize,
    uniforms: Vec<f64>,
}

impl FrozenStream {
    pub fn new(seed: u64, n_samples: usize, dim: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let uniforms = (0..n_samples * dim).map(|_| rng.random::<f64>()).collect();
        Self {
            n_samples,
            dim,
            uniforms,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn u(&self, sample: usize, component: usize) -> f64 {
        self.uniforms[sample * self.dim + component]
    }

    /// Stream whose component c reads this stream's component (c + offset)
    /// mod dim. Problems that are index translates of one another then see
    /// translated sample paths, which keeps their estimates aligned.
    pub fn rotated(&self, offset: usize) -> Self {
        let k = offset % self.dim;
        let mut uniforms = Vec::with_capacity(self.uniforms.len());
        for j in 0..self.n_samples {
            for c in 0..self.dim {
                uniforms.push(self.u(j, (c + k) % self.dim));
            }
        }
        Self {
            n_samples: self.n_samples,
            dim: self.dim,
            uniforms,
        }
    }
}

/// Per-component mean shift moving mu toward the probability-weighted midpoint
/// of the dominant interval of each A_i under the marginal N(mu_i, Sigma_ii).
///
/// The shift is zero when mu_i already lies in the dominant interval, and zero
/// when no interval dominates (symmetric sets).
pub fn choose_mean_shift(mu: &DVector<f64>, sigma: &DMatrix<f64>, set: &SelectionSet) -> DVector<f64> {
    let n = mu.len();
    let mut eta = DVector::zeros(n);
    for i in 0..n {
        let union = &set.components[i];
        if union.is_full() {
            continue;
        }
        let sd = sigma[(i, i)].max(0.0).sqrt();
        if sd == 0.0 {
            continue;
        }
        let (dominant, best, total) = union.dominant_interval(mu[i], sd);
        if dominant.contains(mu[i]) {
            continue;
        }
        // no dominant side: the runner-up carries (nearly) the same mass
        let runner_up = union
            .intervals()
            .iter()
            .map(|iv| {
                crate::normal::std_interval_prob((iv.lo - mu[i]) / sd, (iv.hi - mu[i]) / sd)
            })
            .fold((0.0f64, 0.0f64), |(m1, m2), p| {
                if p > m1 {
                    (p, m1)
                } else {
                    (m1, m2.max(p))
                }
            })
            .1;
        if total > 0.0 && (best - runner_up) <= 1e-9 * best {
            continue;
        }
        let target = crate::selset::IntervalUnion::new(vec![dominant])
            .expect("single interval")
            .truncated_normal_mean(mu[i], sd);
        eta[i] = target - mu[i];
    }
    eta
}

/// Estimates Phi_n(A; mu, Sigma) with N fresh uniforms from `seed`.
pub fn estimate_mvn_prob(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    set: &SelectionSet,
    n_samples: usize,
    shift: &MeanShift,
    seed: u64,
) -> Result<ProbEstimate> {
    let stream = FrozenStream::new(seed, n_samples, mu.len());
    estimate_mvn_prob_with_stream(mu, sigma, set, shift, &stream)
}

/// Same estimator, driven by a caller-supplied frozen stream.
pub fn estimate_mvn_prob_with_stream(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    set: &SelectionSet,
    shift: &MeanShift,
    stream: &FrozenStream,
) -> Result<ProbEstimate> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n || set.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "mu {}, sigma {}x{}, set {}",
            n,
            sigma.nrows(),
            sigma.ncols(),
            set.dim()
        )));
    }
    if set.is_full() {
        return Ok(ProbEstimate {
            value: 1.0,
            std_error: 0.0,
            log_value: 0.0,
            rel_std_error: 0.0,
            n_samples: stream.n_samples(),
            mean_shift: DVector::zeros(n),
        });
    }
    if stream.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "frozen stream of dim {} for {}-dim problem",
            stream.dim(),
            n
        )));
    }
    let eta = match shift {
        MeanShift::Zero => DVector::zeros(n),
        MeanShift::Auto => choose_mean_shift(mu, sigma, set),
        MeanShift::Fixed(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch("mean shift length".into()));
            }
            v.clone()
        }
    };
    let l = lower_factor(sigma)?;
    let out = run_sequential(&l, set, stream, mu, &eta)?;
    Ok(ProbEstimate {
        mean_shift: eta,
        ..out
    })
}

/// Reusable estimator: one Cholesky factor and one frozen stream, evaluated at
/// many mean vectors. Uses a zero mean shift.
pub struct PreparedEstimator<'a> {
    l: DMatrix<f64>,
    set: &'a SelectionSet,
    stream: &'a FrozenStream,
}

impl<'a> PreparedEstimator<'a> {
    pub fn new(
        sigma: &DMatrix<f64>,
        set: &'a SelectionSet,
        stream: &'a FrozenStream,
    ) -> Result<Self> {
        if sigma.nrows() != set.dim() || stream.dim() != set.dim() {
            return Err(Error::DimensionMismatch(
                "prepared estimator dimensions".into(),
            ));
        }
        Ok(Self {
            l: lower_factor(sigma)?,
            set,
            stream,
        })
    }

    /// (log Phi, relative std error) at the given mean.
    pub fn log_prob(&self, mean: &DVector<f64>) -> Result<(f64, f64)> {
        if self.set.is_full() {
            return Ok((0.0, 0.0));
        }
        let eta = DVector::zeros(mean.len());
        let est = run_sequential(&self.l, self.set, self.stream, mean, &eta)?;
        Ok((est.log_value, est.rel_std_error))
    }
}

fn lower_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = chol_with_jitter(sigma)?;
    Ok(chol.unpack())
}

/// Core sequential pass. Samples are drawn at mean `mu + eta`; the returned
/// estimate targets Phi(A; mu, Sigma).
fn run_sequential(
    l: &DMatrix<f64>,
    set: &SelectionSet,
    stream: &FrozenStream,
    mu: &DVector<f64>,
    eta: &DVector<f64>,
) -> Result<ProbEstimate> {
    let n = mu.len();
    let n_samples = stream.n_samples();
    // t = L^{-1} eta (forward substitution); zero when no shift
    let shifted = eta.iter().any(|&e| e != 0.0);
    let mut t = vec![0.0f64; n];
    if shifted {
        for i in 0..n {
            let mut s = eta[i];
            for k in 0..i {
                s -= l[(i, k)] * t[k];
            }
            let d = l[(i, i)];
            if d <= 0.0 {
                return Err(Error::LinAlg("non-positive Cholesky diagonal".into()));
            }
            t[i] = s / d;
        }
    }
    let t_norm2: f64 = t.iter().map(|v| v * v).sum();

    let mut log_weights = Vec::with_capacity(n_samples);
    let mut max_logw = f64::NEG_INFINITY;
    let mut z = vec![0.0f64; n];
    for j in 0..n_samples {
        let mut logw = -0.5 * t_norm2;
        let mut dead = false;
        for i in 0..n {
            let mut m = mu[i] + eta[i];
            for k in 0..i {
                m += l[(i, k)] * z[k];
            }
            let sd = l[(i, i)];
            let union = &set.components[i];
            let (x, mass, underflow) = union.sample_truncated_normal(m, sd, stream.u(j, i));
            if underflow || mass <= 0.0 {
                dead = true;
                // keep a valid path point so later conditionals stay sensible
                z[i] = if sd > 0.0 { (x - m) / sd } else { 0.0 };
                continue;
            }
            z[i] = if sd > 0.0 { (x - m) / sd } else { 0.0 };
            logw += mass.ln();
            if shifted {
                logw -= t[i] * z[i];
            }
        }
        let lw = if dead { f64::NEG_INFINITY } else { logw };
        max_logw = max_logw.max(lw);
        log_weights.push(lw);
    }

    if !max_logw.is_finite() {
        return Err(Error::Underflow(format!(
            "all {n_samples} importance weights were zero (max log-weight -inf)"
        )));
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &lw in &log_weights {
        let v = if lw.is_finite() {
            (lw - max_logw).exp()
        } else {
            0.0
        };
        sum += v;
        sum_sq += v * v;
    }
    let mean_v = sum / n_samples as f64;
    let var_v = (sum_sq / n_samples as f64 - mean_v * mean_v).max(0.0);
    let se_v = (var_v / n_samples as f64).sqrt();
    let log_value = max_logw + mean_v.ln();
    let rel = se_v / mean_v;
    let value = log_value.exp();
    Ok(ProbEstimate {
        value,
        std_error: value * rel,
        log_value,
        rel_std_error: rel,
        n_samples,
        mean_shift: DVector::zeros(n),
    })
}
