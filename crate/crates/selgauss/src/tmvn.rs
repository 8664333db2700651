//! Markov chain sampler for Gaussian vectors truncated to a product selection
//! set.
//!
//! One iteration picks a random component, forms the block of the most
//! correlated components, and proposes that block from the sequential
//! truncated factorization of its conditional law given the rest. The
//! acceptance ratio is the ratio of the products of the per-component interval
//! masses along the two sequential paths.
//!
//! Conditional block moments come from the precision matrix: with Q = Sigma^-1
//! precomputed once, the block conditional covariance is Q_aa^-1 and the
//! conditional mean is x_a - Q_aa^-1 Q_a. (x - mu), so per-iteration cost is
//! O(n_a * n + n_a^3) independent of chain length.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::chol_with_jitter;
use crate::selset::SelectionSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Proposal block size n_a (capped at the problem dimension).
    pub block_size: usize,
    /// Burn-in iterations; defaults to 10x the dimension.
    pub n_burnin: Option<usize>,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Attempts allowed when searching for a valid initial state.
    pub max_init_tries: usize,
    /// Cycle through components in shuffled order instead of uniform picks.
    pub stratified: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            block_size: 100,
            n_burnin: None,
            thin: 1,
            max_init_tries: 100,
            stratified: false,
        }
    }
}

/// Stored chain output plus run diagnostics.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    pub seed: u64,
    pub n_proposals: usize,
    pub n_accepted: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainSidecar {
    seed: u64,
    config: SamplerConfig,
    acceptance_rate: f64,
    n_samples: usize,
    dim: usize,
}

impl Chain {
    /// CSV with node indices as the header and one sample per row, plus a JSON
    /// sidecar with seed, sampler config, and acceptance rate. Both files are
    /// written atomically (temp then rename).
    pub fn write_csv(
        &self,
        csv_path: &Path,
        sidecar_path: &Path,
        config: &SamplerConfig,
    ) -> Result<()> {
        let dim = self.samples.first().map_or(0, |s| s.len());
        let mut body = String::new();
        let header: Vec<String> = (0..dim).map(|i| i.to_string()).collect();
        body.push_str(&header.join(","));
        body.push('\n');
        for s in &self.samples {
            let row: Vec<String> = s.iter().map(|v| format!("{v:.17e}")).collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        write_atomic(csv_path, body.as_bytes())?;
        let sidecar = ChainSidecar {
            seed: self.seed,
            config: config.clone(),
            acceptance_rate: self.acceptance_rate,
            n_samples: self.samples.len(),
            dim,
        };
        write_atomic(sidecar_path, serde_json::to_string_pretty(&sidecar)?.as_bytes())
    }
}

/// Writes via a temp file in the same directory, then renames into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// One sequential truncated draw of a block with conditional mean `m` and
/// lower Cholesky factor `l`, using one uniform per component.
///
/// Returns the block values and the log product of per-component interval
/// masses (-inf if any mass underflowed).
fn sequential_draw(
    m: &DVector<f64>,
    l: &DMatrix<f64>,
    unions: &[&crate::selset::IntervalUnion],
    uniforms: &[f64],
) -> (Vec<f64>, f64) {
    let k = m.len();
    let mut x = vec![0.0f64; k];
    let mut z = vec![0.0f64; k];
    let mut logw = 0.0f64;
    for i in 0..k {
        let mut mi = m[i];
        for j in 0..i {
            mi += l[(i, j)] * z[j];
        }
        let sd = l[(i, i)];
        let (xi, mass, under) = unions[i].sample_truncated_normal(mi, sd, uniforms[i]);
        x[i] = xi;
        z[i] = if sd > 0.0 { (xi - mi) / sd } else { 0.0 };
        if under || mass <= 0.0 {
            logw = f64::NEG_INFINITY;
        } else if logw.is_finite() {
            logw += mass.ln();
        }
    }
    (x, logw)
}

/// Log path weight of existing block values under the same sequential scheme.
fn sequential_logweight(
    m: &DVector<f64>,
    l: &DMatrix<f64>,
    unions: &[&crate::selset::IntervalUnion],
    x: &[f64],
) -> f64 {
    let k = m.len();
    let mut z = vec![0.0f64; k];
    let mut logw = 0.0f64;
    for i in 0..k {
        let mut mi = m[i];
        for j in 0..i {
            mi += l[(i, j)] * z[j];
        }
        let sd = l[(i, i)];
        z[i] = if sd > 0.0 { (x[i] - mi) / sd } else { 0.0 };
        let mass = unions[i].mass_under_normal(mi, sd);
        if mass <= 0.0 {
            return f64::NEG_INFINITY;
        }
        logw += mass.ln();
    }
    logw
}

/// Standalone sequential block proposal given exact values on the complement.
///
/// `block_idx` and `complement_vals` partition the coordinates: the complement
/// holds every index not in the block, in increasing index order. Returns the
/// proposed block values and the log proposal weight (log product of interval
/// masses).
pub fn sequential_block_proposal(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    set: &SelectionSet,
    block_idx: &[usize],
    complement_vals: &DVector<f64>,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n || set.dim() != n {
        return Err(Error::DimensionMismatch("block proposal inputs".into()));
    }
    let mut in_block = vec![false; n];
    for &i in block_idx {
        if i >= n {
            return Err(Error::ParamDomain(format!("block index {i} out of range")));
        }
        if in_block[i] {
            return Err(Error::ParamDomain(format!("duplicate block index {i}")));
        }
        in_block[i] = true;
    }
    let comp: Vec<usize> = (0..n).filter(|&i| !in_block[i]).collect();
    if comp.len() != complement_vals.len() {
        return Err(Error::DimensionMismatch("complement value length".into()));
    }
    let k = block_idx.len();
    let sigma_bb = DMatrix::from_fn(comp.len(), comp.len(), |a, b| sigma[(comp[a], comp[b])]);
    let sigma_ab = DMatrix::from_fn(k, comp.len(), |a, b| sigma[(block_idx[a], comp[b])]);
    let sigma_aa = DMatrix::from_fn(k, k, |a, b| sigma[(block_idx[a], block_idx[b])]);
    let mu_b = DVector::from_fn(comp.len(), |a, _| mu[comp[a]]);
    let mu_a = DVector::from_fn(k, |a, _| mu[block_idx[a]]);
    let (m, cov) = if comp.is_empty() {
        (mu_a, sigma_aa)
    } else {
        let chol_bb = chol_with_jitter(&sigma_bb)?;
        let w = chol_bb.solve(&(complement_vals - mu_b));
        let gain = chol_bb.solve(&sigma_ab.transpose());
        let cov = &sigma_aa - &sigma_ab * gain;
        (mu_a + &sigma_ab * w, (&cov + cov.transpose()) * 0.5)
    };
    let l = chol_with_jitter(&cov)?.unpack();
    let unions: Vec<&crate::selset::IntervalUnion> =
        block_idx.iter().map(|&i| &set.components[i]).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let uniforms: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
    let (x, logw) = sequential_draw(&m, &l, &unions, &uniforms);
    Ok((DVector::from_vec(x), logw))
}

/// Samples N(mu, Sigma) restricted to the product set A.
pub fn sample_tmvn(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    set: &SelectionSet,
    n_samples: usize,
    config: &SamplerConfig,
    seed: u64,
) -> Result<Chain> {
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
    if n == 0 || n_samples == 0 {
        return Ok(Chain {
            samples: vec![DVector::zeros(0); n_samples],
            acceptance_rate: 1.0,
            seed,
            n_proposals: 0,
            n_accepted: 0,
        });
    }
    if config.thin == 0 {
        return Err(Error::ParamDomain("thin must be >= 1".into()));
    }
    let n_a = config.block_size.clamp(1, n);
    let chol = chol_with_jitter(sigma)?;
    let q = chol.inverse();
    let blocks = build_blocks(sigma, n_a);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // initial state: componentwise marginal draws projected onto A
    let mut x = DVector::zeros(n);
    let mut found = false;
    for _ in 0..config.max_init_tries.max(1) {
        for i in 0..n {
            let sd = sigma[(i, i)].max(0.0).sqrt();
            let y = mu[i] + sd * crate::normal::std_inv_cdf(rng.random::<f64>());
            x[i] = set.components[i].nearest_point(y);
        }
        if set.contains(x.as_slice()) {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::SamplerInit(format!(
            "no valid initial state in {} tries",
            config.max_init_tries
        )));
    }

    let n_burnin = config.n_burnin.unwrap_or(10 * n);
    let total_iters = n_burnin + n_samples * config.thin;
    let mut dx = &x - mu;
    let mut samples = Vec::with_capacity(n_samples);
    let mut n_accepted = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_pos = n; // force reshuffle on first use
    let mut uniforms = vec![0.0f64; n_a];

    for iter in 0..total_iters {
        let i = if config.stratified {
            if order_pos >= n {
                // Fisher-Yates reshuffle per sweep
                for k in (1..n).rev() {
                    let j = rng.random_range(0..=k);
                    order.swap(k, j);
                }
                order_pos = 0;
            }
            let i = order[order_pos];
            order_pos += 1;
            i
        } else {
            rng.random_range(0..n)
        };
        let a = &blocks[i];
        let k = a.len();

        let q_aa = DMatrix::from_fn(k, k, |r, c| q[(a[r], a[c])]);
        let chol_q = match Cholesky::new(q_aa.clone()) {
            Some(c) => c,
            None => chol_with_jitter(&q_aa)?,
        };
        let sigma_blk = chol_q.inverse();
        let sigma_blk = (&sigma_blk + sigma_blk.transpose()) * 0.5;
        let l_blk = chol_with_jitter(&sigma_blk)?.unpack();

        // m = x_a - Q_aa^-1 Q_a. (x - mu); Q columns are contiguous and Q is
        // symmetric, so rows are read as columns
        let mut u = DVector::zeros(k);
        for (r, &ar) in a.iter().enumerate() {
            u[r] = q.column(ar).dot(&dx);
        }
        let x_a = DVector::from_fn(k, |r, _| x[a[r]]);
        let m = &x_a - chol_q.solve(&u);

        let unions: Vec<&crate::selset::IntervalUnion> =
            a.iter().map(|&ai| &set.components[ai]).collect();
        for u in uniforms[..k].iter_mut() {
            *u = rng.random::<f64>();
        }
        let (prop, lw_prop) = sequential_draw(&m, &l_blk, &unions, &uniforms[..k]);
        let lw_cur = sequential_logweight(&m, &l_blk, &unions, x_a.as_slice());

        let accept = if lw_prop.is_finite() {
            if lw_prop >= lw_cur {
                true
            } else {
                rng.random::<f64>() < (lw_prop - lw_cur).exp()
            }
        } else {
            false
        };
        if accept {
            n_accepted += 1;
            for (r, &ar) in a.iter().enumerate() {
                x[ar] = prop[r];
                dx[ar] = prop[r] - mu[ar];
            }
        }

        if iter >= n_burnin && (iter - n_burnin + 1) % config.thin == 0 {
            if !set.contains(x.as_slice()) {
                return Err(Error::SamplerDiagnostics(
                    "stored state outside the selection set".into(),
                ));
            }
            samples.push(x.clone());
        }
    }

    if n_accepted == 0 && total_iters > 0 {
        return Err(Error::SamplerDiagnostics(format!(
            "no proposal accepted in {total_iters} iterations"
        )));
    }
    Ok(Chain {
        samples,
        acceptance_rate: n_accepted as f64 / total_iters as f64,
        seed,
        n_proposals: total_iters,
        n_accepted,
    })
}

/// For each component, the `n_a` indices with the largest absolute correlation
/// to it (always including itself); ties break toward the smaller node index.
fn build_blocks(sigma: &DMatrix<f64>, n_a: usize) -> Vec<Vec<usize>> {
    let n = sigma.nrows();
    let sd: Vec<f64> = (0..n).map(|i| sigma[(i, i)].max(0.0).sqrt()).collect();
    (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).collect();
            let corr = |j: usize| {
                if i == j {
                    return f64::INFINITY;
                }
                let d = sd[i] * sd[j];
                if d > 0.0 {
                    (sigma[(i, j)] / d).abs()
                } else {
                    0.0
                }
            };
            idx.sort_by(|&a, &b| {
                corr(b)
                    .partial_cmp(&corr(a))
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx.truncate(n_a);
            // sequential path is evaluated in sorted index order
            idx.sort_unstable();
            idx
        })
        .collect()
}
