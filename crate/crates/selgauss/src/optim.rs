//! Derivative-free optimizers: golden-section line search and Nelder-Mead,
//! plus Latin hypercube start points for multistart runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Maximizes a unimodal function on [lo, hi] to within `tol` in x.
pub fn golden_section_max(f: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub n_evals: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex maximization with the standard coefficients
/// (reflect 1, expand 2, contract 1/2, shrink 1/2).
///
/// Converges when the simplex function spread and edge lengths both fall
/// below `tol` (relative to the incumbent scale).
pub fn nelder_mead_max(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: &[f64],
    tol: f64,
    max_iter: usize,
) -> NelderMeadResult {
    let n = x0.len();
    let mut n_evals = 0usize;
    let eval = |f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], c: &mut usize| -> f64 {
        *c += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 0.1 };
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex
        .iter()
        .map(|v| eval(f, v, &mut n_evals))
        .collect();

    let mut converged = false;
    for _ in 0..max_iter {
        // order best (largest f) first
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fvals[b].partial_cmp(&fvals[a]).unwrap_or(std::cmp::Ordering::Equal));
        let simplex_sorted: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let fvals_sorted: Vec<f64> = idx.iter().map(|&i| fvals[i]).collect();
        simplex = simplex_sorted;
        fvals = fvals_sorted;

        let scale = fvals[0].abs().max(1.0);
        let spread = fvals[0] - fvals[n];
        let size = (0..n)
            .map(|j| {
                simplex
                    .iter()
                    .skip(1)
                    .map(|v| (v[j] - simplex[0][j]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if spread.abs() < tol * scale && size < tol {
            converged = true;
            break;
        }

        // centroid of all but the worst
        let mut cen = vec![0.0f64; n];
        for v in simplex.iter().take(n) {
            for j in 0..n {
                cen[j] += v[j] / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let refl: Vec<f64> = (0..n).map(|j| cen[j] + (cen[j] - worst[j])).collect();
        let f_refl = eval(f, &refl, &mut n_evals);

        if f_refl > fvals[0] {
            let exp: Vec<f64> = (0..n).map(|j| cen[j] + 2.0 * (cen[j] - worst[j])).collect();
            let f_exp = eval(f, &exp, &mut n_evals);
            if f_exp > f_refl {
                simplex[n] = exp;
                fvals[n] = f_exp;
            } else {
                simplex[n] = refl;
                fvals[n] = f_refl;
            }
        } else if f_refl > fvals[n - 1] {
            simplex[n] = refl;
            fvals[n] = f_refl;
        } else {
            let (base, f_base) = if f_refl > fvals[n] {
                (refl.clone(), f_refl)
            } else {
                (worst.clone(), fvals[n])
            };
            let con: Vec<f64> = (0..n).map(|j| cen[j] + 0.5 * (base[j] - cen[j])).collect();
            let f_con = eval(f, &con, &mut n_evals);
            if f_con > f_base {
                simplex[n] = con;
                fvals[n] = f_con;
            } else {
                // shrink toward the best vertex
                for k in 1..=n {
                    for j in 0..n {
                        simplex[k][j] = simplex[0][j] + 0.5 * (simplex[k][j] - simplex[0][j]);
                    }
                    fvals[k] = eval(f, &simplex[k].clone(), &mut n_evals);
                }
            }
        }
    }

    let best = fvals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[best].clone(),
        fx: fvals[best],
        n_evals,
        converged,
    }
}

/// Latin hypercube sample of `n_points` points within axis-aligned bounds:
/// one point per stratum per axis, strata assignments shuffled independently.
pub fn latin_hypercube(seed: u64, n_points: usize, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = bounds.len();
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut p: Vec<usize> = (0..n_points).collect();
        for k in (1..n_points).rev() {
            let j = rng.random_range(0..=k);
            p.swap(k, j);
        }
        perms.push(p);
    }
    (0..n_points)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    let (lo, hi) = bounds[j];
                    let u = (perms[j][i] as f64 + rng.random::<f64>()) / n_points as f64;
                    lo + u * (hi - lo)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn golden_section_quadratic() {
        let mut f = |x: f64| -(x - 1.7) * (x - 1.7);
        let (x, fx) = golden_section_max(&mut f, -5.0, 5.0, 1e-8);
        assert_relative_eq!(x, 1.7, epsilon = 1e-6);
        assert!(fx > -1e-12);
    }

    #[test]
    fn nelder_mead_quadratic_bowl() {
        let mut f = |x: &[f64]| -(x[0] - 2.0).powi(2) - 3.0 * (x[1] + 1.0).powi(2);
        let r = nelder_mead_max(&mut f, &[0.0, 0.0], &[0.5, 0.5], 1e-10, 2000);
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 2.0, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], -1.0, epsilon = 1e-4);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let mut f =
            |x: &[f64]| -(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let r = nelder_mead_max(&mut f, &[-1.2, 1.0], &[0.5, 0.5], 1e-12, 10_000);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn latin_hypercube_stratifies() {
        let pts = latin_hypercube(7, 10, &[(0.0, 1.0), (-2.0, 2.0)]);
        assert_eq!(pts.len(), 10);
        for j in 0..2 {
            let (lo, hi) = [(0.0, 1.0), (-2.0, 2.0)][j];
            let mut strata: Vec<usize> = pts
                .iter()
                .map(|p| {
                    assert!(p[j] >= lo && p[j] <= hi);
                    (((p[j] - lo) / (hi - lo)) * 10.0).floor() as usize
                })
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn latin_hypercube_deterministic() {
        assert_eq!(
            latin_hypercube(3, 5, &[(0.0, 1.0)]),
            latin_hypercube(3, 5, &[(0.0, 1.0)])
        );
    }
}
