use nalgebra::DVector;
use selgauss::grid::GridSpec;
use selgauss::inference::{log_likelihood, CorrFamily, Theta};
use selgauss::mvnprob::FrozenStream;
use selgauss::seismic::{expand_trivariate, TrivariatePriorSpec};
use selgauss::model::simulate_prior;
use selgauss::tmvn::SamplerConfig;

fn ols(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let tbar = (y.len() as f64 - 1.0) / 2.0;
    let ybar = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, &v) in y.iter().enumerate() {
        let dt = t as f64 - tbar;
        num += dt * (v - ybar);
        den += dt * dt;
    }
    let s = num / den;
    (ybar - s * tbar, s)
}

fn main() {
    let n_t = 55usize;
    let spec = TrivariatePriorSpec::synthetic_default(n_t);
    let model = expand_trivariate(&spec).unwrap();
    let grid = GridSpec::line(n_t).unwrap();
    for rep in [0u64, 3] {
        let rep_seed = 4242u64
            .wrapping_add(rep + 1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let sim = simulate_prior(&model, 1, &SamplerConfig::default(), rep_seed).unwrap();
        let r = &sim.samples[0];
        let k = 1usize; // log_vs
        let trace: Vec<f64> = (0..n_t).map(|t| r[k * n_t + t]).collect();
        let (b0, b1) = ols(&trace);
        let res = DVector::from_iterator(
            n_t,
            trace.iter().enumerate().map(|(t, &v)| v - b0 - b1 * t as f64),
        );
        let truth = Theta { mu: 0.0, sigma2: 0.025, d: 1.61, gamma: 0.9061, a: 0.2619 };
        let fitted = Theta { mu: 0.0, sigma2: 0.157f64.powi(2), d: 1.60, gamma: 0.75, a: 0.35 };
        for (name, th) in [("truth ", truth), ("fitted", fitted)] {
            for n_mc in [500usize, 5000] {
                let mut vals = Vec::new();
                for s in 0..5u64 {
                    let stream = FrozenStream::new(1000 + s, n_mc, n_t);
                    let ll =
                        log_likelihood(&th, &res, &grid, CorrFamily::Exponential, &stream)
                            .unwrap();
                    vals.push(ll);
                }
                println!("rep {rep} {name} n_mc={n_mc:5}: {vals:.3?}");
            }
        }
    }
}
