use selgauss::seismic::{run_case_study, CaseStudyConfig};

fn main() {
    for (nps, a_hi) in [(1000usize, 0.35f64), (1000, 0.5), (300, 0.35)] {
        let mut cfg = CaseStudyConfig::synthetic_default(55, 5);
        cfg.seed = 4242;
        cfg.n_post_samples = nps;
        cfg.fit.bounds.a.1 = a_hi;
        println!("nps={nps} a_hi={a_hi}");
        let t0 = std::time::Instant::now();
        let report = run_case_study(&cfg).unwrap();
        println!(
            "win={:?} ({:.0}s)",
            report.mse_win_fraction,
            t0.elapsed().as_secs_f64()
        );
        for r in &report.replicates {
            for k in 0..3 {
                print!(
                    "  v{k}: mse {:.2e}/{:.2e} cov {:.2}/{:.2}",
                    r.selection[k].mse,
                    r.gaussian[k].mse,
                    r.selection[k].coverage_post,
                    r.gaussian[k].coverage_post
                );
            }
            println!();
        }
        println!(
            "mean selection cov_post: {:?}",
            [
                report.mean_selection[0].coverage_post,
                report.mean_selection[1].coverage_post,
                report.mean_selection[2].coverage_post
            ]
        );
    }
}
