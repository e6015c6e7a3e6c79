// temporary probe: iterations-to-converge at forced fixed rho
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tfhaz_core::admm::{fit, FitConfig};
use tfhaz_core::sim::{make_truth, sample_stats, SimSetting};

#[test]
#[ignore]
fn probe_forced_rho() {
    let setting = SimSetting::by_id(1).unwrap();
    let grid = setting.wait_grid();
    // find slow reps under the adaptive default, then scan fixed rho
    let mut slow = Vec::new();
    for rep in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(2026);
        rng.set_stream(rep);
        let truth = make_truth(&setting, &mut rng);
        let stats = sample_stats(&truth, &grid, setting.obs_per_row, &mut rng).unwrap();
        let f = fit(&stats, &FitConfig::default()).unwrap();
        if f.iterations > 100 {
            slow.push((rep, stats));
        }
    }
    println!("slow reps: {:?}", slow.iter().map(|s| s.0).collect::<Vec<_>>());
    for (rep, stats) in &slow {
        let mut line = format!("rep {rep}:");
        for rho in [4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0] {
            let cfg = FitConfig {
                rho0: rho,
                adapt_rho: false,
                ..FitConfig::default()
            };
            let f = fit(stats, &cfg).unwrap();
            line.push_str(&format!(
                " rho{rho}={}{}",
                f.iterations,
                if f.converged { "" } else { "*" }
            ));
        }
        println!("{line}");
    }
}
