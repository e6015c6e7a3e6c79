// temporary probe for convergence statistics; will be replaced
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tfhaz_core::admm::{fit, FitConfig};
use tfhaz_core::sim::{make_truth, sample_stats, SimSetting};

#[test]
#[ignore]
fn probe_convergence_stats() {
    let setting = SimSetting::by_id(1).unwrap();
    let grid = setting.wait_grid();
    let mut iters = Vec::new();
    let mut conv100 = 0;
    let mut rho_late = 0;
    let start = std::time::Instant::now();
    for rep in 0..100u64 {
        let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(7);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(rep);
        let truth = make_truth(&setting, &mut rng);
        let stats = sample_stats(&truth, &grid, setting.obs_per_row, &mut rng).unwrap();
        let f = fit(&stats, &FitConfig::default()).unwrap();
        iters.push(f.iterations);
        if f.converged && f.iterations <= 100 {
            conv100 += 1;
        }
        let last_change = f
            .rho_trace
            .windows(2)
            .rposition(|w| w[0] != w[1])
            .map(|i| i + 2)
            .unwrap_or(1);
        if last_change > 20 {
            rho_late += 1;
            if rho_late <= 3 {
                println!("rep {rep}: rho last change at iter {last_change}, iters {}", f.iterations);
            }
        }
    }
    iters.sort();
    println!(
        "converged<=100: {conv100}/100, rho changed after iter 20 in {rho_late} reps, iters min/median/p95/max = {}/{}/{}/{} elapsed {:?}",
        iters[0], iters[50], iters[94], iters[99], start.elapsed()
    );
}
