// temporary probe: which reps are slow and what binds in their tails
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tfhaz_core::admm::{fit, FitConfig};
use tfhaz_core::sim::{make_truth, sample_stats, SimSetting};

#[test]
#[ignore]
fn probe_slow_reps() {
    let setting = SimSetting::by_id(1).unwrap();
    let grid = setting.wait_grid();
    for rep in 0..100u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        rng.set_stream(rep);
        let truth = make_truth(&setting, &mut rng);
        let stats = sample_stats(&truth, &grid, setting.obs_per_row, &mut rng).unwrap();
        let f = fit(&stats, &FitConfig::default()).unwrap();
        if f.iterations > 100 {
            let n = f.primal_trace.len();
            let h2 = f.h.norm_squared();
            println!(
                "rep {rep}: iters {} rho_final {} thr {:.3e}",
                f.iterations,
                f.rho_trace.last().unwrap(),
                1e-6 * h2
            );
            for i in (18..n).step_by(12) {
                println!(
                    "  it {:3}: rho {:7.2} z {:10.4e} s {:10.4e}",
                    i + 1,
                    f.rho_trace[i],
                    f.primal_trace[i],
                    f.dual_trace[i]
                );
            }
        }
    }
}
