// temporary probe for ADMM traces; will be replaced
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tfhaz_core::admm::{fit, FitConfig};
use tfhaz_core::sim::{make_truth, sample_stats, SimSetting};

#[test]
#[ignore]
fn probe_traces() {
    let setting = SimSetting::by_id(1).unwrap();
    let grid = setting.wait_grid();
    for rep in 0..6u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        rng.set_stream(rep);
        let truth = make_truth(&setting, &mut rng);
        let stats = sample_stats(&truth, &grid, setting.obs_per_row, &mut rng).unwrap();
        let cfg = FitConfig::default();
        let f = fit(&stats, &cfg).unwrap();
        let h2 = f.h.norm_squared();
        println!(
            "rep {rep}: converged {} iters {} clamp {} ||H||^2 {:.3}",
            f.converged, f.iterations, f.clamp_count, h2
        );
        let n = f.primal_trace.len();
        for i in (0..n).step_by((n / 14).max(1)) {
            println!(
                "  it {:3}: rho {:9.4} z {:12.6e} s {:12.6e} z/s {:9.3e} thr {:9.3e}",
                i + 1,
                f.rho_trace[i],
                f.primal_trace[i],
                f.dual_trace[i],
                f.primal_trace[i] / f.dual_trace[i].max(1e-300),
                1e-6 * h2
            );
        }
    }
}
