// temporary probe: preview signal content on a stuck replicate
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use tfhaz_core::admm::{h_update, residuals, AdmmState, FitConfig};
use tfhaz_core::sim::{make_truth, sample_stats, SimSetting};
use tfhaz_core::smooth::RoughnessMatrix;

#[test]
#[ignore]
fn probe_preview_signal() {
    let setting = SimSetting::by_id(1).unwrap();
    let grid = setting.wait_grid();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    rng.set_stream(14);
    let truth = make_truth(&setting, &mut rng);
    let stats = sample_stats(&truth, &grid, setting.obs_per_row, &mut rng).unwrap();
    let cfg = FitConfig::default();
    let om = RoughnessMatrix::second_difference(30).unwrap();
    let mut state = AdmmState::init(&stats, &cfg, &om, &om).unwrap();
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;
    for i in 1..=19 {
        let before = (state.u.clone(), state.v.clone(), state.theta.clone());
        let stop = state.step(&stats, &cfg, &om, &om, &cfg.lambda).unwrap();
        if stop {
            break;
        }
        // preview candidates at x2 and x10 of the rho the state now carries
        let uv_now = &state.u * state.v.transpose();
        let mut line = format!(
            "it {i:2}: rho {:8.2} z {:9.3e} s {:9.3e} r {:8.2}",
            state.rho,
            state.primal,
            state.dual,
            state.primal / state.dual.max(1e-300)
        );
        if let Some((pu, pv, pt)) = &prev {
            for mult in [2.0, 10.0] {
                let cand = state.rho * mult;
                let ahead = h_update(&stats, &state.u, &state.v, &state.theta, cand);
                let base = h_update(&stats, pu, pv, pt, cand);
                let (pz, ps) = residuals(&ahead, &uv_now, &base);
                line.push_str(&format!(
                    " | x{mult}: r' {:8.2}",
                    pz / ps.max(1e-300)
                ));
            }
        }
        println!("{line}");
        prev = Some(before);
    }
}
