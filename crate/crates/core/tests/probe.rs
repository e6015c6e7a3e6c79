// temporary probe for estimator behavior; will be replaced
use tfhaz_core::sim::{median, run_study, SimSetting};

#[test]
#[ignore]
fn probe_orderings() {
    for id in 1..=6u8 {
        let setting = SimSetting::by_id(id).unwrap();
        let start = std::time::Instant::now();
        let rows = run_study(&setting, 20, 7).unwrap();
        let mle: Vec<f64> = rows.iter().map(|r| r.mle_error).collect();
        let tfh: Vec<f64> = rows.iter().map(|r| r.tfh_error).collect();
        let conv = rows.iter().filter(|r| r.converged).count();
        println!(
            "setting {id}: median mle {:.4} tfh {:.4} converged {}/20 elapsed {:?}",
            median(&mle),
            median(&tfh),
            conv,
            start.elapsed()
        );
    }
}
