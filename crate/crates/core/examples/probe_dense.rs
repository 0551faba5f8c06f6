use dyadic_factor::operator::HaarOperator;
use dyadic_factor::quasi_diag::{quasi_diagonalize, verify_almost_diagonal, verify_stage_soundness, EpsSchedule, Mode};

fn main() {
    let t0 = std::time::Instant::now();
    let t = HaarOperator::<f64>::random_contraction(6, 1).unwrap();
    println!("gen+normalize: {:?} (scale {:?})", t0.elapsed(), t.metadata.scale);
    let t1 = std::time::Instant::now();
    let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::BestEffort).unwrap();
    println!("quasidiag: {:?}, alive {}", t1.elapsed(), sys.alive_positions().len());
    let t2 = std::time::Instant::now();
    let rows = verify_almost_diagonal(&t, &sys, &EpsSchedule::DefaultPow2);
    for r in &rows {
        println!("i={} sum={:.3e} bound={:.3e} pass={}", r.index, r.off_diag_sum, r.bound, r.pass);
    }
    println!("verify: {:?}", t2.elapsed());
    let t3 = std::time::Instant::now();
    let sound = verify_stage_soundness(&t, &sys);
    println!("soundness: {:?} all pass: {}", t3.elapsed(), sound.iter().all(|r| r.pass));
}
