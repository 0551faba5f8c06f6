use dyadic_factor::operator::HaarOperator;
use dyadic_factor::quasi_diag::{quasi_diagonalize, EpsSchedule, Mode};

fn main() {
    let t = HaarOperator::<f64>::zero(7);
    let t0 = std::time::Instant::now();
    let sys = quasi_diagonalize(&t, 7, &EpsSchedule::DefaultPow2, Mode::BestEffort).unwrap();
    println!("quasidiag n=7: {:?}, alive {}", t0.elapsed(), sys.alive_positions().len());
    let members: usize = (0..sys.len()).map(|p| sys.entry(p).collection.len()).sum();
    println!("total members {members}");
}
