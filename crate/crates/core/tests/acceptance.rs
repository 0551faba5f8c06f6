//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its elapsed time and asserting the stated tolerances.

use dyadic_factor::collections::IntervalCollection;
use dyadic_factor::combinatorics::{
    comb_cover, frequency_weight, ramsey_extract, Coloring, CoverAxis, FrequencyWeightContext,
    RamseyColor,
};
use dyadic_factor::dyadic::{
    exact_to_f64, intervals_up_to, pow2, rectangles_up_to, DyadicInterval, DyadicRectangle, Exact,
};
use dyadic_factor::error::CoreError;
use dyadic_factor::factor::{
    factor_identity, plan_dimensions, FactorParams, HChoice, Overrides,
};
use dyadic_factor::gamlen_gaudet::{
    bitree_verify, condense_2d, unconditionality_factor, BlockFamily,
};
use dyadic_factor::haar::{rademacher_block, HaarVector};
use dyadic_factor::norms::{bmo_norm_exact, bmo_norm_lower, h1_norm, BmoLowerBudget};
use dyadic_factor::operator::{shared_indexer, HaarOperator};
use dyadic_factor::order::{
    block_size, block_weight, count_up_to_depth, order_compare, order_index, order_rect,
    shell_blocks,
};
use dyadic_factor::quasi_diag::{
    block_q, quasi_diagonalize, verify_almost_diagonal, verify_block_system,
    verify_stage_soundness, EpsSchedule, Mode,
};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn finish(criterion: u32, name: &str, start: Instant, budget_s: u64, pass: bool) {
    let elapsed = start.elapsed();
    println!(
        "criterion {criterion:2} ({name}): {} in {:.2?} (budget {budget_s} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed
    );
    assert!(pass, "criterion {criterion} ({name}) failed");
    assert!(
        elapsed.as_secs() < budget_s,
        "criterion {criterion} exceeded its {budget_s} s budget: {elapsed:.2?}"
    );
}

fn iv(l: u32, p: u64) -> DyadicInterval {
    DyadicInterval::new(l, p).unwrap()
}

#[test]
fn criterion_01_ordering() {
    let start = Instant::now();
    let mut pass = true;

    // bijection onto {1, ..., (2^(n+1)-1)^2} for every n <= 6
    for n in 0..=6u32 {
        let mut indices: Vec<u128> = rectangles_up_to(n).iter().map(order_index).collect();
        indices.sort_unstable();
        let expect: Vec<u128> = (1..=count_up_to_depth(n)).collect();
        pass &= indices == expect;
    }
    // band property for every rectangle of R_6
    for r in rectangles_up_to(6) {
        let k = r.shell();
        let idx = order_index(&r);
        let lo = ((1u128 << k) - 1).pow(2);
        let hi = ((1u128 << (k + 1)) - 1).pow(2);
        pass &= lo < idx && idx <= hi;
    }
    // the restricted two-rectangle inequality: it depends only on the side
    // pair, so verify it exactly for every comparable block pair of R_6 and
    // double-check the order relation on the full rectangle pairs at depth 3
    for m0 in 0..=6u32 {
        for n0 in 0..=6u32 {
            for m1 in m0..=6u32 {
                for n1 in n0..=6u32 {
                    if (m0, n0) == (m1, n1) {
                        continue;
                    }
                    // 4 |I1 x J1| <= |I0 x J0| / min(|I1|, |J1|) exactly
                    let lhs = pow2(2 - (m1 as i64) - (n1 as i64));
                    let rhs = pow2(m1.max(n1) as i64 - m0 as i64 - n0 as i64);
                    pass &= lhs <= rhs;
                    pass &= block_weight(m0, n0) < block_weight(m1, n1);
                }
            }
        }
    }
    let rects3 = rectangles_up_to(3);
    for r0 in &rects3 {
        for r1 in &rects3 {
            let p_shape = r0.x.level() <= r1.x.level()
                && r0.y.level() <= r1.y.level()
                && r0.block() != r1.block();
            if p_shape {
                pass &= order_compare(r0, r1) == std::cmp::Ordering::Less;
                let lhs = r1.measure() * Exact::from_integer(4.into());
                let rhs = r0.measure() / pow2(-(r1.shell() as i64));
                pass &= lhs <= rhs;
            }
        }
    }
    // the inverse round-trips on R_6
    for r in rectangles_up_to(6) {
        pass &= order_rect(order_index(&r), 6).unwrap() == r;
    }
    // shells enumerate consistently with the weight
    for k in 0..=7u32 {
        let total: u128 = shell_blocks(k).iter().map(|&(m, n)| block_size(m, n)).sum();
        pass &= total == count_up_to_depth(k) - if k == 0 { 0 } else { count_up_to_depth(k - 1) };
    }
    finish(1, "ordering", start, 30, pass);
}

#[test]
fn criterion_02_carleson() {
    let start = Instant::now();
    let mut pass = true;
    for n in 0..=12u32 {
        let c = IntervalCollection::new(intervals_up_to(n)).carleson_constant();
        pass &= c == Exact::from_integer(BigInt::from(n + 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pool = intervals_up_to(6);
    for _ in 0..200 {
        let a: IntervalCollection = pool
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.35))
            .collect();
        let b: IntervalCollection = pool
            .iter()
            .copied()
            .filter(|_| rng.gen_bool(0.35))
            .collect();
        let union = a.union_with(&b);
        pass &= union.carleson_constant() <= a.carleson_constant() + b.carleson_constant();
    }
    finish(2, "carleson", start, 10, pass);
}

#[test]
fn criterion_03_ramsey() {
    let start = Instant::now();
    let mut pass = true;
    let n = 8u32;
    let n_plus_1 = Exact::from_integer(BigInt::from(n + 1));
    for seed in 0..100u64 {
        let coloring = Coloring::random(n, seed);
        let res = ramsey_extract(&coloring, 1).expect("extraction succeeds");
        // exhaustive monochromaticity, independently of the extractor's own check
        for i in res.a.members() {
            for j in res.b.members() {
                pass &= coloring.contains(&DyadicRectangle::new(*i, *j))
                    == (res.color == RamseyColor::Inside);
            }
        }
        pass &= res.carleson_a >= Exact::one();
        pass &= res.carleson_b >= pow2(-3) * &n_plus_1;
        for (m, step) in res.trace.iter().enumerate() {
            pass &= step.carleson_kept >= pow2(-(m as i64 + 1)) * &n_plus_1;
        }
    }
    // forced hand trace: everything colored, n = 4, n0 = 1
    let res = ramsey_extract(&Coloring::everything(4), 1).unwrap();
    pass &= res.color == RamseyColor::Inside;
    pass &= res.a == IntervalCollection::new(intervals_up_to(1));
    pass &= res.b == IntervalCollection::new(intervals_up_to(4));
    pass &= res.carleson_a == Exact::from_integer(2.into());
    pass &= res.carleson_b == Exact::from_integer(5.into());
    finish(3, "ramsey", start, 120, pass);
}

#[test]
fn criterion_04_norms() {
    let start = Instant::now();
    let mut pass = true;

    // closed forms: atoms
    for r in [
        DyadicRectangle::unit(),
        DyadicRectangle::new(iv(2, 1), iv(1, 0)),
        DyadicRectangle::new(iv(4, 9), iv(3, 5)),
    ] {
        let f = HaarVector::<f64>::atom(4, r, 1.0).unwrap();
        pass &= (h1_norm(&f) - exact_to_f64(&r.measure())).abs() < 1e-14;
        pass &= (bmo_norm_exact(&f, None).unwrap() - 1.0).abs() < 1e-14;
    }
    // closed forms: Rademacher blocks with |K0| = 1, seeded signs
    for (k, l0) in [(1u32, iv(0, 0)), (2, iv(1, 1)), (3, iv(2, 2))] {
        let f: HaarVector<f64> =
            rademacher_block(4, &DyadicInterval::unit(), &l0, 1, k, |i, kk| {
                (i as u64 + kk.pos()) % 2 == 0
            })
            .unwrap();
        let expect_h1 = (k as f64).sqrt() * exact_to_f64(&l0.measure());
        pass &= (h1_norm(&f) - expect_h1).abs() < 1e-12;
        if f.support_len() <= 18 {
            pass &= (bmo_norm_exact(&f, None).unwrap() - (k as f64).sqrt()).abs() < 1e-12;
        }
    }
    // Monte-Carlo quadrature of the square-function integral at N = 4
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let rects = rectangles_up_to(4);
    let mut f = HaarVector::<f64>::zero(4);
    for _ in 0..40 {
        let r = rects[rng.gen_range(0..rects.len())];
        f.set_coeff(r, rng.gen_range(-1.0..1.0)).unwrap();
    }
    let exact = h1_norm(&f);
    let grid = 4u32; // h_R^2 is constant on the level-4 grid
    let cells = 1u64 << grid;
    let mut acc = 0.0f64;
    let samples = 1_000_000u32;
    for _ in 0..samples {
        let cx = rng.gen_range(0..cells);
        let cy = rng.gen_range(0..cells);
        acc += f.square_function_sq_at(cx, cy, grid).sqrt();
    }
    let mc = acc / samples as f64;
    pass &= (mc - exact).abs() <= 0.01 * exact;

    // lower bound dominated by the exact value on random small supports
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0b0);
        let rects = rectangles_up_to(3);
        let mut g = HaarVector::<f64>::zero(3);
        for _ in 0..rng.gen_range(1..=12) {
            let r = rects[rng.gen_range(0..rects.len())];
            g.set_coeff(r, rng.gen_range(-2.0..2.0)).unwrap();
        }
        if g.is_zero() {
            continue;
        }
        let exact = bmo_norm_exact(&g, None).unwrap();
        let lower = bmo_norm_lower(&g, &BmoLowerBudget::default(), seed);
        pass &= lower.value <= exact + 1e-10;
    }
    finish(4, "norms", start, 180, pass);
}

#[test]
fn criterion_05_covering_lemma() {
    let start = Instant::now();
    let mut pass = true;
    let depth = 13u32;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let rects = rectangles_up_to(depth.min(6));
    for trial in 0..50u64 {
        let i = 1 + (trial % 2) as usize;
        let k0 = iv((trial % 2) as u32, 0);
        let l0 = iv((trial / 2 % 2) as u32, (trial / 4 % 2 & ((trial / 2 % 2))) as u64);
        let base = DyadicRectangle::new(k0, l0);
        let r = (trial % 2) as u32;
        let delta = if trial % 3 == 0 { pow2(-1) } else { pow2(-2) };
        // scan bound floor(i^2 / (delta^2 tau^2)) + r <= 12
        let delta_f = exact_to_f64(&delta);
        let tau = (i as f64) / (delta_f * ((12 - r) as f64 - 0.25).sqrt());
        let bound = ((i as f64).powi(2) / (delta_f * delta_f * tau * tau)).floor() as u32 + r;
        assert!(bound <= 12, "construction picked a bound of {bound}");

        // hypotheses: sum ||x_j||_BMO <= 1, sum ||y_j||_H1 <= |K0 x L0|
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..i {
            let mut x = HaarVector::<f64>::zero(depth);
            let mut y = HaarVector::<f64>::zero(depth);
            for _ in 0..8 {
                x.set_coeff(rects[rng.gen_range(0..rects.len())], rng.gen_range(-1.0..1.0))
                    .unwrap();
                y.set_coeff(rects[rng.gen_range(0..rects.len())], rng.gen_range(-1.0..1.0))
                    .unwrap();
            }
            let bx = bmo_norm_exact(&x, None).unwrap();
            if bx > 0.0 {
                x = x.scaled(1.0 / (i as f64 * bx));
            }
            let hy = h1_norm(&y);
            if hy > 0.0 {
                y = y.scaled(exact_to_f64(&base.measure()) / (i as f64 * hy));
            }
            xs.push(x);
            ys.push(y);
        }
        let ctx = FrequencyWeightContext::new(xs, ys);
        let res = comb_cover(&base, &ctx, i, tau, &delta, r, 12, CoverAxis::X);
        pass &= res.met;
        pass &= res.covered_fraction >= Exact::one() - &delta;
        pass &= res.level_rel >= r && res.level_rel <= bound;
        for member in &res.collection {
            pass &= member.y == base.y; // non-scanned side intact
            pass &= frequency_weight(&ctx, member) <= tau * exact_to_f64(&member.measure()) + 1e-15;
        }
        // members pairwise disjoint (same level, distinct positions)
        let coll = dyadic_factor::collections::RectangleCollection::new(res.collection.clone());
        pass &= coll.is_pairwise_disjoint();
    }
    finish(5, "covering-lemma", start, 120, pass);
}

#[test]
fn criterion_06_condensation() {
    let start = Instant::now();
    let mut pass = true;
    let d4 = IntervalCollection::new(intervals_up_to(4));
    let sys = condense_2d(&d4, &d4, 1, true).expect("strict condensation succeeds");
    let ambient = sys.ambient_depth().max(1);
    let e = sys.embedding::<f64>(ambient).unwrap();
    let p = sys.projection::<f64>(ambient).unwrap();
    let ix = shared_indexer(1);
    for pos in 0..ix.len() {
        let atom = HaarVector::atom(1, ix.rect(pos), 1.0).unwrap();
        let back = p.apply(&e.apply(&atom));
        for q in 0..ix.len() {
            let expect = if q == pos { 1.0 } else { 0.0 };
            pass &= (back.coeff(&ix.rect(q)) - expect).abs() <= 1e-12;
        }
    }
    let bt = bitree_verify(&sys);
    pass &= bt.violations.is_empty();
    pass &= bt.c2.is_finite();
    let c1 = unconditionality_factor(&e, 200, 6);
    pass &= c1.is_finite() && c1 >= 1.0;
    finish(6, "condensation", start, 30, pass);
}

#[test]
fn criterion_07_quasidiag_identity() {
    let start = Instant::now();
    let mut pass = true;
    let t = HaarOperator::<f64>::identity(4);
    let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict)
        .expect("strict identity run completes");
    let rows = verify_almost_diagonal(&t, &sys, &EpsSchedule::DefaultPow2);
    for row in &rows {
        pass &= row.off_diag_sum == 0.0;
    }
    for p in 0..sys.len() {
        let l2 = &sys.stages[p].block_l2_sq;
        let r = sys.rect_of(p);
        pass &= *l2 >= r.measure() / Exact::from_integer(2.into());
        pass &= *l2 <= r.measure();
    }
    let report = verify_block_system(&sys);
    pass &= report.passed;
    pass &= report.path_checked > 0;
    finish(7, "quasidiag-identity", start, 60, pass);
}

#[test]
fn criterion_08_quasidiag_generic() {
    let start = Instant::now();
    let mut pass = true;
    for seed in 0..10u64 {
        let t = HaarOperator::<f64>::random_contraction(6, seed).expect("fits the memory cap");
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::BestEffort)
            .expect("best-effort completes");
        let rows = verify_almost_diagonal(&t, &sys, &EpsSchedule::DefaultPow2);

        // independent recomputation, straight from the dense matrix
        let ix = sys_indexer(&t);
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0f64;
            let bi = sys.entry(i).collection.members();
            for j in 0..sys.len() {
                if i == j {
                    continue;
                }
                let mut b = vec![0.0f64; ix.len()];
                for r in sys.entry(j).collection.members() {
                    b[ix.position(r).unwrap()] = 1.0;
                }
                let tb = t.apply_dense(&b);
                let mut pairing = 0.0f64;
                for r in bi {
                    pairing += tb[ix.position(r).unwrap()] * exact_to_f64(&r.measure());
                }
                sum += pairing.abs();
            }
            pass &= (sum - row.off_diag_sum).abs() <= 1e-10;
            pass &= row.pass;
        }
        let sound = verify_stage_soundness(&t, &sys);
        pass &= sound.iter().all(|r| r.pass);
    }
    finish(8, "quasidiag-generic", start, 600, pass);
}

fn sys_indexer(t: &HaarOperator<f64>) -> std::sync::Arc<dyadic_factor::order::RectIndexer> {
    shared_indexer(t.depth())
}

#[test]
fn criterion_09_projection() {
    let start = Instant::now();
    let mut pass = true;
    let t = HaarOperator::<f64>::identity(4);
    let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict).unwrap();
    let q = block_q(&sys).expect("nonzero blocks");
    let d = q.dim();
    // Q^2 = Q against every atom and pairing self-adjointness on random pairs
    let ix = shared_indexer(4);
    for pos in 0..d {
        let atom = HaarVector::<f64>::atom(4, ix.rect(pos), 1.0).unwrap();
        let q1 = q.apply(&atom);
        let q2 = q.apply(&q1);
        let diff = q2.minus(&q1).unwrap();
        let worst = diff
            .support()
            .map(|(_, a)| a.abs())
            .fold(0.0f64, f64::max);
        pass &= worst <= 1e-10;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let mut f = HaarVector::<f64>::zero(4);
        let mut g = HaarVector::<f64>::zero(4);
        for _ in 0..12 {
            f.set_coeff(ix.rect(rng.gen_range(0..d)), rng.gen_range(-1.0..1.0))
                .unwrap();
            g.set_coeff(ix.rect(rng.gen_range(0..d)), rng.gen_range(-1.0..1.0))
                .unwrap();
        }
        let lhs = q.apply(&f).pairing(&g).unwrap();
        let rhs = f.pairing(&q.apply(&g)).unwrap();
        pass &= (lhs - rhs).abs() <= 1e-10;
    }
    // rank equals the block count
    let mut mat: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| q.entry_idx(i, j)).collect())
        .collect();
    let mut rank = 0usize;
    for col in 0..d {
        let pivot = (rank..d).max_by(|&a, &b| {
            mat[a][col]
                .abs()
                .partial_cmp(&mat[b][col].abs())
                .unwrap()
        });
        match pivot {
            Some(p) if mat[p][col].abs() > 1e-8 => {
                mat.swap(rank, p);
                let f = mat[rank][col];
                for j in 0..d {
                    mat[rank][j] /= f;
                }
                for r in 0..d {
                    if r != rank && mat[r][col].abs() > 0.0 {
                        let m = mat[r][col];
                        for j in 0..d {
                            mat[r][j] -= m * mat[rank][j];
                        }
                    }
                }
                rank += 1;
            }
            _ => {}
        }
    }
    pass &= rank == sys.len();
    finish(9, "projection", start, 30, pass);
}

#[test]
fn criterion_10_end_to_end() {
    let start = Instant::now();
    let mut pass = true;
    let params = FactorParams::new(7);

    let id = HaarOperator::<f64>::identity(7);
    let out = factor_identity(&id, 1, &params).expect("identity factorization completes");
    pass &= out.h == HChoice::T;
    pass &= out.report.eq33_ok;
    pass &= out.report.residual_max <= 1e-8;
    pass &= out.report.ramsey.carleson_b == "8";

    let zero = HaarOperator::<f64>::zero(7);
    let out0 = factor_identity(&zero, 1, &params).expect("zero factorization completes");
    pass &= out0.h == HChoice::IdMinusT;
    pass &= out0.report.eq33_ok;
    pass &= out0.report.residual_max <= 1e-8;

    // multiplier family: complete, or fail only with ramsey-mass-insufficient
    let ix7 = shared_indexer(7);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ xm_u64());
        let bits: Vec<f64> = (0..ix7.len())
            .map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let t = HaarOperator::<f64>::haar_multiplier(7, |r| {
            bits[ix7.position(r).unwrap()]
        });
        match factor_identity(&t, 1, &params) {
            Ok(out) => {
                pass &= out.report.eq33_ok;
                pass &= out.report.residual_max <= 1e-8;
            }
            Err(CoreError::RamseyMassInsufficient { .. }) => {}
            Err(other) => {
                println!("multiplier seed {seed}: unexpected error {other}");
                pass = false;
            }
        }
    }
    finish(10, "end-to-end", start, 900, pass);
}

fn xm_u64() -> u64 {
    0x6d75_6c74
}

#[test]
fn criterion_11_dimension_plan() {
    let start = Instant::now();
    let mut pass = true;
    let p1 = plan_dimensions(1, 1.0, Overrides::default()).unwrap();
    pass &= p1.n2 == "4";
    pass &= p1.n1_exact == Some((BigUint::from(4u32) << 256usize).to_string());
    let p2 = plan_dimensions(2, 1.0, Overrides::default()).unwrap();
    pass &= p2.n2 == "32";
    pass &= p2.n1.mantissa == "32" && p2.n1.exponent == (BigUint::one() << 64usize).to_string();
    pass &= !BigUint::zero().is_one();
    finish(11, "dimension-plan", start, 1, pass);
}
