//! Norms on the finite bi-parameter spaces.
//!
//! `h1_norm` integrates the square function exactly over the coarsest grid on
//! which it is constant. `bmo_norm_exact` maximizes the normalized Carleson
//! sum over unions of support rectangles; this is the full supremum because
//! the numerator depends only on which support rectangles the region
//! contains, and replacing the region by the union of those rectangles only
//! shrinks its measure. `bmo_norm_lower` produces certified lower bounds with
//! a witness region for supports too large to enumerate.

use crate::dyadic::{DyadicInterval, DyadicRectangle};
use crate::error::{CoreError, Result};
use crate::haar::HaarVector;
use crate::scalar::{CompensatedSum, Real};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Default cap on the support size for the exact BMO computation (`2^cap`
/// subsets are enumerated).
pub const BMO_EXACT_SUPPORT_CAP: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NormKind {
    Exact,
    LowerBound,
    UpperBound,
}

/// A norm value together with how it was obtained and, for lower bounds, the
/// witness realizing it.
#[derive(Clone, Debug)]
pub struct NormEstimate<S: Real> {
    pub value: S,
    pub kind: NormKind,
    pub method: String,
    pub witness: Witness<S>,
}

#[derive(Clone, Debug)]
pub enum Witness<S: Real> {
    None,
    Vector(HaarVector<S>),
    Region(Vec<DyadicRectangle>),
}

impl<S: Real> NormEstimate<S> {
    pub fn exact(value: S, method: &str) -> Self {
        NormEstimate {
            value,
            kind: NormKind::Exact,
            method: method.to_string(),
            witness: Witness::None,
        }
    }
}

/// `H^1` norm: integral of the square function, exact up to float summation.
pub fn h1_norm<S: Real>(f: &HaarVector<S>) -> S {
    let support: Vec<(DyadicRectangle, S)> = f.support().map(|(r, a)| (*r, *a * *a)).collect();
    let mut acc = CompensatedSum::new();
    integrate_cell(
        DyadicInterval::unit(),
        DyadicInterval::unit(),
        &support,
        S::zero(),
        &mut acc,
    );
    acc.value()
}

/// Recursive integration of `sqrt(sum a_R^2 1_R)` over the cell `cx x cy`.
/// `pending` holds the squared coefficients of rectangles meeting the cell
/// but not containing it; `acc_sq` the sum over rectangles containing it.
fn integrate_cell<S: Real>(
    cx: DyadicInterval,
    cy: DyadicInterval,
    pending: &[(DyadicRectangle, S)],
    acc_sq: S,
    out: &mut CompensatedSum<S>,
) {
    let mut acc = acc_sq;
    let mut kept: Vec<(DyadicRectangle, S)> = Vec::new();
    let mut split_x = false;
    let mut split_y = false;
    for (r, a2) in pending {
        let covers_x = cx.is_subset_of(&r.x);
        let covers_y = cy.is_subset_of(&r.y);
        if covers_x && covers_y {
            acc = acc + *a2;
        } else {
            // rectangle is strictly finer than the cell in some axis
            if !covers_x && !r.x.is_disjoint_from(&cx) || covers_x {
                if !covers_y && r.y.is_disjoint_from(&cy) {
                    continue;
                }
                if !covers_x && r.x.is_disjoint_from(&cx) {
                    continue;
                }
                if !covers_x {
                    split_x = true;
                }
                if !covers_y {
                    split_y = true;
                }
                kept.push((*r, *a2));
            }
        }
    }
    if kept.is_empty() {
        if acc > S::zero() {
            let measure =
                S::from_f64_lossy((-((cx.level() + cy.level()) as f64)).exp2());
            out.add(measure * acc.sqrt());
        }
        return;
    }
    if split_x {
        let l = cx.left_half().expect("level bound");
        let r = cx.right_half().expect("level bound");
        integrate_cell(l, cy, &kept, acc, out);
        integrate_cell(r, cy, &kept, acc, out);
    } else {
        debug_assert!(split_y);
        let l = cy.left_half().expect("level bound");
        let r = cy.right_half().expect("level bound");
        integrate_cell(cx, l, &kept, acc, out);
        integrate_cell(cx, r, &kept, acc, out);
    }
}

/// Compressed-grid view of a support: cell decomposition refined by every
/// support rectangle, with bitset masks per rectangle.
struct CompressedGrid {
    words: usize,
    cell_area_units: Vec<u128>, // in units of 2^-(gx+gy)
    unit_log2: u32,             // gx + gy
    masks: Vec<Vec<u64>>,       // per support rect
}

impl CompressedGrid {
    fn build(rects: &[DyadicRectangle]) -> CompressedGrid {
        let gx = rects.iter().map(|r| r.x.level()).max().unwrap_or(0);
        let gy = rects.iter().map(|r| r.y.level()).max().unwrap_or(0);
        let mut xs: Vec<u64> = Vec::new();
        let mut ys: Vec<u64> = Vec::new();
        for r in rects {
            let (a, b) = r.x.cell_range(gx);
            xs.push(a);
            xs.push(b);
            let (a, b) = r.y.cell_range(gy);
            ys.push(a);
            ys.push(b);
        }
        xs.sort_unstable();
        xs.dedup();
        ys.sort_unstable();
        ys.dedup();
        let nx = xs.len().saturating_sub(1);
        let ny = ys.len().saturating_sub(1);
        let cells = nx * ny;
        let words = cells.div_ceil(64);
        let mut cell_area_units = vec![0u128; cells];
        for ix in 0..nx {
            for iy in 0..ny {
                cell_area_units[ix * ny + iy] =
                    (xs[ix + 1] - xs[ix]) as u128 * (ys[iy + 1] - ys[iy]) as u128;
            }
        }
        let masks = rects
            .iter()
            .map(|r| {
                let mut mask = vec![0u64; words];
                let (xa, xb) = r.x.cell_range(gx);
                let (ya, yb) = r.y.cell_range(gy);
                let ix0 = xs.binary_search(&xa).unwrap();
                let ix1 = xs.binary_search(&xb).unwrap();
                let iy0 = ys.binary_search(&ya).unwrap();
                let iy1 = ys.binary_search(&yb).unwrap();
                for ix in ix0..ix1 {
                    for iy in iy0..iy1 {
                        let c = ix * ny + iy;
                        mask[c / 64] |= 1u64 << (c % 64);
                    }
                }
                mask
            })
            .collect();
        CompressedGrid {
            words,
            cell_area_units,
            unit_log2: gx + gy,
            masks,
        }
    }

    fn union_area_units(&self, u: &[u64]) -> u128 {
        let mut area = 0u128;
        for (w, &bits) in u.iter().enumerate() {
            let mut b = bits;
            while b != 0 {
                let t = b.trailing_zeros() as usize;
                area += self.cell_area_units[w * 64 + t];
                b &= b - 1;
            }
        }
        area
    }

    fn is_subset(&self, inner: &[u64], outer: &[u64]) -> bool {
        inner.iter().zip(outer).all(|(a, b)| a & !b == 0)
    }
}

/// Carleson ratio `sum_{R ⊆ U} a_R^2 |R| / |U|` for `U` the union of the
/// subset `sel` of support rectangles, returned as the squared BMO value.
fn ratio_sq_for_union<S: Real>(
    grid: &CompressedGrid,
    coeff_sq_meas: &[f64],
    union: &[u64],
) -> (f64, u128) {
    let area = grid.union_area_units(union);
    if area == 0 {
        return (0.0, 0);
    }
    let mut num = 0.0f64;
    for (j, mask) in grid.masks.iter().enumerate() {
        if grid.is_subset(mask, union) {
            num += coeff_sq_meas[j];
        }
    }
    let den = area as f64 * (-(grid.unit_log2 as f64)).exp2();
    (num / den, area)
}

/// Exact `BMO` norm by enumerating every union of support rectangles.
/// Fails when the support exceeds `cap` (default [`BMO_EXACT_SUPPORT_CAP`]).
pub fn bmo_norm_exact<S: Real>(f: &HaarVector<S>, cap: Option<usize>) -> Result<S> {
    let cap = cap.unwrap_or(BMO_EXACT_SUPPORT_CAP);
    let m = f.support_len();
    if m == 0 {
        return Ok(S::zero());
    }
    if m > cap {
        return Err(CoreError::SupportTooLarge { support: m, cap });
    }
    let rects: Vec<DyadicRectangle> = f.support().map(|(r, _)| *r).collect();
    let coeff_sq_meas: Vec<f64> = f
        .support()
        .map(|(r, a)| {
            let a = a.to_f64_lossy();
            a * a * (-((r.x.level() + r.y.level()) as f64)).exp2()
        })
        .collect();
    let grid = CompressedGrid::build(&rects);
    // meet-in-the-middle union tables
    let lo = m / 2;
    let hi = m - lo;
    let lo_table = union_table(&grid, 0, lo);
    let hi_table = union_table(&grid, lo, hi);
    let mut best = 0.0f64;
    let mut scratch = vec![0u64; grid.words];
    for s in 1usize..1 << m {
        let sl = s & ((1 << lo) - 1);
        let sh = s >> lo;
        for w in 0..grid.words {
            scratch[w] = lo_table[sl][w] | hi_table[sh][w];
        }
        let (ratio, _) = ratio_sq_for_union::<S>(&grid, &coeff_sq_meas, &scratch);
        if ratio > best {
            best = ratio;
        }
    }
    Ok(S::from_f64_lossy(best.sqrt()))
}

fn union_table(grid: &CompressedGrid, offset: usize, count: usize) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; grid.words]; 1 << count];
    for s in 1usize..1 << count {
        let low = s.trailing_zeros() as usize;
        let rest = s & (s - 1);
        for w in 0..grid.words {
            table[s][w] = table[rest][w] | grid.masks[offset + low][w];
        }
    }
    table
}

/// Budget for the BMO lower-bound search.
#[derive(Clone, Debug)]
pub struct BmoLowerBudget {
    pub random_restarts: usize,
    pub greedy: bool,
    /// Above this support size the search restricts itself to the
    /// highest-energy rectangles.
    pub mask_support_cap: usize,
    pub max_single_candidates: usize,
}

impl Default for BmoLowerBudget {
    fn default() -> Self {
        BmoLowerBudget {
            random_restarts: 32,
            greedy: true,
            mask_support_cap: 24,
            max_single_candidates: 20_000,
        }
    }
}

/// Lower bound for the BMO norm: single dyadic rectangles (through the
/// ancestor closure of the support sides), greedy union growth and random
/// subset restarts. The returned estimate carries the witness region.
pub fn bmo_norm_lower<S: Real>(
    f: &HaarVector<S>,
    budget: &BmoLowerBudget,
    seed: u64,
) -> NormEstimate<S> {
    if f.is_zero() {
        return NormEstimate {
            value: S::zero(),
            kind: NormKind::LowerBound,
            method: "zero-vector".into(),
            witness: Witness::None,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<(DyadicRectangle, f64)> = f
        .support()
        .map(|(r, a)| {
            let a = a.to_f64_lossy();
            (*r, a * a * (-((r.x.level() + r.y.level()) as f64)).exp2())
        })
        .collect();

    let mut best_sq = 0.0f64;
    let mut best_region: Vec<DyadicRectangle> = Vec::new();
    let mut best_method = "none";

    // (a) single dyadic rectangles from the ancestor closure of the sides
    let x_closure = side_closure(all.iter().map(|(r, _)| r.x));
    let y_closure = side_closure(all.iter().map(|(r, _)| r.y));
    let mut singles = 0usize;
    'outer: for a in &x_closure {
        for b in &y_closure {
            if singles >= budget.max_single_candidates {
                break 'outer;
            }
            singles += 1;
            let omega = DyadicRectangle::new(*a, *b);
            let num: f64 = all
                .iter()
                .filter(|(r, _)| r.is_subset_of(&omega))
                .map(|(_, c)| c)
                .sum();
            if num == 0.0 {
                continue;
            }
            let ratio = num / (-((a.level() + b.level()) as f64)).exp2();
            if ratio > best_sq {
                best_sq = ratio;
                best_region = vec![omega];
                best_method = "single-rectangle";
            }
        }
    }

    // restrict the subset search to the highest-energy rectangles when the
    // support is large
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&i, &j| {
        all[j]
            .1
            .partial_cmp(&all[i].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(all[i].0.cmp(&all[j].0))
    });
    let k = order.len().min(budget.mask_support_cap);
    let top: Vec<DyadicRectangle> = order[..k].iter().map(|&i| all[i].0).collect();
    let grid = CompressedGrid::build(&top);
    // numerators must count the WHOLE support inside a union, not only the
    // top rectangles; evaluate against all support rects via containment.
    let eval = |sel: &BTreeSet<usize>| -> f64 {
        let mut u = vec![0u64; grid.words];
        for &j in sel {
            for w in 0..grid.words {
                u[w] |= grid.masks[j][w];
            }
        }
        let area = grid.union_area_units(&u);
        if area == 0 {
            return 0.0;
        }
        let region: Vec<DyadicRectangle> = sel.iter().map(|&j| top[j]).collect();
        let num: f64 = all
            .iter()
            .filter(|(r, _)| covered_by(r, &region))
            .map(|(_, c)| c)
            .sum();
        num / (area as f64 * (-(grid.unit_log2 as f64)).exp2())
    };

    if budget.greedy && !top.is_empty() {
        let mut sel: BTreeSet<usize> = BTreeSet::new();
        // best singleton start
        let (start, _) = (0..top.len())
            .map(|j| (j, eval(&BTreeSet::from([j]))))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap();
        sel.insert(start);
        let mut cur = eval(&sel);
        loop {
            let mut improved = None;
            for j in 0..top.len() {
                if sel.contains(&j) {
                    continue;
                }
                let mut cand = sel.clone();
                cand.insert(j);
                let v = eval(&cand);
                if v > cur + 1e-15 {
                    cur = v;
                    improved = Some(j);
                }
            }
            match improved {
                Some(j) => {
                    sel.insert(j);
                }
                None => break,
            }
        }
        if cur > best_sq {
            best_sq = cur;
            best_region = sel.iter().map(|&j| top[j]).collect();
            best_method = "greedy-union";
        }
    }

    for _ in 0..budget.random_restarts {
        if top.is_empty() {
            break;
        }
        let size = rng.gen_range(1..=top.len());
        let mut idx: Vec<usize> = (0..top.len()).collect();
        idx.shuffle(&mut rng);
        let mut sel: BTreeSet<usize> = idx[..size].iter().copied().collect();
        let mut cur = eval(&sel);
        // one toggle-improvement pass
        for j in 0..top.len() {
            let mut cand = sel.clone();
            if !cand.remove(&j) {
                cand.insert(j);
            }
            if cand.is_empty() {
                continue;
            }
            let v = eval(&cand);
            if v > cur + 1e-15 {
                cur = v;
                sel = cand;
            }
        }
        if cur > best_sq {
            best_sq = cur;
            best_region = sel.iter().map(|&j| top[j]).collect();
            best_method = "random-restart";
        }
    }

    NormEstimate {
        value: S::from_f64_lossy(best_sq.sqrt()),
        kind: NormKind::LowerBound,
        method: best_method.into(),
        witness: Witness::Region(best_region),
    }
}

/// Evaluate the Carleson ratio of `f` at an explicit region (union of the
/// given rectangles); used to validate lower-bound witnesses.
pub fn bmo_ratio_at_region<S: Real>(f: &HaarVector<S>, region: &[DyadicRectangle]) -> S {
    use crate::collections::RectangleCollection;
    if region.is_empty() {
        return S::zero();
    }
    let union = RectangleCollection::new(region.to_vec());
    let den = crate::dyadic::exact_to_f64(&union.union_measure());
    if den == 0.0 {
        return S::zero();
    }
    let num: f64 = f
        .support()
        .filter(|(r, _)| covered_by(r, region))
        .map(|(r, a)| {
            let a = a.to_f64_lossy();
            a * a * (-((r.x.level() + r.y.level()) as f64)).exp2()
        })
        .sum();
    S::from_f64_lossy((num / den).sqrt())
}

/// Whether `r` is covered by the union of `region` (members may overlap).
fn covered_by(r: &DyadicRectangle, region: &[DyadicRectangle]) -> bool {
    use crate::collections::RectangleCollection;
    if region.iter().any(|m| r.is_subset_of(m)) {
        return true;
    }
    let clipped: Vec<DyadicRectangle> =
        region.iter().filter_map(|m| r.intersect(m)).collect();
    if clipped.is_empty() {
        return false;
    }
    RectangleCollection::new(clipped).union_measure() == r.measure()
}

fn side_closure<I: Iterator<Item = DyadicInterval>>(sides: I) -> Vec<DyadicInterval> {
    let mut out: BTreeSet<DyadicInterval> = BTreeSet::new();
    for s in sides {
        let mut cur = s;
        out.insert(cur);
        while let Ok(p) = cur.predecessor() {
            if !out.insert(p) {
                break;
            }
            cur = p;
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::exact_to_f64;
    use crate::haar::rademacher_block;

    fn iv(l: u32, p: u64) -> DyadicInterval {
        DyadicInterval::new(l, p).unwrap()
    }

    fn rect(lx: u32, px: u64, ly: u32, py: u64) -> DyadicRectangle {
        DyadicRectangle::new(iv(lx, px), iv(ly, py))
    }

    #[test]
    fn h1_of_atom_is_measure() {
        for r in [rect(0, 0, 0, 0), rect(2, 3, 1, 1), rect(3, 5, 3, 7)] {
            let f = HaarVector::<f64>::atom(4, r, 1.0).unwrap();
            let expect = exact_to_f64(&r.measure());
            assert!((h1_norm(&f) - expect).abs() < 1e-14, "{r}");
        }
    }

    #[test]
    fn h1_bmo_of_rademacher_block() {
        // |K0| = 1: H1 norm sqrt(k)|L0|, BMO norm sqrt(k)
        let l0 = iv(2, 1);
        for k in 1..=3u32 {
            let f: HaarVector<f64> =
                rademacher_block(5, &DyadicInterval::unit(), &l0, 1, k, |i, kk| {
                    (i + kk.pos() as u32) % 2 == 0
                })
                .unwrap();
            let h1 = h1_norm(&f);
            let expect = (k as f64).sqrt() * 0.25;
            assert!((h1 - expect).abs() < 1e-12, "k={k}: {h1} vs {expect}");
            if f.support_len() <= BMO_EXACT_SUPPORT_CAP {
                let bmo = bmo_norm_exact(&f, None).unwrap();
                assert!((bmo - (k as f64).sqrt()).abs() < 1e-12, "k={k}: bmo {bmo}");
            }
        }
    }

    #[test]
    fn bmo_exact_closed_forms() {
        let f = HaarVector::<f64>::atom(3, rect(1, 0, 2, 2), 1.0).unwrap();
        assert!((bmo_norm_exact(&f, None).unwrap() - 1.0).abs() < 1e-14);
        // two disjoint atoms: ratio 1 attained on either or the union
        let g = HaarVector::<f64>::from_coeffs(
            3,
            [(rect(1, 0, 1, 0), 1.0), (rect(2, 2, 1, 1), 1.0)],
        )
        .unwrap();
        assert!((bmo_norm_exact(&g, None).unwrap() - 1.0).abs() < 1e-14);
        let zero = HaarVector::<f64>::zero(3);
        assert_eq!(bmo_norm_exact(&zero, None).unwrap(), 0.0);
    }

    #[test]
    fn bmo_lower_dominated_by_exact_and_witnessed() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let mut f = HaarVector::<f64>::zero(3);
            let rects = crate::dyadic::rectangles_up_to(3);
            for _ in 0..8 {
                let r = rects[rng.gen_range(0..rects.len())];
                f.set_coeff(r, rng.gen_range(-2.0..2.0)).unwrap();
            }
            if f.is_zero() {
                continue;
            }
            let exact = bmo_norm_exact(&f, None).unwrap();
            let lower = bmo_norm_lower(&f, &BmoLowerBudget::default(), trial as u64);
            assert!(
                lower.value <= exact + 1e-10,
                "trial {trial}: lower {} > exact {}",
                lower.value,
                exact
            );
            if let Witness::Region(region) = &lower.witness {
                let replay = bmo_ratio_at_region(&f, region);
                assert!(
                    (replay - lower.value).abs() <= 1e-10,
                    "witness replay {replay} vs {}",
                    lower.value
                );
            }
        }
    }

    #[test]
    fn bmo_lower_atom_attained() {
        let r = rect(2, 1, 1, 1);
        let f = HaarVector::<f64>::atom(4, r, 1.0).unwrap();
        let est = bmo_norm_lower(&f, &BmoLowerBudget::default(), 0);
        assert!((est.value - 1.0).abs() < 1e-12);
        let zero = HaarVector::<f64>::zero(4);
        let z = bmo_norm_lower(&zero, &BmoLowerBudget::default(), 0);
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn h1_is_a_norm_via_random_pairs() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rects = crate::dyadic::rectangles_up_to(3);
        for _ in 0..100 {
            let mut f = HaarVector::<f64>::zero(3);
            let mut g = HaarVector::<f64>::zero(3);
            for _ in 0..6 {
                f.set_coeff(rects[rng.gen_range(0..rects.len())], rng.gen_range(-1.0..1.0))
                    .unwrap();
                g.set_coeff(rects[rng.gen_range(0..rects.len())], rng.gen_range(-1.0..1.0))
                    .unwrap();
            }
            let hf = h1_norm(&f);
            let hg = h1_norm(&g);
            let hfg = h1_norm(&f.plus(&g).unwrap());
            assert!(hfg <= hf + hg + 1e-10);
            let c = rng.gen_range(-3.0..3.0f64);
            let hcf = h1_norm(&f.scaled(c));
            assert!((hcf - c.abs() * hf).abs() < 1e-10);
        }
    }
}
