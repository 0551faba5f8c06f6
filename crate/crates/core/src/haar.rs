//! Haar-coefficient vectors on the finite bi-parameter space of depth `N`.
//!
//! A vector is a finite map from dyadic rectangles of `R_N` to scalars; the
//! function it represents is `sum a_R h_R` with `h_{IxJ}(s,t) = h_I(s)h_J(t)`
//! and `h_I` equal to `+1` on the left half of `I`, `-1` on the right half.

use crate::dyadic::{exact_to_f64, DyadicInterval, DyadicRectangle};
use crate::error::{CoreError, Result};
use crate::scalar::{CompensatedSum, Real};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq)]
pub struct HaarVector<S: Real> {
    depth: u32,
    coeffs: BTreeMap<DyadicRectangle, S>,
}

impl<S: Real> HaarVector<S> {
    pub fn zero(depth: u32) -> Self {
        HaarVector {
            depth,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_coeffs<I>(depth: u32, coeffs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (DyadicRectangle, S)>,
    {
        let mut v = HaarVector::zero(depth);
        for (r, a) in coeffs {
            v.set_coeff(r, a)?;
        }
        Ok(v)
    }

    /// Single Haar function `value * h_rect`.
    pub fn atom(depth: u32, rect: DyadicRectangle, value: S) -> Result<Self> {
        HaarVector::from_coeffs(depth, [(rect, value)])
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn coeff(&self, r: &DyadicRectangle) -> S {
        self.coeffs.get(r).copied().unwrap_or_else(S::zero)
    }

    pub fn set_coeff(&mut self, r: DyadicRectangle, value: S) -> Result<()> {
        if !r.in_depth(self.depth) {
            return Err(CoreError::RectOutsideDepth {
                rect: r.to_string(),
                depth: self.depth,
            });
        }
        if value == S::zero() {
            self.coeffs.remove(&r);
        } else {
            self.coeffs.insert(r, value);
        }
        Ok(())
    }

    pub fn add_to_coeff(&mut self, r: DyadicRectangle, value: S) -> Result<()> {
        let cur = self.coeff(&r);
        self.set_coeff(r, cur + value)
    }

    /// Support iterator in deterministic (map) order.
    pub fn support(&self) -> impl Iterator<Item = (&DyadicRectangle, &S)> {
        self.coeffs.iter()
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, c: S) -> Self {
        if c == S::zero() {
            return HaarVector::zero(self.depth);
        }
        HaarVector {
            depth: self.depth,
            coeffs: self.coeffs.iter().map(|(r, a)| (*r, *a * c)).collect(),
        }
    }

    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.depth != other.depth {
            return Err(CoreError::DepthMismatch {
                left: self.depth,
                right: other.depth,
            });
        }
        let mut out = self.clone();
        for (r, a) in other.support() {
            out.add_to_coeff(*r, *a)?;
        }
        Ok(out)
    }

    pub fn minus(&self, other: &Self) -> Result<Self> {
        self.plus(&other.scaled(-S::one()))
    }

    /// Measure-weighted pairing `sum a_R b_R |R|` (the L2 inner product of
    /// the represented functions, by Haar orthogonality).
    pub fn pairing(&self, other: &Self) -> Result<S> {
        if self.depth != other.depth {
            return Err(CoreError::DepthMismatch {
                left: self.depth,
                right: other.depth,
            });
        }
        // iterate the smaller support
        let (small, large) = if self.support_len() <= other.support_len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut acc = CompensatedSum::new();
        for (r, a) in small.support() {
            let b = large.coeff(r);
            if b != S::zero() {
                acc.add(*a * b * S::from_f64_lossy(exact_to_f64(&r.measure())));
            }
        }
        Ok(acc.value())
    }

    /// `sum a_R^2 |R|`, the squared L2 norm.
    pub fn l2_norm_sq(&self) -> S {
        let mut acc = CompensatedSum::new();
        for (r, a) in self.support() {
            acc.add(*a * *a * S::from_f64_lossy(exact_to_f64(&r.measure())));
        }
        acc.value()
    }

    /// Value of the square function `sum a_R^2 h_R^2` at the grid cell
    /// `(cx, cy)` of the uniform level-`grid` grid (per axis).
    pub fn square_function_sq_at(&self, cx: u64, cy: u64, grid: u32) -> S {
        let mut acc = S::zero();
        for (r, a) in self.support() {
            let (xa, xb) = r.x.cell_range(grid);
            let (ya, yb) = r.y.cell_range(grid);
            if xa <= cx && cx < xb && ya <= cy && cy < yb {
                acc = acc + *a * *a;
            }
        }
        acc
    }

    /// Point evaluation at the cell `(cx, cy)` of the level-`grid` grid; the
    /// grid must be strictly finer than the deepest support level so the
    /// Haar signs are constant on cells.
    pub fn eval_at_cell(&self, cx: u64, cy: u64, grid: u32) -> S {
        let mut acc = S::zero();
        for (r, a) in self.support() {
            let sx = haar_sign(&r.x, cx, grid);
            if sx == 0 {
                continue;
            }
            let sy = haar_sign(&r.y, cy, grid);
            if sy == 0 {
                continue;
            }
            let s = S::from_f64_lossy((sx * sy) as f64);
            acc = acc + *a * s;
        }
        acc
    }
}

/// Sign of `h_I` on grid cell `c` (level `grid` per axis): `+1` on the left
/// half, `-1` on the right half, `0` outside `I`.
fn haar_sign(i: &DyadicInterval, c: u64, grid: u32) -> i32 {
    debug_assert!(grid > i.level());
    let (a, b) = i.cell_range(grid);
    if c < a || c >= b {
        return 0;
    }
    if c < (a + b) / 2 {
        1
    } else {
        -1
    }
}

/// Rademacher-type block: `sum_{i=r}^{r+k-1} g_i` with
/// `g_i = sum_{K in D_i, K ⊆ K0} (sign) h_{K x L0}`.
pub fn rademacher_block<S: Real, F>(
    depth: u32,
    k0: &DyadicInterval,
    l0: &DyadicInterval,
    r: u32,
    k: u32,
    mut signs: F,
) -> Result<HaarVector<S>>
where
    F: FnMut(u32, &DyadicInterval) -> bool,
{
    if r < k0.level() {
        return Err(CoreError::Malformed(format!(
            "rademacher start level {r} is above lev(K0) = {}",
            k0.level()
        )));
    }
    if k == 0 {
        return Ok(HaarVector::zero(depth));
    }
    if r + k - 1 > depth || l0.level() > depth {
        return Err(CoreError::RectOutsideDepth {
            rect: format!("level {} x {}", r + k - 1, l0.level()),
            depth,
        });
    }
    let mut v = HaarVector::zero(depth);
    for i in r..r + k {
        for kk in k0.descendants_at(i) {
            let s = if signs(i, &kk) { S::one() } else { -S::one() };
            v.set_coeff(DyadicRectangle::new(kk, *l0), s)?;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::pow2;

    fn iv(l: u32, p: u64) -> DyadicInterval {
        DyadicInterval::new(l, p).unwrap()
    }

    fn rect(lx: u32, px: u64, ly: u32, py: u64) -> DyadicRectangle {
        DyadicRectangle::new(iv(lx, px), iv(ly, py))
    }

    #[test]
    fn pairing_orthogonality() {
        let r1 = rect(1, 0, 2, 1);
        let r2 = rect(1, 1, 2, 1);
        let f = HaarVector::<f64>::atom(3, r1, 1.0).unwrap();
        let g = HaarVector::<f64>::atom(3, r2, 1.0).unwrap();
        assert_eq!(f.pairing(&f).unwrap(), exact_to_f64(&r1.measure()));
        assert_eq!(f.pairing(&g).unwrap(), 0.0);
        let h = HaarVector::<f64>::atom(2, r1, 1.0).unwrap();
        assert!(f.pairing(&h).is_err());
    }

    #[test]
    fn rademacher_block_structure() {
        // k = 1, all-plus signs: one full level strip
        let l0 = iv(1, 0);
        let v: HaarVector<f64> =
            rademacher_block(4, &DyadicInterval::unit(), &l0, 2, 1, |_, _| true).unwrap();
        assert_eq!(v.support_len(), 4);
        for (r, a) in v.support() {
            assert_eq!(r.x.level(), 2);
            assert_eq!(r.y, l0);
            assert_eq!(*a, 1.0);
        }
        // distinct strips are pairwise orthogonal
        let g2: HaarVector<f64> =
            rademacher_block(4, &DyadicInterval::unit(), &l0, 3, 1, |_, _| true).unwrap();
        assert_eq!(v.pairing(&g2).unwrap(), 0.0);
    }

    #[test]
    fn eval_and_square_function() {
        let f = HaarVector::<f64>::atom(1, rect(0, 0, 1, 0), 2.0).unwrap();
        // h is +1 on left half of x and sign from y-interval [0,1/2)
        let grid = 2; // quarter cells
        assert_eq!(f.eval_at_cell(0, 0, grid), 2.0);
        assert_eq!(f.eval_at_cell(3, 0, grid), -2.0);
        assert_eq!(f.eval_at_cell(0, 1, grid), -2.0);
        assert_eq!(f.eval_at_cell(0, 3, grid), 0.0);
        assert_eq!(f.square_function_sq_at(0, 1, grid), 4.0);
        assert_eq!(f.square_function_sq_at(0, 3, grid), 0.0);
    }

    #[test]
    fn zero_coeffs_are_dropped() {
        let mut v = HaarVector::<f64>::zero(2);
        v.set_coeff(rect(1, 0, 1, 0), 1.5).unwrap();
        v.add_to_coeff(rect(1, 0, 1, 0), -1.5).unwrap();
        assert!(v.is_zero());
        assert!(v.set_coeff(rect(3, 0, 0, 0), 1.0).is_err());
        assert_eq!(pow2(-1), rect(1, 0, 0, 0).measure());
    }
}
