//! Dyadic intervals and rectangles with exact rational measures.
//!
//! An interval is encoded as a `(level, position)` pair describing
//! `[2^-level * pos, 2^-level * (pos + 1))`; nesting tests are bit shifts and
//! every measure is an exact rational with power-of-two denominator.

use crate::error::{CoreError, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Exact rational used for measures, Carleson constants and covering
/// fractions. Values produced by the geometry are always dyadic (power-of-two
/// denominator); the construction constants `2^-i / (8n)` need the general
/// denominator when `n` is not a power of two.
pub type Exact = BigRational;

/// Exact `2^k` for signed `k`.
pub fn pow2(k: i64) -> Exact {
    if k >= 0 {
        BigRational::from_integer(BigInt::one() << (k as usize))
    } else {
        BigRational::new(BigInt::one(), BigInt::one() << ((-k) as usize))
    }
}

/// Round an `Exact` to `f64`, shifting big numerators down first so values
/// whose parts overflow `f64` still convert with correct magnitude.
pub fn exact_to_f64(x: &Exact) -> f64 {
    if let Some(v) = x.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    let num_bits = x.numer().bits() as i64;
    let den_bits = x.denom().bits() as i64;
    let shift = (num_bits.max(den_bits) - 900).max(0) as u64;
    let num = x.numer() >> shift;
    let den = x.denom() >> shift;
    if den.is_zero() {
        return if x.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    }
    BigRational::new(num, den).to_f64().unwrap_or(f64::NAN)
}

/// Deepest interval level supported by the index arithmetic.
pub const MAX_LEVEL: u32 = 40;

/// Dyadic subinterval of `[0,1)`: `[2^-level * pos, 2^-level * (pos+1))`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    level: u32,
    pos: u64,
}

impl DyadicInterval {
    pub fn new(level: u32, pos: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(CoreError::LevelTooDeep {
                level,
                max: MAX_LEVEL,
            });
        }
        if pos >= 1u64 << level {
            return Err(CoreError::PositionOutOfRange { level, pos });
        }
        Ok(DyadicInterval { level, pos })
    }

    /// `[0,1)`.
    pub const fn unit() -> Self {
        DyadicInterval { level: 0, pos: 0 }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn pos(&self) -> u64 {
        self.pos
    }

    pub fn is_unit(&self) -> bool {
        self.level == 0
    }

    /// Exact measure `2^-level`.
    pub fn measure(&self) -> Exact {
        pow2(-(self.level as i64))
    }

    /// Left endpoint as an exact rational.
    pub fn inf(&self) -> Exact {
        Exact::new(BigInt::from(self.pos), BigInt::one() << self.level as usize)
    }

    /// The dyadic predecessor (the interval of twice the measure containing
    /// this one). The root has none.
    pub fn predecessor(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(CoreError::RootHasNoPredecessor);
        }
        Ok(DyadicInterval {
            level: self.level - 1,
            pos: self.pos >> 1,
        })
    }

    pub fn left_half(&self) -> Result<Self> {
        DyadicInterval::new(self.level + 1, self.pos << 1)
    }

    pub fn right_half(&self) -> Result<Self> {
        DyadicInterval::new(self.level + 1, (self.pos << 1) | 1)
    }

    pub fn is_left_child(&self) -> bool {
        self.level > 0 && self.pos & 1 == 0
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &DyadicInterval) -> bool {
        self.level >= other.level && (self.pos >> (self.level - other.level)) == other.pos
    }

    pub fn is_disjoint_from(&self, other: &DyadicInterval) -> bool {
        !self.is_subset_of(other) && !other.is_subset_of(self)
    }

    /// The intersection of two dyadic intervals is empty or the smaller one.
    pub fn intersect(&self, other: &DyadicInterval) -> Option<DyadicInterval> {
        if self.is_subset_of(other) {
            Some(*self)
        } else if other.is_subset_of(self) {
            Some(*other)
        } else {
            None
        }
    }

    /// Ancestor at the given (coarser) level.
    pub fn ancestor_at(&self, level: u32) -> Option<DyadicInterval> {
        if level > self.level {
            return None;
        }
        Some(DyadicInterval {
            level,
            pos: self.pos >> (self.level - level),
        })
    }

    /// All intervals of `level` exactly `l` contained in `self`.
    pub fn descendants_at(&self, l: u32) -> Vec<DyadicInterval> {
        if l < self.level {
            return Vec::new();
        }
        let shift = l - self.level;
        let base = self.pos << shift;
        (0..1u64 << shift)
            .map(|k| DyadicInterval { level: l, pos: base + k })
            .collect()
    }

    /// Cell range `[start, end)` on the uniform grid of level `grid_level`.
    pub fn cell_range(&self, grid_level: u32) -> (u64, u64) {
        debug_assert!(grid_level >= self.level);
        let shift = grid_level - self.level;
        (self.pos << shift, (self.pos + 1) << shift)
    }
}

impl fmt::Display for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.level, self.pos)
    }
}

impl fmt::Debug for DyadicInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "I({}:{})", self.level, self.pos)
    }
}

impl FromStr for DyadicInterval {
    type Err = CoreError;

    /// Parses the `"j:k"` text encoding.
    fn from_str(s: &str) -> Result<Self> {
        let (j, k) = s
            .split_once(':')
            .ok_or_else(|| CoreError::Malformed(format!("interval `{s}`: expected `j:k`")))?;
        let level: u32 = j
            .trim()
            .parse()
            .map_err(|e| CoreError::Malformed(format!("interval level `{j}`: {e}")))?;
        let pos: u64 = k
            .trim()
            .parse()
            .map_err(|e| CoreError::Malformed(format!("interval position `{k}`: {e}")))?;
        DyadicInterval::new(level, pos)
    }
}

/// All intervals of level exactly `j` (the collection `D_j`).
pub fn intervals_at_level(j: u32) -> Vec<DyadicInterval> {
    (0..1u64 << j)
        .map(|pos| DyadicInterval { level: j, pos })
        .collect()
}

/// All intervals of level at most `n` (the collection `D^n`), ordered by
/// level then position.
pub fn intervals_up_to(n: u32) -> Vec<DyadicInterval> {
    let mut out = Vec::with_capacity((1usize << (n + 1)) - 1);
    for j in 0..=n {
        out.extend(intervals_at_level(j));
    }
    out
}

/// Dyadic rectangle: a product of two dyadic intervals.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicRectangle {
    pub x: DyadicInterval,
    pub y: DyadicInterval,
}

impl DyadicRectangle {
    pub fn new(x: DyadicInterval, y: DyadicInterval) -> Self {
        DyadicRectangle { x, y }
    }

    pub const fn unit() -> Self {
        DyadicRectangle {
            x: DyadicInterval::unit(),
            y: DyadicInterval::unit(),
        }
    }

    /// Exact measure `|I| * |J|`.
    pub fn measure(&self) -> Exact {
        pow2(-(self.x.level as i64) - (self.y.level as i64))
    }

    /// Level pair `(m, n)` identifying the side-length block.
    pub fn block(&self) -> (u32, u32) {
        (self.x.level, self.y.level)
    }

    /// Shell index `max(m, n)`.
    pub fn shell(&self) -> u32 {
        self.x.level.max(self.y.level)
    }

    /// Membership in `R_n`: both levels at most `n`.
    pub fn in_depth(&self, n: u32) -> bool {
        self.x.level <= n && self.y.level <= n
    }

    pub fn is_subset_of(&self, other: &DyadicRectangle) -> bool {
        self.x.is_subset_of(&other.x) && self.y.is_subset_of(&other.y)
    }

    pub fn is_disjoint_from(&self, other: &DyadicRectangle) -> bool {
        self.x.is_disjoint_from(&other.x) || self.y.is_disjoint_from(&other.y)
    }

    pub fn intersect(&self, other: &DyadicRectangle) -> Option<DyadicRectangle> {
        Some(DyadicRectangle {
            x: self.x.intersect(&other.x)?,
            y: self.y.intersect(&other.y)?,
        })
    }

    /// Intersection measure, zero when disjoint.
    pub fn intersect_measure(&self, other: &DyadicRectangle) -> Exact {
        match self.intersect(other) {
            Some(r) => r.measure(),
            None => Exact::zero(),
        }
    }

    /// Measure in integer units of `2^-(gx+gy)` cells.
    pub fn cell_count(&self, gx: u32, gy: u32) -> u128 {
        debug_assert!(gx >= self.x.level && gy >= self.y.level);
        1u128 << ((gx - self.x.level) + (gy - self.y.level))
    }
}

impl fmt::Display for DyadicRectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

impl fmt::Debug for DyadicRectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R({},{})", self.x, self.y)
    }
}

impl FromStr for DyadicRectangle {
    type Err = CoreError;

    /// Parses the `"j:k,j':k'"` text encoding.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| CoreError::Malformed(format!("rectangle `{s}`: expected `j:k,j':k'`")))?;
        Ok(DyadicRectangle {
            x: a.parse()?,
            y: b.parse()?,
        })
    }
}

/// All rectangles of `R_n`, ordered by `(block, position)` enumeration.
pub fn rectangles_up_to(n: u32) -> Vec<DyadicRectangle> {
    let intervals = intervals_up_to(n);
    let mut out = Vec::with_capacity(intervals.len() * intervals.len());
    for x in &intervals {
        for y in &intervals {
            out.push(DyadicRectangle { x: *x, y: *y });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measures_are_exact() {
        assert_eq!(DyadicInterval::unit().measure(), pow2(0));
        let i = DyadicInterval::new(2, 3).unwrap();
        assert_eq!(i.measure(), pow2(-2));
        let r = DyadicRectangle::new(
            DyadicInterval::new(1, 0).unwrap(),
            DyadicInterval::new(1, 1).unwrap(),
        );
        assert_eq!(r.measure(), pow2(-2));
    }

    #[test]
    fn predecessor_matches_halving() {
        let i = DyadicInterval::new(2, 0).unwrap(); // [0, 1/4)
        assert_eq!(i.predecessor().unwrap(), DyadicInterval::new(1, 0).unwrap());
        let j = DyadicInterval::new(2, 2).unwrap(); // [1/2, 3/4)
        assert_eq!(j.predecessor().unwrap(), DyadicInterval::new(1, 1).unwrap());
        assert!(matches!(
            DyadicInterval::unit().predecessor(),
            Err(CoreError::RootHasNoPredecessor)
        ));
    }

    #[test]
    fn nesting_or_disjoint() {
        let ints = intervals_up_to(4);
        for a in &ints {
            for b in &ints {
                let nested = a.is_subset_of(b) || b.is_subset_of(a);
                let disjoint = a.is_disjoint_from(b);
                assert!(nested ^ disjoint, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn parse_roundtrip() {
        let r: DyadicRectangle = "2:3,1:0".parse().unwrap();
        assert_eq!(r.to_string(), "2:3,1:0");
        assert!("2:9,1:0".parse::<DyadicRectangle>().is_err());
        assert!("nope".parse::<DyadicInterval>().is_err());
    }

    #[test]
    fn exact_to_f64_handles_large_parts() {
        let big = Exact::new(BigInt::one() << 2000, (BigInt::one() << 2000) * BigInt::from(3));
        assert!((exact_to_f64(&big) - 1.0 / 3.0).abs() < 1e-12);
    }
}
