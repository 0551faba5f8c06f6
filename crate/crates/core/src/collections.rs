//! Finite collections of intervals and rectangles: exact union measures,
//! Carleson constants and point-set operations.

use crate::dyadic::{pow2, DyadicInterval, DyadicRectangle, Exact};
use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

/// Finite set of dyadic intervals with cached union measure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalCollection {
    members: Vec<DyadicInterval>,
}

impl IntervalCollection {
    pub fn new(mut members: Vec<DyadicInterval>) -> Self {
        members.sort_unstable();
        members.dedup();
        IntervalCollection { members }
    }

    pub fn empty() -> Self {
        IntervalCollection { members: Vec::new() }
    }

    pub fn members(&self) -> &[DyadicInterval] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: &DyadicInterval) -> bool {
        self.members.binary_search(i).is_ok()
    }

    /// Members not strictly contained in any other member. Maximal members of
    /// a dyadic family are pairwise disjoint and carry the whole union.
    pub fn maximal_members(&self) -> Vec<DyadicInterval> {
        let set: HashSet<DyadicInterval> = self.members.iter().copied().collect();
        self.members
            .iter()
            .copied()
            .filter(|i| {
                let mut cur = *i;
                while let Ok(p) = cur.predecessor() {
                    if set.contains(&p) {
                        return false;
                    }
                    cur = p;
                }
                true
            })
            .collect()
    }

    /// Exact measure of the point-set union.
    pub fn union_measure(&self) -> Exact {
        self.maximal_members()
            .iter()
            .fold(Exact::zero(), |acc, i| acc + i.measure())
    }

    /// Sum of member measures (equals the union measure iff pairwise disjoint).
    pub fn sum_measure(&self) -> Exact {
        self.members
            .iter()
            .fold(Exact::zero(), |acc, i| acc + i.measure())
    }

    pub fn is_pairwise_disjoint(&self) -> bool {
        self.union_measure() == self.sum_measure()
    }

    /// Carleson constant: `sup over I in self of sum_{J in self, J ⊆ I} |J| / |I|`.
    /// The empty collection yields 0 by convention.
    pub fn carleson_constant(&self) -> Exact {
        if self.members.is_empty() {
            return Exact::zero();
        }
        // Packing sums accumulated by walking each member's ancestor chain.
        let set: HashSet<DyadicInterval> = self.members.iter().copied().collect();
        let max_level = self.members.iter().map(|i| i.level()).max().unwrap();
        // acc[I] = sum of |J| over members J ⊆ I, in units of 2^-max_level.
        let mut acc: HashMap<DyadicInterval, u128> = HashMap::with_capacity(self.members.len());
        for j in &self.members {
            let units = 1u128 << (max_level - j.level());
            let mut cur = *j;
            loop {
                if set.contains(&cur) {
                    *acc.entry(cur).or_insert(0) += units;
                }
                match cur.predecessor() {
                    Ok(p) => cur = p,
                    Err(_) => break,
                }
            }
        }
        let mut best = Exact::zero();
        for (i, units) in acc {
            // (units * 2^-max_level) / |I| = units * 2^(level(I) - max_level)
            let ratio = Exact::from_integer(BigInt::from(units))
                * pow2(i.level() as i64 - max_level as i64);
            if ratio > best {
                best = ratio;
            }
        }
        best
    }

    /// Members contained in the given interval.
    pub fn restrict_to(&self, i: &DyadicInterval) -> IntervalCollection {
        IntervalCollection::new(
            self.members
                .iter()
                .copied()
                .filter(|m| m.is_subset_of(i))
                .collect(),
        )
    }

    pub fn union_with(&self, other: &IntervalCollection) -> IntervalCollection {
        let mut v = self.members.clone();
        v.extend_from_slice(&other.members);
        IntervalCollection::new(v)
    }
}

impl FromIterator<DyadicInterval> for IntervalCollection {
    fn from_iter<T: IntoIterator<Item = DyadicInterval>>(iter: T) -> Self {
        IntervalCollection::new(iter.into_iter().collect())
    }
}

/// Finite set of dyadic rectangles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectangleCollection {
    members: Vec<DyadicRectangle>,
}

impl RectangleCollection {
    pub fn new(mut members: Vec<DyadicRectangle>) -> Self {
        members.sort_unstable();
        members.dedup();
        RectangleCollection { members }
    }

    pub fn empty() -> Self {
        RectangleCollection { members: Vec::new() }
    }

    pub fn members(&self) -> &[DyadicRectangle] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, r: &DyadicRectangle) -> bool {
        self.members.binary_search(r).is_ok()
    }

    pub fn sum_measure(&self) -> Exact {
        self.members
            .iter()
            .fold(Exact::zero(), |acc, r| acc + r.measure())
    }

    /// Exact union measure via an x-sweep over the finest member resolution.
    /// Works for overlapping members too.
    pub fn union_measure(&self) -> Exact {
        if self.members.is_empty() {
            return Exact::zero();
        }
        let gx = self.members.iter().map(|r| r.x.level()).max().unwrap();
        let gy = self.members.iter().map(|r| r.y.level()).max().unwrap();
        // x-slab boundaries in grid units
        let mut bounds: Vec<u64> = Vec::with_capacity(self.members.len() * 2);
        for r in &self.members {
            let (a, b) = r.x.cell_range(gx);
            bounds.push(a);
            bounds.push(b);
        }
        bounds.sort_unstable();
        bounds.dedup();
        let mut covered_cells: u128 = 0;
        for w in bounds.windows(2) {
            let (xa, xb) = (w[0], w[1]);
            // y-intervals of members spanning this slab
            let mut ys: Vec<(u64, u64)> = self
                .members
                .iter()
                .filter(|r| {
                    let (a, b) = r.x.cell_range(gx);
                    a <= xa && xb <= b
                })
                .map(|r| r.y.cell_range(gy))
                .collect();
            if ys.is_empty() {
                continue;
            }
            ys.sort_unstable();
            let mut ylen: u128 = 0;
            let (mut cur_a, mut cur_b) = ys[0];
            for &(a, b) in &ys[1..] {
                if a > cur_b {
                    ylen += (cur_b - cur_a) as u128;
                    cur_a = a;
                    cur_b = b;
                } else {
                    cur_b = cur_b.max(b);
                }
            }
            ylen += (cur_b - cur_a) as u128;
            covered_cells += (xb - xa) as u128 * ylen;
        }
        Exact::from_integer(BigInt::from(covered_cells)) * pow2(-(gx as i64) - (gy as i64))
    }

    pub fn is_pairwise_disjoint(&self) -> bool {
        self.union_measure() == self.sum_measure()
    }

    /// Exact measure of `(point-set union of self) ∩ rect`, assuming the
    /// members are pairwise disjoint.
    pub fn intersect_measure_disjoint(&self, rect: &DyadicRectangle) -> Exact {
        self.members
            .iter()
            .fold(Exact::zero(), |acc, r| acc + r.intersect_measure(rect))
    }

    /// Whether `rect` is covered by the union of the members (members assumed
    /// pairwise disjoint).
    pub fn covers_disjoint(&self, rect: &DyadicRectangle) -> bool {
        self.intersect_measure_disjoint(rect) == rect.measure()
    }

    /// The x-components of members whose y-component equals `l`.
    pub fn x_slice(&self, l: &DyadicInterval) -> Vec<DyadicInterval> {
        self.members
            .iter()
            .filter(|r| r.y == *l)
            .map(|r| r.x)
            .collect()
    }

    /// Distinct y-components, sorted.
    pub fn y_components(&self) -> Vec<DyadicInterval> {
        let mut v: Vec<DyadicInterval> = self.members.iter().map(|r| r.y).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

impl FromIterator<DyadicRectangle> for RectangleCollection {
    fn from_iter<T: IntoIterator<Item = DyadicRectangle>>(iter: T) -> Self {
        RectangleCollection::new(iter.into_iter().collect())
    }
}
