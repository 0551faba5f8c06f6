//! Linear ordering of the dyadic rectangles and its bijective index function.
//!
//! Rectangles are grouped by side-length pair into blocks `B_{m,n}`; blocks
//! of the same shell `max(m,n) = k` receive consecutive weights filling
//! `{k^2, ..., (k+1)^2 - 1}`, and rectangles within a block are ordered
//! lexicographically by their lower-left corner. The resulting index function
//! maps the rectangles with `min(|I|,|J|) = 2^-k` exactly onto the band
//! `((2^k - 1)^2, (2^(k+1) - 1)^2]`.

use crate::dyadic::{DyadicInterval, DyadicRectangle, Exact};
use crate::error::{CoreError, Result};
use std::cmp::Ordering;
use std::collections::HashMap;

/// Weight of the side-length block `B_{m,n}`.
///
/// Within shell `k`: `B_{0,k}` comes first, then `B_{k,0}, ..., B_{k,k-1}`,
/// then `B_{1,k}, ..., B_{k,k}`.
pub fn block_weight(m: u32, n: u32) -> u128 {
    let k = m.max(n) as u128;
    if k == 0 {
        return 0;
    }
    if m == 0 {
        k * k
    } else if m as u128 == k && (n as u128) < k {
        k * k + 1 + n as u128
    } else {
        k * k + k + m as u128
    }
}

/// Number of rectangles in `B_{m,n}`.
pub fn block_size(m: u32, n: u32) -> u128 {
    1u128 << (m + n)
}

/// Blocks of shell `k` in increasing weight order.
pub fn shell_blocks(k: u32) -> Vec<(u32, u32)> {
    if k == 0 {
        return vec![(0, 0)];
    }
    let mut out = Vec::with_capacity(2 * k as usize + 1);
    out.push((0, k));
    for n in 0..k {
        out.push((k, n));
    }
    for m in 1..=k {
        out.push((m, k));
    }
    out
}

/// Rectangles counted by shells `0..k`, i.e. `(2^k - 1)^2`.
pub fn count_before_shell(k: u32) -> u128 {
    let c = (1u128 << k) - 1;
    c * c
}

/// Total number of rectangles of depth at most `n`: `(2^(n+1) - 1)^2`.
pub fn count_up_to_depth(n: u32) -> u128 {
    count_before_shell(n + 1)
}

/// Anchored comparison key: block weight plus the exact lower-left corner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderKey {
    pub weight: u128,
    pub anchor: (Exact, Exact),
}

impl OrderKey {
    pub fn of(r: &DyadicRectangle) -> Self {
        OrderKey {
            weight: block_weight(r.x.level(), r.y.level()),
            anchor: (r.x.inf(), r.y.inf()),
        }
    }
}

impl PartialOrd for OrderKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .cmp(&other.weight)
            .then_with(|| self.anchor.0.cmp(&other.anchor.0))
            .then_with(|| self.anchor.1.cmp(&other.anchor.1))
    }
}

/// Total order on rectangles: block weight first, then the lexicographic
/// anchor order within the block.
pub fn order_compare(r0: &DyadicRectangle, r1: &DyadicRectangle) -> Ordering {
    let w0 = block_weight(r0.x.level(), r0.y.level());
    let w1 = block_weight(r1.x.level(), r1.y.level());
    w0.cmp(&w1).then_with(|| {
        // same weight implies same block, so anchors compare as positions
        r0.x.pos().cmp(&r1.x.pos()).then(r0.y.pos().cmp(&r1.y.pos()))
    })
}

/// 1-based position of the rectangle in the global order.
pub fn order_index(r: &DyadicRectangle) -> u128 {
    let (m, n) = r.block();
    let k = m.max(n);
    let mut count = count_before_shell(k);
    let w = block_weight(m, n);
    for (bm, bn) in shell_blocks(k) {
        if block_weight(bm, bn) < w {
            count += block_size(bm, bn);
        }
    }
    let rank = (r.x.pos() as u128) << n | r.y.pos() as u128;
    count + rank + 1
}

/// Inverse of [`order_index`] within depth `n`.
pub fn order_rect(index: u128, depth: u32) -> Result<DyadicRectangle> {
    let max = count_up_to_depth(depth);
    if index == 0 || index > max {
        return Err(CoreError::IndexOutOfRange { index, depth, max });
    }
    let mut k = 0u32;
    while count_up_to_depth(k) < index {
        k += 1;
    }
    let mut rest = index - 1 - count_before_shell(k);
    for (bm, bn) in shell_blocks(k) {
        let size = block_size(bm, bn);
        if rest < size {
            let px = (rest >> bn) as u64;
            let py = (rest & ((1u128 << bn) - 1)) as u64;
            return Ok(DyadicRectangle::new(
                DyadicInterval::new(bm, px)?,
                DyadicInterval::new(bn, py)?,
            ));
        }
        rest -= size;
    }
    unreachable!("shell accounting is exhaustive");
}

/// Dense bidirectional index for the rectangles of `R_depth`, in order.
#[derive(Clone, Debug)]
pub struct RectIndexer {
    depth: u32,
    rects: Vec<DyadicRectangle>,
    index_of: HashMap<DyadicRectangle, usize>,
}

impl RectIndexer {
    pub fn new(depth: u32) -> Self {
        let total = count_up_to_depth(depth) as usize;
        let mut rects = Vec::with_capacity(total);
        for k in 0..=depth {
            for (m, n) in shell_blocks(k) {
                for px in 0..1u64 << m {
                    for py in 0..1u64 << n {
                        rects.push(DyadicRectangle::new(
                            DyadicInterval::new(m, px).unwrap(),
                            DyadicInterval::new(n, py).unwrap(),
                        ));
                    }
                }
            }
        }
        debug_assert_eq!(rects.len(), total);
        let index_of = rects
            .iter()
            .copied()
            .enumerate()
            .map(|(i, r)| (r, i))
            .collect();
        RectIndexer {
            depth,
            rects,
            index_of,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// 0-based position, or `None` for rectangles outside the depth.
    pub fn position(&self, r: &DyadicRectangle) -> Option<usize> {
        self.index_of.get(r).copied()
    }

    pub fn rect(&self, position: usize) -> DyadicRectangle {
        self.rects[position]
    }

    pub fn rects(&self) -> &[DyadicRectangle] {
        &self.rects
    }
}
