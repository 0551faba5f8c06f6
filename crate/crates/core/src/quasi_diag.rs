//! Inductive construction of a block basis on which a given operator is
//! almost diagonal, indexed by the rectangles of `R_n` in their linear
//! order.
//!
//! Stage 1 takes the whole unit square. A stage with index `[0,1) x J`
//! refines the parent collection at `[0,1) x pred(J)` by a frequency-weighted
//! cover in the `y`-axis followed by a halving step. A stage `I x J` with
//! `I != [0,1)` collects the admissible `y`-strips from `[0,1) x J`,
//! intersects the x-supports of all earlier comparable stages (organized
//! into strips of constant side length), lays a uniform grid of width
//! `eta_i` on the intersection, covers each grid cell in the `x`-axis, and
//! finally restricts by the halving (`J = [0,1)`) or nesting (`J != [0,1)`)
//! rule.
//!
//! The frequency weight of a rectangle sums `|<T* b_j, h_R>| + |<T b_j, h_R>|`
//! over the previously built blocks with the stage scalings; it is maintained
//! incrementally as two coefficient accumulators so each query is O(1).
//!
//! Strict mode aborts at the first unmet cover; best-effort mode keeps the
//! best level and records the miss. At finite depth late stages may come out
//! empty; empty stages are excluded from the weight context (their blocks
//! are zero) and deadness propagates cheaply through the strip counters.

use crate::collections::RectangleCollection;
use crate::combinatorics::{comb_cover, CoverAxis, RectWeight};
use crate::dyadic::{
    exact_to_f64, pow2, DyadicInterval, DyadicRectangle, Exact,
};
use crate::error::{CoreError, Result};
use crate::gamlen_gaudet::{block_projection, BlockFamily};
use crate::haar::HaarVector;
use crate::norms::{bmo_norm_lower, h1_norm, BmoLowerBudget, NormEstimate};
use crate::operator::{
    op_norm_lower, op_norm_quotient, shared_indexer, HaarMap, HaarOperator, NormChoice,
    OpNormBudget,
};
use crate::order::{count_up_to_depth, order_rect, RectIndexer};
use crate::scalar::Real;
use num_bigint::BigInt;
use num_traits::{One, Zero};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Strict,
    BestEffort,
}

/// Epsilon schedule for Theorem-4.1-style runs; the default `2^-(i+2)` sums
/// to at most 1/4.
#[derive(Clone, Debug)]
pub enum EpsSchedule {
    DefaultPow2,
    Const(f64),
    PerIndex(Vec<f64>),
}

impl EpsSchedule {
    pub fn eps<S: Real>(&self, index: u128) -> S {
        match self {
            EpsSchedule::DefaultPow2 => {
                S::from_f64_lossy((-(index as f64) - 2.0).exp2())
            }
            EpsSchedule::Const(c) => S::from_f64_lossy(*c),
            EpsSchedule::PerIndex(v) => {
                let i = (index as usize).saturating_sub(1);
                S::from_f64_lossy(v.get(i).copied().unwrap_or_else(|| {
                    (-(index as f64) - 2.0).exp2()
                }))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum StageCase {
    Root,
    Case1,
    Case2a,
    Case2b,
}

/// One cover invocation within a stage.
#[derive(Clone, Debug)]
pub struct CoverDiag {
    pub base: DyadicRectangle,
    pub level_rel: u32,
    pub fraction: Exact,
    pub met: bool,
    /// Whether the covered cell meets the stage's restriction region; only
    /// relevant covers can fail a strict run, since the others contribute
    /// nothing to the selected collection.
    pub relevant: bool,
}

/// Per-stage constants and outcomes.
#[derive(Clone, Debug)]
pub struct StageDiag<S: Real> {
    pub index: u128,
    pub rect: DyadicRectangle,
    pub case: StageCase,
    pub alive: bool,
    pub dead_reason: Option<String>,
    pub delta: Option<Exact>,
    pub beta: Option<Exact>,
    pub eta_level: Option<u32>,
    pub eta_clamped: bool,
    pub eps: S,
    /// Constant used during the stage (minimum over the blocks built so far).
    pub tau: S,
    /// Same constant recomputed once this stage's block is known.
    pub tau_final: S,
    pub covers: Vec<CoverDiag>,
    pub met_all: bool,
    pub block_size: usize,
    pub block_l2_sq: Exact,
    /// `<T b_i, b_i>`, zero for annihilation runs.
    pub diag_pairing: S,
    /// `1 - prod_{k <= i} (1 - delta_k)^2`, float diagnostic.
    pub alpha: f64,
}

/// Per-index state the later stages read back.
#[derive(Clone, Debug)]
pub struct BlockEntry {
    pub rect: DyadicRectangle,
    pub collection: RectangleCollection,
    /// The stage's `y`-frequency set.
    pub y_set: Vec<DyadicInterval>,
    /// Pre-restriction `x`-frequency collections per `y`-frequency.
    pub x_sets: BTreeMap<DyadicInterval, Vec<DyadicInterval>>,
    x_bits: BTreeMap<DyadicInterval, Vec<u64>>,
}

/// Output of the construction.
#[derive(Clone, Debug)]
pub struct BlockSystem<S: Real> {
    pub n: u32,
    pub depth: u32,
    pub mode: Mode,
    entries: Vec<BlockEntry>,
    pub stages: Vec<StageDiag<S>>,
    index_ix: Arc<RectIndexer>,
    /// Cross-stage rectangle reuse, empty in every intact run.
    pub disjointness_violations: Vec<String>,
    /// Measured H1 lower bound of the driving operator (normalization probe).
    pub measured_norm_lower: f64,
}

impl<S: Real> BlockFamily for BlockSystem<S> {
    fn ambient_depth(&self) -> u32 {
        self.depth
    }
    fn index_depth(&self) -> u32 {
        self.n
    }
    fn indices(&self) -> Vec<DyadicRectangle> {
        self.index_ix.rects().to_vec()
    }
    fn collection(&self, index: &DyadicRectangle) -> Option<&RectangleCollection> {
        self.index_ix
            .position(index)
            .map(|p| &self.entries[p].collection)
    }
}

impl<S: Real> BlockSystem<S> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, position: usize) -> &BlockEntry {
        &self.entries[position]
    }

    pub fn position_of(&self, rect: &DyadicRectangle) -> Option<usize> {
        self.index_ix.position(rect)
    }

    pub fn rect_of(&self, position: usize) -> DyadicRectangle {
        self.index_ix.rect(position)
    }

    pub fn block(&self, position: usize) -> HaarVector<S> {
        let mut v = HaarVector::zero(self.depth);
        for r in self.entries[position].collection.members() {
            v.set_coeff(*r, S::one()).expect("member in ambient depth");
        }
        v
    }

    pub fn alive_positions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&p| !self.entries[p].collection.is_empty())
            .collect()
    }
}

/// Scaled frequency weight `|R| (U_R + beta V_R) / divisor` over accumulated
/// coefficient magnitudes.
struct ScaledWeight<'a, S: Real> {
    u: &'a [S],
    v: &'a [S],
    indexer: &'a RectIndexer,
    beta: S,
    divisor: S,
}

impl<'a, S: Real> RectWeight<S> for ScaledWeight<'a, S> {
    fn weight(&self, r: &DyadicRectangle) -> S {
        match self.indexer.position(r) {
            Some(p) => {
                let m = S::from_f64_lossy(exact_to_f64(&r.measure()));
                m * (self.u[p] + self.beta * self.v[p]) / self.divisor
            }
            None => S::infinity(),
        }
    }
}

/// What drives the frequency weight.
enum Driver<'a, S: Real> {
    Operator(&'a HaarOperator<S>),
    /// Static context (annihilation runs): prescaled coefficient magnitudes.
    Annihilate { context_size: usize },
}

struct Builder<'a, S: Real> {
    n: u32,
    depth: u32,
    mode: Mode,
    eps: &'a EpsSchedule,
    driver: Driver<'a, S>,
    index_ix: Arc<RectIndexer>,
    ambient_ix: Arc<RectIndexer>,
    entries: Vec<BlockEntry>,
    stages: Vec<StageDiag<S>>,
    // frequency accumulators over the ambient index
    u: Vec<S>,
    v: Vec<S>,
    min_eps_l2: S,
    // incremental bookkeeping
    strips_nonempty: HashMap<(u32, DyadicInterval), u32>,
    blocks_max_xlevel: HashMap<(u32, u32), u32>,
    used: HashSet<DyadicRectangle>,
    disjointness_violations: Vec<String>,
    alpha_running: f64,
    words: usize,
}

impl<'a, S: Real> Builder<'a, S> {
    fn new(
        n: u32,
        depth: u32,
        mode: Mode,
        eps: &'a EpsSchedule,
        driver: Driver<'a, S>,
        u0: Vec<S>,
        v0: Vec<S>,
    ) -> Self {
        let index_ix = shared_indexer(n);
        let ambient_ix = shared_indexer(depth);
        let d = ambient_ix.len();
        let words = ((1usize << depth) + 63) / 64;
        Builder {
            n,
            depth,
            mode,
            eps,
            driver,
            index_ix,
            ambient_ix,
            entries: Vec::new(),
            stages: Vec::new(),
            u: if u0.is_empty() { vec![S::zero(); d] } else { u0 },
            v: if v0.is_empty() { vec![S::zero(); d] } else { v0 },
            min_eps_l2: S::infinity(),
            strips_nonempty: HashMap::new(),
            blocks_max_xlevel: HashMap::new(),
            used: HashSet::new(),
            disjointness_violations: Vec::new(),
            alpha_running: 1.0,
            words,
        }
    }

    fn delta(&self, i: u128) -> Exact {
        // 2^-i / (8 n)
        pow2(-(i as i64)) / Exact::from_integer(BigInt::from(8u32 * self.n.max(1)))
    }

    fn tau(&self, i: u128, beta: &Exact) -> S {
        let lead = S::from_f64_lossy((-(i as f64)).exp2())
            / (S::from_f64_lossy(4.0) * S::from_f64_lossy((i - 1) as f64));
        let b = S::from_f64_lossy(exact_to_f64(beta));
        let m = if self.min_eps_l2.is_finite() {
            self.min_eps_l2
        } else {
            S::zero()
        };
        lead * b * m
    }

    fn context_size(&self, i: u128) -> usize {
        match &self.driver {
            Driver::Operator(_) => (i - 1) as usize,
            Driver::Annihilate { context_size } => *context_size,
        }
    }

    fn divisor(&self, i: u128) -> S {
        match &self.driver {
            Driver::Operator(_) => S::from_f64_lossy((i - 1) as f64),
            Driver::Annihilate { .. } => S::one(),
        }
    }

    fn run(mut self) -> Result<BlockSystem<S>> {
        let total = count_up_to_depth(self.n);
        let total_usize = usize::try_from(total).map_err(|_| CoreError::Malformed(
            format!("index depth {} too large to enumerate", self.n),
        ))?;
        for i in 1..=total {
            let rect = order_rect(i, self.n).expect("index within depth");
            let stage = if i == 1 {
                self.stage_root()
            } else if rect.x.is_unit() {
                self.stage_case1(i, &rect)
            } else {
                self.stage_case2(i, &rect)
            };
            let stage = stage?;
            self.finish_stage(i, rect, stage)?;
        }
        debug_assert_eq!(self.entries.len(), total_usize);
        let measured = 0.0; // filled by the caller when an operator drives
        Ok(BlockSystem {
            n: self.n,
            depth: self.depth,
            mode: self.mode,
            entries: self.entries,
            stages: self.stages,
            index_ix: self.index_ix,
            disjointness_violations: self.disjointness_violations,
            measured_norm_lower: measured,
        })
    }

    fn stage_root(&mut self) -> Result<StageOutcome<S>> {
        let root = DyadicRectangle::unit();
        Ok(StageOutcome {
            case: StageCase::Root,
            collection: RectangleCollection::new(vec![root]),
            y_set: vec![DyadicInterval::unit()],
            x_sets: BTreeMap::from([(DyadicInterval::unit(), vec![DyadicInterval::unit()])]),
            covers: Vec::new(),
            beta: None,
            tau: S::zero(),
            eta_level: None,
            eta_clamped: false,
            dead_reason: None,
        })
    }

    /// `I = [0,1)`, `J != [0,1)`: refine the parent `[0,1) x pred(J)`.
    fn stage_case1(&mut self, i: u128, rect: &DyadicRectangle) -> Result<StageOutcome<S>> {
        let j = rect.y;
        let j_parent = j.predecessor().expect("case 1 has J != unit");
        let parent_rect = DyadicRectangle::new(DyadicInterval::unit(), j_parent);
        let parent_pos = self
            .index_ix
            .position(&parent_rect)
            .expect("parent precedes in the order");
        let parent = self.entries[parent_pos].collection.clone();
        if parent.is_empty() {
            return self.dead(
                i,
                StageCase::Case1,
                format!("parent collection at {parent_rect} is empty"),
            );
        }
        // every parent member must span the x-axis
        if let Some(bad) = parent.members().iter().find(|m| !m.x.is_unit()) {
            return Err(CoreError::StageFailed {
                stage: i,
                rect: rect.to_string(),
                reason: format!("parent member {bad} does not span the x-axis"),
            });
        }
        let beta = parent
            .members()
            .iter()
            .map(|m| m.measure())
            .min()
            .expect("nonempty");
        let tau = self.tau(i, &beta);
        let delta = self.delta(i);
        let divisor = self.divisor(i);
        let ctx = self.context_size(i);
        let mut covers = Vec::new();
        let mut selected: Vec<DyadicRectangle> = Vec::new();
        for member in parent.members() {
            let l0 = member.y;
            let max_rel = self.depth - l0.level();
            let weight = ScaledWeight {
                u: &self.u,
                v: &self.v,
                indexer: &self.ambient_ix,
                beta: S::from_f64_lossy(exact_to_f64(&beta)),
                divisor,
            };
            let cover = comb_cover(member, &weight, ctx.max(1), tau, &delta, 1, max_rel, CoverAxis::Y);
            // halving: keep candidates inside the matching half of their base
            let half = if j.is_left_child() {
                l0.left_half()?
            } else {
                l0.right_half()?
            };
            for cand in &cover.collection {
                if cand.y.is_subset_of(&half) {
                    selected.push(*cand);
                }
            }
            covers.push(CoverDiag {
                base: *member,
                level_rel: cover.level_rel,
                fraction: cover.covered_fraction.clone(),
                met: cover.met,
                relevant: true,
            });
        }
        let collection = RectangleCollection::new(selected);
        let y_set = collection.y_components();
        let x_sets = y_set
            .iter()
            .map(|l| (*l, vec![DyadicInterval::unit()]))
            .collect();
        Ok(StageOutcome {
            case: StageCase::Case1,
            collection,
            y_set,
            x_sets,
            covers,
            beta: Some(beta),
            tau,
            eta_level: None,
            eta_clamped: false,
            dead_reason: None,
        })
    }

    /// `I != [0,1)`: strip intersection, eta-grid, x-axis covers, and the
    /// case-2a/2b restriction.
    fn stage_case2(&mut self, i: u128, rect: &DyadicRectangle) -> Result<StageOutcome<S>> {
        let (m, n_lev) = rect.block();
        let case = if rect.y.is_unit() {
            StageCase::Case2a
        } else {
            StageCase::Case2b
        };
        // y-frequencies come from the case-1 stage at the same J
        let case1_rect = DyadicRectangle::new(DyadicInterval::unit(), rect.y);
        let case1_pos = self
            .index_ix
            .position(&case1_rect)
            .expect("case-1 index precedes");
        let y_set = self.entries[case1_pos].y_set.clone();
        if y_set.is_empty() {
            return self.dead(i, case, format!("no y-frequencies at {case1_rect}"));
        }
        // fast kill: a strip of the same J with no x-support constrains every
        // y-frequency of this stage to the empty set
        for bm in 0..m {
            if self
                .strips_nonempty
                .get(&(bm, rect.y))
                .copied()
                .unwrap_or(0)
                == 0
            {
                return self.dead(
                    i,
                    case,
                    format!("strip ({bm}, {}) carries no x-support", rect.y),
                );
            }
        }
        // eta from the finest x-side among all comparable earlier blocks
        let mut max_xlevel: Option<u32> = None;
        for bm in 0..=m {
            for bn in 0..=n_lev {
                if (bm, bn) == (m, n_lev) {
                    continue;
                }
                if let Some(l) = self.blocks_max_xlevel.get(&(bm, bn)) {
                    max_xlevel = Some(max_xlevel.map_or(*l, |c: u32| c.max(*l)));
                }
            }
        }
        let raw_eta_level = match max_xlevel {
            Some(l) => l + 1,
            None => return self.dead(i, case, "no earlier members for the eta grid".into()),
        };
        let mut eta_clamped = false;
        let eta_level = if raw_eta_level > self.depth {
            eta_clamped = true;
            if self.mode == Mode::Strict {
                return Err(CoreError::StageFailed {
                    stage: i,
                    rect: rect.to_string(),
                    reason: format!(
                        "eta grid at level {raw_eta_level} finer than depth {}",
                        self.depth
                    ),
                });
            }
            self.depth
        } else {
            raw_eta_level
        };

        // intersect strip supports per y-frequency
        let mut w_bits_per_l0: BTreeMap<DyadicInterval, Vec<u64>> = BTreeMap::new();
        for l0 in &y_set {
            match self.strip_intersection(i, rect, l0, m, n_lev)? {
                Some(bits) => {
                    w_bits_per_l0.insert(*l0, bits);
                }
                None => {
                    // a strip violation surfaced; best-effort marks the stage dead
                    return self.dead(
                        i,
                        case,
                        format!("strip frequency lookup failed at y-frequency {l0}"),
                    );
                }
            }
        }

        // eta grid per y-frequency
        let mut grids: BTreeMap<DyadicInterval, Vec<DyadicInterval>> = BTreeMap::new();
        for (l0, bits) in &w_bits_per_l0 {
            let mut cells = Vec::new();
            for k in DyadicInterval::unit().descendants_at(eta_level) {
                let (a, b) = k.cell_range(self.depth);
                if range_all_set(bits, a, b) {
                    cells.push(k);
                }
            }
            if !cells.is_empty() {
                grids.insert(*l0, cells);
            }
        }
        if grids.is_empty() {
            return self.dead(i, case, "eta grid is empty on every y-frequency".into());
        }
        let eta_measure = pow2(-(eta_level as i64));
        let beta = grids
            .iter()
            .map(|(l0, _)| &eta_measure * l0.measure())
            .min()
            .expect("nonempty grids");
        let tau = self.tau(i, &beta);
        let delta = self.delta(i);
        let divisor = self.divisor(i);
        let ctx = self.context_size(i);

        // restriction context, also used to flag which covers are relevant
        enum Restriction<'c> {
            Halves {
                parent: &'c RectangleCollection,
                left: bool,
            },
            Nested {
                up: &'c RectangleCollection,
            },
        }
        let restriction = match case {
            StageCase::Case2a => {
                let parent_rect =
                    DyadicRectangle::new(rect.x.predecessor().expect("I != unit"), rect.y);
                let parent_pos = self
                    .index_ix
                    .position(&parent_rect)
                    .expect("parent precedes");
                Restriction::Halves {
                    parent: &self.entries[parent_pos].collection,
                    left: rect.x.is_left_child(),
                }
            }
            StageCase::Case2b => {
                let up_rect =
                    DyadicRectangle::new(rect.x, rect.y.predecessor().expect("J != unit"));
                let up_pos = self.index_ix.position(&up_rect).expect("precedes");
                Restriction::Nested {
                    up: &self.entries[up_pos].collection,
                }
            }
            _ => unreachable!(),
        };
        let cell_relevant = |cell: &DyadicRectangle| -> bool {
            match &restriction {
                Restriction::Halves { parent, left } => parent.members().iter().any(|p| {
                    let half = if *left {
                        p.x.left_half().expect("within depth")
                    } else {
                        p.x.right_half().expect("within depth")
                    };
                    !cell.y.is_disjoint_from(&p.y) && !cell.x.is_disjoint_from(&half)
                }),
                Restriction::Nested { up } => {
                    !up.intersect_measure_disjoint(cell).is_zero()
                }
            }
        };
        let keeps = |cand: &DyadicRectangle| -> bool {
            match &restriction {
                Restriction::Halves { parent, left } => parent.members().iter().any(|p| {
                    let half = if *left {
                        p.x.left_half().expect("within depth")
                    } else {
                        p.x.right_half().expect("within depth")
                    };
                    cand.y.is_subset_of(&p.y) && cand.x.is_subset_of(&half)
                }),
                Restriction::Nested { up } => up.covers_disjoint(cand),
            }
        };

        let mut covers = Vec::new();
        let mut x_sets: BTreeMap<DyadicInterval, Vec<DyadicInterval>> = BTreeMap::new();
        let mut selected: Vec<DyadicRectangle> = Vec::new();
        for (l0, grid) in &grids {
            let mut xs: Vec<DyadicInterval> = Vec::new();
            for k0 in grid {
                let base = DyadicRectangle::new(*k0, *l0);
                let max_rel = self.depth - k0.level();
                let weight = ScaledWeight {
                    u: &self.u,
                    v: &self.v,
                    indexer: &self.ambient_ix,
                    beta: S::from_f64_lossy(exact_to_f64(&beta)),
                    divisor,
                };
                let cover = comb_cover(
                    &base,
                    &weight,
                    ctx.max(1),
                    tau,
                    &delta,
                    1,
                    max_rel,
                    CoverAxis::X,
                );
                for cand in &cover.collection {
                    xs.push(cand.x);
                    if keeps(cand) {
                        selected.push(*cand);
                    }
                }
                covers.push(CoverDiag {
                    base,
                    level_rel: cover.level_rel,
                    fraction: cover.covered_fraction.clone(),
                    met: cover.met,
                    relevant: cell_relevant(&base),
                });
            }
            xs.sort_unstable();
            xs.dedup();
            x_sets.insert(*l0, xs);
        }

        Ok(StageOutcome {
            case,
            collection: RectangleCollection::new(selected),
            y_set,
            x_sets,
            covers,
            beta: Some(beta),
            tau,
            eta_level: Some(eta_level),
            eta_clamped,
            dead_reason: None,
        })
    }

    /// Intersection over all strips of the x-supports at the y-frequency
    /// matching `l0`. `Ok(None)` signals a strip lookup violation.
    fn strip_intersection(
        &self,
        i: u128,
        rect: &DyadicRectangle,
        l0: &DyadicInterval,
        m: u32,
        n_lev: u32,
    ) -> Result<Option<Vec<u64>>> {
        let mut w = vec![u64::MAX; self.words];
        clamp_bits(&mut w, 1u64 << self.depth);
        for bm in 0..=m {
            for bn in 0..=n_lev {
                if (bm, bn) == (m, n_lev) {
                    continue;
                }
                for j0 in DyadicInterval::unit().descendants_at(bn) {
                    // the strip D_bm x {j0}
                    let probe = DyadicRectangle::new(
                        DyadicInterval::new(bm, 0).expect("level ok"),
                        j0,
                    );
                    let probe_pos = self.index_ix.position(&probe).expect("in index depth");
                    let y_of_strip = &self.entries[probe_pos].y_set;
                    // the unique y-frequency of the strip meeting l0
                    let mut hits = y_of_strip.iter().filter(|l| !l.is_disjoint_from(l0));
                    let l0p = match hits.next() {
                        None => continue, // strip carries no constraint at l0
                        Some(l) => {
                            if hits.next().is_some() {
                                return Err(CoreError::StageFailed {
                                    stage: i,
                                    rect: rect.to_string(),
                                    reason: format!(
                                        "multiple y-frequencies of strip ({bm},{j0}) meet {l0}"
                                    ),
                                });
                            }
                            l
                        }
                    };
                    if l0p.is_subset_of(l0) && l0p != l0 {
                        if self.mode == Mode::Strict {
                            return Err(CoreError::StageFailed {
                                stage: i,
                                rect: rect.to_string(),
                                reason: format!(
                                    "y-frequency {l0p} of strip ({bm},{j0}) strictly inside {l0}"
                                ),
                            });
                        }
                        return Ok(None);
                    }
                    // union of the strip's x-supports at l0p
                    if self
                        .strips_nonempty
                        .get(&(bm, j0))
                        .copied()
                        .unwrap_or(0)
                        == 0
                    {
                        return Ok(Some(vec![0u64; self.words]));
                    }
                    let mut strip_bits = vec![0u64; self.words];
                    for i0 in DyadicInterval::unit().descendants_at(bm) {
                        let member = DyadicRectangle::new(i0, j0);
                        let pos = self.index_ix.position(&member).expect("in index depth");
                        if let Some(bits) = self.entries[pos].x_bits.get(l0p) {
                            for (wd, b) in strip_bits.iter_mut().zip(bits) {
                                *wd |= *b;
                            }
                        }
                    }
                    for (wd, b) in w.iter_mut().zip(&strip_bits) {
                        *wd &= *b;
                    }
                    if w.iter().all(|x| *x == 0) {
                        return Ok(Some(w));
                    }
                }
            }
        }
        Ok(Some(w))
    }

    fn dead(&mut self, _i: u128, case: StageCase, reason: String) -> Result<StageOutcome<S>> {
        Ok(StageOutcome {
            case,
            collection: RectangleCollection::empty(),
            y_set: Vec::new(),
            x_sets: BTreeMap::new(),
            covers: Vec::new(),
            beta: None,
            tau: S::zero(),
            eta_level: None,
            eta_clamped: false,
            dead_reason: Some(reason),
        })
    }

    fn finish_stage(&mut self, i: u128, rect: DyadicRectangle, out: StageOutcome<S>) -> Result<()> {
        let alive = !out.collection.is_empty();
        let met_all = alive
            && out.dead_reason.is_none()
            && !out.eta_clamped
            && out.covers.iter().filter(|c| c.relevant).all(|c| c.met);
        if self.mode == Mode::Strict && i > 1 && !met_all {
            let reason = out
                .dead_reason
                .clone()
                .unwrap_or_else(|| match out.covers.iter().find(|c| c.relevant && !c.met) {
                    Some(c) => format!(
                        "cover of {} unmet (best fraction {})",
                        c.base, c.fraction
                    ),
                    None => "stage produced an empty collection".into(),
                });
            return Err(CoreError::StageFailed {
                stage: i,
                rect: rect.to_string(),
                reason,
            });
        }
        // cross-stage disjointness bookkeeping
        for r in out.collection.members() {
            if !self.used.insert(*r) {
                let msg = format!("rectangle {r} reused at stage {i} ({rect})");
                if self.mode == Mode::Strict {
                    return Err(CoreError::StageFailed {
                        stage: i,
                        rect: rect.to_string(),
                        reason: msg,
                    });
                }
                self.disjointness_violations.push(msg);
            }
        }

        let block_l2_sq = out.collection.sum_measure();
        let eps: S = self.eps.eps(i);
        let mut diag_pairing = S::zero();
        if alive {
            // accumulate frequency contributions and the diagonal pairing
            if let Driver::Operator(t) = self.driver {
                let mut b = vec![S::zero(); self.ambient_ix.len()];
                for r in out.collection.members() {
                    b[self.ambient_ix.position(r).expect("in ambient")] = S::one();
                }
                let tb = t.apply_dense(&b);
                let tsb = t.adjoint_apply_dense(&b);
                let l2 = S::from_f64_lossy(exact_to_f64(&block_l2_sq));
                for p in 0..self.u.len() {
                    self.u[p] = self.u[p] + tsb[p].abs();
                    self.v[p] = self.v[p] + tb[p].abs() / l2;
                }
                for r in out.collection.members() {
                    let p = self.ambient_ix.position(r).expect("in ambient");
                    diag_pairing = diag_pairing
                        + tb[p] * S::from_f64_lossy(exact_to_f64(&r.measure()));
                }
            }
            let contribution = eps * S::from_f64_lossy(exact_to_f64(&block_l2_sq));
            if contribution < self.min_eps_l2 {
                self.min_eps_l2 = contribution;
            }
        }
        let tau_final = match &out.beta {
            Some(b) => self.tau(i, b),
            None => S::zero(),
        };
        // strip and eta bookkeeping
        if out.x_sets.values().any(|v| !v.is_empty()) {
            *self
                .strips_nonempty
                .entry((rect.x.level(), rect.y))
                .or_insert(0) += 1;
        }
        if let Some(maxl) = out.collection.members().iter().map(|r| r.x.level()).max() {
            let e = self
                .blocks_max_xlevel
                .entry(rect.block())
                .or_insert(maxl);
            *e = (*e).max(maxl);
        }
        // alpha diagnostic
        if i > 1 {
            let d = exact_to_f64(&self.delta(i));
            self.alpha_running *= (1.0 - d) * (1.0 - d);
        }

        let x_bits = out
            .x_sets
            .iter()
            .map(|(l, xs)| {
                let mut bits = vec![0u64; self.words];
                for x in xs {
                    let (a, b) = x.cell_range(self.depth);
                    set_range(&mut bits, a, b);
                }
                (*l, bits)
            })
            .collect();

        self.stages.push(StageDiag {
            index: i,
            rect,
            case: out.case,
            alive,
            dead_reason: out.dead_reason,
            delta: if i > 1 { Some(self.delta(i)) } else { None },
            beta: out.beta,
            eta_level: out.eta_level,
            eta_clamped: out.eta_clamped,
            eps,
            tau: out.tau,
            tau_final,
            covers: out.covers,
            met_all,
            block_size: out.collection.len(),
            block_l2_sq,
            diag_pairing,
            alpha: 1.0 - self.alpha_running,
        });
        self.entries.push(BlockEntry {
            rect,
            collection: out.collection,
            y_set: out.y_set,
            x_sets: out.x_sets,
            x_bits,
        });
        Ok(())
    }
}

struct StageOutcome<S: Real> {
    case: StageCase,
    collection: RectangleCollection,
    y_set: Vec<DyadicInterval>,
    x_sets: BTreeMap<DyadicInterval, Vec<DyadicInterval>>,
    covers: Vec<CoverDiag>,
    beta: Option<Exact>,
    tau: S,
    eta_level: Option<u32>,
    eta_clamped: bool,
    dead_reason: Option<String>,
}

fn set_range(bits: &mut [u64], a: u64, b: u64) {
    for c in a..b {
        bits[(c / 64) as usize] |= 1u64 << (c % 64);
    }
}

fn clamp_bits(bits: &mut [u64], len: u64) {
    let full_words = (len / 64) as usize;
    let rem = len % 64;
    for (w, word) in bits.iter_mut().enumerate() {
        if w > full_words || (w == full_words && rem == 0) {
            *word = 0;
        } else if w == full_words {
            *word &= (1u64 << rem) - 1;
        }
    }
}

fn range_all_set(bits: &[u64], a: u64, b: u64) -> bool {
    (a..b).all(|c| bits[(c / 64) as usize] >> (c % 64) & 1 == 1)
}

/// Almost-diagonalize `T` over the index set `R_n`.
///
/// `T` must be normalized: a measured `H^1` lower bound above 1 aborts. In
/// strict mode every cover has to meet its `(1 - delta_i)` threshold; in
/// best-effort mode misses are recorded per stage.
pub fn quasi_diagonalize<S: Real>(
    t: &HaarOperator<S>,
    n: u32,
    eps: &EpsSchedule,
    mode: Mode,
) -> Result<BlockSystem<S>> {
    let measured = op_norm_lower(
        t,
        NormChoice::H1,
        &crate::operator::NORMALIZATION_PROBE_BUDGET,
        0,
    );
    let measured_f = measured.value.to_f64_lossy();
    if measured_f > 1.0 + 1e-9 {
        return Err(CoreError::NormalizationViolated {
            measured: measured_f,
        });
    }
    let builder = Builder::new(n, t.depth(), mode, eps, Driver::Operator(t), vec![], vec![]);
    let mut sys = builder.run()?;
    sys.measured_norm_lower = measured_f;
    Ok(sys)
}

/// Report of [`verify_almost_diagonal`].
#[derive(Clone, Debug)]
pub struct AlmostDiagRow<S: Real> {
    pub index: u128,
    pub rect: DyadicRectangle,
    pub off_diag_sum: S,
    pub bound: S,
    pub sharper_bound: S,
    pub pass: bool,
    pub pass_sharper: bool,
}

/// Recompute every off-diagonal pairing `<T b_j, b_i>` from the matrices and
/// compare with `eps_i ||b_i||^2` and the sharper internal bound
/// `2^-i eps_i ||b_i||^2`.
pub fn verify_almost_diagonal<S: Real>(
    t: &HaarOperator<S>,
    sys: &BlockSystem<S>,
    eps: &EpsSchedule,
) -> Vec<AlmostDiagRow<S>> {
    let count = sys.len();
    let blocks: Vec<HaarVector<S>> = (0..count).map(|p| sys.block(p)).collect();
    let images: Vec<HaarVector<S>> = blocks.iter().map(|b| t.apply(b)).collect();
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let mut sum = S::zero();
        for j in 0..count {
            if i == j {
                continue;
            }
            sum = sum + images[j].pairing(&blocks[i]).expect("same depth").abs();
        }
        let l2 = S::from_f64_lossy(exact_to_f64(&sys.stages[i].block_l2_sq));
        let e: S = eps.eps((i + 1) as u128);
        let bound = e * l2;
        let sharper = bound * S::from_f64_lossy((-((i + 1) as f64)).exp2());
        let slack = S::from_f64_lossy(1e-12);
        rows.push(AlmostDiagRow {
            index: (i + 1) as u128,
            rect: sys.rect_of(i),
            off_diag_sum: sum,
            bound,
            sharper_bound: sharper,
            pass: sum <= bound + slack,
            pass_sharper: sum <= sharper + slack,
        });
    }
    rows
}

/// Post-hoc stage soundness: every selected rectangle of stage `i` satisfies
/// the frequency-weight bound with the stage's `tau_i`, and the raw summed
/// bound `sum_j |<T* b_j, h_R>| + |<T b_j, h_R>| <= (i-1) tau_i / beta_i |R|`.
#[derive(Clone, Debug)]
pub struct StageSoundnessRow<S: Real> {
    pub index: u128,
    pub max_weight_excess: S,
    pub max_raw_excess: S,
    pub pass: bool,
}

pub fn verify_stage_soundness<S: Real>(
    t: &HaarOperator<S>,
    sys: &BlockSystem<S>,
) -> Vec<StageSoundnessRow<S>> {
    let ambient_ix = shared_indexer(sys.depth);
    let d = ambient_ix.len();
    let mut u = vec![S::zero(); d];
    let mut v = vec![S::zero(); d];
    let mut rows = Vec::new();
    for p in 0..sys.len() {
        let i = (p + 1) as u128;
        let stage = &sys.stages[p];
        if i > 1 && stage.alive {
            let beta = S::from_f64_lossy(exact_to_f64(
                stage.beta.as_ref().unwrap_or(&Exact::zero()),
            ));
            let divisor = S::from_f64_lossy((i - 1) as f64);
            let mut max_weight_excess = S::neg_infinity();
            let mut max_raw_excess = S::neg_infinity();
            for r in sys.entry(p).collection.members() {
                let pos = ambient_ix.position(r).expect("in ambient");
                let measure = S::from_f64_lossy(exact_to_f64(&r.measure()));
                let weight = measure * (u[pos] + beta * v[pos]) / divisor;
                let weight_bound = stage.tau * measure;
                max_weight_excess = max_weight_excess.max(weight - weight_bound);
                // raw sums need the unscaled magnitudes; v accumulated
                // |T b_j| / ||b_j||^2 so the raw form is checked through the
                // scaled inequality with beta <= 1 and ||b_j||^2 <= 1
                let raw = measure * (u[pos] + v[pos] * S::one());
                let raw_bound = if beta > S::zero() {
                    divisor * stage.tau / beta * measure
                } else {
                    S::zero()
                };
                max_raw_excess = max_raw_excess.max(raw - raw_bound);
            }
            let tol = S::from_f64_lossy(1e-12);
            rows.push(StageSoundnessRow {
                index: i,
                max_weight_excess,
                max_raw_excess,
                pass: max_weight_excess <= tol,
            });
        } else {
            rows.push(StageSoundnessRow {
                index: i,
                max_weight_excess: S::neg_infinity(),
                max_raw_excess: S::neg_infinity(),
                pass: true,
            });
        }
        // replay the construction's accumulator update
        if stage.alive {
            if let Some(_) = Some(()) {
                let mut b = vec![S::zero(); d];
                for r in sys.entry(p).collection.members() {
                    b[ambient_ix.position(r).expect("in ambient")] = S::one();
                }
                let tb = t.apply_dense(&b);
                let tsb = t.adjoint_apply_dense(&b);
                let l2 = S::from_f64_lossy(exact_to_f64(&stage.block_l2_sq));
                for q in 0..d {
                    u[q] = u[q] + tsb[q].abs();
                    v[q] = v[q] + tb[q].abs() / l2;
                }
            }
        }
    }
    rows
}

/// Structural verification of the measure estimates along parent-child pairs
/// and predecessor paths.
#[derive(Clone, Debug)]
pub struct StructureReport {
    /// Worst (smallest) normalized intersection along immediate pairs,
    /// relative to the `1/2 prod (1-delta)^2` lower bound.
    pub immediate_checked: usize,
    pub immediate_failures: Vec<String>,
    pub path_checked: usize,
    pub path_failures: Vec<String>,
    /// min over path checks of `2^(i+j) |(KxL) ∩ E*_child| / |KxL|`.
    pub worst_path_lower: f64,
    pub worst_path_upper: f64,
    pub passed: bool,
}

pub fn verify_block_system<S: Real>(sys: &BlockSystem<S>) -> StructureReport {
    let idx_rects = sys.indices();
    let mut immediate_failures = Vec::new();
    let mut path_failures = Vec::new();
    let mut immediate_checked = 0usize;
    let mut path_checked = 0usize;
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper: f64 = 0.0;

    // exact product lower constant: 1/2 prod_{k<=i}(1-delta_k)^2 for small
    // systems, the weaker exact bound 1/2 (1 - 2 sum delta_k) otherwise
    let total = sys.len() as u128;
    let exact_products = sys.len() <= 4096;
    let mut lower_consts: Vec<Exact> = Vec::with_capacity(sys.len());
    {
        let mut running = Exact::one();
        let mut sumdelta = Exact::zero();
        for i in 1..=total {
            if i > 1 {
                let d = pow2(-(i as i64))
                    / Exact::from_integer(BigInt::from(8u32 * sys.n.max(1)));
                if exact_products {
                    let f = Exact::one() - &d;
                    running = running * (&f * &f);
                } else {
                    sumdelta = sumdelta + &d + &d;
                }
            }
            let c = if exact_products {
                running.clone()
            } else {
                Exact::one() - sumdelta.clone()
            };
            lower_consts.push(c / Exact::from_integer(2.into()));
        }
    }

    for parent in &idx_rects {
        let pcoll = match sys.collection(parent) {
            Some(c) if !c.is_empty() => c,
            _ => continue,
        };
        for child in &idx_rects {
            if child == parent || !child.is_subset_of(parent) {
                continue;
            }
            let ccoll = match sys.collection(child) {
                Some(c) if !c.is_empty() => c,
                _ => continue,
            };
            let di = child.x.level() - parent.x.level();
            let dj = child.y.level() - parent.y.level();
            let child_pos = sys.position_of(child).expect("indexed");
            let immediate = di + dj == 1;
            for kl in pcoll.members() {
                let inter = ccoll.intersect_measure_disjoint(kl);
                let scaled = &inter * pow2((di + dj) as i64);
                let ratio = exact_to_f64(&(&scaled / kl.measure()));
                worst_lower = worst_lower.min(ratio);
                worst_upper = worst_upper.max(ratio);
                if immediate {
                    immediate_checked += 1;
                    let lo = &lower_consts[child_pos] * kl.measure();
                    let hi = kl.measure() / Exact::from_integer(2.into());
                    if inter < lo || inter > hi {
                        immediate_failures.push(format!(
                            "{parent} -> {child}: member {kl} intersection {inter} outside [{lo}, {hi}]"
                        ));
                    }
                }
                path_checked += 1;
                let lo = kl.measure() / Exact::from_integer(2.into());
                let hi = kl.measure();
                if scaled < lo || scaled > hi {
                    path_failures.push(format!(
                        "{parent} -> {child}: member {kl} scaled intersection {scaled} outside [{lo}, {hi}]"
                    ));
                }
            }
        }
    }
    let passed = immediate_failures.is_empty() && path_failures.is_empty();
    StructureReport {
        immediate_checked,
        immediate_failures,
        path_checked,
        path_failures,
        worst_path_lower: worst_lower,
        worst_path_upper: worst_upper,
        passed,
    }
}

/// The linear extension `h_{IxJ} -> b_{IxJ}`. Fails on zero blocks.
pub fn embedding_s<S: Real>(sys: &BlockSystem<S>) -> Result<HaarMap<S>> {
    for p in 0..sys.len() {
        if sys.entry(p).collection.is_empty() {
            return Err(CoreError::ZeroBlock {
                index: sys.rect_of(p).to_string(),
            });
        }
    }
    Ok(HaarMap::from_columns(sys.n, sys.depth, |idx| {
        let p = sys.position_of(idx).expect("in index depth");
        sys.block(p)
    }))
}

/// Orthogonal projection onto the block span (dense).
pub fn block_q<S: Real>(sys: &BlockSystem<S>) -> Result<HaarOperator<S>> {
    block_projection(sys)
}

/// Measured condition proxy for `S`: lower estimates of `||S||` and
/// `||S^-1||` (the latter through minimal quotients over the block span).
pub fn s_condition_proxy<S: Real>(sys: &BlockSystem<S>, seed: u64) -> Result<(NormEstimate<S>, f64)> {
    let s_map = embedding_s(sys)?;
    let est = op_norm_lower(&s_map, NormChoice::H1, &OpNormBudget::default(), seed);
    // minimal quotient over atoms of the source space
    let src_ix = shared_indexer(sys.n);
    let mut min_q = f64::INFINITY;
    for p in 0..src_ix.len() {
        let f = HaarVector::<S>::atom(sys.n, src_ix.rect(p), S::one()).expect("in depth");
        if let Ok(q) = op_norm_quotient(&s_map, NormChoice::H1, &f) {
            let q = q.to_f64_lossy();
            if q > 0.0 {
                min_q = min_q.min(q);
            }
        }
    }
    let s_inv_lower = if min_q.is_finite() { 1.0 / min_q } else { f64::INFINITY };
    Ok((est, s_inv_lower))
}

/// Annihilation report per input vector.
#[derive(Clone, Debug)]
pub struct AnnihilationRow<S: Real> {
    pub pairing_sum_normalized: S,
    pub q_image_bmo_lower: f64,
    pub input_bmo_lower: f64,
    pub proxy_ratio: f64,
}

#[derive(Clone, Debug)]
pub struct AnnihilationReport<S: Real> {
    pub rows: Vec<AnnihilationRow<S>>,
    pub eps_target: f64,
    /// The BMO quantities are lower estimates, not exact norms.
    pub norms_are_estimates: bool,
}

/// Theorem-5.3-style run: the same induction driven by a fixed family
/// instead of an operator. Returns the block system plus the measured
/// annihilation diagnostics.
pub fn annihilating_system<S: Real>(
    family: &[HaarVector<S>],
    n: u32,
    depth: u32,
    eps_target: f64,
    eps: &EpsSchedule,
    mode: Mode,
) -> Result<(BlockSystem<S>, AnnihilationReport<S>)> {
    for f in family {
        if f.depth() != depth {
            return Err(CoreError::DepthMismatch {
                left: f.depth(),
                right: depth,
            });
        }
    }
    let ambient_ix = shared_indexer(depth);
    let d = ambient_ix.len();
    let mut u = vec![S::zero(); d];
    let mut v = vec![S::zero(); d];
    let nonzero: Vec<&HaarVector<S>> = family.iter().filter(|f| !f.is_zero()).collect();
    let m = nonzero.len().max(1);
    for f in &nonzero {
        let b = bmo_norm_lower(f, &BmoLowerBudget::default(), 0).value.to_f64_lossy();
        let h = h1_norm(f).to_f64_lossy();
        let bs = S::from_f64_lossy(1.0 / (m as f64 * b.max(f64::MIN_POSITIVE)));
        let hs = S::from_f64_lossy(1.0 / (m as f64 * h.max(f64::MIN_POSITIVE)));
        for (r, a) in f.support() {
            let p = ambient_ix.position(r).expect("in depth");
            u[p] = u[p] + a.abs() * bs;
            v[p] = v[p] + a.abs() * hs;
        }
    }
    let builder = Builder::new(
        n,
        depth,
        mode,
        eps,
        Driver::Annihilate { context_size: m },
        u,
        v,
    );
    let sys = builder.run()?;

    let mut rows = Vec::new();
    for f in &nonzero {
        let mut sum = S::zero();
        for p in 0..sys.len() {
            let coll = &sys.entry(p).collection;
            if coll.is_empty() {
                continue;
            }
            let b = sys.block(p);
            let l2 = S::from_f64_lossy(exact_to_f64(&sys.stages[p].block_l2_sq));
            let pairing = f.pairing(&b).expect("same depth");
            sum = sum + pairing.abs() / l2.sqrt();
        }
        let qf = crate::gamlen_gaudet::apply_block_projection(&sys, f)?;
        let q_lower = bmo_norm_lower(&qf, &BmoLowerBudget::default(), 1)
            .value
            .to_f64_lossy();
        let f_lower = bmo_norm_lower(f, &BmoLowerBudget::default(), 1)
            .value
            .to_f64_lossy();
        rows.push(AnnihilationRow {
            pairing_sum_normalized: sum,
            q_image_bmo_lower: q_lower,
            input_bmo_lower: f_lower,
            proxy_ratio: if f_lower > 0.0 { q_lower / f_lower } else { 0.0 },
        });
    }
    Ok((
        sys,
        AnnihilationReport {
            rows,
            eps_target,
            norms_are_estimates: true,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(l: u32, p: u64) -> DyadicInterval {
        DyadicInterval::new(l, p).unwrap()
    }

    fn rect(lx: u32, px: u64, ly: u32, py: u64) -> DyadicRectangle {
        DyadicRectangle::new(iv(lx, px), iv(ly, py))
    }

    #[test]
    fn identity_n1_strict_completes_with_exact_orthogonality() {
        let t = HaarOperator::<f64>::identity(4);
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict).unwrap();
        assert_eq!(sys.len(), 9);
        assert!(sys.disjointness_violations.is_empty());
        // all stages alive, all covers met
        for s in &sys.stages {
            assert!(s.alive, "stage {} dead: {:?}", s.index, s.dead_reason);
            assert!(s.met_all, "stage {} missed a cover", s.index);
        }
        // off-diagonal pairings exactly zero, diagonal = ||b||^2 in [1/2 |R|, |R|]
        let rows = verify_almost_diagonal(&t, &sys, &EpsSchedule::DefaultPow2);
        for (p, row) in rows.iter().enumerate() {
            assert_eq!(row.off_diag_sum, 0.0, "row {p}");
            assert!(row.pass && row.pass_sharper);
            let l2 = &sys.stages[p].block_l2_sq;
            let r = sys.rect_of(p);
            assert!(l2 >= &(r.measure() / Exact::from_integer(2.into())), "{r}");
            assert!(l2 <= &r.measure(), "{r}");
            let diag = sys.stages[p].diag_pairing;
            assert!((diag - exact_to_f64(l2)).abs() < 1e-14);
        }
        // structural verification passes with exact constants
        let report = verify_block_system(&sys);
        assert!(report.passed, "{:?} {:?}", report.immediate_failures, report.path_failures);
        assert!(report.worst_path_lower >= 0.5 - 1e-12);
        assert!(report.worst_path_upper <= 1.0 + 1e-12);
    }

    #[test]
    fn identity_first_stages_match_hand_trace() {
        let t = HaarOperator::<f64>::identity(4);
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict).unwrap();
        // stage 1: the unit square
        assert_eq!(
            sys.entry(0).collection.members(),
            &[DyadicRectangle::unit()]
        );
        // stage 2 = [0,1) x [0,1/2): the left half strip survives at level 1
        assert_eq!(sys.entry(1).collection.members(), &[rect(0, 0, 1, 0)]);
        // stage 3 = [0,1) x [1/2,1): level 1 blocked by stage 2's member, so
        // the cover descends to level 2 and keeps the right-half quarters
        assert_eq!(
            sys.entry(2).collection.members(),
            &[rect(0, 0, 2, 2), rect(0, 0, 2, 3)]
        );
        // stage 4 = [0,1/2) x [0,1): eta = 1/2, full x-halving available
        assert_eq!(
            sys.entry(3).collection.members(),
            &[rect(2, 0, 0, 0), rect(2, 1, 0, 0)]
        );
        let s5 = &sys.stages[4];
        assert_eq!(s5.case, StageCase::Case2a);
        // stage 6 = [0,1/2) x [0,1/2) (case 2b)
        let s6 = &sys.stages[5];
        assert_eq!(s6.case, StageCase::Case2b);
        assert!(s6.alive);
        for r in sys.entry(5).collection.members() {
            assert!(r.is_subset_of(&rect(1, 0, 1, 0)));
        }
    }

    #[test]
    fn zero_operator_runs_best_effort() {
        let t = HaarOperator::<f64>::zero(3);
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::BestEffort).unwrap();
        assert!(sys.disjointness_violations.is_empty());
        let rows = verify_almost_diagonal(&t, &sys, &EpsSchedule::DefaultPow2);
        for row in rows {
            assert_eq!(row.off_diag_sum, 0.0);
            assert!(row.pass);
        }
    }

    #[test]
    fn normalization_is_enforced() {
        let t = HaarOperator::<f64>::haar_multiplier(3, |_| 2.0);
        assert!(matches!(
            quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict),
            Err(CoreError::NormalizationViolated { .. })
        ));
    }

    #[test]
    fn stage_soundness_holds_post_hoc() {
        let t = HaarOperator::<f64>::random_contraction(3, 5).unwrap();
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::BestEffort).unwrap();
        let rows = verify_stage_soundness(&t, &sys);
        for row in rows {
            assert!(row.pass, "stage {} excess {}", row.index, row.max_weight_excess);
        }
    }

    #[test]
    fn embedding_and_projection_shapes() {
        let t = HaarOperator::<f64>::identity(4);
        let sys = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::Strict).unwrap();
        let s = embedding_s(&sys).unwrap();
        // S reproduces each block from the corresponding atom
        for p in 0..sys.len() {
            let atom = HaarVector::atom(1, sys.rect_of(p), 1.0).unwrap();
            let img = s.apply(&atom);
            let b = sys.block(p);
            assert!(h1_norm(&img.minus(&b).unwrap()) < 1e-14);
        }
        let q = block_q(&sys).unwrap();
        // Q S = S on atoms
        for p in 0..sys.len() {
            let atom = HaarVector::atom(1, sys.rect_of(p), 1.0).unwrap();
            let img = s.apply(&atom);
            let qimg = q.apply(&img);
            assert!(h1_norm(&qimg.minus(&img).unwrap()) < 1e-12);
        }
        let (s_est, s_inv_lower) = s_condition_proxy(&sys, 3).unwrap();
        assert!(s_est.value > 0.0);
        assert!(s_inv_lower.is_finite());
    }

    #[test]
    fn annihilating_deep_atom_is_avoided() {
        let deep = rect(5, 7, 5, 11);
        let f = HaarVector::<f64>::atom(5, deep, 1.0).unwrap();
        let (sys, report) =
            annihilating_system(&[f.clone()], 1, 5, 0.25, &EpsSchedule::DefaultPow2, Mode::BestEffort)
                .unwrap();
        for p in 0..sys.len() {
            assert!(!sys.entry(p).collection.contains(&deep));
        }
        assert_eq!(report.rows[0].pairing_sum_normalized, 0.0);
    }

    #[test]
    fn annihilating_zero_family_behaves_like_zero_operator() {
        let zero = HaarVector::<f64>::zero(3);
        let (sys, report) =
            annihilating_system(&[zero], 1, 3, 0.25, &EpsSchedule::DefaultPow2, Mode::BestEffort)
                .unwrap();
        assert!(report.rows.is_empty());
        let t = HaarOperator::<f64>::zero(3);
        let from_op = quasi_diagonalize(&t, 1, &EpsSchedule::DefaultPow2, Mode::BestEffort).unwrap();
        for p in 0..sys.len() {
            assert_eq!(
                sys.entry(p).collection.members(),
                from_op.entry(p).collection.members(),
                "stage {p}"
            );
        }
    }
}
