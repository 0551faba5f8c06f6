//! End-to-end pipeline: almost-diagonalize, color by the diagonal, extract a
//! monochromatic product with Ramsey, condense, invert the correction term
//! on the block span, and assemble the factorization `P H E = Id` with a
//! recomputed residual.

use crate::collections::IntervalCollection;
use crate::combinatorics::{ramsey_extract, Coloring, RamseyColor, RamseyResult};
use crate::dyadic::{exact_to_f64, pow2, DyadicRectangle, Exact};
use crate::error::{CoreError, Result};
use crate::gamlen_gaudet::{condense_2d, strict_requirement, BlockFamily};
use crate::haar::HaarVector;
use crate::norms::NormKind;
use crate::operator::{
    caps, op_norm_lower, shared_indexer, HaarMap, HaarOperator, NormChoice,
    OpNormBudget,
};
use crate::quasi_diag::{quasi_diagonalize, BlockSystem, EpsSchedule, Mode};
use crate::scalar::Real;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

/// `mantissa * 2^exponent` with arbitrary-precision parts; the nominal
/// dimension numbers overflow any fixed-width representation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BigPow2 {
    pub mantissa: String,
    pub exponent: String,
}

impl BigPow2 {
    pub fn new(mantissa: &BigUint, exponent: &BigUint) -> Self {
        BigPow2 {
            mantissa: mantissa.to_string(),
            exponent: exponent.to_string(),
        }
    }

    /// Exact decimal form when the exponent is small enough to materialize.
    pub fn exact(&self) -> Option<String> {
        let mantissa: BigUint = self.mantissa.parse().ok()?;
        let exponent: BigUint = self.exponent.parse().ok()?;
        let shift = exponent.to_usize()?;
        if shift > 1 << 20 {
            return None;
        }
        Some((mantissa << shift).to_string())
    }
}

impl std::fmt::Display for BigPow2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}*2^{}", self.mantissa, self.exponent)
    }
}

/// Working overrides for the dimension chain.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Overrides {
    pub n1_work: Option<u32>,
    pub n_work: Option<u32>,
}

/// The nominal dimension chain `N2 = n 4^n`, `N1 = N2 2^(4^N2)`, plus the
/// working overrides actually used for execution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionPlan {
    pub n: u32,
    pub m: f64,
    pub n2: String,
    pub n1: BigPow2,
    /// Exact decimal of `N1` when representable.
    pub n1_exact: Option<String>,
    /// The final depth `N(N1, M, {eps})` exists by the construction but has
    /// no closed form; reported symbolically.
    pub nominal_descriptor: String,
    pub n1_work: Option<u32>,
    pub n_work: Option<u32>,
    /// True only if the run would use the nominal dimensions (never, in
    /// practice).
    pub nominal: bool,
    pub trivial: bool,
}

/// Exact dimension chain with validated overrides.
pub fn plan_dimensions(n: u32, m: f64, overrides: Overrides) -> Result<DimensionPlan> {
    let cap = caps::max_depth();
    for (what, v) in [("n1_work", overrides.n1_work), ("n_work", overrides.n_work)] {
        if let Some(depth) = v {
            if depth > cap {
                return Err(CoreError::OverrideExceedsCap {
                    depth,
                    cap,
                    what: what.into(),
                });
            }
        }
    }
    let n2 = BigUint::from(n) * (BigUint::one() << (2 * n as usize));
    // the exponent of N1 is 4^N2 = 2^(2 N2)
    let shift = (&n2 * 2u32).to_usize().filter(|s| *s <= 1 << 24).ok_or_else(|| {
        CoreError::Malformed(format!(
            "dimension chain for n = {n} overflows the symbolic representation"
        ))
    })?;
    let exponent = BigUint::one() << shift;
    let n1 = BigPow2::new(&n2, &exponent);
    let n1_exact = n1.exact();
    Ok(DimensionPlan {
        n,
        m,
        n2: n2.to_string(),
        n1,
        n1_exact,
        nominal_descriptor: format!("N(N1 = {n2}*2^4^{n2}, M = {m}, eps-schedule)"),
        n1_work: overrides.n1_work,
        n_work: overrides.n_work,
        nominal: overrides.n1_work.is_none() && overrides.n_work.is_none() && n == 0,
        trivial: n == 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HChoice {
    T,
    IdMinusT,
}

/// Apply the chosen factor `H`.
pub fn apply_h<S: Real>(t: &HaarOperator<S>, h: HChoice, f: &HaarVector<S>) -> HaarVector<S> {
    match h {
        HChoice::T => t.apply(f),
        HChoice::IdMinusT => f.minus(&t.apply(f)).expect("same depth"),
    }
}

/// Coloring `C = { IxJ : |<T b, b>| >= ||b||^2 / 2 }` from the stored
/// diagonal pairings; ties among nonzero blocks color inside. A zero block
/// (possible only in depth-exhausted best-effort runs) carries no diagonal
/// information of its own and inherits the color of its nearest nonzero
/// ancestor index, so the mirror symmetry between `T` and `Id - T` survives
/// at desk scale.
pub fn color_by_diagonal<S: Real>(sys: &BlockSystem<S>) -> Coloring {
    let mut members = HashSet::new();
    let mut colored: Vec<bool> = vec![false; sys.len()];
    for p in 0..sys.len() {
        let stage = &sys.stages[p];
        let l2 = exact_to_f64(&stage.block_l2_sq);
        let inside = if l2 > 0.0 {
            stage.diag_pairing.to_f64_lossy().abs() >= l2 / 2.0
        } else {
            // nearest alive ancestor: shrink the deeper side first
            let mut cur = sys.rect_of(p);
            loop {
                cur = if cur.x.level() >= cur.y.level() && cur.x.level() > 0 {
                    DyadicRectangle::new(cur.x.predecessor().expect("level > 0"), cur.y)
                } else {
                    DyadicRectangle::new(cur.x, cur.y.predecessor().expect("not the root"))
                };
                let q = sys.position_of(&cur).expect("ancestor in index depth");
                if exact_to_f64(&sys.stages[q].block_l2_sq) > 0.0 || cur == DyadicRectangle::unit()
                {
                    break colored[q];
                }
            }
        };
        colored[p] = inside;
        if inside {
            members.insert(sys.rect_of(p));
        }
    }
    Coloring::from_set(sys.n, members)
}

/// Choose the largest `n0` whose guaranteed Carleson bounds at the working
/// depth meet the condensation requirement `n * 4^n`; falls back to 1 with
/// `met = false` when none does.
pub fn choose_n0(n1_work: u32, n: u32) -> (u32, bool) {
    let required = strict_requirement(n);
    let mut best: Option<u32> = None;
    for n0 in 1..=8u32 {
        if 2 * n0 - 1 > n1_work {
            break;
        }
        let a_guar = Exact::from_integer(n0.into());
        let b_guar = pow2(1 - 4i64.pow(n0)) * Exact::from_integer((n1_work + 1).into());
        if a_guar >= required && b_guar >= required {
            best = Some(n0);
        }
    }
    match best {
        Some(n0) => (n0, true),
        None => (1, false),
    }
}

#[derive(Clone, Debug)]
pub struct FactorParams {
    pub n1_work: u32,
    pub eps: EpsSchedule,
    pub mode: Mode,
    /// Ramsey parameter; `None` selects automatically.
    pub n0: Option<u32>,
    pub seed: u64,
}

impl FactorParams {
    pub fn new(n1_work: u32) -> Self {
        FactorParams {
            n1_work,
            eps: EpsSchedule::DefaultPow2,
            mode: Mode::BestEffort,
            n0: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HbbRow {
    pub index: String,
    pub hbb: f64,
    pub l2_sq: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RamseySummary {
    pub color: RamseyColor,
    pub n0: u32,
    pub n0_guarantee_met: bool,
    pub carleson_a: String,
    pub carleson_b: String,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageProvenance {
    pub stages: u64,
    pub alive: u64,
    pub met_all: u64,
    pub disjointness_violations: u64,
    pub measured_norm_lower: f64,
}

/// Full per-run report; the residual is recomputed from fresh applications
/// of `P`, `H`, `E` at report time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorizationReport<S: Real> {
    pub schema: String,
    pub n: u32,
    pub n1_work: u32,
    pub op_depth: u32,
    pub mode: Mode,
    pub seed: u64,
    pub plan: DimensionPlan,
    pub h: HChoice,
    pub coloring_inside: u64,
    pub coloring_outside: u64,
    pub ramsey: RamseySummary,
    pub reduced_indices: Vec<String>,
    pub hbb_table: Vec<HbbRow>,
    pub eq33_checked: u64,
    pub eq33_ok: bool,
    pub g_norm_inf: f64,
    pub g_norm_one: f64,
    pub g_bound_half_ok: bool,
    pub inversion_residual: f64,
    pub inversion_condition_inf: f64,
    pub residual_max: f64,
    pub e_norm_lower: f64,
    pub p_norm_lower: f64,
    pub stage_provenance: StageProvenance,
    /// Wall-clock stamp; excluded from reproducibility comparisons.
    pub generated_unix_ms: u128,
    #[serde(skip)]
    _marker: std::marker::PhantomData<S>,
}

impl<S: Real> FactorizationReport<S> {
    /// CSV export of the `<Hb, b>` table.
    pub fn hbb_csv(&self) -> String {
        let mut out = String::from("index,hbb,l2_sq,ratio\n");
        for row in &self.hbb_table {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.index, row.hbb, row.l2_sq, row.ratio
            ));
        }
        out
    }
}

/// Everything `factor_identity` produces.
pub struct FactorOutcome<S: Real> {
    pub e: HaarMap<S>,
    pub p: HaarMap<S>,
    pub h: HChoice,
    pub system: BlockSystem<S>,
    pub ramsey: RamseyResult,
    pub report: FactorizationReport<S>,
}

/// Factor the identity on the depth-`n` space through `H = T` or
/// `H = Id - T`.
pub fn factor_identity<S: Real>(
    t: &HaarOperator<S>,
    n: u32,
    params: &FactorParams,
) -> Result<FactorOutcome<S>> {
    let plan = plan_dimensions(
        n,
        1.0,
        Overrides {
            n1_work: Some(params.n1_work),
            n_work: Some(t.depth()),
        },
    )?;
    let sys = quasi_diagonalize(t, params.n1_work, &params.eps, params.mode)?;
    let coloring = color_by_diagonal(&sys);
    let (inside, outside) = coloring.census();

    let (n0, n0_guarantee_met) = match params.n0 {
        Some(n0) => (n0, false),
        None => choose_n0(params.n1_work, n),
    };
    let ramsey = ramsey_extract(&coloring, n0)?;
    if ramsey.a.is_empty() || ramsey.b.is_empty() {
        return Err(CoreError::EmptyRamseyOutput);
    }
    let h = match ramsey.color {
        RamseyColor::Inside => HChoice::T,
        RamseyColor::Complement => HChoice::IdMinusT,
    };

    // Eq. (3.3) on the full selected product, from the stored diagonal table
    let mut eq33_checked = 0u64;
    for i in ramsey.a.members() {
        for j in ramsey.b.members() {
            let rect = DyadicRectangle::new(*i, *j);
            let p = sys.position_of(&rect).ok_or_else(|| CoreError::RectOutsideDepth {
                rect: rect.to_string(),
                depth: sys.n,
            })?;
            let stage = &sys.stages[p];
            let l2 = exact_to_f64(&stage.block_l2_sq);
            let tbb = stage.diag_pairing.to_f64_lossy();
            let hbb = match h {
                HChoice::T => tbb,
                HChoice::IdMinusT => l2 - tbb,
            };
            eq33_checked += 1;
            if hbb.abs() < l2 / 2.0 {
                return Err(CoreError::Malformed(format!(
                    "Eq. (3.3) violated at {rect}: |<Hb,b>| = {} < {}",
                    hbb.abs(),
                    l2 / 2.0
                )));
            }
        }
    }

    // condensation on (A, B); a failed construction is the
    // ramsey-mass-insufficient outcome with full diagnostics
    let condensation = match condense_2d(&ramsey.a, &ramsey.b, n, false) {
        Ok(c) => c,
        Err(
            CoreError::ConstructionExhausted { node }
        ) => {
            return Err(CoreError::RamseyMassInsufficient {
                achieved_a: ramsey.carleson_a.to_string(),
                achieved_b: ramsey.carleson_b.to_string(),
                required: strict_requirement(n).to_string(),
                detail: format!("condensation exhausted at {node}"),
            })
        }
        Err(e) => return Err(e),
    };

    // the reduced product actually used by the condensation
    let mut a_used: Vec<crate::dyadic::DyadicInterval> = Vec::new();
    let mut b_used: Vec<crate::dyadic::DyadicInterval> = Vec::new();
    for node in condensation.x.nodes() {
        a_used.extend(condensation.x.family(&node).expect("built").members());
    }
    for node in condensation.y.nodes() {
        b_used.extend(condensation.y.family(&node).expect("built").members());
    }
    let a_used = IntervalCollection::new(a_used);
    let b_used = IntervalCollection::new(b_used);
    let mut reduced: Vec<DyadicRectangle> = Vec::new();
    for k in a_used.members() {
        for l in b_used.members() {
            reduced.push(DyadicRectangle::new(*k, *l));
        }
    }
    reduced.sort_by(crate::order::order_compare);

    // blocks on the reduced product must be nonzero with nonzero <Hb, b>
    let mut hbb_table = Vec::new();
    let mut hbb: BTreeMap<DyadicRectangle, S> = BTreeMap::new();
    for rect in &reduced {
        let p = sys
            .position_of(rect)
            .ok_or_else(|| CoreError::RectOutsideDepth {
                rect: rect.to_string(),
                depth: sys.n,
            })?;
        let stage = &sys.stages[p];
        let l2 = exact_to_f64(&stage.block_l2_sq);
        if l2 == 0.0 {
            // the selected product reached indices whose blocks died of
            // depth exhaustion: a mass shortfall, not a diagonal paradox
            return Err(CoreError::RamseyMassInsufficient {
                achieved_a: ramsey.carleson_a.to_string(),
                achieved_b: ramsey.carleson_b.to_string(),
                required: strict_requirement(n).to_string(),
                detail: format!("selected block at {rect} is empty at the working depth"),
            });
        }
        let tbb = stage.diag_pairing;
        let value = match h {
            HChoice::T => tbb,
            HChoice::IdMinusT => S::from_f64_lossy(l2) - tbb,
        };
        if value == S::zero() {
            return Err(CoreError::DiagonalDegenerate {
                index: rect.to_string(),
            });
        }
        hbb.insert(*rect, value);
        hbb_table.push(HbbRow {
            index: rect.to_string(),
            hbb: value.to_f64_lossy(),
            l2_sq: l2,
            ratio: value.to_f64_lossy() / l2,
        });
    }

    // S1 on the reduced span and the correction term G
    let n1 = params.n1_work;
    let op_depth = t.depth();
    let red = reduced.len();
    let blocks: Vec<HaarVector<S>> = reduced
        .iter()
        .map(|r| sys.block(sys.position_of(r).expect("indexed")))
        .collect();
    let h_images: Vec<HaarVector<S>> = blocks.iter().map(|b| apply_h(t, h, b)).collect();
    // G[a][b] = <H b_b, b_a> / <H b_a, b_a> - delta_ab
    let mut g = vec![vec![S::zero(); red]; red];
    for (bcol, hb) in h_images.iter().enumerate() {
        for (arow, ba) in blocks.iter().enumerate() {
            let cross = hb.pairing(ba).expect("same depth");
            let denom = hbb[&reduced[arow]];
            let mut v = cross / denom;
            if arow == bcol {
                v = v - S::one();
            }
            g[arow][bcol] = v;
        }
    }
    let g_norm_inf = matrix_norm_inf(&g);
    let g_norm_one = matrix_norm_one(&g);
    // exact finite-dimensional inversion of Id + G
    let mut id_plus_g = g.clone();
    for (a, row) in id_plus_g.iter_mut().enumerate() {
        row[a] = row[a] + S::one();
    }
    let inv = invert_dense(&id_plus_g).ok_or_else(|| CoreError::Malformed(
        "Id + G is numerically singular on the block span".into(),
    ))?;
    let inversion_residual = {
        let mut worst = S::zero();
        for i in 0..red {
            for j in 0..red {
                let mut acc = S::zero();
                for k in 0..red {
                    acc = acc + id_plus_g[i][k] * inv[k][j];
                }
                let target = if i == j { S::one() } else { S::zero() };
                worst = worst.max((acc - target).abs());
            }
        }
        worst.to_f64_lossy()
    };
    let inversion_condition_inf = matrix_norm_inf(&id_plus_g) * matrix_norm_inf(&inv);

    // E = S1 E0, applied column by column
    let e0: HaarMap<S> = condensation.embedding(n1)?;
    let p0: HaarMap<S> = condensation.projection(n1)?;
    let owner: BTreeMap<DyadicRectangle, usize> = reduced
        .iter()
        .enumerate()
        .flat_map(|(k, r)| {
            sys.collection(r)
                .map(|c| c.members().to_vec())
                .unwrap_or_default()
                .into_iter()
                .map(move |m| (m, k))
        })
        .collect();
    let s1_apply = |f: &HaarVector<S>| -> HaarVector<S> {
        let mut out = HaarVector::zero(op_depth);
        for (kappa, rect) in reduced.iter().enumerate() {
            let c = f.coeff(rect);
            if c != S::zero() {
                out = out.plus(&blocks[kappa].scaled(c)).expect("same depth");
            }
        }
        out
    };
    let e_map = HaarMap::from_columns(n, op_depth, |r| {
        let atom = HaarVector::atom(n, *r, S::one()).expect("in depth");
        s1_apply(&e0.apply(&atom))
    });
    // P = P0 P1 with P1 = S1^-1 (Id+G)^-1 Ptilde1
    let p_map = HaarMap::from_columns(op_depth, n, |r| {
        // Ptilde1 h_r in block coordinates
        let mut coords = vec![S::zero(); red];
        if let Some(&kappa) = owner.get(r) {
            let measure = S::from_f64_lossy(exact_to_f64(&r.measure()));
            coords[kappa] = measure / hbb[&reduced[kappa]];
        }
        // (Id+G)^-1
        let mut solved = vec![S::zero(); red];
        for (i, srow) in solved.iter_mut().enumerate() {
            let mut acc = S::zero();
            for (k, c) in coords.iter().enumerate() {
                if *c != S::zero() {
                    acc = acc + inv[i][k] * *c;
                }
            }
            *srow = acc;
        }
        // S1^-1: block coordinates back to Haar coefficients on R_{n1}
        let mut x = HaarVector::zero(n1);
        for (kappa, v) in solved.iter().enumerate() {
            if *v != S::zero() {
                x.set_coeff(reduced[kappa], *v).expect("in depth");
            }
        }
        p0.apply(&x)
    });

    // residual of P H E - Id on the depth-n basis, recomputed from scratch
    let n_ix = shared_indexer(n);
    let mut residual_max = 0.0f64;
    for pos in 0..n_ix.len() {
        let atom = HaarVector::atom(n, n_ix.rect(pos), S::one()).expect("in depth");
        let image = p_map.apply(&apply_h(t, h, &e_map.apply(&atom)));
        for q in 0..n_ix.len() {
            let target = if q == pos { 1.0 } else { 0.0 };
            let got = image.coeff(&n_ix.rect(q)).to_f64_lossy();
            residual_max = residual_max.max((got - target).abs());
        }
    }

    let budget = OpNormBudget::default();
    let e_norm = op_norm_lower(&e_map, NormChoice::H1, &budget, params.seed);
    let p_norm = op_norm_lower(&p_map, NormChoice::H1, &budget, params.seed ^ 1);
    debug_assert_eq!(e_norm.kind, NormKind::LowerBound);

    let report = FactorizationReport {
        schema: "dyadic-factor/1".into(),
        n,
        n1_work: params.n1_work,
        op_depth,
        mode: params.mode,
        seed: params.seed,
        plan,
        h,
        coloring_inside: inside,
        coloring_outside: outside,
        ramsey: RamseySummary {
            color: ramsey.color,
            n0,
            n0_guarantee_met,
            carleson_a: ramsey.carleson_a.to_string(),
            carleson_b: ramsey.carleson_b.to_string(),
            a: ramsey.a.members().iter().map(|i| i.to_string()).collect(),
            b: ramsey.b.members().iter().map(|i| i.to_string()).collect(),
        },
        reduced_indices: reduced.iter().map(|r| r.to_string()).collect(),
        hbb_table,
        eq33_checked,
        eq33_ok: true,
        g_norm_inf,
        g_norm_one,
        g_bound_half_ok: g_norm_inf <= 0.5,
        inversion_residual,
        inversion_condition_inf,
        residual_max,
        e_norm_lower: e_norm.value.to_f64_lossy(),
        p_norm_lower: p_norm.value.to_f64_lossy(),
        stage_provenance: StageProvenance {
            stages: sys.len() as u64,
            alive: sys.stages.iter().filter(|s| s.alive).count() as u64,
            met_all: sys.stages.iter().filter(|s| s.met_all).count() as u64,
            disjointness_violations: sys.disjointness_violations.len() as u64,
            measured_norm_lower: sys.measured_norm_lower,
        },
        generated_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        _marker: std::marker::PhantomData,
    };

    Ok(FactorOutcome {
        e: e_map,
        p: p_map,
        h,
        system: sys,
        ramsey,
        report,
    })
}

fn matrix_norm_inf<S: Real>(m: &[Vec<S>]) -> f64 {
    m.iter()
        .map(|row| row.iter().map(|v| v.abs().to_f64_lossy()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn matrix_norm_one<S: Real>(m: &[Vec<S>]) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (0..m[0].len())
        .map(|j| m.iter().map(|row| row[j].abs().to_f64_lossy()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Dense inverse by Gauss-Jordan with partial pivoting; `None` on a
/// numerically singular pivot.
fn invert_dense<S: Real>(m: &[Vec<S>]) -> Option<Vec<Vec<S>>> {
    let n = m.len();
    let mut a: Vec<Vec<S>> = m.to_vec();
    let mut inv: Vec<Vec<S>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { S::one() } else { S::zero() })
                .collect()
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() <= S::from_f64_lossy(1e-14) {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] = a[col][j] / d;
            inv[col][j] = inv[col][j] / d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col];
            if f == S::zero() {
                continue;
            }
            for j in 0..n {
                a[row][j] = a[row][j] - f * a[col][j];
                inv[row][j] = inv[row][j] - f * inv[col][j];
            }
        }
    }
    Some(inv)
}
