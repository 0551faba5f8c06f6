//! Wire formats: operators, vectors, block systems, Ramsey results and
//! reports. Intervals are encoded as `"j:k"`, rectangles as `"j:k,j':k'"`.

use crate::collections::RectangleCollection;
use crate::combinatorics::{RamseyColor, RamseyResult};
use crate::dyadic::{exact_to_f64, DyadicRectangle};
use crate::error::{CoreError, Result};
use crate::gamlen_gaudet::ExplicitBlockFamily;
use crate::haar::HaarVector;
use crate::norms::{NormEstimate, Witness};
use crate::operator::{HaarMap, HaarOperator, OperatorMetadata};
use crate::quasi_diag::{BlockSystem, StageCase};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const SCHEMA: &str = "dyadic-factor/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorEntryJson {
    pub row: String,
    pub col: String,
    pub value: f64,
}

/// `{ "depth": N, "entries": [ {"row": "j:k,j':k'", "col": ..., "value": ...} ] }`
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorJson {
    pub depth: u32,
    pub entries: Vec<OperatorEntryJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<OperatorMetadata>,
}

pub fn operator_to_json<S: Real>(op: &HaarOperator<S>) -> OperatorJson {
    OperatorJson {
        depth: op.depth(),
        entries: op
            .nonzero_entries()
            .into_iter()
            .map(|(r, c, v)| OperatorEntryJson {
                row: r.to_string(),
                col: c.to_string(),
                value: v.to_f64_lossy(),
            })
            .collect(),
        metadata: Some(op.metadata.clone()),
    }
}

pub fn operator_from_json<S: Real>(json: &OperatorJson) -> Result<HaarOperator<S>> {
    let entries: Vec<(DyadicRectangle, DyadicRectangle, S)> = json
        .entries
        .iter()
        .map(|e| {
            Ok((
                e.row.parse()?,
                e.col.parse()?,
                S::from_f64_lossy(e.value),
            ))
        })
        .collect::<Result<_>>()?;
    let mut op = HaarOperator::from_entries(json.depth, entries)?;
    if let Some(meta) = &json.metadata {
        op.metadata = meta.clone();
    }
    Ok(op)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorEntryJson {
    pub rect: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorJson {
    pub depth: u32,
    pub entries: Vec<VectorEntryJson>,
}

pub fn vector_to_json<S: Real>(v: &HaarVector<S>) -> VectorJson {
    VectorJson {
        depth: v.depth(),
        entries: v
            .support()
            .map(|(r, a)| VectorEntryJson {
                rect: r.to_string(),
                value: a.to_f64_lossy(),
            })
            .collect(),
    }
}

pub fn vector_from_json<S: Real>(json: &VectorJson) -> Result<HaarVector<S>> {
    let mut v = HaarVector::zero(json.depth);
    for e in &json.entries {
        let r: DyadicRectangle = e.rect.parse()?;
        v.add_to_coeff(r, S::from_f64_lossy(e.value))?;
    }
    Ok(v)
}

/// Rectangular map `{ src_depth, dst_depth, entries }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapJson {
    pub schema: String,
    pub kind: String,
    pub src_depth: u32,
    pub dst_depth: u32,
    pub entries: Vec<OperatorEntryJson>,
}

pub fn map_to_json<S: Real>(map: &HaarMap<S>, kind: &str) -> MapJson {
    MapJson {
        schema: SCHEMA.into(),
        kind: kind.into(),
        src_depth: map.src_depth(),
        dst_depth: map.dst_depth(),
        entries: map
            .nonzero_entries()
            .into_iter()
            .map(|(r, c, v)| OperatorEntryJson {
                row: r.to_string(),
                col: c.to_string(),
                value: v.to_f64_lossy(),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverJson {
    pub base: String,
    pub level_rel: u32,
    pub fraction: f64,
    pub met: bool,
    pub relevant: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockJson {
    pub index: String,
    pub rects: Vec<String>,
    pub case: String,
    pub alive: bool,
    pub met_all: bool,
    pub l2_sq: f64,
    pub diag_pairing: f64,
    pub eps: f64,
    pub tau: f64,
    pub tau_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_level: Option<u32>,
    pub eta_clamped: bool,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub covers: Vec<CoverJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dead_reason: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockSystemJson {
    pub schema: String,
    pub kind: String,
    pub depth: u32,
    pub n: u32,
    pub mode: String,
    pub measured_norm_lower: f64,
    pub blocks: Vec<BlockJson>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disjointness_violations: Vec<String>,
}

pub fn block_system_to_json<S: Real>(sys: &BlockSystem<S>) -> BlockSystemJson {
    let blocks = (0..sys.len())
        .map(|p| {
            let stage = &sys.stages[p];
            BlockJson {
                index: stage.rect.to_string(),
                rects: sys
                    .entry(p)
                    .collection
                    .members()
                    .iter()
                    .map(|r| r.to_string())
                    .collect(),
                case: match stage.case {
                    StageCase::Root => "root",
                    StageCase::Case1 => "case-1",
                    StageCase::Case2a => "case-2a",
                    StageCase::Case2b => "case-2b",
                }
                .into(),
                alive: stage.alive,
                met_all: stage.met_all,
                l2_sq: exact_to_f64(&stage.block_l2_sq),
                diag_pairing: stage.diag_pairing.to_f64_lossy(),
                eps: stage.eps.to_f64_lossy(),
                tau: stage.tau.to_f64_lossy(),
                tau_final: stage.tau_final.to_f64_lossy(),
                beta: stage.beta.as_ref().map(exact_to_f64),
                eta_level: stage.eta_level,
                eta_clamped: stage.eta_clamped,
                alpha: stage.alpha,
                covers: stage
                    .covers
                    .iter()
                    .map(|c| CoverJson {
                        base: c.base.to_string(),
                        level_rel: c.level_rel,
                        fraction: exact_to_f64(&c.fraction),
                        met: c.met,
                        relevant: c.relevant,
                    })
                    .collect(),
                dead_reason: stage.dead_reason.clone(),
            }
        })
        .collect();
    BlockSystemJson {
        schema: SCHEMA.into(),
        kind: "block-system".into(),
        depth: sys.depth,
        n: sys.n,
        mode: format!("{:?}", sys.mode),
        measured_norm_lower: sys.measured_norm_lower,
        blocks,
        disjointness_violations: sys.disjointness_violations.clone(),
    }
}

/// Rebuild the family view (collections per index) from serialized form,
/// for re-verification.
pub fn block_family_from_json(json: &BlockSystemJson) -> Result<ExplicitBlockFamily> {
    let mut map = BTreeMap::new();
    for b in &json.blocks {
        let index: DyadicRectangle = b.index.parse()?;
        let rects: Vec<DyadicRectangle> = b
            .rects
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        map.insert(index, RectangleCollection::new(rects));
    }
    Ok(ExplicitBlockFamily {
        ambient_depth: json.depth,
        index_depth: json.n,
        map,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RamseyStepJson {
    pub interval: String,
    pub f_value: u8,
    pub carleson_outside: f64,
    pub carleson_inside: f64,
    pub carleson_kept: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RamseyJson {
    pub schema: String,
    pub kind: String,
    pub depth: u32,
    pub n0: u32,
    pub color: RamseyColor,
    pub carleson_a: String,
    pub carleson_b: String,
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub trace: Vec<RamseyStepJson>,
}

pub fn ramsey_to_json(res: &RamseyResult) -> RamseyJson {
    RamseyJson {
        schema: SCHEMA.into(),
        kind: "ramsey-result".into(),
        depth: res.depth,
        n0: res.n0,
        color: res.color,
        carleson_a: res.carleson_a.to_string(),
        carleson_b: res.carleson_b.to_string(),
        a: res.a.members().iter().map(|i| i.to_string()).collect(),
        b: res.b.members().iter().map(|i| i.to_string()).collect(),
        trace: res
            .trace
            .iter()
            .map(|s| RamseyStepJson {
                interval: s.interval.to_string(),
                f_value: s.f_value,
                carleson_outside: exact_to_f64(&s.carleson_outside),
                carleson_inside: exact_to_f64(&s.carleson_inside),
                carleson_kept: exact_to_f64(&s.carleson_kept),
            })
            .collect(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormEstimateJson {
    pub value: f64,
    pub kind: String,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_region: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness_vector: Option<VectorJson>,
}

pub fn norm_estimate_to_json<S: Real>(est: &NormEstimate<S>) -> NormEstimateJson {
    NormEstimateJson {
        value: est.value.to_f64_lossy(),
        kind: format!("{:?}", est.kind),
        method: est.method.clone(),
        witness_region: match &est.witness {
            Witness::Region(r) => Some(r.iter().map(|x| x.to_string()).collect()),
            _ => None,
        },
        witness_vector: match &est.witness {
            Witness::Vector(v) => Some(vector_to_json(v)),
            _ => None,
        },
    }
}

/// Serialize any `Serialize` with the given indent (`None` = compact).
pub fn to_json_string<T: Serialize>(value: &T, indent: Option<usize>) -> Result<String> {
    let out = match indent {
        None => serde_json::to_string(value)?,
        Some(width) => {
            let indent_bytes = b" ".repeat(width.clamp(1, 16));
            let fmt = serde_json::ser::PrettyFormatter::with_indent(&indent_bytes);
            let mut buf = Vec::new();
            let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
            value.serialize(&mut ser)?;
            String::from_utf8(buf)
                .map_err(|e| CoreError::Malformed(format!("non-utf8 json: {e}")))?
        }
    };
    Ok(out)
}
