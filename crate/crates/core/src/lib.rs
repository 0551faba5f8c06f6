//! Dyadic-rectangle combinatorics and bi-parameter Haar analysis at finite depth.
//!
//! The crate is organized around six layers:
//!
//! * [`dyadic`] / [`collections`] / [`order`] — exact geometry of dyadic
//!   intervals and rectangles: measures, Carleson constants, the linear
//!   ordering on rectangles and its index function.
//! * [`haar`] / [`norms`] / [`operator`] — Haar-coefficient vectors and dense
//!   operators on the depth-`N` bi-parameter spaces, with exact `H¹` norms,
//!   `BMO` norms (exact at small support), pairings, adjoints and certified
//!   operator-norm lower estimates.
//! * [`combinatorics`] — constructive Ramsey extraction on colored dyadic
//!   rectangles and the frequency-weighted covering step.
//! * [`gamlen_gaudet`] — condensation of a finite Haar system into a
//!   collection with large Carleson constant, bi-tree/Jones verification and
//!   the block-basis orthogonal projection.
//! * [`quasi_diag`] — the inductive construction of a block basis on which a
//!   given operator is almost diagonal, plus its verification and the
//!   annihilating variant.
//! * [`factor`] — the end-to-end pipeline factoring the identity through `T`
//!   or `Id - T`, with dimension planning and reporting.
//!
//! All combinatorial quantities (measures, Carleson constants, covering
//! fractions) are exact rationals; floating point enters only through
//! operator entries and norm values. Scalar-valued structures are generic
//! over [`scalar::Real`]; the concrete aliases below fix `f64` as the
//! working precision.

pub mod collections;
pub mod combinatorics;
pub mod dyadic;
pub mod error;
pub mod factor;
pub mod gamlen_gaudet;
pub mod haar;
pub mod json;
pub mod norms;
pub mod operator;
pub mod order;
pub mod quasi_diag;
pub mod scalar;

pub use error::CoreError;
pub use scalar::Real;

/// Working scalar precision used by the CLI and the concrete aliases.
pub type Scalar = f64;

pub type HaarVector64 = haar::HaarVector<Scalar>;
pub type HaarOperator64 = operator::HaarOperator<Scalar>;
pub type HaarMap64 = operator::HaarMap<Scalar>;
pub type NormEstimate64 = norms::NormEstimate<Scalar>;
pub type BlockSystem64 = quasi_diag::BlockSystem<Scalar>;
pub type FactorizationReport64 = factor::FactorizationReport<Scalar>;


