//! Error taxonomy shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("the root interval [0,1) has no dyadic predecessor")]
    RootHasNoPredecessor,

    #[error("interval level {level} exceeds the supported maximum {max}")]
    LevelTooDeep { level: u32, max: u32 },

    #[error("position {pos} is out of range for level {level}")]
    PositionOutOfRange { level: u32, pos: u64 },

    #[error("order index {index} is out of range for depth {depth} (max {max})")]
    IndexOutOfRange { index: u128, depth: u32, max: u128 },

    #[error("vectors have mismatched depths {left} and {right}")]
    DepthMismatch { left: u32, right: u32 },

    #[error("support size {support} exceeds the exact-BMO cap {cap}")]
    SupportTooLarge { support: usize, cap: usize },

    #[error("coloring depth {depth} is too small for n0 = {n0} (needs at least {needed})")]
    DepthTooSmall { depth: u32, n0: u32, needed: u32 },

    #[error("rectangle {rect} lies outside depth {depth}")]
    RectOutsideDepth { rect: String, depth: u32 },

    #[error(
        "Carleson constant {achieved} is below the strict requirement {required} for target depth {target}"
    )]
    InsufficientCarlesonMass {
        achieved: String,
        required: String,
        target: u32,
    },

    #[error("condensation exhausted: family for {node} would be empty")]
    ConstructionExhausted { node: String },

    #[error("operator normalization violated: measured H1 lower bound {measured} exceeds 1")]
    NormalizationViolated { measured: f64 },

    #[error("quasi-diagonalization stage {stage} ({rect}) failed: {reason}")]
    StageFailed {
        stage: u128,
        rect: String,
        reason: String,
    },

    #[error("depth exhausted at stage {stage}: {reason}")]
    DepthExhausted { stage: u128, reason: String },

    #[error("block {index} is zero; the requested map is not defined")]
    ZeroBlock { index: String },

    #[error(
        "ramsey mass insufficient for condensation: achieved carleson A = {achieved_a}, B = {achieved_b}, needed {required}: {detail}"
    )]
    RamseyMassInsufficient {
        achieved_a: String,
        achieved_b: String,
        required: String,
        detail: String,
    },

    #[error("degenerate diagonal pairing at {index}: <Hb, b> = 0 on the selected product")]
    DiagonalDegenerate { index: String },

    #[error("ramsey output is empty; cannot select H")]
    EmptyRamseyOutput,

    #[error("requested depth {depth} exceeds the hardware cap {cap} ({what})")]
    OverrideExceedsCap { depth: u32, cap: u32, what: String },

    #[error("estimated memory {estimate_mb} MiB exceeds the cap {cap_mb} MiB ({what})")]
    MemoryCapExceeded {
        estimate_mb: u64,
        cap_mb: u64,
        what: String,
    },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("json error at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
