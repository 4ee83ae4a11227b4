use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. The variant name is what ends up in
/// the machine-readable error record written by the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step-size error: {0}")]
    StepSize(String),

    #[error("node error: |psi| = {magnitude:.3e} below threshold {threshold:.3e}")]
    Node { magnitude: f64, threshold: f64 },

    #[error("sampler-efficiency error: {accepted} of {requested} samples after {proposals} proposals")]
    SamplerEfficiency {
        requested: usize,
        accepted: usize,
        proposals: u64,
    },

    #[error("measurement device no good: {0}")]
    DeviceNoGood(String),

    #[error("undefined conditional wave function: {0}")]
    UndefinedConditional(String),

    #[error("preset violation: {0}")]
    PresetViolation(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("semantic error: invariant `{invariant}` violated: {detail}")]
    Semantic { invariant: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "configuration",
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::StepSize(_) => "step-size",
            Error::Node { .. } => "node",
            Error::SamplerEfficiency { .. } => "sampler-efficiency",
            Error::DeviceNoGood(_) => "measurement-device-no-good",
            Error::UndefinedConditional(_) => "undefined-conditional",
            Error::PresetViolation(_) => "preset-violation",
            Error::Schema(_) => "schema",
            Error::Semantic { .. } => "semantic",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn semantic(invariant: &str, detail: impl Into<String>) -> Self {
        Error::Semantic {
            invariant: invariant.to_string(),
            detail: detail.into(),
        }
    }
}
