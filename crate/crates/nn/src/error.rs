use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("training diverged at step {step} ({encoding}): loss is not finite")]
    Diverged { step: usize, encoding: String },
    #[error(transparent)]
    Core(#[from] spikeseq_core::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
