use alloc::string::String;

use crate::label::Label;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("class {0} has no records")]
    EmptyClass(Label),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("record {0} is unlabeled")]
    UnlabeledRecord(String),
    #[error("unknown backbone `{0}`")]
    UnknownBackbone(String),
    #[error("unknown transformer model key `{0}`")]
    UnknownModelKey(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f32 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("model requires {0} input")]
    MissingInput(&'static str),
    #[error("record {0} has no preprocessed image")]
    MissingImage(String),
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
