//! One error enum for the whole crate. Variants carry enough context to
//! reproduce the failing call; display strings are one line each.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // numeric
    #[error("matrix has zero rows or columns")]
    EmptyMatrix,
    #[error("cost matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },
    #[error("SVD did not converge: off-diagonal residual {residual:e} after {sweeps} sweeps")]
    NoConvergence { residual: f64, sweeps: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    // taxa
    #[error("label is empty")]
    EmptyLabel,
    #[error("label has {got} ranks, at most 7 allowed")]
    TooManyRanks { got: usize },
    #[error("invalid taxon: {reason}")]
    InvalidTaxon { reason: String },

    // config / data
    #[error("invalid config: {reason}")]
    ConfigInvalid { reason: String },
    #[error("subsample needs at least {needed} train samples but budget is {budget}")]
    TooFewSamples { needed: usize, budget: usize },

    // model / train
    #[error("cannot normalize a zero vector")]
    NormalizationUndefined,
    #[error("node {name:?} missing from the {rank} table")]
    UnknownTaxonNode { rank: String, name: String },
    #[error("label encodes no ranks under the active label mode")]
    EmptyLabelEncoding,
    #[error("batch of {got} is too small for contrastive training")]
    BatchTooSmall { got: usize },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },

    // geometry
    #[error("species {species} has no embeddings")]
    EmptySpecies { species: usize },
    #[error("no species carries both values of axis {axis:?}")]
    NoQualifyingSpecies { axis: String },
    #[error("variation matrix has zero total energy")]
    ZeroVariation,
    #[error("{which} group is empty")]
    EmptyGroup { which: &'static str },
    #[error("group variances vanish; discriminant ratio undefined")]
    DegenerateGroups,
    #[error("species-plane projection needs at least 2 species, got {got}")]
    TooFewSpecies { got: usize },

    // eval
    #[error("missing prototype for species {species}")]
    MissingPrototype { species: usize },
    #[error("class {class} has no support samples")]
    InsufficientSupport { class: usize },
    #[error("training labels contain a single class")]
    SingleClassTrain,
    #[error("k_total {k} is below the labeled class count {classes}")]
    KTooSmall { k: usize, classes: usize },

    // io
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
