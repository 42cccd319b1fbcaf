//! Few-shot evaluation, metrics, scaling fits, t-SNE and the table of
//! published results.

mod fewshot;
mod metrics;
mod registry;
mod scaling;
mod tsne;

use thiserror::Error;

pub use fewshot::{sample_fraction, sample_kshot, FewShotSpec, KShotSample};
pub use metrics::{silhouette, subset_report, topk_accuracy, SubsetReport};
pub use registry::{registry_lookup, Registry, RegistryEntry, BUNDLED_REGISTRY};
pub use scaling::{above_trend, fit_loglinear, LogLinearFit, Prediction, ScalingPoint};
pub use tsne::{tsne, TsneOptions, TsneResult, TSNE_MAX_POINTS};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class {0} has no examples")]
    EmptyClass(usize),
    #[error("k must be in 1..={n_classes}, got {k}")]
    BadK { k: usize, n_classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty subset")]
    EmptySubset,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular design: all data_hours are equal")]
    Singular,
    #[error("unknown registry key ({0}, {1}, {2})")]
    UnknownKey(String, String, String),
    #[error("registry line {line}: {detail}")]
    RegistryParse { line: usize, detail: String },
}
