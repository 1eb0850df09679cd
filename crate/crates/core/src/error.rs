use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: `{name}` must be {requirement}, got {value}")]
    Domain {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },

    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    /// Batch statistics need at least two samples.
    #[error("degenerate batch: need at least 2 samples, got {0}")]
    DegenerateBatch(usize),

    /// A latent dimension has zero (or negative) aggregate variance.
    #[error("collapsed latent dimension {dim}: variance {variance}")]
    Collapse { dim: usize, variance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Dataset problems; `problems` lists every offending file.
    #[error("dataset error in {}: {}", root.display(), problems.join("; "))]
    Dataset {
        root: PathBuf,
        problems: Vec<String>,
    },

    #[error("dataset has {available} images but the split needs {required}")]
    DatasetCount { available: usize, required: usize },

    /// A loss term became NaN or infinite during training.
    #[error("non-finite loss at step {step}: term `{term}` = {value} (all terms: {dump})")]
    NonFinite {
        step: u64,
        term: String,
        value: f64,
        dump: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_check(name: &'static str, expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            name,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        })
    }
}
