use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset spec")]
    EmptyDatasetSpec,
    #[error("invalid dataset spec: {0}")]
    InvalidDatasetSpec(String),
    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("double normalization")]
    DoubleNormalization,
    #[error("negative sigma {0}")]
    NegativeSigma(f64),
    #[error("degenerate reference: white[{channel}] <= dark[{channel}]")]
    DegenerateReference { channel: usize },
    #[error("expected a {expected} spectral reading")]
    SpectralKind { expected: &'static str },

    #[error("no fruit detected")]
    NoFruitDetected,
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error("bounding box {width}x{height} is smaller than 4x4")]
    BoundingBoxTooSmall { width: usize, height: usize },
    #[error("uncalibrated input")]
    UncalibratedInput,
    #[error("incomplete fusion input: missing {0}")]
    IncompleteFusionInput(&'static str),
    #[error("least-squares fit failed: {0}")]
    FitFailed(String),

    #[error("config shrinks feature map to zero")]
    FeatureMapShrinksToZero,
    #[error("invalid model config: {0}")]
    InvalidModelConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical divergence: {0}")]
    NumericalDivergence(String),
    #[error("stratification impossible: class {class} has {count} samples for {folds} folds")]
    StratificationImpossible { class: usize, count: usize, folds: usize },
    #[error("unsupported model layout version {0}")]
    UnknownLayoutVersion(String),

    #[error("invalid GA config: {0}")]
    InvalidGaConfig(String),

    #[error("non-finite Q update")]
    NonFiniteUpdate,

    #[error("no samples")]
    NoSamples,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,
    #[error("no positive labels")]
    NoPositives,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),

    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
