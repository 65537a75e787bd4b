use thiserror::Error;

/// One error type for every stage of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate direction")]
    DegenerateDirection,
    #[error("degenerate geometry")]
    DegenerateGeometry,
    #[error("invalid pilot")]
    InvalidPilot,
    #[error("underdetermined delay")]
    UnderdeterminedDelay,
    #[error("no paths")]
    NoPaths,
    #[error("underdetermined calibration")]
    UnderdeterminedCalibration,
    #[error("invalid range")]
    InvalidRange,
    #[error("grazing ray")]
    GrazingRay,
    #[error("insufficient path diversity")]
    InsufficientPathDiversity,
    #[error("unobservable bias/position pair")]
    UnobservableBiasPosition,
    #[error("degenerate ray pair")]
    DegenerateRayPair,
    #[error("singular covariance")]
    SingularCovariance,
    #[error("no data")]
    NoData,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
