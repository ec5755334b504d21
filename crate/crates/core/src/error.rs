use thiserror::Error;

/// Errors raised anywhere in the profiling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("latitude {0} outside the projection domain |lat| <= 84")]
    OutOfDomain(f64),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("unknown offender `{0}`")]
    UnknownOffender(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("angle undefined for a zero-length offset")]
    UndefinedAngle,
    #[error("cell index ({row}, {col}) outside a {nrows}x{ncols} grid")]
    CellIndex {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("point ({easting:.3}, {northing:.3}) km lies outside the grid")]
    OutOfGrid { easting: f64, northing: f64 },
    #[error("missing prior for {0}")]
    MissingPrior(String),
    #[error("posterior underflowed to zero in every cell")]
    DegenerateSurface,
    #[error("surfaces are defined on different grids")]
    GridMismatch,
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
