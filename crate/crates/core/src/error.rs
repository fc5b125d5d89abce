use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spectral parameters: {0}")]
    InvalidParams(String),

    #[error("point {x} lies outside the support [{a}, {b}]")]
    OutOfSupport { x: f64, a: f64, b: f64 },

    #[error("no square-root branch of the Stieltjes transform satisfies the Herglotz conditions at z = {re}{im:+}i")]
    BranchFailure { re: f64, im: f64 },

    #[error("log argument crossed the branch cut along the contour (winding {winding:.3})")]
    BranchCrossing { winding: f64 },

    #[error("quadrature did not reach tolerance {tol:e} after {refinements} refinements (last change {last_change:e})")]
    QuadratureFailure {
        tol: f64,
        refinements: usize,
        last_change: f64,
    },

    #[error("test function `{0}` has no closed form for this operation")]
    UnsupportedKind(String),

    #[error("baseline covariance is singular: {0}")]
    SingularBaseline(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in observation at coordinate {0}")]
    NonfiniteInput(usize),

    #[error("non-finite standardized statistic at k = {0}")]
    NonfiniteStatistic(usize),

    #[error("Fisher eigenvalue {0:e} is below the roundoff floor")]
    NumericalBreakdown(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty batch of monitor outcomes")]
    EmptyBatch,

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error("panel is empty after cleaning")]
    EmptyPanel,

    #[error("non-positive price {price} for `{ticker}` at row {row}")]
    NonpositivePrice {
        ticker: String,
        row: usize,
        price: f64,
    },

    #[error("requested {requested} tickers but only {available} are available")]
    KTooLarge { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::BranchFailure { .. }
                | Error::BranchCrossing { .. }
                | Error::QuadratureFailure { .. }
                | Error::SingularBaseline(_)
                | Error::NonfiniteStatistic(_)
                | Error::NumericalBreakdown(_)
                | Error::DegenerateData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
