use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("schema error in {file}: column `{column}` {problem}")]
    Schema {
        file: String,
        column: String,
        problem: String,
    },

    #[error("duplicate (plant, year, product) keys: {}", .0.join(", "))]
    DuplicateKey(Vec<String>),

    #[error("no concordance mapping for product codes: {}", .0.join(", "))]
    MissingMapping(Vec<String>),

    #[error("invalid product code `{0}`")]
    ProductCode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("singular design; collinear columns: {}", .0.join(", "))]
    SingularDesign(Vec<String>),

    #[error("under-identified: {instruments} excluded instruments for {endogenous} endogenous regressors")]
    Identification {
        instruments: usize,
        endogenous: usize,
    },

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("share vector on the boundary: {0}")]
    BoundaryShares(String),

    #[error("conduct inversion failed for plant {plant} in market {market} year {year}")]
    ConductInversion {
        plant: String,
        market: String,
        year: i32,
    },

    #[error("join error; missing rows for: {}", .0.join(", "))]
    Join(Vec<String>),

    #[error("separation in probit on covariate `{0}`")]
    Separation(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("inadmissible demand parameters: alpha={alpha}, sigma={sigma}")]
    Inadmissible { alpha: f64, sigma: f64 },

    #[error("bootstrap degenerate: {failed} of {total} replications failed")]
    BootstrapDegenerate { failed: usize, total: usize },

    #[error("linear algebra failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Csv {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Validation-class errors map to CLI exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv { .. }
                | Error::Schema { .. }
                | Error::DuplicateKey(_)
                | Error::MissingMapping(_)
                | Error::ProductCode(_)
                | Error::Config(_)
                | Error::Validation(_)
        )
    }
}
