use alloc::string::String;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Covariance matrix is singular, e.g. duplicated locations without nugget.
    #[error("singular covariance: {0}")]
    Singular(String),

    /// Cholesky factorization failed even after diagonal jitter.
    #[error("factorization failed: {0} (consider adding a nugget or jitter)")]
    Factorization(String),

    #[error("singular design matrix: {0}")]
    SingularDesign(String),

    #[error("semivariogram binning: {0}")]
    Binning(String),

    #[error("covariance fit failed: {0}")]
    Fit(String),

    #[error("complete separation in logistic fit: {0}")]
    Separation(String),

    #[error("extreme propensity weight: {0}")]
    ExtremeWeight(String),

    #[error("empty treatment group: {0}")]
    EmptyGroup(String),

    #[error("degenerate covariate: {0}")]
    DegenerateCovariate(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("bootstrap unstable: {failed} of {total} replicates failed")]
    BootstrapInstability { failed: usize, total: usize },
}

impl Error {
    /// True for errors caused by numerical/convergence problems rather than
    /// invalid inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::Factorization(_)
                | Error::SingularDesign(_)
                | Error::Fit(_)
                | Error::Separation(_)
                | Error::ExtremeWeight(_)
                | Error::BootstrapInstability { .. }
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;
