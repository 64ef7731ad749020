//! Propensity scores, IPTW and doubly robust ATT estimators, balance
//! diagnostics and the comparison methods built from them.

mod balance;
mod estimators;
mod logistic;
mod methods;

use alloc::string::String;
use core::fmt;
use core::str::FromStr;

pub use balance::{att_weights, balance_table, smd, BalanceRow, BalanceTable, VariableKind};
pub use estimators::{att_dr, att_iptw, DrWeights, IptwForm};
pub use logistic::{expit, logistic_fit, propensity_fit, LogisticOptions, PropensityFit};
pub use methods::{
    estimate_att, gls_att, gold_att, naive_att, recoveru_from_parts, run_recoveru, EstimateOptions,
    RecoverUAnalysis, RECOVERED_LABEL,
};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

/// ATT estimation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// IPTW with a covariates-only propensity model.
    Naive,
    /// The GLS treatment coefficient of the spatial outcome model.
    Gls,
    /// Doubly robust estimator with the true confounder (simulation only).
    Gold,
    /// Doubly robust estimator with the recovered confounder.
    RecoverU,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Naive, Method::Gls, Method::Gold, Method::RecoverU];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Gls => "gls",
            Method::Gold => "gold",
            Method::RecoverU => "recoveru",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(Method::Naive),
            "gls" => Ok(Method::Gls),
            "gold" => Ok(Method::Gold),
            "recoveru" => Ok(Method::RecoverU),
            other => Err(alloc::format!(
                "unknown method {other:?} (expected naive, gls, gold or recoveru)"
            )),
        }
    }
}

/// Point estimate with a 95% normal interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttResult {
    pub method: Method,
    pub estimate: f64,
    /// `NaN` when no standard error has been computed.
    pub std_error: f64,
    pub ci: (f64, f64),
    pub n_treated: usize,
    pub n_control: usize,
}

impl AttResult {
    pub fn new(
        method: Method,
        estimate: f64,
        std_error: f64,
        n_treated: usize,
        n_control: usize,
    ) -> Self {
        AttResult {
            method,
            estimate,
            std_error,
            ci: (estimate - Z_95 * std_error, estimate + Z_95 * std_error),
            n_treated,
            n_control,
        }
    }

    /// Replaces the standard error and recomputes the interval.
    pub fn with_std_error(self, std_error: f64) -> Self {
        AttResult::new(
            self.method,
            self.estimate,
            std_error,
            self.n_treated,
            self.n_control,
        )
    }

    pub fn covers(&self, target: f64) -> bool {
        self.ci.0 <= target && target <= self.ci.1
    }
}
