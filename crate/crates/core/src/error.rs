use crate::scenario::ValidationReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("distribution fails validation:\n{0}")]
    InvalidDistribution(ValidationReport),

    #[error("trial {index} is out of range for the scenario: {detail}")]
    TrialOutOfRange { index: usize, detail: String },

    #[error("strategy count {count} exceeds the cap {cap}")]
    StrategyCapExceeded { count: u128, cap: usize },

    #[error("setting pair ({i}, {j}) has zero probability")]
    ZeroSettingProbability { i: usize, j: usize },

    #[error("infeasible Kullback-Leibler projection: {0}")]
    Infeasible(String),

    #[error(
        "maximum-likelihood fit did not converge within {iterations} iterations \
         (constraint residual {residual:.3e})"
    )]
    FitNonConvergence {
        iterations: usize,
        residual: f64,
        /// Best iterate reached before giving up, flat over combinations.
        best: Vec<f64>,
    },

    #[error(
        "degenerate gain rate: conditional variance is zero while the mean {mean} \
         exceeds the bound {bound}"
    )]
    DegenerateGain { mean: f64, bound: f64 },

    #[error(
        "ratio table violates the local-realism bound: max LR expectation \
         {max_expectation} exceeds 1 + {tolerance}"
    )]
    LrBoundViolation { max_expectation: f64, tolerance: f64 },
}
