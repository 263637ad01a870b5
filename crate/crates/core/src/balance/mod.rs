//! Covariate balance: entropy balancing weights and weighted-correlation diagnostics.

mod correlation;
mod entropy;

pub use correlation::{weighted_abs_correlation, write_balance_csv, BalanceDiagnostics, BALANCE_THRESHOLD};
pub use entropy::{
    clamp_upper_quantile, entropy_balance, relative_entropy, truncate_and_rebalance,
    two_pass_entropy_weights, BalanceConstraintSet, BalanceWeights, EntropyOptions,
    TRUNCATION_QUANTILE,
};
