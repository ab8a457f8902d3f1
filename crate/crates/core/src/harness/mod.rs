//! Evaluation: the explicit-reward oracle, metrics, α sweeps, method
//! comparisons and the numerical property suite.

pub mod compare;
pub mod metrics;
pub mod oracle;
pub mod sweep;
pub mod verify;

pub use compare::{compare_methods, write_comparison_csv, Comparison, ComparisonRow, WeakPair};
pub use metrics::{pearson, reward_correlation, win_rate, WinRateMatrix};
pub use oracle::{oracle_score, OracleSpec};
pub use sweep::{alpha_sweep, AdjacentTest, SweepReport, SweepRow};
pub use verify::{run_property_suite, Check};
