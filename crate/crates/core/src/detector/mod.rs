//! Linear mapping from accuracy vectors to poisoning probability, the three
//! per-model losses, and the constrained configuration search.

pub mod loss;
pub mod mapping;
pub mod search;

pub use loss::{loss_ac, loss_ce, loss_exec, round_half_up};
pub use mapping::{fit_mapping, least_squares, RegressionMapping};
pub use search::{
    cross_validate, evaluate_config, load_arch, staged_search, ArchData, ArchSearch, ConfigEvaluation, ErrorParams,
    PChoice, SearchBudget, SearchOutcome, SignalRecord,
};
