//! F1 metrics, per-domain reports, seed averaging and transfer evaluation.

mod harness;
mod metrics;
mod report;

pub use harness::{compare_modes, for_each_seed, run_seed, HarnessOptions, ModeComparison, SeedOutcome};
pub use metrics::{f1_binary, f1_from_counts, macro_f1, EpochMetrics, THRESHOLD};
pub use report::{
    format_table, mean_report, multi_run, report, transfer_compare, transfer_eval, BucketScore, DomainScore,
    EvalReport, MultiRunReport, TransferComparison,
};
