//! Verification metrics over genuine/impostor similarity scores.

mod rates;
mod report;
mod scores;
mod scoring;

pub use rates::{
    accuracy_at_threshold, fdr, fnmr_at_fmr, fnmr_at_fmr_with, kfold_accuracy, max_accuracy,
    sweep_points, tpr_at_far, tpr_at_far_with, CeilingRule, SweepPoint,
};
pub use report::{build_report, render_csv, render_text, KFoldSummary, MetricsReport};
pub use scores::{cosine_score, ScoreSet};
pub use scoring::{
    read_scores_csv, score_protocol, write_scores_csv, BenchmarkMasker, PairScore,
    ProtocolMasker, ProtocolScores,
};
