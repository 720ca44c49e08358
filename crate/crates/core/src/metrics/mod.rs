//! Evaluation: P@N under sentence retention, precision-recall curves and
//! AUC, macro Hits@K on long-tail relations, and attention diagnostics.

pub mod attention;
pub mod io;
pub mod ranking;

pub use attention::{
    argmax, attention_diagnostics, predict_from_attention, AttentionMode, HistogramBin, LevelDiagnostics,
};
pub use io::{read_predictions, write_curve, write_histogram, write_predictions};
pub use ranking::{
    hits_at_k_macro, pr_curve_and_auc, precision_at_n, precision_at_standard, rank_of, ranked_pairs, CurvePoint,
    PredictionRecord, RankedPair, Retention,
};
