//! Published full-scale results on the NYT benchmark. These need the full
//! corpus and long training runs; they are reference points for comparison,
//! not targets checked by this crate's tests.

/// Held-out precision-recall AUC.
pub const NYT_AUC: f64 = 0.53;
/// Best reported P@N (percent).
pub const NYT_BEST_PRECISION_AT_N: f64 = 98.0;
/// Macro Hits@10 (percent) over relations with fewer than 100 training instances.
pub const NYT_HITS_AT_10_UNDER_100: f64 = 66.6;
