//! Ranking metrics over (bag, relation) confidence pairs. NA (id 0) is never
//! a candidate.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NA_ID;
use crate::seed;
use crate::{Error, Result};

/// Model output for one evaluation bag.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub key: String,
    /// Fine-grained gold relation ids; `[NA_ID]` for negative bags.
    pub gold: Vec<usize>,
    /// `[r0, .., rM]` of the bag's primary gold relation.
    pub labels: Vec<usize>,
    /// Confidence for every fine-grained relation id; index 0 (NA) is ignored.
    pub scores: Vec<f64>,
    /// `alphas[sentence][level]`, kept for attention diagnostics.
    pub alphas: Option<Vec<Vec<Vec<f64>>>>,
}

impl PredictionRecord {
    pub fn is_gold(&self, relation: usize) -> bool {
        relation != NA_ID && self.gold.contains(&relation)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() < 2 {
            return Err(Error::input(format!("bag {}: no non-NA relation scored", self.key)));
        }
        if let Some(bad) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::input(format!("bag {}: non-finite score {bad}", self.key)));
        }
        if let Some(g) = self.gold.iter().find(|&&g| g >= self.scores.len()) {
            return Err(Error::input(format!("bag {}: gold id {g} out of range", self.key)));
        }
        Ok(())
    }
}

/// One ranked candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPair {
    pub score: f64,
    pub relation: usize,
    pub bag: usize,
    pub hit: bool,
}

/// Every (bag, non-NA relation) pair, by descending score; ties by relation
/// id, then bag key.
pub fn ranked_pairs(preds: &[PredictionRecord]) -> Result<Vec<RankedPair>> {
    let mut pairs = Vec::new();
    for (b, p) in preds.iter().enumerate() {
        p.validate()?;
        for r in 1..p.scores.len() {
            pairs.push(RankedPair {
                score: p.scores[r],
                relation: r,
                bag: b,
                hit: p.is_gold(r),
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.relation.cmp(&b.relation))
            .then_with(|| preds[a.bag].key.cmp(&preds[b.bag].key))
    });
    Ok(pairs)
}

/// Percentage of gold facts among the `n` most confident pairs.
pub fn precision_at_n(preds: &[PredictionRecord], n: usize) -> Result<f64> {
    let pairs = ranked_pairs(preds)?;
    if n == 0 || n > pairs.len() {
        return Err(Error::input(format!("P@{n} needs at least {n} scored pairs, have {}", pairs.len())));
    }
    let hits = pairs[..n].iter().filter(|p| p.hit).count();
    Ok(100.0 * hits as f64 / n as f64)
}

/// P@100, P@200, P@300 and their mean.
pub fn precision_at_standard(preds: &[PredictionRecord]) -> Result<[f64; 4]> {
    let p100 = precision_at_n(preds, 100)?;
    let p200 = precision_at_n(preds, 200)?;
    let p300 = precision_at_n(preds, 300)?;
    Ok([p100, p200, p300, (p100 + p200 + p300) / 3.0])
}

/// How many sentences of each bag are kept before predicting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retention {
    One,
    Two,
    All,
}

impl Retention {
    pub const ALL_SETTINGS: [Retention; 3] = [Retention::One, Retention::Two, Retention::All];

    pub fn name(self) -> &'static str {
        match self {
            Retention::One => "one",
            Retention::Two => "two",
            Retention::All => "all",
        }
    }

    /// Sorted indices of the sentences kept from a bag of `n`. Bags no larger
    /// than the setting keep everything.
    pub fn subset(self, n: usize, base_seed: u64, bag_index: usize) -> Vec<usize> {
        let keep = match self {
            Retention::One => 1,
            Retention::Two => 2,
            Retention::All => n,
        };
        if keep >= n {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, seed::RETENTION, bag_index as u64));
        let mut idx = sample(&mut rng, n, keep).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// A point on the precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub recall: f64,
    pub precision: f64,
}

/// Curve over the ranked pairs against the total number of gold facts, and
/// the trapezoidal area under it. The curve is extended to recall 0 at the
/// precision of the top pair.
pub fn pr_curve_and_auc(preds: &[PredictionRecord]) -> Result<(Vec<CurvePoint>, f64)> {
    let facts: usize = preds.iter().map(|p| p.gold.iter().filter(|&&g| g != NA_ID).count()).sum();
    if facts == 0 {
        return Err(Error::input("no gold facts to compute a precision-recall curve"));
    }
    let pairs = ranked_pairs(preds)?;
    let mut curve = Vec::with_capacity(pairs.len());
    let mut tp = 0usize;
    for (i, p) in pairs.iter().enumerate() {
        tp += p.hit as usize;
        curve.push(CurvePoint {
            recall: tp as f64 / facts as f64,
            precision: tp as f64 / (i + 1) as f64,
        });
    }
    let mut auc = 0.0;
    let mut prev = CurvePoint {
        recall: 0.0,
        precision: curve[0].precision,
    };
    for &c in &curve {
        auc += (c.recall - prev.recall) * (c.precision + prev.precision) / 2.0;
        prev = c;
    }
    Ok((curve, auc))
}

/// 1-based rank of `relation` among the non-NA relations of `scores`; ties
/// go to the smaller id.
pub fn rank_of(scores: &[f64], relation: usize) -> usize {
    let s = scores[relation];
    1 + (1..scores.len())
        .filter(|&r| r != relation && (scores[r] > s || (scores[r] == s && r < relation)))
        .count()
}

/// Macro-averaged percentage of long-tail gold facts ranked within the top
/// `k`. Long-tail relations have `train_counts[r] < threshold`; only those
/// occurring in `preds` enter the average.
pub fn hits_at_k_macro(preds: &[PredictionRecord], train_counts: &[usize], threshold: usize, k: usize) -> Result<f64> {
    let mut per_relation: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for p in preds {
        p.validate()?;
        for &g in p.gold.iter().filter(|&&g| g != NA_ID) {
            let count = *train_counts
                .get(g)
                .ok_or_else(|| Error::input(format!("no training count for relation {g}")))?;
            if count >= threshold {
                continue;
            }
            let e = per_relation.entry(g).or_default();
            e.0 += (rank_of(&p.scores, g) <= k) as usize;
            e.1 += 1;
        }
    }
    if per_relation.is_empty() {
        return Err(Error::input(format!("no relation with fewer than {threshold} training instances")));
    }
    let total: f64 = per_relation.values().map(|&(h, n)| h as f64 / n as f64).sum();
    Ok(100.0 * total / per_relation.len() as f64)
}
