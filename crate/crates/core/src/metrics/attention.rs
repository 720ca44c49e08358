//! Diagnostics of the per-level sentence-to-relation attention.

use super::ranking::PredictionRecord;
use crate::data::RelationHierarchy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Sentences in this bin whose attention argmax is the gold relation.
    pub correct: usize,
}

impl HistogramBin {
    /// Percentage of correct sentences; 0 for an empty bin.
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelDiagnostics {
    pub level: usize,
    /// Histogram of `max(alpha)` over equal-width bins of `[0, 1]`.
    pub bins: Vec<HistogramBin>,
    pub sentences: usize,
    pub correct: usize,
}

impl LevelDiagnostics {
    pub fn accuracy(&self) -> f64 {
        if self.sentences == 0 {
            0.0
        } else {
            100.0 * self.correct as f64 / self.sentences as f64
        }
    }
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn alphas(p: &PredictionRecord) -> Result<&Vec<Vec<Vec<f64>>>> {
    p.alphas
        .as_ref()
        .ok_or_else(|| Error::config(format!("bag {} has no attention scores retained", p.key)))
}

pub fn attention_diagnostics(preds: &[PredictionRecord], bins: usize) -> Result<Vec<LevelDiagnostics>> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let mut levels: Vec<LevelDiagnostics> = Vec::new();
    for p in preds {
        for sentence in alphas(p)? {
            if sentence.len() != p.labels.len() {
                return Err(Error::config(format!(
                    "bag {}: {} attention levels for {} labels",
                    p.key,
                    sentence.len(),
                    p.labels.len()
                )));
            }
            for (l, alpha) in sentence.iter().enumerate() {
                if levels.len() <= l {
                    levels.push(LevelDiagnostics {
                        level: l,
                        bins: (0..bins)
                            .map(|b| HistogramBin {
                                lo: b as f64 / bins as f64,
                                hi: (b + 1) as f64 / bins as f64,
                                count: 0,
                                correct: 0,
                            })
                            .collect(),
                        sentences: 0,
                        correct: 0,
                    });
                }
                let top = argmax(alpha);
                let bin = ((alpha[top] * bins as f64) as usize).min(bins - 1);
                let hit = top == p.labels[l];
                let d = &mut levels[l];
                d.bins[bin].count += 1;
                d.bins[bin].correct += hit as usize;
                d.sentences += 1;
                d.correct += hit as usize;
            }
        }
    }
    if levels.is_empty() {
        return Err(Error::config("no attention scores to diagnose"));
    }
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Fine-level attention only.
    Level0,
    /// Product of each level's attention on the relation's ancestors.
    Product,
}

/// Rescores every bag from its sentence-averaged attention.
pub fn predict_from_attention(
    preds: &[PredictionRecord],
    mode: AttentionMode,
    hierarchy: Option<&RelationHierarchy>,
) -> Result<Vec<PredictionRecord>> {
    if mode == AttentionMode::Product && hierarchy.is_none() {
        return Err(Error::config("product scoring needs the relation hierarchy"));
    }
    preds
        .iter()
        .map(|p| {
            let a = alphas(p)?;
            if a.is_empty() || a[0].is_empty() {
                return Err(Error::config(format!("bag {} has no attention scores", p.key)));
            }
            let m = a.len() as f64;
            let mean: Vec<Vec<f64>> = (0..a[0].len())
                .map(|l| {
                    let n = a[0][l].len();
                    (0..n).map(|r| a.iter().map(|s| s[l][r]).sum::<f64>() / m).collect()
                })
                .collect();
            let scores = match (mode, hierarchy) {
                (AttentionMode::Product, Some(h)) => (0..mean[0].len())
                    .map(|r| (0..mean.len()).map(|l| mean[l][h.ancestor(l, r)]).product())
                    .collect(),
                _ => mean[0].clone(),
            };
            Ok(PredictionRecord {
                scores,
                ..p.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(alphas: Vec<Vec<Vec<f64>>>, labels: Vec<usize>) -> PredictionRecord {
        PredictionRecord {
            key: "k".into(),
            gold: vec![labels[0]],
            scores: vec![0.0; alphas[0][0].len()],
            labels,
            alphas: Some(alphas),
        }
    }

    #[test]
    fn one_hot_attention_is_fully_accurate() {
        let p = pred(vec![vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0]]; 2], vec![1, 0]);
        let d = attention_diagnostics(&[p], 10).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|l| l.accuracy() == 100.0));
        assert_eq!(d[0].bins[9].count, 2);
    }

    #[test]
    fn uniform_attention_max() {
        let p = pred(vec![vec![vec![0.25; 4]]], vec![2]);
        let d = attention_diagnostics(&[p], 8).unwrap();
        assert_eq!(d[0].bins[2].count, 1);
        assert_eq!(d[0].correct, 0);
    }

    #[test]
    fn missing_alpha_is_config_error() {
        let mut p = pred(vec![vec![vec![1.0]]], vec![0]);
        p.alphas = None;
        assert!(matches!(attention_diagnostics(&[p], 10), Err(Error::Config(_))));
    }

    #[test]
    fn single_sentence_level0() {
        let p = pred(vec![vec![vec![0.2, 0.5, 0.3]]], vec![1]);
        let out = predict_from_attention(&[p], AttentionMode::Level0, None).unwrap();
        assert_eq!(out[0].scores, vec![0.2, 0.5, 0.3]);
    }
}
