//! Bag classification loss and attention supervision loss.

use crate::model::{BagInput, Model};
use crate::numerics::{Graph, Var, LOG_CLAMP};
use crate::relattn::{BagGraph, Dropout};
use crate::{Error, Result};

/// `-ln p[label]`, with `p[label]` clamped at [`LOG_CLAMP`].
pub fn loss_re(probs: &[f64], label: usize) -> Result<f64> {
    let p = *probs
        .get(label)
        .ok_or_else(|| Error::input(format!("label {label} out of range for {} relations", probs.len())))?;
    Ok(-p.max(LOG_CLAMP).ln())
}

/// Mean of `-ln alpha[l][labels[l]]` over every (sentence, level) term.
/// `alphas[sentence][level]`.
pub fn loss_att(alphas: &[Vec<Vec<f64>>], labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    let mut terms = 0usize;
    for sentence in alphas {
        if sentence.len() != labels.len() {
            return Err(Error::input(format!(
                "{} attention levels but {} labels",
                sentence.len(),
                labels.len()
            )));
        }
        for (alpha, &r) in sentence.iter().zip(labels) {
            total += loss_re(alpha, r)?;
            terms += 1;
        }
    }
    if terms == 0 {
        return Err(Error::input("no attention terms"));
    }
    Ok(total / terms as f64)
}

/// Graph handles for one bag's share of a batch objective.
pub struct BagObjective {
    pub graph: BagGraph,
    /// `re_scale * L_re(bag) + att_scale * sum of attention terms`.
    pub loss: Var,
    pub loss_re: f64,
    /// Unscaled sum of `-ln alpha` terms of this bag.
    pub att_sum: f64,
    pub att_terms: usize,
}

/// Checks that `labels` index into every level of `model`.
pub fn check_labels(model: &Model, bag: &BagInput) -> Result<()> {
    let sizes = &model.config.level_sizes;
    if bag.labels.len() != sizes.len() {
        return Err(Error::input(format!(
            "bag {} has {} labels for {} levels",
            bag.id,
            bag.labels.len(),
            sizes.len()
        )));
    }
    for (l, (&r, &n)) in bag.labels.iter().zip(sizes).enumerate() {
        if r >= n {
            return Err(Error::input(format!(
                "bag {}: label {r} out of range at level {l} ({n} relations)",
                bag.id
            )));
        }
    }
    Ok(())
}

/// Number of attention terms a bag contributes when supervision is on.
pub fn attention_terms(model: &Model, bag: &BagInput) -> usize {
    let levels = model.relattn.levels.iter().filter(|l| l.relations.is_some()).count();
    bag.sentences.len() * levels
}

pub fn bag_objective(
    g: &mut Graph<'_>,
    model: &Model,
    bag: &BagInput,
    dropout: Option<&mut Dropout>,
    re_scale: f64,
    att_scale: Option<f64>,
) -> Result<BagObjective> {
    check_labels(model, bag)?;
    let graph = model.forward(g, &bag.sentences, dropout)?;
    let re = g.neg_log_at(graph.probs, bag.labels[0])?;
    let loss_re = g.value(re).data()[0];
    let mut loss = g.affine(re, re_scale, 0.0);
    let mut att_sum = 0.0;
    let mut att_terms = 0;
    if let Some(scale) = att_scale {
        let mut terms = Vec::new();
        for sentence in &graph.alphas {
            for (alpha, &r) in sentence.iter().zip(&bag.labels) {
                if let Some(alpha) = alpha {
                    terms.push(g.neg_log_at(*alpha, r)?);
                }
            }
        }
        if !terms.is_empty() {
            att_terms = terms.len();
            let mut sum = terms[0];
            for &t in &terms[1..] {
                sum = g.add(sum, t)?;
            }
            att_sum = g.value(sum).data()[0];
            let scaled = g.affine(sum, scale, 0.0);
            loss = g.add(loss, scaled)?;
        }
    }
    Ok(BagObjective {
        graph,
        loss,
        loss_re,
        att_sum,
        att_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(loss_re(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((loss_re(&[0.5, 0.5], 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_re(&[1.0], 1).is_err());
        let a = vec![vec![vec![0.25, 0.75]]];
        assert!((loss_att(&a, &[1]).unwrap() + 0.75f64.ln()).abs() < 1e-15);
        let perfect = vec![vec![vec![0.0, 1.0], vec![1.0]]; 3];
        assert_eq!(loss_att(&perfect, &[1, 0]).unwrap(), 0.0);
        assert!(loss_att(&a, &[2]).is_err());
    }
}
