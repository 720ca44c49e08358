//! Grouping sentences into entity-pair bags.

use std::collections::BTreeMap;
use std::fmt;

use super::hierarchy::{RelationHierarchy, NA_ID};
use super::records::SentenceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Training: one bag per (pair, relation).
    PairRelation,
    /// Evaluation: one bag per pair, carrying the set of gold relations.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BagKey {
    pub head_id: String,
    pub tail_id: String,
    pub relation: Option<String>,
}

impl fmt::Display for BagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.relation {
            Some(r) => write!(f, "{}|{}|{}", self.head_id, self.tail_id, r),
            None => write!(f, "{}|{}", self.head_id, self.tail_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub key: BagKey,
    /// Indices into the record slice, in input order.
    pub members: Vec<usize>,
    /// Fine-grained gold relation ids, sorted; NA only when nothing else applies.
    pub gold: Vec<usize>,
    /// `[r0, .., rM]` for the training label (smallest non-NA gold id).
    pub labels: Vec<usize>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_na(&self) -> bool {
        self.labels[0] == NA_ID
    }
}

/// Bags in key order. Relations missing from the hierarchy count as NA.
pub fn build_bags(records: &[SentenceRecord], grouping: Grouping, hierarchy: &RelationHierarchy) -> Vec<Bag> {
    let mut groups: BTreeMap<BagKey, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = BagKey {
            head_id: r.head_id.clone(),
            tail_id: r.tail_id.clone(),
            relation: match grouping {
                Grouping::PairRelation => Some(r.relation.clone()),
                Grouping::Pair => None,
            },
        };
        groups.entry(key).or_default().push(i);
    }
    let mut unknown = 0usize;
    let bags = groups
        .into_iter()
        .map(|(key, members)| {
            let mut gold: Vec<usize> = members
                .iter()
                .map(|&i| {
                    hierarchy.id(0, &records[i].relation).unwrap_or_else(|| {
                        unknown += 1;
                        NA_ID
                    })
                })
                .collect();
            gold.sort_unstable();
            gold.dedup();
            if gold.len() > 1 {
                gold.retain(|&r| r != NA_ID);
            }
            let primary = gold[0];
            let labels = (0..=hierarchy.depth()).map(|l| hierarchy.ancestor(l, primary)).collect();
            Bag {
                key,
                members,
                gold,
                labels,
            }
        })
        .collect();
    if unknown > 0 {
        log::warn!("{unknown} sentences carry relations outside the hierarchy; treated as NA");
    }
    bags
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(h: &str, t: &str, rel: &str) -> SentenceRecord {
        SentenceRecord::from_text(h, t, h, t, rel, &format!("{h} and {t}")).unwrap()
    }

    #[test]
    fn grouping_modes() {
        let records = vec![
            rec("a", "b", "/x/y/z"),
            rec("a", "b", "/x/y/w"),
            rec("c", "d", "NA"),
            rec("a", "b", "/x/y/z"),
        ];
        let h = RelationHierarchy::from_relations(["NA", "/x/y/z", "/x/y/w"], 2).unwrap();
        let train = build_bags(&records, Grouping::PairRelation, &h);
        assert_eq!(train.len(), 3);
        assert_eq!(train.iter().map(Bag::len).sum::<usize>(), 4);
        let eval = build_bags(&records, Grouping::Pair, &h);
        assert_eq!(eval.len(), 2);
        assert_eq!(eval[0].members, vec![0, 1, 3]);
        assert_eq!(eval[0].gold.len(), 2);
        assert!(eval[1].is_na());
        assert_eq!(eval[0].key.to_string(), "a|b");
    }
}
