//! Multi-granular relation labels derived from slash-separated relation
//! paths (`/business/company/founders` → `/business/company` → `/business`).

use std::collections::{BTreeSet, HashMap};

use crate::{Error, Result};

/// The no-relation class; shared by every level and its own ancestor.
pub const NA: &str = "NA";
pub const NA_ID: usize = 0;

/// Relation names at levels `0..=depth`, obtained by dropping the last `l`
/// path components at level `l`.
pub fn derive_hierarchy(relation: &str, depth: usize) -> Result<Vec<String>> {
    if relation == NA {
        return Ok(vec![NA.to_string(); depth + 1]);
    }
    let parts: Vec<&str> = relation.split('/').filter(|p| !p.is_empty()).collect();
    if !relation.starts_with('/') || parts.len() < depth + 1 {
        return Err(Error::input(format!(
            "relation {relation:?} needs at least {} path components for depth {depth}",
            depth + 1
        )));
    }
    Ok((0..=depth)
        .map(|l| format!("/{}", parts[..parts.len() - l].join("/")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Level {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Level {
    fn new(names: BTreeSet<String>) -> Self {
        let names: Vec<String> = std::iter::once(NA.to_string())
            .chain(names.into_iter().filter(|n| n != NA))
            .collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }
}

/// Relation ids at each level plus child→parent links. Id 0 is NA at every
/// level; the remaining ids follow the sorted relation names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationHierarchy {
    levels: Vec<Level>,
    /// `parents[l][id]` is the level-`l+1` ancestor of level-`l` relation `id`.
    parents: Vec<Vec<usize>>,
}

impl RelationHierarchy {
    pub fn from_relations<'a>(relations: impl IntoIterator<Item = &'a str>, depth: usize) -> Result<Self> {
        let fine: BTreeSet<String> = relations.into_iter().map(str::to_string).collect();
        let chains: Vec<Vec<String>> = fine
            .iter()
            .map(|r| derive_hierarchy(r, depth))
            .collect::<Result<_>>()?;
        let levels: Vec<Level> = (0..=depth)
            .map(|l| Level::new(chains.iter().map(|c| c[l].clone()).collect()))
            .collect();
        let mut parents: Vec<Vec<usize>> = levels[..depth].iter().map(|lv| vec![NA_ID; lv.names.len()]).collect();
        for chain in &chains {
            for l in 0..depth {
                let child = levels[l].index[&chain[l]];
                parents[l][child] = levels[l + 1].index[&chain[l + 1]];
            }
        }
        Ok(Self { levels, parents })
    }

    /// Hierarchy depth `M` (number of coarse levels).
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.names.len()).collect()
    }

    pub fn id(&self, level: usize, name: &str) -> Option<usize> {
        self.levels.get(level)?.index.get(name).copied()
    }

    pub fn name(&self, level: usize, id: usize) -> &str {
        &self.levels[level].names[id]
    }

    pub fn names(&self, level: usize) -> &[String] {
        &self.levels[level].names
    }

    /// Fine-grained relations in id order (NA first).
    pub fn relations(&self) -> &[String] {
        &self.levels[0].names
    }

    /// Ancestor of fine-grained relation `fine` at `level`.
    pub fn ancestor(&self, level: usize, fine: usize) -> usize {
        (0..level).fold(fine, |id, l| self.parents[l][id])
    }

    /// `[r0, .., rM]` ids for a fine-grained relation name.
    pub fn labels(&self, relation: &str) -> Option<Vec<usize>> {
        let fine = self.id(0, relation)?;
        Some((0..=self.depth()).map(|l| self.ancestor(l, fine)).collect())
    }

    /// The same relations re-derived at a smaller depth.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        Self::from_relations(self.relations().iter().map(String::as_str), depth)
    }
}
