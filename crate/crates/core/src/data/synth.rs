//! Synthetic distant-supervision corpora with a known relation tree,
//! Zipf-distributed relation frequencies and recorded label noise.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hierarchy::NA;
use super::records::SentenceRecord;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Children per node, top level first. `[2, 2, 2]` gives 8 fine relations.
    pub branching: Vec<usize>,
    /// Number of filler words.
    pub vocab_size: usize,
    pub num_bags: usize,
    /// Fraction of bags labelled NA.
    pub na_fraction: f64,
    /// `bag_size_weights[i]` is the relative weight of bag size `i + 1`.
    pub bag_size_weights: Vec<f64>,
    pub zipf_exponent: f64,
    /// Chance that a sentence in a relation bag expresses no relation.
    pub noise_rate: f64,
    pub templates_per_relation: usize,
    pub keywords_per_node: usize,
    /// Chance that a keyword slot is filled with a filler word instead.
    pub keyword_dropout: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub num_entities: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            branching: vec![2, 2, 2],
            vocab_size: 200,
            num_bags: 2000,
            na_fraction: 0.7,
            bag_size_weights: vec![0.45, 0.3, 0.15, 0.1],
            zipf_exponent: 1.2,
            noise_rate: 0.3,
            templates_per_relation: 4,
            keywords_per_node: 3,
            keyword_dropout: 0.25,
            min_len: 8,
            max_len: 14,
            num_entities: 4000,
            test_fraction: 0.25,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1)", self.noise_rate));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf_exponent {} must be finite and >= 0", self.zipf_exponent));
        }
        if !(0.0..1.0).contains(&self.na_fraction) {
            return bad(format!("na_fraction {} outside [0, 1)", self.na_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!("test_fraction {} outside [0, 1)", self.test_fraction));
        }
        if !(0.0..=1.0).contains(&self.keyword_dropout) {
            return bad(format!("keyword_dropout {} outside [0, 1]", self.keyword_dropout));
        }
        if self.branching.is_empty() || self.branching.contains(&0) {
            return bad(format!("branching {:?} needs positive entries", self.branching));
        }
        if self.bag_size_weights.is_empty() || self.bag_size_weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return bad("bag_size_weights must be non-negative and non-empty".into());
        }
        if self.vocab_size == 0 || self.templates_per_relation == 0 || self.keywords_per_node == 0 {
            return bad("vocab_size, templates_per_relation and keywords_per_node must be positive".into());
        }
        // head, tail and one keyword per tree level
        let slots = 2 + self.branching.len();
        if self.min_len < slots || self.max_len < self.min_len {
            return bad(format!(
                "sentence length range {}..={} cannot hold {slots} slots",
                self.min_len, self.max_len
            ));
        }
        if self.num_entities < 2 || (self.num_entities * (self.num_entities - 1)) / 2 < self.num_bags {
            return bad(format!("{} entities are too few for {} bags", self.num_entities, self.num_bags));
        }
        Ok(())
    }

    /// Hierarchy depth matching the tree (`levels - 1`).
    pub fn depth(&self) -> usize {
        self.branching.len() - 1
    }

    /// Root-to-leaf child indices for every fine relation, in tree order.
    fn leaf_paths(&self) -> Vec<Vec<usize>> {
        let mut paths: Vec<Vec<usize>> = vec![vec![]];
        for &b in &self.branching {
            paths = paths
                .into_iter()
                .flat_map(|p| (0..b).map(move |c| [p.as_slice(), &[c]].concat()))
                .collect();
        }
        paths
    }

    /// Fine relation names in tree order, e.g. `/d0/g1/r0`.
    pub fn relation_names(&self) -> Vec<String> {
        self.leaf_paths().iter().map(|p| node_path(p)).collect()
    }
}

const LEVEL_TAGS: [&str; 4] = ["d", "g", "r", "s"];

fn node_path(path: &[usize]) -> String {
    path.iter()
        .enumerate()
        .map(|(i, c)| format!("/{}{c}", LEVEL_TAGS.get(i).copied().unwrap_or("x")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Line index within the split's corpus file.
    pub sentence_id: usize,
    pub bag_label: String,
    pub true_relation: String,
    pub mislabeled: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitCorpus {
    pub records: Vec<SentenceRecord>,
    pub manifest: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: SplitCorpus,
    pub test: SplitCorpus,
    /// Fine relation inventory including NA.
    pub relations: Vec<String>,
}

impl SyntheticCorpus {
    /// Training sentences per relation name.
    pub fn train_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.relations.iter().map(|r| (r.clone(), 0)).collect();
        for r in &self.train.records {
            *counts.entry(r.relation.clone()).or_default() += 1;
        }
        counts
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Head,
    Tail,
    Keyword(String),
    Filler,
}

type Template = Vec<Slot>;

fn make_template(rng: &mut impl Rng, cfg: &SynthConfig, keywords: Vec<String>) -> Template {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut slots = vec![Slot::Filler; len];
    let mut positions: Vec<usize> = (0..len).collect();
    positions.shuffle(rng);
    slots[positions[0]] = Slot::Head;
    slots[positions[1]] = Slot::Tail;
    for (k, pos) in keywords.into_iter().zip(&positions[2..]) {
        slots[*pos] = Slot::Keyword(k);
    }
    slots
}

fn relation_templates(rng: &mut impl Rng, cfg: &SynthConfig, path: &[usize]) -> Vec<Template> {
    (0..cfg.templates_per_relation)
        .map(|_| {
            let keywords = (1..=path.len())
                .map(|depth| {
                    let node = node_path(&path[..depth]);
                    format!("kw{}:{}", node.replace('/', "_"), rng.random_range(0..cfg.keywords_per_node))
                })
                .collect();
            make_template(rng, cfg, keywords)
        })
        .collect()
}

fn zipf_weights(n: usize, exponent: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut ranks: Vec<usize> = (1..=n).collect();
    ranks.shuffle(rng);
    ranks.iter().map(|&k| (k as f64).powf(-exponent)).collect()
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, seed::DATA, 0));

    let relations = cfg.relation_names();
    let paths = cfg.leaf_paths();
    let templates: Vec<Vec<Template>> = paths.iter().map(|p| relation_templates(&mut rng, cfg, p)).collect();
    let na_templates: Vec<Template> = (0..cfg.templates_per_relation)
        .map(|_| make_template(&mut rng, cfg, vec![]))
        .collect();

    let relation_dist = WeightedIndex::new(zipf_weights(relations.len(), cfg.zipf_exponent, &mut rng))
        .map_err(|e| Error::config(format!("relation weights: {e}")))?;
    let size_dist = WeightedIndex::new(&cfg.bag_size_weights)
        .map_err(|e| Error::config(format!("bag_size_weights: {e}")))?;

    let mut used_pairs = HashSet::new();
    let mut train = SplitCorpus::default();
    let mut test = SplitCorpus::default();
    for _ in 0..cfg.num_bags {
        let (h, t) = loop {
            let h = rng.random_range(0..cfg.num_entities);
            let t = rng.random_range(0..cfg.num_entities);
            if h != t && used_pairs.insert((h.min(t), h.max(t))) {
                break (h, t);
            }
        };
        let label = if rng.random::<f64>() < cfg.na_fraction {
            None
        } else {
            Some(relation_dist.sample(&mut rng))
        };
        let size = size_dist.sample(&mut rng) + 1;
        let split = if rng.random::<f64>() < cfg.test_fraction {
            &mut test
        } else {
            &mut train
        };
        let (head, tail) = (format!("ent{h}"), format!("ent{t}"));
        let bag_label = label.map_or(NA.to_string(), |r| relations[r].clone());
        for _ in 0..size {
            let mislabeled = label.is_some() && rng.random::<f64>() < cfg.noise_rate;
            let (template, true_relation) = match label {
                Some(r) if !mislabeled => (templates[r].as_slice(), relations[r].clone()),
                _ => (na_templates.as_slice(), NA.to_string()),
            };
            let template = &template[rng.random_range(0..template.len())];
            let mut tokens = Vec::with_capacity(template.len());
            let (mut head_pos, mut tail_pos) = (0, 0);
            for slot in template {
                match slot {
                    Slot::Head => {
                        head_pos = tokens.len();
                        tokens.push(head.clone());
                    }
                    Slot::Tail => {
                        tail_pos = tokens.len();
                        tokens.push(tail.clone());
                    }
                    Slot::Keyword(k) if rng.random::<f64>() >= cfg.keyword_dropout => tokens.push(k.clone()),
                    Slot::Keyword(_) | Slot::Filler => tokens.push(format!("w{}", rng.random_range(0..cfg.vocab_size))),
                }
            }
            split.manifest.push(ManifestEntry {
                sentence_id: split.records.len(),
                bag_label: bag_label.clone(),
                true_relation,
                mislabeled,
            });
            split.records.push(SentenceRecord {
                head_id: head.clone(),
                tail_id: tail.clone(),
                head_surface: head.clone(),
                tail_surface: tail.clone(),
                relation: bag_label.clone(),
                tokens,
                head_pos,
                tail_pos,
            });
        }
    }
    let mut inventory = vec![NA.to_string()];
    inventory.extend(relations);
    Ok(SyntheticCorpus {
        train,
        test,
        relations: inventory,
    })
}

pub fn write_manifest(out: &mut (impl Write + ?Sized), manifest: &[ManifestEntry]) -> std::io::Result<()> {
    writeln!(out, "sentence_id\tbag_label\ttrue_relation\tmislabeled")?;
    for m in manifest {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            m.sentence_id, m.bag_label, m.true_relation, m.mislabeled as u8
        )?;
    }
    Ok(())
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::input(format!("manifest line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (f.len() == 4)
            .then(|| Some((f[0].parse().ok()?, f[3].parse::<u8>().ok()?)))
            .flatten();
        let Some((sentence_id, flag)) = parsed else {
            return Err(Error::input(format!("manifest line {}: malformed {line:?}", i + 1)));
        };
        entries.push(ManifestEntry {
            sentence_id,
            bag_label: f[1].to_string(),
            true_relation: f[2].to_string(),
            mislabeled: flag != 0,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_bags: 300,
            num_entities: 500,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn records_valid_and_reproducible() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        for r in a.train.records.iter().chain(&a.test.records) {
            r.validate().unwrap();
        }
        assert_eq!(a.relations.len(), 9);
        assert_eq!(a.relations[1], "/d0/g0/r0");
    }

    #[test]
    fn zero_noise_means_clean_manifest() {
        let c = gen_synthetic(&SynthConfig {
            noise_rate: 0.0,
            ..small()
        })
        .unwrap();
        assert!(c.train.manifest.iter().all(|m| !m.mislabeled));
    }

    #[test]
    fn manifest_round_trip() {
        let c = gen_synthetic(&small()).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &c.train.manifest).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), c.train.manifest);
    }

    #[test]
    fn invalid_configs() {
        assert!(SynthConfig { noise_rate: 1.0, ..small() }.validate().is_err());
        assert!(SynthConfig { zipf_exponent: -0.1, ..small() }.validate().is_err());
        assert!(SynthConfig { min_len: 3, ..small() }.validate().is_err());
    }
}
