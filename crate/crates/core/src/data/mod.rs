//! Corpus ingestion, bag construction, relation hierarchies and the
//! synthetic corpus generator.

pub mod bags;
pub mod hierarchy;
pub mod records;
pub mod synth;

pub use bags::{build_bags, Bag, BagKey, Grouping};
pub use hierarchy::{derive_hierarchy, RelationHierarchy, NA, NA_ID};
pub use records::{
    load_corpus, parse_corpus, write_corpus, CorpusFormat, LoadOptions, LoadReport, Rejection, SentenceRecord,
};
pub use synth::{gen_synthetic, read_manifest, write_manifest, ManifestEntry, SplitCorpus, SynthConfig, SyntheticCorpus};
