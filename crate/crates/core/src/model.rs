//! The full bag classifier: embeddings, encoder and relation-augmented
//! attention over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{random_word_table, EmbeddingDims, EmbeddingParams, SentenceInput};
use crate::encoder::{encode, PcnnParams};
use crate::numerics::{Array, Graph, ParameterStore};
use crate::relattn::{bag_forward, Architecture, BagGraph, Dropout, RelAttnFlags, RelAttnParams};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_sent2rel: bool,
    pub no_attention_pool: bool,
    pub no_aux_obj: bool,
    pub no_entity_emb: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub position_dim: usize,
    /// Convolution channels `d_c`; sentence vectors have width `3 * d_c`.
    pub channels: usize,
    pub window: usize,
    pub max_dist: usize,
    /// Gate temperature.
    pub lambda: f64,
    /// Relation counts per level, fine-grained first. Length is `1 + M`.
    pub level_sizes: Vec<usize>,
    pub architecture: Architecture,
    pub ablations: Ablations,
}

impl ModelConfig {
    pub fn depth(&self) -> usize {
        self.level_sizes.len().saturating_sub(1)
    }

    pub fn hidden(&self) -> usize {
        3 * self.channels
    }

    fn embedding_dims(&self) -> EmbeddingDims {
        EmbeddingDims {
            word: self.word_dim,
            position: self.position_dim,
            max_dist: self.max_dist,
        }
    }
}

/// One bag ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct BagInput {
    pub id: String,
    pub sentences: Vec<SentenceInput>,
    /// `[r0, .., rM]`.
    pub labels: Vec<usize>,
}

/// Plain values read out of a [`BagGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// `alphas[sentence][level]`; empty inner vectors when sent2rel is ablated.
    pub alphas: Vec<Vec<Vec<f64>>>,
    pub pool_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub embedding: EmbeddingParams,
    pub encoder: PcnnParams,
    pub relattn: RelAttnParams,
}

impl Model {
    /// Fresh model with a random word table of `vocab_len` rows.
    pub fn init(config: ModelConfig, vocab_len: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::INIT, 1));
        let words = random_word_table(vocab_len, config.word_dim, &mut rng);
        Self::new(config, words, seed)
    }

    pub fn new(config: ModelConfig, word_table: Array, seed: u64) -> Result<Self> {
        if config.level_sizes.is_empty() || config.level_sizes.contains(&0) {
            return Err(Error::config(format!("invalid relation level sizes {:?}", config.level_sizes)));
        }
        let (_, width) = word_table.dims2();
        if word_table.shape().len() != 2 || width != config.word_dim {
            return Err(Error::config(format!(
                "word table shape {:?} does not match word_dim {}",
                word_table.shape(),
                config.word_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, seed::INIT, 0));
        let mut store = ParameterStore::new();
        let dims = config.embedding_dims();
        let embedding = EmbeddingParams::register(
            &mut store,
            dims,
            word_table,
            config.lambda,
            !config.ablations.no_entity_emb,
            &mut rng,
        );
        let encoder = PcnnParams::register(&mut store, config.channels, config.window, dims.fused(), &mut rng)?;
        let relattn = RelAttnParams::register(
            &mut store,
            config.architecture,
            encoder.output_width(),
            &config.level_sizes,
            RelAttnFlags {
                no_sent2rel: config.ablations.no_sent2rel,
                no_attention_pool: config.ablations.no_attention_pool,
            },
            &mut rng,
        )?;
        Ok(Self {
            config,
            store,
            embedding,
            encoder,
            relattn,
        })
    }

    /// Rebuilds the layout for `config` and fills it from named tensors.
    /// Every parameter of the layout must be supplied exactly once.
    pub fn from_parts(config: ModelConfig, params: Vec<(String, Array)>) -> Result<Self> {
        let words = params
            .iter()
            .find(|(n, _)| n == "embedding.words")
            .map(|(_, a)| a.clone())
            .ok_or_else(|| Error::input("missing parameter embedding.words"))?;
        let mut model = Self::new(config, words, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::input(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                params.len()
            )));
        }
        for (name, value) in params {
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| Error::input(format!("unexpected parameter {name}")))?;
            model
                .store
                .set(id, value)
                .map_err(|e| Error::input(format!("parameter {name}: {e}")))?;
        }
        Ok(model)
    }

    /// Builds the bag graph over `g`, which must borrow `self.store`.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        sentences: &[SentenceInput],
        dropout: Option<&mut Dropout>,
    ) -> Result<BagGraph> {
        if sentences.is_empty() {
            return Err(Error::input("empty bag"));
        }
        let encoded = sentences
            .iter()
            .map(|s| encode(g, &self.embedding, &self.encoder, s))
            .collect::<Result<Vec<_>>>()?;
        bag_forward(g, &encoded, &self.relattn, dropout)
    }

    /// Inference without dropout.
    pub fn predict(&self, sentences: &[SentenceInput]) -> Result<Prediction> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, sentences, None)?;
        Ok(Prediction {
            probs: g.value(out.probs).data().to_vec(),
            alphas: out
                .alphas
                .iter()
                .map(|levels| levels.iter().flatten().map(|a| g.value(*a).data().to_vec()).collect())
                .collect(),
            pool_weights: g.value(out.pool_weights).data().to_vec(),
        })
    }
}
