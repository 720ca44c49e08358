//! Word, position and entity embeddings fused by a position-wise gate.
//!
//! For token `i` the position-aware input is `[v_i; p_head(i); p_tail(i)]`
//! and the entity-aware input is `[v_i; v_head; v_tail]`. The gate
//! `A = sigmoid(lambda * (W1 X_e + b1))` interpolates between `X_e` and
//! `tanh(W2 X_p + b2)`.

use std::collections::{BTreeSet, HashMap};
use std::io::BufRead;

use rand::Rng;

use crate::numerics::{Array, Graph, ParamId, ParameterStore, Var};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Initialisation range for word vectors missing from a pre-trained file.
pub const WORD_INIT_RANGE: f64 = 0.25;

/// Token to row mapping for the word embedding table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary over the distinct tokens, sorted, after the two
    /// reserved entries.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let distinct: BTreeSet<&str> = tokens.into_iter().collect();
        let list = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(distinct.into_iter().filter(|t| *t != PAD_TOKEN && *t != UNK_TOKEN))
            .map(str::to_string)
            .collect();
        Self::from_tokens(list).expect("reserved tokens present")
    }

    /// Restores a vocabulary from its row order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(Error::input("vocabulary must start with <pad>, <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Row for `token`, or [`UNK`].
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, row: usize) -> &str {
        &self.tokens[row]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

/// Random word table: uniform in `[-0.25, 0.25]`, padding row zero.
pub fn random_word_table(vocab_len: usize, width: usize, rng: &mut impl Rng) -> Array {
    let mut data: Vec<f64> = (0..vocab_len * width)
        .map(|_| rng.random_range(-WORD_INIT_RANGE..=WORD_INIT_RANGE))
        .collect();
    data[PAD * width..(PAD + 1) * width].fill(0.0);
    Array::matrix(vocab_len, width, data).expect("non-empty table")
}

/// Reads a text word-vector file (`count dim` header, then `token v1 .. vd`)
/// into a table ordered by `vocab`. Tokens the file lacks keep a random row.
pub fn load_word_vectors(reader: impl BufRead, vocab: &Vocab, width: usize, rng: &mut impl Rng) -> Result<Array> {
    let mut table = random_word_table(vocab.len(), width, rng);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::input("word-vector file is empty"))?
        .map_err(|e| Error::input(e.to_string()))?;
    let mut fields = header.split_whitespace();
    let parse = |s: Option<&str>| s.and_then(|v| v.parse::<usize>().ok());
    let (Some(count), Some(dim)) = (parse(fields.next()), parse(fields.next())) else {
        return Err(Error::input(format!("bad word-vector header {header:?}")));
    };
    if dim != width {
        return Err(Error::config(format!("word vectors have width {dim}, model expects {width}")));
    }
    let mut seen = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::input(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        seen += 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default();
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::input(format!("word vectors line {}: {e}", lineno + 2)))?;
        if values.len() != dim {
            return Err(Error::input(format!(
                "word vectors line {}: {} values, expected {dim}",
                lineno + 2,
                values.len()
            )));
        }
        if let Some(&row) = vocab.index.get(token) {
            if row != PAD {
                table.data_mut()[row * width..(row + 1) * width].copy_from_slice(&values);
            }
        }
    }
    if seen != count {
        log::warn!("word-vector header announces {count} rows, found {seen}");
    }
    Ok(table)
}

/// Clipped signed distance from `i` to `anchor`.
pub fn clipped_distance(i: usize, anchor: usize, max_dist: usize) -> i64 {
    let d = i as i64 - anchor as i64;
    d.clamp(-(max_dist as i64), max_dist as i64)
}

/// Position-table rows for a sentence of length `n`: `clip(i - anchor)`
/// shifted by `max_dist` into `0..=2*max_dist`.
pub fn relative_positions(n: usize, anchor: usize, max_dist: usize) -> Vec<usize> {
    debug_assert!(anchor < n);
    (0..n)
        .map(|i| (clipped_distance(i, anchor, max_dist) + max_dist as i64) as usize)
        .collect()
}

/// A sentence already mapped to vocabulary rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceInput {
    pub tokens: Vec<usize>,
    pub head: usize,
    pub tail: usize,
}

impl SentenceInput {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::input("empty sentence"));
        }
        if self.head >= n || self.tail >= n {
            return Err(Error::input(format!(
                "entity position out of range (head {}, tail {}, length {n})",
                self.head, self.tail
            )));
        }
        if self.head == self.tail {
            return Err(Error::input(format!("head and tail share position {}", self.head)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingDims {
    pub word: usize,
    pub position: usize,
    pub max_dist: usize,
}

impl EmbeddingDims {
    /// Fused width `d_x = 3 * d_w`.
    pub fn fused(&self) -> usize {
        3 * self.word
    }

    pub fn position_rows(&self) -> usize {
        2 * self.max_dist + 1
    }
}

/// Gate parameters. `entity_gate` is absent in the ablation without entity
/// embeddings, where the output is the position-aware branch alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub entity_gate: Option<(ParamId, ParamId)>,
    pub w_pos: ParamId,
    pub b_pos: ParamId,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    pub dims: EmbeddingDims,
    pub words: ParamId,
    pub pos_head: ParamId,
    pub pos_tail: ParamId,
    pub fusion: FusionParams,
}

impl EmbeddingParams {
    pub fn register(
        store: &mut ParameterStore,
        dims: EmbeddingDims,
        word_table: Array,
        lambda: f64,
        entity_gate: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let dx = dims.fused();
        let words = store.insert("embedding.words", word_table);
        let pos_head = store.insert(
            "embedding.pos_head",
            uniform(&[dims.position_rows(), dims.position], WORD_INIT_RANGE, rng),
        );
        let pos_tail = store.insert(
            "embedding.pos_tail",
            uniform(&[dims.position_rows(), dims.position], WORD_INIT_RANGE, rng),
        );
        let entity_gate = entity_gate.then(|| {
            let w = store.insert("embedding.gate_w", xavier(dx, 3 * dims.word, rng));
            let b = store.insert("embedding.gate_b", Array::zeros(&[dx]));
            (w, b)
        });
        let w_pos = store.insert("embedding.pos_w", xavier(dx, dims.word + 2 * dims.position, rng));
        let b_pos = store.insert("embedding.pos_b", Array::zeros(&[dx]));
        Self {
            dims,
            words,
            pos_head,
            pos_tail,
            fusion: FusionParams {
                entity_gate,
                w_pos,
                b_pos,
                lambda,
            },
        }
    }
}

/// Uniform in `[-bound, bound]`.
pub(crate) fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..=bound)).collect()).expect("positive shape")
}

/// `rows × fan_in` matrix, uniform with variance `1 / fan_in`.
pub(crate) fn xavier(rows: usize, fan_in: usize, rng: &mut impl Rng) -> Array {
    uniform(&[rows, fan_in], (3.0 / fan_in as f64).sqrt(), rng)
}

/// The two stacked inputs of the gate, before any learnable transform.
pub struct GateInputs {
    /// `[d_w + 2 d_p, n]`
    pub position_aware: Var,
    /// `[3 d_w, n]`
    pub entity_aware: Var,
}

pub fn gate_inputs(g: &mut Graph<'_>, p: &EmbeddingParams, s: &SentenceInput) -> Result<GateInputs> {
    s.validate()?;
    let n = s.tokens.len();
    let words = g.param(p.words);
    let v = g.gather(words, &s.tokens, Some(PAD))?;
    let ph = g.param(p.pos_head);
    let pt = g.param(p.pos_tail);
    let xh = g.gather(ph, &relative_positions(n, s.head, p.dims.max_dist), None)?;
    let xt = g.gather(pt, &relative_positions(n, s.tail, p.dims.max_dist), None)?;
    let position_aware = g.concat_rows(&[v, xh, xt])?;
    let vh = g.gather(words, &vec![s.tokens[s.head]; n], Some(PAD))?;
    let vt = g.gather(words, &vec![s.tokens[s.tail]; n], Some(PAD))?;
    let entity_aware = g.concat_rows(&[v, vh, vt])?;
    Ok(GateInputs {
        position_aware,
        entity_aware,
    })
}

/// Builds `X` (`[d_x, n]`) for one sentence.
pub fn embed_sentence(g: &mut Graph<'_>, p: &EmbeddingParams, s: &SentenceInput) -> Result<Var> {
    let inputs = gate_inputs(g, p, s)?;
    let f = &p.fusion;
    let w2 = g.param(f.w_pos);
    let b2 = g.param(f.b_pos);
    let pre = g.matmul(w2, inputs.position_aware)?;
    let pre = g.add_bias(pre, b2)?;
    let pos_branch = g.tanh(pre);
    let Some((w1, b1)) = f.entity_gate else {
        return Ok(pos_branch);
    };
    let w1 = g.param(w1);
    let b1 = g.param(b1);
    let gate = g.matmul(w1, inputs.entity_aware)?;
    let gate = g.add_bias(gate, b1)?;
    let gate = g.affine(gate, f.lambda, 0.0);
    let gate = g.sigmoid(gate);
    let keep = g.mul(gate, inputs.entity_aware)?;
    let rest = g.affine(gate, -1.0, 1.0);
    let mixed = g.mul(rest, pos_branch)?;
    Ok(g.add(keep, mixed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_position_cases() {
        let d: Vec<i64> = (0..3).map(|i| clipped_distance(i, 1, 30)).collect();
        assert_eq!(d, vec![-1, 0, 1]);
        let d: Vec<i64> = (0..5).map(|i| clipped_distance(i, 0, 2)).collect();
        assert_eq!(d, vec![0, 1, 2, 2, 2]);
        assert_eq!(relative_positions(5, 0, 2), vec![2, 3, 4, 4, 4]);
    }

    #[test]
    fn vocab_reserved_rows() {
        let v = Vocab::build(["b", "a", "b"]);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.lookup("zzz"), UNK);
        assert_eq!(v.encode(&["a", "b"]), vec![2, 3]);
    }

    #[test]
    fn word_vector_file() {
        let vocab = Vocab::build(["x", "y"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = "2 2\nx 1.5 -2\nother 0 0\n";
        let t = load_word_vectors(text.as_bytes(), &vocab, 2, &mut rng).unwrap();
        assert_eq!(t.row(vocab.lookup("x")), &[1.5, -2.0]);
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
        assert!(t.row(vocab.lookup("y")).iter().all(|v| v.abs() <= WORD_INIT_RANGE));
        assert!(load_word_vectors("2 3\n".as_bytes(), &vocab, 2, &mut rng).is_err());
    }

    #[test]
    fn bad_anchors_rejected() {
        let s = SentenceInput {
            tokens: vec![2, 3, 4],
            head: 1,
            tail: 1,
        };
        assert!(s.validate().is_err());
        let s = SentenceInput {
            tokens: vec![2, 3, 4],
            head: 0,
            tail: 3,
        };
        assert!(s.validate().is_err());
    }
}
