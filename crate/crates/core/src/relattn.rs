//! Relation-augmented attention.
//!
//! Each sentence vector `s` queries a relation embedding matrix per hierarchy
//! level (sent2rel attention), the attended relation vector is merged back
//! into `s` through a gated residual block, and the per-level results are
//! concatenated. A bag of such vectors is reduced by attention pooling and
//! classified.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::xavier;
use crate::numerics::{Array, Graph, ParamId, ParameterStore, Var};
use crate::{Error, Result};

/// One hidden layer with `tanh`: `w2 · tanh(w1 · x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register(
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: store.insert(format!("{prefix}.w1"), xavier(input, input, rng)),
            b1: store.insert(format!("{prefix}.b1"), Array::zeros(&[input])),
            w2: store.insert(format!("{prefix}.w2"), xavier(output, input, rng)),
            b2: store.insert(format!("{prefix}.b2"), Array::zeros(&[output])),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let h = g.matmul(w1, x)?;
        let h = g.add_bias(h, b1)?;
        let h = g.tanh(h);
        let o = g.matmul(w2, h)?;
        Ok(g.add_bias(o, b2)?)
    }
}

/// Gated residual merge for one level. `gate` is absent when sent2rel
/// attention is ablated.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    pub gate: Option<(ParamId, ParamId)>,
    pub mlp: Mlp,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationLevel {
    /// `[d_h, N_l]`; absent when sent2rel attention is ablated.
    pub relations: Option<ParamId>,
    pub merge: MergeParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Single level, `u := u0`.
    Base,
    /// `u := [u0; u1; ..; uM]`.
    Collaborating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagHead {
    /// Attention-pooling vector; absent when pooling is ablated to a mean.
    pub pool: Option<ParamId>,
    pub classifier: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelAttnParams {
    pub architecture: Architecture,
    pub hidden: usize,
    pub levels: Vec<RelationLevel>,
    pub head: BagHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RelAttnFlags {
    pub no_sent2rel: bool,
    pub no_attention_pool: bool,
}

impl RelAttnParams {
    /// `level_sizes[l]` is the number of relations at level `l`.
    pub fn register(
        store: &mut ParameterStore,
        architecture: Architecture,
        hidden: usize,
        level_sizes: &[usize],
        flags: RelAttnFlags,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if level_sizes.is_empty() {
            return Err(Error::config("at least one relation level is required"));
        }
        if architecture == Architecture::Base && level_sizes.len() != 1 {
            return Err(Error::config(format!(
                "the base architecture has one level, got {}",
                level_sizes.len()
            )));
        }
        let d = hidden;
        let levels = level_sizes
            .iter()
            .enumerate()
            .map(|(l, &n)| {
                let p = format!("relattn.l{l}");
                let relations =
                    (!flags.no_sent2rel).then(|| store.insert(format!("{p}.relations"), xavier(d, n, rng)));
                let gate = (!flags.no_sent2rel).then(|| {
                    (
                        store.insert(format!("{p}.gate_w"), xavier(d, 2 * d, rng)),
                        store.insert(format!("{p}.gate_b"), Array::zeros(&[d])),
                    )
                });
                let mlp = Mlp::register(store, &format!("{p}.mlp"), d, d, rng);
                RelationLevel {
                    relations,
                    merge: MergeParams {
                        gate,
                        mlp,
                        ln_gain: store.insert(format!("{p}.ln_gain"), Array::filled(&[d], 1.0)),
                        ln_bias: store.insert(format!("{p}.ln_bias"), Array::zeros(&[d])),
                    },
                }
            })
            .collect();
        let width = d * level_sizes.len();
        let pool = (!flags.no_attention_pool).then(|| {
            let bound = (3.0 / width as f64).sqrt();
            store.insert(
                "head.pool",
                Array::vector((0..width).map(|_| rng.random_range(-bound..=bound)).collect()).expect("width > 0"),
            )
        });
        let classifier = Mlp::register(store, "head.mlp", width, level_sizes[0], rng);
        Ok(Self {
            architecture,
            hidden,
            levels,
            head: BagHead { pool, classifier },
        })
    }

    /// Width of the augmented sentence vector, `(1 + M) * d_h`.
    pub fn augmented_width(&self) -> usize {
        self.hidden * self.levels.len()
    }
}

/// `alpha = softmax(sᵀR)`, `c = R alpha`.
pub fn sent2rel(g: &mut Graph<'_>, s: Var, relations: Var) -> Result<(Var, Var)> {
    let d = g.value(s).len();
    let row = g.reshape(s, vec![1, d])?;
    let scores = g.matmul(row, relations)?;
    let n = g.value(scores).len();
    let alpha = g.softmax(scores)?;
    let alpha = g.reshape(alpha, vec![n])?;
    let c = g.matmul(relations, alpha)?;
    Ok((alpha, c))
}

/// `u = LayerNorm(s + MLP(beta∘s + (1-beta)∘c))` with
/// `beta = sigmoid(W[s; c] + b)`. Without `c` the block reduces to
/// `LayerNorm(s + MLP(s))`.
pub fn merge(g: &mut Graph<'_>, s: Var, c: Option<Var>, p: &MergeParams) -> Result<Var> {
    let mixed = match (c, p.gate) {
        (Some(c), Some((w, b))) => {
            let sc = g.concat_rows(&[s, c])?;
            let w = g.param(w);
            let b = g.param(b);
            let beta = g.matmul(w, sc)?;
            let beta = g.add_bias(beta, b)?;
            let beta = g.sigmoid(beta);
            let keep = g.mul(beta, s)?;
            let rest = g.affine(beta, -1.0, 1.0);
            let take = g.mul(rest, c)?;
            g.add(keep, take)?
        }
        (None, None) => s,
        _ => return Err(Error::config("merge gate and relation vector must both be present or absent")),
    };
    let transformed = p.mlp.forward(g, mixed)?;
    let residual = g.add(s, transformed)?;
    let gain = g.param(p.ln_gain);
    let bias = g.param(p.ln_bias);
    Ok(g.layer_norm(residual, gain, bias)?)
}

/// Augmented sentence vector and the per-level attention distributions
/// (`None` for levels without sent2rel attention).
pub fn augment(g: &mut Graph<'_>, s: Var, p: &RelAttnParams) -> Result<(Var, Vec<Option<Var>>)> {
    let mut parts = Vec::with_capacity(p.levels.len());
    let mut alphas = Vec::with_capacity(p.levels.len());
    for level in &p.levels {
        let (alpha, c) = match level.relations {
            Some(r) => {
                let r = g.param(r);
                let (a, c) = sent2rel(g, s, r)?;
                (Some(a), Some(c))
            }
            None => (None, None),
        };
        parts.push(merge(g, s, c, &level.merge)?);
        alphas.push(alpha);
    }
    let u = match p.architecture {
        Architecture::Base => {
            if parts.len() != 1 {
                return Err(Error::config("the base architecture has one level"));
            }
            parts[0]
        }
        Architecture::Collaborating => g.concat_rows(&parts)?,
    };
    Ok((u, alphas))
}

/// `b = U softmax(wᵀU)` over the columns of `U` (`[D, m]`); a missing `w`
/// gives uniform weights. Returns `(b, weights)`.
pub fn attention_pool(g: &mut Graph<'_>, u: Var, w: Option<Var>) -> Result<(Var, Var)> {
    let (d, m) = g.value(u).dims2();
    let weights = match w {
        Some(w) => {
            let wl = g.value(w).len();
            if wl != d {
                return Err(crate::numerics::ShapeError::Mismatch {
                    op: "attention_pool",
                    left: vec![d, m],
                    right: vec![wl],
                }
                .into());
            }
            let row = g.reshape(w, vec![1, d])?;
            let scores = g.matmul(row, u)?;
            let weights = g.softmax(scores)?;
            g.reshape(weights, vec![m])?
        }
        None => g.constant(Array::filled(&[m], 1.0 / m as f64)),
    };
    let b = g.matmul(u, weights)?;
    Ok((b, weights))
}

/// Inverted dropout with a private RNG stream.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = g.constant(Array::new(shape, mask)?);
        Ok(g.mul(x, mask)?)
    }
}

/// Graph handles produced for one bag.
#[derive(Debug, Clone)]
pub struct BagGraph {
    /// Distribution over level-0 relations.
    pub probs: Var,
    /// `alphas[sentence][level]`.
    pub alphas: Vec<Vec<Option<Var>>>,
    pub pool_weights: Var,
}

/// Bag-level forward from encoded sentence vectors.
pub fn bag_forward(
    g: &mut Graph<'_>,
    sentences: &[Var],
    p: &RelAttnParams,
    mut dropout: Option<&mut Dropout>,
) -> Result<BagGraph> {
    if sentences.is_empty() {
        return Err(Error::input("empty bag"));
    }
    let mut us = Vec::with_capacity(sentences.len());
    let mut alphas = Vec::with_capacity(sentences.len());
    for &s in sentences {
        let s = match dropout.as_deref_mut() {
            Some(d) => d.apply(g, s)?,
            None => s,
        };
        let (u, a) = augment(g, s, p)?;
        us.push(u);
        alphas.push(a);
    }
    let stacked = g.stack_cols(&us)?;
    let w = p.head.pool.map(|id| g.param(id));
    let (b, pool_weights) = attention_pool(g, stacked, w)?;
    let b = match dropout {
        Some(d) => d.apply(g, b)?,
        None => b,
    };
    let logits = p.head.classifier.forward(g, b)?;
    let probs = g.softmax(logits)?;
    Ok(BagGraph {
        probs,
        alphas,
        pool_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_columns_give_uniform_attention() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let r = g.constant(Array::matrix(2, 3, vec![0.5, 0.5, 0.5, -1.0, -1.0, -1.0]).unwrap());
        let s = g.constant(Array::vector(vec![0.3, 0.9]).unwrap());
        let (a, c) = sent2rel(&mut g, s, r).unwrap();
        for v in g.value(a).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((g.value(c).data()[0] - 0.5).abs() < 1e-15);
        assert!((g.value(c).data()[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_relation() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let r = g.constant(Array::matrix(2, 1, vec![0.25, 4.0]).unwrap());
        let s = g.constant(Array::vector(vec![7.0, -3.0]).unwrap());
        let (a, c) = sent2rel(&mut g, s, r).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
        assert_eq!(g.value(c).data(), &[0.25, 4.0]);
    }

    #[test]
    fn pooling_singleton_and_uniform() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let u = g.constant(Array::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.constant(Array::vector(vec![5.0, -1.0, 2.0]).unwrap());
        let (b, _) = attention_pool(&mut g, u, Some(w)).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, 2.0, 3.0]);

        let u = g.constant(Array::matrix(2, 2, vec![1.0, 3.0, -2.0, 4.0]).unwrap());
        let w = g.constant(Array::zeros(&[2]));
        let (b, _) = attention_pool(&mut g, u, Some(w)).unwrap();
        assert_eq!(g.value(b).data(), &[2.0, 1.0]);
    }

    #[test]
    fn base_needs_single_level() {
        let mut store = ParameterStore::new();
        let mut rng = rand::rng();
        let r = RelAttnParams::register(
            &mut store,
            Architecture::Base,
            4,
            &[3, 2],
            RelAttnFlags::default(),
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn dropout_zero_is_identity() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(Array::vector(vec![1.0, 2.0]).unwrap());
        let mut d = Dropout::new(0.0, 1);
        assert_eq!(d.apply(&mut g, x).unwrap(), x);
    }
}
