//! Piecewise convolutional sentence encoder.

use std::ops::Range;

use rand::Rng;

use crate::embedding::{embed_sentence, xavier, EmbeddingParams, SentenceInput};
use crate::numerics::{Array, Graph, ParamId, ParameterStore, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcnnParams {
    /// `[d_c, window * d_x]`, flattened from `[d_c, window, d_x]`.
    pub kernel: ParamId,
    pub bias: ParamId,
    pub window: usize,
    pub channels: usize,
}

impl PcnnParams {
    pub fn register(
        store: &mut ParameterStore,
        channels: usize,
        window: usize,
        input_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if window.is_multiple_of(2) {
            return Err(Error::config(format!("convolution window {window} must be odd")));
        }
        let kernel = store.insert("encoder.kernel", xavier(channels, window * input_width, rng));
        let bias = store.insert("encoder.bias", Array::zeros(&[channels]));
        Ok(Self {
            kernel,
            bias,
            window,
            channels,
        })
    }

    /// Sentence representation width `d_h = 3 * d_c`.
    pub fn output_width(&self) -> usize {
        3 * self.channels
    }
}

/// Same-length 1-D convolution over the columns of `x` (`[d_x, n]`).
pub fn conv1d(g: &mut Graph<'_>, x: Var, p: &PcnnParams) -> Result<Var> {
    if p.window.is_multiple_of(2) {
        return Err(Error::config(format!("convolution window {} must be odd", p.window)));
    }
    let cols = g.im2col(x, p.window)?;
    let k = g.param(p.kernel);
    let b = g.param(p.bias);
    let h = g.matmul(k, cols)?;
    Ok(g.add_bias(h, b)?)
}

/// Column ranges `[0..=p1]`, `[p1+1..=p2]`, `[p2+1..n)` with `p1 < p2` the
/// sorted entity positions. The last range may be empty.
pub fn segments(n: usize, head: usize, tail: usize) -> Result<[Range<usize>; 3]> {
    if head >= n || tail >= n {
        return Err(Error::input(format!(
            "entity position out of range (head {head}, tail {tail}, length {n})"
        )));
    }
    if head == tail {
        return Err(Error::input(format!("head and tail share position {head}")));
    }
    let (p1, p2) = (head.min(tail), head.max(tail));
    Ok([0..p1 + 1, p1 + 1..p2 + 1, p2 + 1..n])
}

/// `tanh([max(H1); max(H2); max(H3)])`, length `3 * d_c`.
pub fn piecewise_pool(g: &mut Graph<'_>, h: Var, head: usize, tail: usize) -> Result<Var> {
    let n = g.value(h).cols();
    let segs = segments(n, head, tail)?;
    let pooled = g.segment_max(h, &segs)?;
    Ok(g.tanh(pooled))
}

/// Embedding, convolution and piecewise pooling for one sentence.
pub fn encode(g: &mut Graph<'_>, emb: &EmbeddingParams, pcnn: &PcnnParams, s: &SentenceInput) -> Result<Var> {
    let x = embed_sentence(g, emb, s)?;
    let h = conv1d(g, x, pcnn)?;
    piecewise_pool(g, h, s.head, s.tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_segments() {
        let [a, b, c] = segments(3, 0, 2).unwrap();
        assert_eq!((a, b, c), (0..1, 1..3, 3..3));
        let [a, b, c] = segments(6, 4, 1).unwrap();
        assert_eq!((a, b, c), (0..2, 2..5, 5..6));
        assert!(segments(3, 1, 1).is_err());
        assert!(segments(3, 0, 3).is_err());
    }

    #[test]
    fn constant_field_pools_to_tanh_c() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let h = g.constant(Array::filled(&[2, 5], 0.7));
        let s = piecewise_pool(&mut g, h, 1, 3).unwrap();
        assert!(g.value(s).data().iter().all(|v| *v == 0.7f64.tanh()));
        assert_eq!(g.value(s).len(), 6);
    }

    #[test]
    fn empty_third_segment_is_zero() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let h = g.constant(Array::matrix(1, 3, vec![0.1, 0.9, 0.4]).unwrap());
        let s = piecewise_pool(&mut g, h, 0, 2).unwrap();
        assert_eq!(g.value(s).data(), &[0.1f64.tanh(), 0.9f64.tanh(), 0.0]);
    }

    #[test]
    fn even_window_rejected() {
        let mut store = ParameterStore::new();
        let mut rng = rand::rng();
        assert!(PcnnParams::register(&mut store, 2, 4, 3, &mut rng).is_err());
    }
}
