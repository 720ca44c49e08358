//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the tape order is already a
//! topological order and `backward` is a single reverse sweep. Parameter
//! leaves borrow their values from the [`ParameterStore`] the graph was built
//! against; their gradients land in a [`Gradients`] buffer.

use std::collections::HashMap;

use super::array::{self, matmul_into, normalize, sigmoid_scalar, Array};
use super::params::{Gradients, ParamId, ParameterStore};
use super::{GraphError, ShapeError};

/// Probability floor used by [`Graph::neg_log_at`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[m×n] + [m]`, bias broadcast over columns.
    AddBias(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<f64>,
        inv_std: f64,
        bias: Var,
    },
    ConcatRows(Vec<Var>),
    StackCols(Vec<Var>),
    Gather {
        table: Var,
        indices: Vec<usize>,
        skip: Option<usize>,
    },
    Im2Col {
        x: Var,
        window: usize,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<Option<usize>>,
    },
    Sum(Var),
    NegLogAt {
        x: Var,
        index: usize,
        clamped: bool,
    },
}

struct Node {
    value: Option<Array>,
    op: Op,
}

/// A computation graph over one parameter snapshot.
pub struct Graph<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
    clamp_events: usize,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            clamp_events: 0,
        }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of probabilities clamped at [`LOG_CLAMP`] so far.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn value(&self, v: Var) -> &Array {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(a), _) => a,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = array::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, ShapeError> {
        let out = self.value(a).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a)))
    }

    fn binary(&mut self, a: Var, b: Var, kind: array::Elementwise) -> Result<Array, ShapeError> {
        array::elementwise(kind, self.value(a), Some(self.value(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary(a, b, array::Elementwise::Add)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary(a, b, array::Elementwise::Sub)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let out = self.binary(a, b, array::Elementwise::Mul)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a length-`m` bias to every column of an `m×n` (or length-`m`) array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (m, n) = xv.dims2();
        if bv.len() != m {
            return Err(ShapeError::Mismatch {
                op: "add_bias",
                left: xv.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
            let b = bv.data()[i];
            row.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine(x, scale))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid_scalar);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Softmax over every entry of `x` (vectors and `1×n` rows alike).
    pub fn softmax(&mut self, x: Var) -> Result<Var, ShapeError> {
        let out = array::softmax(self.value(x))?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, ShapeError> {
        let out = array::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        let (xhat, inv_std) = normalize(self.value(x).data());
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                xhat,
                inv_std,
                bias,
            },
        ))
    }

    /// Stacks inputs along the first axis. All-vector inputs give a vector.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let first = self.value(parts[0]);
        let cols = first.cols();
        let all_vectors = parts.iter().all(|p| self.value(*p).shape().len() == 1);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(ShapeError::Mismatch {
                    op: "concat_rows",
                    left: first.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let shape = if all_vectors { vec![rows] } else { vec![rows, cols] };
        let out = Array::new(shape, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Places equally sized vectors side by side as the columns of a matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Result<Var, ShapeError> {
        let d = self.value(cols[0]).len();
        let m = cols.len();
        let mut data = vec![0.0; d * m];
        for (j, c) in cols.iter().enumerate() {
            let v = self.value(*c);
            if v.len() != d {
                return Err(ShapeError::Mismatch {
                    op: "stack_cols",
                    left: vec![d],
                    right: v.shape().to_vec(),
                });
            }
            for (i, x) in v.data().iter().enumerate() {
                data[i * m + j] = *x;
            }
        }
        let out = Array::matrix(d, m, data)?;
        Ok(self.push(out, Op::StackCols(cols.to_vec())))
    }

    /// Looks up rows of a `[rows × width]` table; output column `j` is row
    /// `indices[j]`. Rows equal to `skip` receive no gradient.
    pub fn gather(&mut self, table: Var, indices: &[usize], skip: Option<usize>) -> Result<Var, ShapeError> {
        let t = self.value(table);
        let (rows, width) = t.dims2();
        let n = indices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(ShapeError::Invalid {
                shape: t.shape().to_vec(),
                reason: format!("row {bad} out of range"),
            });
        }
        let mut data = vec![0.0; width * n];
        for (j, &idx) in indices.iter().enumerate() {
            for (k, v) in t.row(idx).iter().enumerate() {
                data[k * n + j] = *v;
            }
        }
        let out = Array::matrix(width, n, data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
                skip,
            },
        ))
    }

    /// Unfolds `[d × n]` into `[window·d × n]` with zero padding so that
    /// column `t` holds the window centred at `t`. `window` must be odd.
    pub fn im2col(&mut self, x: Var, window: usize) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        if window.is_multiple_of(2) {
            return Err(ShapeError::Invalid {
                shape: xv.shape().to_vec(),
                reason: format!("window {window} is even"),
            });
        }
        let (d, n) = xv.dims2();
        let half = (window - 1) / 2;
        let mut data = vec![0.0; window * d * n];
        for q in 0..window {
            for t in 0..n {
                let src = t + q;
                if src < half || src - half >= n {
                    continue;
                }
                let s = src - half;
                for i in 0..d {
                    data[(q * d + i) * n + t] = xv.data()[i * n + s];
                }
            }
        }
        let out = Array::matrix(window * d, n, data)?;
        Ok(self.push(out, Op::Im2Col { x, window }))
    }

    /// Per-channel max over column ranges of `[c × n]`; output is segment-major
    /// (`out[s·c + ch]`). Empty segments yield 0 and pass no gradient. Ties go
    /// to the first maximal column.
    pub fn segment_max(&mut self, x: Var, segments: &[std::ops::Range<usize>]) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        let (c, n) = xv.dims2();
        if let Some(bad) = segments.iter().find(|r| r.end > n) {
            return Err(ShapeError::Invalid {
                shape: xv.shape().to_vec(),
                reason: format!("segment {bad:?} out of range"),
            });
        }
        let mut data = vec![0.0; segments.len() * c];
        let mut argmax = vec![None; segments.len() * c];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                continue;
            }
            for ch in 0..c {
                let row = &xv.data()[ch * n..(ch + 1) * n];
                let mut best = seg.start;
                for t in seg.clone() {
                    if row[t] > row[best] {
                        best = t;
                    }
                }
                data[s * c + ch] = row[best];
                argmax[s * c + ch] = Some(best);
            }
        }
        let out = Array::vector(data)?;
        Ok(self.push(out, Op::SegmentMax { x, argmax }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// `-ln(x[index])`, with the probability floored at [`LOG_CLAMP`].
    pub fn neg_log_at(&mut self, x: Var, index: usize) -> Result<Var, ShapeError> {
        let xv = self.value(x);
        let p = *xv.data().get(index).ok_or_else(|| ShapeError::Invalid {
            shape: xv.shape().to_vec(),
            reason: format!("index {index} out of range"),
        })?;
        // NaN counts as clamped
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let clamped = !(p > LOG_CLAMP);
        if clamped {
            self.clamp_events += 1;
            log::warn!("probability {p} clamped at {LOG_CLAMP}");
        }
        let out = Array::scalar(-p.max(LOG_CLAMP).ln());
        Ok(self.push(out, Op::NegLogAt { x, index, clamped }))
    }

    /// Back-propagates from a scalar `loss`, adding parameter gradients into
    /// `grads`. Calling twice accumulates.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<(), GraphError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(GraphError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(d) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let out = self.value(Var(i));
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.add_to(*id, &d),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.dims2();
                    let n = bv.cols();
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            let drow = &d[r * n..(r + 1) * n];
                            da[r * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    let at = av.transpose();
                    matmul_into(at.data(), &d, &mut db, k, m, n);
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::Transpose(a) => {
                    let (r, c) = out.dims2();
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] = d[i * c + j];
                        }
                    }
                    accumulate(&mut adj, *a, &da);
                }
                Op::Reshape(a) => accumulate(&mut adj, *a, &d),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &d);
                    accumulate(&mut adj, *b, &d);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &d);
                    let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    let da: Vec<f64> = d.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = d.iter().zip(av).map(|(g, x)| g * x).collect();
                    accumulate(&mut adj, *a, &da);
                    accumulate(&mut adj, *b, &db);
                }
                Op::AddBias(x, bias) => {
                    let (m, n) = out.dims2();
                    let db: Vec<f64> = (0..m).map(|r| d[r * n..(r + 1) * n].iter().sum()).collect();
                    accumulate(&mut adj, *x, &d);
                    accumulate(&mut adj, *bias, &db);
                }
                Op::Affine(x, scale) => {
                    let dx: Vec<f64> = d.iter().map(|g| g * scale).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Sigmoid(x) => {
                    let dx: Vec<f64> = d.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Tanh(x) => {
                    let dx: Vec<f64> = d.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Softmax(x) => {
                    let y = out.data();
                    let dot: f64 = d.iter().zip(y).map(|(g, p)| g * p).sum();
                    let dx: Vec<f64> = d.iter().zip(y).map(|(g, p)| p * (g - dot)).collect();
                    accumulate(&mut adj, *x, &dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    xhat,
                    inv_std,
                    bias,
                } => {
                    let g = self.value(*gain).data();
                    let dgain: Vec<f64> = d.iter().zip(xhat).map(|(a, h)| a * h).collect();
                    let dxhat: Vec<f64> = d.iter().zip(g).map(|(a, w)| a * w).collect();
                    let len = d.len() as f64;
                    let mean_d = dxhat.iter().sum::<f64>() / len;
                    let mean_dh = dxhat.iter().zip(xhat).map(|(a, h)| a * h).sum::<f64>() / len;
                    let dx: Vec<f64> = dxhat
                        .iter()
                        .zip(xhat)
                        .map(|(a, h)| inv_std * (a - mean_d - h * mean_dh))
                        .collect();
                    accumulate(&mut adj, *x, &dx);
                    accumulate(&mut adj, *gain, &dgain);
                    accumulate(&mut adj, *bias, &d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.value(*p).len();
                        accumulate(&mut adj, *p, &d[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::StackCols(cols) => {
                    let m = cols.len();
                    for (j, c) in cols.iter().enumerate() {
                        let dc: Vec<f64> = d.iter().skip(j).step_by(m).copied().collect();
                        accumulate(&mut adj, *c, &dc);
                    }
                }
                Op::Gather { table, indices, skip } => {
                    let t = self.value(*table);
                    let (rows, width) = t.dims2();
                    let n = indices.len();
                    let mut dt = vec![0.0; rows * width];
                    for (j, &idx) in indices.iter().enumerate() {
                        if Some(idx) == *skip {
                            continue;
                        }
                        for k in 0..width {
                            dt[idx * width + k] += d[k * n + j];
                        }
                    }
                    accumulate(&mut adj, *table, &dt);
                }
                Op::Im2Col { x, window } => {
                    let xv = self.value(*x);
                    let (dim, n) = xv.dims2();
                    let half = (window - 1) / 2;
                    let mut dx = vec![0.0; dim * n];
                    for q in 0..*window {
                        for t in 0..n {
                            let src = t + q;
                            if src < half || src - half >= n {
                                continue;
                            }
                            let s = src - half;
                            for i in 0..dim {
                                dx[i * n + s] += d[(q * dim + i) * n + t];
                            }
                        }
                    }
                    accumulate(&mut adj, *x, &dx);
                }
                Op::SegmentMax { x, argmax } => {
                    let xv = self.value(*x);
                    let (c, n) = xv.dims2();
                    let mut dx = vec![0.0; c * n];
                    for (o, best) in argmax.iter().enumerate() {
                        if let Some(t) = best {
                            let ch = o % c;
                            dx[ch * n + t] += d[o];
                        }
                    }
                    accumulate(&mut adj, *x, &dx);
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    accumulate(&mut adj, *x, &vec![d[0]; len]);
                }
                Op::NegLogAt { x, index, clamped } => {
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.len()];
                    if !clamped {
                        dx[*index] = -d[0] / xv.data()[*index];
                    }
                    accumulate(&mut adj, *x, &dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Array)]) -> (ParameterStore, Vec<ParamId>) {
        let mut store = ParameterStore::new();
        let ids = values.iter().map(|(n, a)| store.insert(*n, a.clone())).collect();
        (store, ids)
    }

    #[test]
    fn constant_loss_has_zero_grads() {
        let (store, ids) = store_with(&[("x", Array::vector(vec![1.0, 2.0]).unwrap())]);
        let mut g = Graph::new(&store);
        let _x = g.param(ids[0]);
        let c = g.constant(Array::scalar(4.0));
        let mut grads = Gradients::for_store(&store);
        g.backward(c, &mut grads).unwrap();
        assert!(grads.dense(&store, ids[0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn square_at_three() {
        let (store, ids) = store_with(&[("x", Array::scalar(3.0))]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let y = g.mul(x, x).unwrap();
        let mut grads = Gradients::for_store(&store);
        g.backward(y, &mut grads).unwrap();
        // central difference with h = 1e-4 is exact for a quadratic: 6
        let h = 1e-4;
        let fd = ((3.0 + h) * (3.0 + h) - (3.0 - h) * (3.0 - h)) / (2.0 * h);
        assert!((grads.get(ids[0]).unwrap()[0] - fd).abs() < 1e-9);
        assert!((fd - 6.0).abs() < 1e-9);

        g.backward(y, &mut grads).unwrap();
        assert!((grads.get(ids[0]).unwrap()[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (store, ids) = store_with(&[("x", Array::vector(vec![1.0, 2.0]).unwrap())]);
        let mut g = Graph::new(&store);
        let x = g.param(ids[0]);
        let mut grads = Gradients::for_store(&store);
        assert!(matches!(g.backward(x, &mut grads), Err(GraphError::NonScalarLoss(_))));
    }

    #[test]
    fn neg_log_clamps() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let p = g.constant(Array::vector(vec![0.0, 1.0]).unwrap());
        let l = g.neg_log_at(p, 0).unwrap();
        assert_eq!(g.clamp_events(), 1);
        assert!((g.scalar(l) - (-LOG_CLAMP.ln())).abs() < 1e-12);
    }

    #[test]
    fn segment_max_ties_go_first() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let h = g.constant(Array::matrix(1, 4, vec![2.0, 2.0, 1.0, 1.0]).unwrap());
        let v = g.segment_max(h, &[0..2, 2..4, 4..4]).unwrap();
        assert_eq!(g.value(v).data(), &[2.0, 1.0, 0.0]);
        let Op::SegmentMax { argmax, .. } = &g.nodes[v.0].op else {
            panic!()
        };
        assert_eq!(argmax, &vec![Some(0), Some(2), None]);
    }
}
