//! Reverse-mode differentiation over a linear tape of recorded operations.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse execution order once, accumulating gradients
//! into every node that (transitively) depends on a leaf created with
//! `requires_grad = true`.

use std::sync::Arc;

use super::scalar::Scalar;
use super::tensor::{split_axis, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Neighbor lists of a graph, indexed by node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Neighborhoods {
    pub lists: Vec<Vec<usize>>,
}

impl Neighborhoods {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Relu(Var),
    Sum {
        input: Var,
        axis: usize,
    },
    Mean {
        input: Var,
        axis: usize,
    },
    SumAll(Var),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    GatherRows {
        table: Var,
        indices: Vec<usize>,
    },
    SegmentMean {
        input: Var,
        segments: Vec<Vec<usize>>,
    },
    WhereRows {
        mask: Vec<bool>,
        on_true: Var,
        on_false: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        ignore: Option<usize>,
        probs: Vec<T>,
        count: usize,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SelfAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        scale: T,
        probs: Vec<T>,
        mask: Option<Vec<T>>,
    },
    GraphAttention {
        center: Var,
        neighbor: Var,
        values: Var,
        graph: Arc<Neighborhoods>,
        heads: usize,
        alpha: Vec<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass; tapes are not shared
/// across threads.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `var`, or `None` when no gradient reached it.
    pub fn get(&self, var: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[var.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient w.r.t. `var`, zero-filled when nothing reached it.
    pub fn get_or_zero(&self, var: Var) -> Tensor<T> {
        self.get(var)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn matrix_dims(shape: &[usize], op: &'static str) -> Result<(usize, usize), NumericsError> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(NumericsError::Rank {
            op,
            expected: 2,
            shape: shape.to_vec(),
        }),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Shorthand for a constant (non-differentiated) leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = matrix_dims(self.shape(a), "matmul")?;
        let (k2, n) = matrix_dims(self.shape(b), "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// `x + b` with `b` broadcast over every leading axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NumericsError> {
        let (_, n) = self.value(x).as_matrix_dims();
        if self.shape(b) != [n] {
            return Err(mismatch("add_bias", self.shape(x), self.shape(b)));
        }
        let bias = self.value(b).data();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % n])
            .collect();
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(value, Op::AddBias(x, b), &[x, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = inputs.first().ok_or(NumericsError::Empty("concat"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::Axis {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Axis {
                op: "slice",
                axis,
                shape,
            });
        }
        if start + len > shape[axis] {
            return Err(NumericsError::SliceRange {
                start,
                len,
                size: shape[axis],
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(value, Op::Slice { input: x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (r, c) = matrix_dims(self.shape(x), "transpose")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(&[c, r], data)?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Axis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| o * n * inner + k * inner + i;
                let mut max = T::neg_infinity();
                for k in 0..n {
                    max = max.max(data[idx(k)]);
                }
                let mut total = T::zero();
                for k in 0..n {
                    let e = (data[idx(k)] - max).exp();
                    data[idx(k)] = e;
                    total += e;
                }
                for k in 0..n {
                    data[idx(k)] /= total;
                }
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Softmax { input: x, axis }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let (value, _) = self.reduce(x, axis, "sum")?;
        Ok(self.push(value, Op::Sum { input: x, axis }, &[x]))
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        let (value, n) = self.reduce(x, axis, "mean")?;
        let scale = T::one() / T::from_usize(n.max(1)).unwrap();
        let value = value.map(|v| v * scale);
        Ok(self.push(value, Op::Mean { input: x, axis }, &[x]))
    }

    fn reduce(
        &self,
        x: Var,
        axis: usize,
        op: &'static str,
    ) -> Result<(Tensor<T>, usize), NumericsError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(NumericsError::Axis { op, axis, shape });
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = o * n * inner + k * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok((Tensor::new(&out_shape, data)?, n))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll(x), &[x])
    }

    /// Inverted dropout with an explicit keep mask (entries `0` or `1/(1-p)`).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var, NumericsError> {
        if mask.len() != self.value(x).len() {
            return Err(mismatch("dropout", self.shape(x), &[mask.len()]));
        }
        let data = zip_map(self.value(x).data(), &mask, |a, m| a * m);
        let value = Tensor::new(self.shape(x), data)?;
        Ok(self.push(value, Op::Dropout { input: x, mask }, &[x]))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, NumericsError> {
        if !train || p <= 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), p, rng);
        self.dropout_with_mask(x, mask)
    }

    /// Row lookup: `out[i] = table[indices[i]]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (rows, cols) = matrix_dims(self.shape(table), "gather_rows")?;
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &ix in indices {
            if ix >= rows {
                return Err(NumericsError::Index { index: ix, size: rows });
            }
            data.extend_from_slice(&src[ix * cols..(ix + 1) * cols]);
        }
        let value = Tensor::new(&[indices.len(), cols], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        ))
    }

    /// Embedding lookup is a row gather on the table.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.gather_rows(table, ids)
    }

    /// Mean of the listed rows, one output row per segment.
    pub fn segment_mean(
        &mut self,
        x: Var,
        segments: &[Vec<usize>],
    ) -> Result<Var, NumericsError> {
        let (rows, cols) = matrix_dims(self.shape(x), "segment_mean")?;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); segments.len() * cols];
        for (s, seg) in segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(NumericsError::Empty("segment_mean segment"));
            }
            let w = T::one() / T::from_usize(seg.len()).unwrap();
            for &r in seg {
                if r >= rows {
                    return Err(NumericsError::Index { index: r, size: rows });
                }
                for c in 0..cols {
                    data[s * cols + c] += src[r * cols + c] * w;
                }
            }
        }
        let value = Tensor::new(&[segments.len(), cols], data)?;
        Ok(self.push(
            value,
            Op::SegmentMean {
                input: x,
                segments: segments.to_vec(),
            },
            &[x],
        ))
    }

    /// Row-wise select: row `i` comes from `on_true` when `mask[i]`, else `on_false`.
    pub fn where_rows(
        &mut self,
        mask: &[bool],
        on_true: Var,
        on_false: Var,
    ) -> Result<Var, NumericsError> {
        if self.shape(on_true) != self.shape(on_false) {
            return Err(mismatch("where_rows", self.shape(on_true), self.shape(on_false)));
        }
        let (rows, cols) = matrix_dims(self.shape(on_true), "where_rows")?;
        if mask.len() != rows {
            return Err(mismatch("where_rows", self.shape(on_true), &[mask.len()]));
        }
        let a = self.value(on_true).data();
        let b = self.value(on_false).data();
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { a } else { b };
            data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(&[rows, cols], data)?;
        Ok(self.push(
            value,
            Op::WhereRows {
                mask: mask.to_vec(),
                on_true,
                on_false,
            },
            &[on_true, on_false],
        ))
    }

    /// Mean softmax cross-entropy over rows of `logits` whose label differs from
    /// `ignore`. Zero when every row is ignored.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        ignore: Option<usize>,
    ) -> Result<Var, NumericsError> {
        let (rows, classes) = matrix_dims(self.shape(logits), "cross_entropy")?;
        if labels.len() != rows {
            return Err(mismatch("cross_entropy", self.shape(logits), &[labels.len()]));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = T::zero();
        let mut count = 0;
        for r in 0..rows {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * classes + c] = e;
                z += e;
            }
            for c in 0..classes {
                probs[r * classes + c] /= z;
            }
            let label = labels[r];
            if Some(label) == ignore {
                continue;
            }
            if label >= classes {
                return Err(NumericsError::Index {
                    index: label,
                    size: classes,
                });
            }
            total += max + z.ln() - row[label];
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (rows, n) = self.value(x).as_matrix_dims();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let nf = T::from_usize(n).unwrap();
        let eps = T::lit(eps);
        let mut xhat = vec![T::zero(); rows * n];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Unmasked multi-head scaled dot-product attention over the rows of `q`, `k`, `v`
    /// (each `L×d`). Heads use contiguous `d/heads` column blocks and are concatenated
    /// in the output. `dropout_mask`, when given, has `heads·L·L` entries applied to
    /// the attention weights.
    pub fn self_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        dropout_mask: Option<Vec<T>>,
    ) -> Result<Var, NumericsError> {
        let (l, d) = matrix_dims(self.shape(q), "self_attention")?;
        if self.shape(k) != [l, d] || self.shape(v) != [l, d] {
            return Err(mismatch("self_attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Heads { dim: d, heads });
        }
        if let Some(m) = &dropout_mask {
            if m.len() != heads * l * l {
                return Err(mismatch("self_attention mask", &[heads, l, l], &[m.len()]));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * l * l];
        let mut out = vec![T::zero(); l * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..l {
                let p = &mut probs[(h * l + i) * l..(h * l + i + 1) * l];
                let mut max = T::neg_infinity();
                for j in 0..l {
                    let mut s = T::zero();
                    for c in 0..dh {
                        s += qd[i * d + off + c] * kd[j * d + off + c];
                    }
                    p[j] = s * scale;
                    max = max.max(p[j]);
                }
                let mut z = T::zero();
                for pj in p.iter_mut() {
                    *pj = (*pj - max).exp();
                    z += *pj;
                }
                for pj in p.iter_mut() {
                    *pj /= z;
                }
                for j in 0..l {
                    let mut w = p[j];
                    if let Some(m) = &dropout_mask {
                        w *= m[(h * l + i) * l + j];
                    }
                    if w == T::zero() {
                        continue;
                    }
                    for c in 0..dh {
                        out[i * d + off + c] += w * vd[j * d + off + c];
                    }
                }
            }
        }
        let value = Tensor::new(&[l, d], out)?;
        Ok(self.push(
            value,
            Op::SelfAttention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
                mask: dropout_mask,
            },
            &[q, k, v],
        ))
    }

    /// Softmax attention restricted to graph neighborhoods.
    ///
    /// For node `u`, head `h` and neighbor `v ∈ N(u)` the score is
    /// `neighbor[v]_h · center[u]_h`; the output block is
    /// `Σ_v softmax_v(score) · values[v]_h`. Nodes with no neighbors produce zeros.
    pub fn graph_attention(
        &mut self,
        center: Var,
        neighbor: Var,
        values: Var,
        graph: Arc<Neighborhoods>,
        heads: usize,
    ) -> Result<Var, NumericsError> {
        let (n, d) = matrix_dims(self.shape(center), "graph_attention")?;
        if self.shape(neighbor) != [n, d] || self.shape(values) != [n, d] {
            return Err(mismatch("graph_attention", self.shape(center), self.shape(neighbor)));
        }
        if graph.len() != n {
            return Err(mismatch("graph_attention graph", &[n, d], &[graph.len()]));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Heads { dim: d, heads });
        }
        let dh = d / heads;
        let (cd, nd, vd) = (
            self.value(center).data(),
            self.value(neighbor).data(),
            self.value(values).data(),
        );
        let mut out = vec![T::zero(); n * d];
        let mut alpha = Vec::with_capacity(n);
        for (u, list) in graph.lists.iter().enumerate() {
            let deg = list.len();
            let mut a = vec![T::zero(); deg * heads];
            for &v in list {
                if v >= n {
                    return Err(NumericsError::Index { index: v, size: n });
                }
            }
            for h in 0..heads {
                let off = h * dh;
                let mut max = T::neg_infinity();
                for (e, &v) in list.iter().enumerate() {
                    let mut s = T::zero();
                    for c in 0..dh {
                        s += nd[v * d + off + c] * cd[u * d + off + c];
                    }
                    a[e * heads + h] = s;
                    max = max.max(s);
                }
                let mut z = T::zero();
                for e in 0..deg {
                    let w = (a[e * heads + h] - max).exp();
                    a[e * heads + h] = w;
                    z += w;
                }
                for (e, &v) in list.iter().enumerate() {
                    a[e * heads + h] /= z;
                    let w = a[e * heads + h];
                    for c in 0..dh {
                        out[u * d + off + c] += w * vd[v * d + off + c];
                    }
                }
            }
            alpha.push(a);
        }
        let value = Tensor::new(&[n, d], out)?;
        Ok(self.push(
            value,
            Op::GraphAttention {
                center,
                neighbor,
                values,
                graph,
                heads,
                alpha,
            },
            &[center, neighbor, values],
        ))
    }

    /// Pre-dropout attention probabilities (`heads × L × L`) of a
    /// [`Tape::self_attention`] node.
    pub fn attention_weights(&self, var: Var) -> Option<&[T]> {
        match &self.nodes[var.0].op {
            Op::SelfAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Per-node attention weights of a [`Tape::graph_attention`] node, laid out as
    /// `[neighbor_index * heads + head]`.
    pub fn graph_attention_weights(&self, var: Var) -> Option<&[Vec<T>]> {
        match &self.nodes[var.0].op {
            Op::GraphAttention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Back-propagates from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(root).len() != 1 {
            return Err(NumericsError::NonScalar(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..=root.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.nodes[a.0].value.as_matrix_dims();
                let n = node.value.shape()[1];
                if wants(*a) {
                    let ga = matmul_bt(g, val(*b), m, n, k);
                    accumulate(grads, *a, &ga);
                }
                if wants(*b) {
                    let gb = matmul_at(val(*a), g, m, k, n);
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, g);
                }
                if wants(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::AddBias(x, b) => {
                if wants(*x) {
                    accumulate(grads, *x, g);
                }
                if wants(*b) {
                    let n = self.nodes[b.0].value.len();
                    let mut gb = vec![T::zero(); n];
                    for (i, &v) in g.iter().enumerate() {
                        gb[i % n] += v;
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(grads, *a, &zip_map(g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    accumulate(grads, *b, &zip_map(g, val(*a), |x, y| x * y));
                }
            }
            Op::Scale(x, f) => {
                let gx: Vec<T> = g.iter().map(|&v| v * *f).collect();
                accumulate(grads, *x, &gx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let n = self.nodes[v.0].value.shape()[*axis];
                    if wants(*v) {
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = o * total * inner + offset * inner;
                            gv.extend_from_slice(&g[base..base + n * inner]);
                        }
                        accumulate(grads, *v, &gv);
                    }
                    offset += n;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[input.0].value.shape();
                let (outer, n, inner) = split_axis(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(grads, *input, &gx);
            }
            Op::Reshape(x) => accumulate(grads, *x, g),
            Op::Transpose(x) => {
                let (r, c) = self.nodes[x.0].value.as_matrix_dims();
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(grads, *x, &gx);
            }
            Op::Softmax { input, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| o * n * inner + k * inner + i;
                        let dot: T = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *input, &gx);
            }
            Op::Relu(x) => {
                let gx = zip_map(g, val(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() });
                accumulate(grads, *x, &gx);
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let in_shape = self.nodes[input.0].value.shape();
                let (outer, n, inner) = split_axis(in_shape, *axis);
                let w = match node.op {
                    Op::Mean { .. } => T::one() / T::from_usize(n.max(1)).unwrap(),
                    _ => T::one(),
                };
                let mut gx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gx[o * n * inner + k * inner + i] = g[o * inner + i] * w;
                        }
                    }
                }
                accumulate(grads, *input, &gx);
            }
            Op::SumAll(x) => {
                let gx = vec![g[0]; self.nodes[x.0].value.len()];
                accumulate(grads, *x, &gx);
            }
            Op::Dropout { input, mask } => {
                accumulate(grads, *input, &zip_map(g, mask, |a, m| a * m));
            }
            Op::GatherRows { table, indices } => {
                let (rows, cols) = self.nodes[table.0].value.as_matrix_dims();
                let mut gt = vec![T::zero(); rows * cols];
                for (i, &ix) in indices.iter().enumerate() {
                    for c in 0..cols {
                        gt[ix * cols + c] += g[i * cols + c];
                    }
                }
                accumulate(grads, *table, &gt);
            }
            Op::SegmentMean { input, segments } => {
                let (rows, cols) = self.nodes[input.0].value.as_matrix_dims();
                let mut gx = vec![T::zero(); rows * cols];
                for (s, seg) in segments.iter().enumerate() {
                    let w = T::one() / T::from_usize(seg.len()).unwrap();
                    for &r in seg {
                        for c in 0..cols {
                            gx[r * cols + c] += g[s * cols + c] * w;
                        }
                    }
                }
                accumulate(grads, *input, &gx);
            }
            Op::WhereRows {
                mask,
                on_true,
                on_false,
            } => {
                let cols = node.value.shape()[1];
                for (target, keep) in [(*on_true, true), (*on_false, false)] {
                    if !wants(target) {
                        continue;
                    }
                    let mut gx = vec![T::zero(); g.len()];
                    for (r, &m) in mask.iter().enumerate() {
                        if m == keep {
                            gx[r * cols..(r + 1) * cols]
                                .copy_from_slice(&g[r * cols..(r + 1) * cols]);
                        }
                    }
                    accumulate(grads, target, &gx);
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                ignore,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let classes = self.nodes[logits.0].value.shape()[1];
                let w = g[0] / T::from_usize(*count).unwrap();
                let mut gx = vec![T::zero(); probs.len()];
                for (r, &label) in labels.iter().enumerate() {
                    if Some(label) == *ignore {
                        continue;
                    }
                    for c in 0..classes {
                        let target = if c == label { T::one() } else { T::zero() };
                        gx[r * classes + c] = (probs[r * classes + c] - target) * w;
                    }
                }
                accumulate(grads, *logits, &gx);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = self.nodes[gamma.0].value.len();
                let rows = inv_std.len();
                let gm = val(*gamma);
                if wants(*gamma) || wants(*beta) {
                    let mut gg = vec![T::zero(); n];
                    let mut gb = vec![T::zero(); n];
                    for r in 0..rows {
                        for c in 0..n {
                            gg[c] += g[r * n + c] * xhat[r * n + c];
                            gb[c] += g[r * n + c];
                        }
                    }
                    if wants(*gamma) {
                        accumulate(grads, *gamma, &gg);
                    }
                    if wants(*beta) {
                        accumulate(grads, *beta, &gb);
                    }
                }
                if wants(*input) {
                    let nf = T::from_usize(n).unwrap();
                    let mut gx = vec![T::zero(); rows * n];
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for c in 0..n {
                            let dh = g[r * n + c] * gm[c];
                            s1 += dh;
                            s2 += dh * xhat[r * n + c];
                        }
                        for c in 0..n {
                            let dh = g[r * n + c] * gm[c];
                            gx[r * n + c] =
                                inv_std[r] / nf * (nf * dh - s1 - xhat[r * n + c] * s2);
                        }
                    }
                    accumulate(grads, *input, &gx);
                }
            }
            Op::SelfAttention {
                q,
                k,
                v,
                heads,
                scale,
                probs,
                mask,
            } => {
                let (l, d) = self.nodes[q.0].value.as_matrix_dims();
                let dh = d / heads;
                let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                let mut gq = vec![T::zero(); l * d];
                let mut gk = vec![T::zero(); l * d];
                let mut gv = vec![T::zero(); l * d];
                let mut dp = vec![T::zero(); l];
                for h in 0..*heads {
                    let off = h * dh;
                    for i in 0..l {
                        let p = &probs[(h * l + i) * l..(h * l + i + 1) * l];
                        let m = mask.as_ref().map(|m| &m[(h * l + i) * l..(h * l + i + 1) * l]);
                        let go = &g[i * d + off..i * d + off + dh];
                        for j in 0..l {
                            let keep = m.map_or(T::one(), |m| m[j]);
                            let mut s = T::zero();
                            for c in 0..dh {
                                s += go[c] * vd[j * d + off + c];
                            }
                            dp[j] = s * keep;
                            let w = p[j] * keep;
                            if w != T::zero() {
                                for c in 0..dh {
                                    gv[j * d + off + c] += w * go[c];
                                }
                            }
                        }
                        let dot: T = (0..l).map(|j| dp[j] * p[j]).sum();
                        for j in 0..l {
                            let ds = p[j] * (dp[j] - dot) * *scale;
                            if ds == T::zero() {
                                continue;
                            }
                            for c in 0..dh {
                                gq[i * d + off + c] += ds * kd[j * d + off + c];
                                gk[j * d + off + c] += ds * qd[i * d + off + c];
                            }
                        }
                    }
                }
                accumulate(grads, *q, &gq);
                accumulate(grads, *k, &gk);
                accumulate(grads, *v, &gv);
            }
            Op::GraphAttention {
                center,
                neighbor,
                values,
                graph,
                heads,
                alpha,
            } => {
                let (n, d) = self.nodes[center.0].value.as_matrix_dims();
                let dh = d / heads;
                let (cd, nd, vd) = (val(*center), val(*neighbor), val(*values));
                let mut gc = vec![T::zero(); n * d];
                let mut gn = vec![T::zero(); n * d];
                let mut gvals = vec![T::zero(); n * d];
                for (u, list) in graph.lists.iter().enumerate() {
                    let a = &alpha[u];
                    let deg = list.len();
                    let mut da = vec![T::zero(); deg];
                    for h in 0..*heads {
                        let off = h * dh;
                        let go = &g[u * d + off..u * d + off + dh];
                        for (e, &v) in list.iter().enumerate() {
                            let w = a[e * heads + h];
                            let mut s = T::zero();
                            for c in 0..dh {
                                s += go[c] * vd[v * d + off + c];
                                gvals[v * d + off + c] += w * go[c];
                            }
                            da[e] = s;
                        }
                        let dot: T = (0..deg).map(|e| da[e] * a[e * heads + h]).sum();
                        for (e, &v) in list.iter().enumerate() {
                            let ds = a[e * heads + h] * (da[e] - dot);
                            for c in 0..dh {
                                gn[v * d + off + c] += ds * cd[u * d + off + c];
                                gc[u * d + off + c] += ds * nd[v * d + off + c];
                            }
                        }
                    }
                }
                accumulate(grads, *center, &gc);
                accumulate(grads, *neighbor, &gn);
                accumulate(grads, *values, &gvals);
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], var: Var, g: &[T]) {
    match &mut grads[var.0] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Keep mask for inverted dropout: each entry is `0` with probability `p`,
/// otherwise `1/(1-p)`.
pub fn dropout_mask<T: Scalar, R: rand::Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// `a (m×k) · b (k×n)`.
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (m×n) · bᵀ` where `b` is `k×n`.
fn matmul_bt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
fn matmul_at<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}
