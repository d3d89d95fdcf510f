//! Reverse-mode automatic differentiation over a recorded operation list.
//!
//! Operations evaluate eagerly, appending one node per result. Calling
//! [`Tape::backward`] walks the record in reverse and accumulates
//! gradients into the originating [`ParamSet`]. Parameter leaves are
//! cached, so a weight used in several places receives the sum of all
//! its contributions.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Mode, ParamId, ParamSet, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
}

enum Op<S: Scalar> {
    Leaf {
        param: Option<ParamId>,
    },
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Scale(usize, S),
    AddScalar(usize, S),
    Log(usize),
    Clamp {
        x: usize,
        lo: S,
        hi: S,
    },
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        scale: usize,
        shift: usize,
        eps: S,
    },
    Dropout {
        x: usize,
        keep: Tensor<S>,
        factor: S,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
        end: usize,
    },
    Row {
        x: usize,
        index: usize,
    },
    Sum(usize),
}

struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Gradients of every recorded value, indexed by [`Var`]. Returned by
/// [`Tape::backward`] so tests can inspect intermediate gradients.
pub struct Grads<S: Scalar> {
    by_node: Vec<Tensor<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn of(&self, var: Var) -> &Tensor<S> {
        &self.by_node[var.idx]
    }
}

/// Records a computation and differentiates it in reverse.
///
/// A tape caches parameter leaves by [`ParamId`], so each tape must
/// be used with exactly one [`ParamSet`] for its whole life.
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    param_vars: HashMap<ParamId, usize>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.idx].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.idx].value.shape()
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node { op, value });
        Var { idx }
    }

    /// Enters a parameter as a leaf. Repeated calls for the same id
    /// return the same variable, which is what makes shared weights
    /// accumulate gradients from every use site.
    pub fn param(&mut self, params: &ParamSet<S>, id: ParamId) -> Var {
        if let Some(&idx) = self.param_vars.get(&id) {
            return Var { idx };
        }
        let value = params.get(id).value.clone();
        let var = self.push(Op::Leaf { param: Some(id) }, value);
        self.param_vars.insert(id, var.idx);
        var
    }

    /// Enters a non-learnable tensor as a leaf.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Leaf { param: None }, value)
    }

    fn rank2(&self, var: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(var);
        if s.len() != 2 {
            return Err(Error::Dimension {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    /// `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.rank2(a, "matmul")?;
        let (kb, n) = self.rank2(b, "matmul")?;
        if ka != kb {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let value = mm(self.value(a), self.value(b));
        debug_assert_eq!(value.shape(), &[m, n]);
        Ok(self.push(Op::Matmul(a.idx, b.idx), value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.rank2(a, "transpose")?;
        let value = transpose(self.value(a));
        Ok(self.push(Op::Transpose(a.idx), value))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a.idx, b.idx), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a.idx, b.idx), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a.idx, b.idx), value))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.rank2(a, "add_row")?;
        let row_len = match self.shape(row) {
            [n] => *n,
            [1, n] => *n,
            other => {
                return Err(Error::Dimension {
                    op: "add_row",
                    lhs: vec![r, c],
                    rhs: other.to_vec(),
                })
            }
        };
        if row_len != c {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: vec![r, c],
                rhs: self.shape(row).to_vec(),
            });
        }
        let rv = self.value(row).data().to_vec();
        let av = self.value(a);
        let mut out = av.clone();
        for i in 0..r {
            for j in 0..c {
                out.data_mut()[i * c + j] += rv[j];
            }
        }
        Ok(self.push(Op::AddRow(a.idx, row.idx), out))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| if x > S::zero() { x } else { S::zero() });
        self.push(Op::Relu(a.idx), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = map(self.value(a), |x| x.tanh());
        self.push(Op::Tanh(a.idx), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = S::one();
        let value = map(self.value(a), |x| one / (one + (-x).exp()));
        self.push(Op::Sigmoid(a.idx), value)
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let value = map(self.value(a), |x| x * c);
        self.push(Op::Scale(a.idx, c), value)
    }

    pub fn add_scalar(&mut self, a: Var, c: S) -> Var {
        let value = map(self.value(a), |x| x + c);
        self.push(Op::AddScalar(a.idx, c), value)
    }

    /// Natural log; every element must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= S::zero()) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let value = map(self.value(a), |x| x.ln());
        Ok(self.push(Op::Log(a.idx), value))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping bit.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        if lo > hi {
            return Err(Error::Domain("clamp bounds out of order".into()));
        }
        let value = map(self.value(a), |x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        });
        Ok(self.push(Op::Clamp { x: a.idx, lo, hi }, value))
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rank2(a, "softmax_rows")?;
        if c == 0 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                lhs: vec![r, c],
                rhs: vec![],
            });
        }
        let av = self.value(a);
        let mut out = Tensor::zeros(vec![r, c]);
        for i in 0..r {
            let row = &av.data()[i * c..(i + 1) * c];
            let max = row.iter().fold(row[0], |m, &x| if x > m { x } else { m });
            let mut denom = S::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                out.data_mut()[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                out.data_mut()[i * c + j] = out.data()[i * c + j] / denom;
            }
        }
        Ok(self.push(Op::SoftmaxRows(a.idx), out))
    }

    /// Per-row normalization to zero mean and unit variance (biased),
    /// then an affine map by `scale` and `shift` vectors of width `cols`.
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: S) -> Result<Var> {
        let (r, c) = self.rank2(x, "layer_norm")?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: vec![r, c],
                rhs: vec![self.value(scale).len(), self.value(shift).len()],
            });
        }
        let xv = self.value(x);
        let sv = self.value(scale).data().to_vec();
        let bv = self.value(shift).data().to_vec();
        let mut out = Tensor::zeros(vec![r, c]);
        let n = S::of(c as f64);
        for i in 0..r {
            let row = &xv.data()[i * c..(i + 1) * c];
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = S::zero();
            for &v in row {
                let d = v - mean;
                var += d * d;
            }
            var = var / n;
            let denom = (var + eps).sqrt();
            for j in 0..c {
                let norm = (row[j] - mean) / denom;
                out.data_mut()[i * c + j] = sv[j] * norm + bv[j];
            }
        }
        Ok(self.push(
            Op::LayerNorm {
                x: x.idx,
                scale: scale.idx,
                shift: shift.idx,
                eps,
            },
            out,
        ))
    }

    /// Inverted dropout. In [`Mode::Eval`] or at rate zero this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep_prob = 1.0 - rate;
        let len = self.value(x).len();
        let mut keep = Tensor::zeros(self.shape(x).to_vec());
        for slot in keep.data_mut() {
            if rng.random::<f64>() < keep_prob {
                *slot = S::one();
            }
        }
        let factor = S::of(1.0 / keep_prob);
        let value = {
            let xv = self.value(x);
            let mut out = xv.clone();
            for k in 0..len {
                out.data_mut()[k] = xv.data()[k] * keep.data()[k] * factor;
            }
            out
        };
        Ok(self.push(
            Op::Dropout {
                x: x.idx,
                keep,
                factor,
            },
            value,
        ))
    }

    /// Selects rows of `table` by index: `out[t, :] = table[indices[t], :]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, cols) = self.rank2(table, "gather")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Domain(format!(
                "gather index {bad} out of range for {rows} rows"
            )));
        }
        let tv = self.value(table);
        let mut out = Tensor::zeros(vec![indices.len(), cols]);
        for (t, &i) in indices.iter().enumerate() {
            out.data_mut()[t * cols..(t + 1) * cols]
                .copy_from_slice(&tv.data()[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            Op::Gather {
                table: table.idx,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    /// Joins matrices side by side; all inputs must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension {
                op: "concat_cols",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let (rows, _) = self.rank2(parts[0], "concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.rank2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += c;
        }
        let mut out = Tensor::zeros(vec![rows, total]);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let c = pv.cols();
            for i in 0..rows {
                for j in 0..c {
                    out.data_mut()[i * total + offset + j] = pv.data()[i * c + j];
                }
            }
            offset += c;
        }
        Ok(self.push(Op::ConcatCols(parts.iter().map(|v| v.idx).collect()), out))
    }

    /// Stacks matrices vertically; all inputs must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Dimension {
                op: "concat_rows",
                lhs: vec![],
                rhs: vec![],
            });
        }
        let (_, cols) = self.rank2(parts[0], "concat_rows")?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.rank2(p, "concat_rows")?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += r;
        }
        let mut out = Tensor::zeros(vec![total, cols]);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let r = pv.rows();
            out.data_mut()[offset * cols..(offset + r) * cols].copy_from_slice(pv.data());
            offset += r;
        }
        Ok(self.push(Op::ConcatRows(parts.iter().map(|v| v.idx).collect()), out))
    }

    /// Keeps columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.rank2(a, "slice_cols")?;
        if start >= end || end > cols {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![rows, cols],
                rhs: vec![start, end],
            });
        }
        let av = self.value(a);
        let width = end - start;
        let mut out = Tensor::zeros(vec![rows, width]);
        for i in 0..rows {
            for j in 0..width {
                out.data_mut()[i * width + j] = av.data()[i * cols + start + j];
            }
        }
        Ok(self.push(
            Op::SliceCols {
                x: a.idx,
                start,
                end,
            },
            out,
        ))
    }

    /// Extracts row `index` as `[1 x cols]`.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let (rows, cols) = self.rank2(a, "row")?;
        if index >= rows {
            return Err(Error::Dimension {
                op: "row",
                lhs: vec![rows, cols],
                rhs: vec![index],
            });
        }
        let av = self.value(a);
        let out = Tensor::row_vector(av.data()[index * cols..(index + 1) * cols].to_vec());
        Ok(self.push(Op::Row { x: a.idx, index }, out))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = S::zero();
        for &v in self.value(a).data() {
            acc += v;
        }
        self.push(Op::Sum(a.idx), Tensor::scalar(acc))
    }

    /// Backpropagates from a single-element `loss`, adding parameter
    /// gradients into `params.grad`. Returns all node gradients for
    /// inspection.
    pub fn backward(&self, loss: Var, params: &mut ParamSet<S>) -> Result<Grads<S>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Tensor<S>> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[loss.idx].data_mut()[0] = S::one();

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::replace(&mut grads[i], Tensor::zeros(vec![0]));
            if g.data().iter().all(|&v| v == S::zero()) {
                grads[i] = g;
                continue;
            }
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        let slot = &mut params.get_mut(*id).grad;
                        for (dst, &src) in slot.data_mut().iter_mut().zip(g.data()) {
                            *dst += src;
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let bv_t = transpose(&self.nodes[*b].value);
                    let av_t = transpose(&self.nodes[*a].value);
                    let da = mm(&g, &bv_t);
                    let db = mm(&av_t, &g);
                    add_into(&mut grads[*a], &da);
                    add_into(&mut grads[*b], &db);
                }
                Op::Transpose(a) => {
                    let da = transpose(&g);
                    add_into(&mut grads[*a], &da);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[*a], &g);
                    add_into(&mut grads[*b], &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[*a], &g);
                    sub_into(&mut grads[*b], &g);
                }
                Op::Mul(a, b) => {
                    let da = zip(&g, &self.nodes[*b].value, |x, y| x * y);
                    let db = zip(&g, &self.nodes[*a].value, |x, y| x * y);
                    add_into(&mut grads[*a], &da);
                    add_into(&mut grads[*b], &db);
                }
                Op::AddRow(a, row) => {
                    add_into(&mut grads[*a], &g);
                    let c = self.nodes[*row].value.len();
                    let r = g.len() / c;
                    let row_grad = grads[*row].data_mut();
                    for i2 in 0..r {
                        for j in 0..c {
                            row_grad[j] += g.data()[i2 * c + j];
                        }
                    }
                }
                Op::Relu(a) => {
                    let da = zip(&g, &self.nodes[*a].value, |gv, xv| {
                        if xv > S::zero() {
                            gv
                        } else {
                            S::zero()
                        }
                    });
                    add_into(&mut grads[*a], &da);
                }
                Op::Tanh(a) => {
                    let da = zip(&g, &self.nodes[i].value, |gv, yv| gv * (S::one() - yv * yv));
                    add_into(&mut grads[*a], &da);
                }
                Op::Sigmoid(a) => {
                    let da = zip(&g, &self.nodes[i].value, |gv, yv| gv * yv * (S::one() - yv));
                    add_into(&mut grads[*a], &da);
                }
                Op::Scale(a, c) => {
                    let da = map(&g, |gv| gv * *c);
                    add_into(&mut grads[*a], &da);
                }
                Op::AddScalar(a, _) => {
                    add_into(&mut grads[*a], &g);
                }
                Op::Log(a) => {
                    let da = zip(&g, &self.nodes[*a].value, |gv, xv| gv / xv);
                    add_into(&mut grads[*a], &da);
                }
                Op::Clamp { x, lo, hi } => {
                    let da = zip(&g, &self.nodes[*x].value, |gv, xv| {
                        if xv >= *lo && xv <= *hi {
                            gv
                        } else {
                            S::zero()
                        }
                    });
                    add_into(&mut grads[*x], &da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = Tensor::zeros(vec![r, c]);
                    for i2 in 0..r {
                        let mut dot = S::zero();
                        for j in 0..c {
                            dot += g.data()[i2 * c + j] * y.data()[i2 * c + j];
                        }
                        for j in 0..c {
                            let k = i2 * c + j;
                            da.data_mut()[k] = y.data()[k] * (g.data()[k] - dot);
                        }
                    }
                    add_into(&mut grads[*a], &da);
                }
                Op::LayerNorm {
                    x,
                    scale,
                    shift,
                    eps,
                } => {
                    let xv = &self.nodes[*x].value;
                    let sv = self.nodes[*scale].value.data().to_vec();
                    let (r, c) = (xv.rows(), xv.cols());
                    let n = S::of(c as f64);
                    let mut dx = Tensor::zeros(vec![r, c]);
                    let mut dscale = vec![S::zero(); c];
                    let mut dshift = vec![S::zero(); c];
                    for i2 in 0..r {
                        let row = &xv.data()[i2 * c..(i2 + 1) * c];
                        let mut mean = S::zero();
                        for &v in row {
                            mean += v;
                        }
                        mean = mean / n;
                        let mut var = S::zero();
                        for &v in row {
                            let d = v - mean;
                            var += d * d;
                        }
                        var = var / n;
                        let denom = (var + *eps).sqrt();
                        let mut dnorm = vec![S::zero(); c];
                        let mut dnorm_mean = S::zero();
                        let mut dnorm_norm_mean = S::zero();
                        for j in 0..c {
                            let norm = (row[j] - mean) / denom;
                            let gv = g.data()[i2 * c + j];
                            dscale[j] += gv * norm;
                            dshift[j] += gv;
                            let dn = gv * sv[j];
                            dnorm[j] = dn;
                            dnorm_mean += dn;
                            dnorm_norm_mean += dn * norm;
                        }
                        dnorm_mean = dnorm_mean / n;
                        dnorm_norm_mean = dnorm_norm_mean / n;
                        for j in 0..c {
                            let norm = (row[j] - mean) / denom;
                            dx.data_mut()[i2 * c + j] =
                                (dnorm[j] - dnorm_mean - norm * dnorm_norm_mean) / denom;
                        }
                    }
                    add_into(&mut grads[*x], &dx);
                    for (dst, src) in grads[*scale].data_mut().iter_mut().zip(&dscale) {
                        *dst += *src;
                    }
                    for (dst, src) in grads[*shift].data_mut().iter_mut().zip(&dshift) {
                        *dst += *src;
                    }
                }
                Op::Dropout { x, keep, factor } => {
                    let da = zip(&g, keep, |gv, kv| gv * kv * *factor);
                    add_into(&mut grads[*x], &da);
                }
                Op::Gather { table, indices } => {
                    let cols = self.nodes[*table].value.cols();
                    let tg = grads[*table].data_mut();
                    for (t, &src_row) in indices.iter().enumerate() {
                        for j in 0..cols {
                            tg[src_row * cols + j] += g.data()[t * cols + j];
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let rows = self.nodes[i].value.rows();
                    let total = self.nodes[i].value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p].value.cols();
                        let pg = grads[p].data_mut();
                        for i2 in 0..rows {
                            for j in 0..c {
                                pg[i2 * c + j] += g.data()[i2 * total + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = self.nodes[i].value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.nodes[p].value.rows();
                        let pg = grads[p].data_mut();
                        for k in 0..r * cols {
                            pg[k] += g.data()[offset * cols + k];
                        }
                        offset += r;
                    }
                }
                Op::SliceCols { x, start, end } => {
                    let cols = self.nodes[*x].value.cols();
                    let rows = self.nodes[*x].value.rows();
                    let width = end - start;
                    let xg = grads[*x].data_mut();
                    for i2 in 0..rows {
                        for j in 0..width {
                            xg[i2 * cols + start + j] += g.data()[i2 * width + j];
                        }
                    }
                }
                Op::Row { x, index } => {
                    let cols = self.nodes[*x].value.cols();
                    let xg = grads[*x].data_mut();
                    for j in 0..cols {
                        xg[index * cols + j] += g.data()[j];
                    }
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    for dst in grads[*a].data_mut() {
                        *dst += gv;
                    }
                }
            }
            grads[i] = g;
        }
        Ok(Grads { by_node: grads })
    }
}

fn map<S: Scalar>(a: &Tensor<S>, f: impl Fn(S) -> S) -> Tensor<S> {
    let mut out = a.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    debug_assert_eq!(a.len(), b.len());
    let mut out = a.clone();
    for (v, &w) in out.data_mut().iter_mut().zip(b.data()) {
        *v = f(*v, w);
    }
    out
}

fn add_into<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn sub_into<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d -= s;
    }
}

fn mm<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == S::zero() {
                continue;
            }
            for j in 0..n {
                out.data_mut()[i * n + j] += av * b.data()[p * n + j];
            }
        }
    }
    out
}

fn transpose<S: Scalar>(a: &Tensor<S>) -> Tensor<S> {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(vec![c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = a.data()[i * c + j];
        }
    }
    out
}
