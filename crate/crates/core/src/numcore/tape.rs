//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends one node holding its output value and enough
//! context to run its backward rule. [`Tape::backward`] consumes the tape,
//! walks it in reverse recording order and returns the gradients of every
//! leaf that requires them.
//!
//! Broadcasting is deliberately narrow: binary elementwise ops accept equal
//! shapes or a one-element operand. Bias addition and gate mixing have
//! dedicated fused ops ([`Tape::affine`], [`Tape::weighted_sum`]).

use super::kernels;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probability clamp applied inside both log-losses.
pub const PROB_CLAMP: f64 = 1e-7;

type CustomBackward<S> = Box<dyn Fn(&[&Tensor<S>], &Tensor<S>, &[S]) -> Vec<Vec<S>>>;

enum Op<S> {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Affine { x: Var, w: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Sum(Var),
    Concat { parts: Vec<Var>, widths: Vec<usize> },
    SelectStep { seq: Var, t: usize },
    SelectRows { mask: Vec<bool>, on_true: Var, on_false: Var },
    GatherRows { table: Var, rows: Vec<usize> },
    Conv1d { seq: Var, filters: Var, lens: Vec<usize> },
    MaxOverTime { input: Var, argmax: Vec<usize> },
    WeightedSum { alpha: Var, parts: Vec<Var> },
    Bce { probs: Var, labels: Vec<S> },
    CrossEntropy { probs: Var, labels: Vec<usize> },
    Reshape(Var),
    Custom { inputs: Vec<Var>, backward: CustomBackward<S> },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Recorded computation.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    visited: usize,
}

impl<S: Real> Gradients<S> {
    /// Gradient of a leaf, or `None` if the loss does not reach it.
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Number of interior nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn dims<S: Real>(t: &Tensor<S>) -> Vec<usize> {
    t.shape().to_vec()
}

fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        debug_assert!(value.all_finite(), "non-finite output recorded on tape");
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients are returned only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// `x[m×k] · w[k×n] + b[n]`, with the bias added to every row. A rank-1
    /// `x` is treated as a single row and yields a rank-1 result.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        let (m, k) = match sx.len() {
            1 => (1, sx[0]),
            2 => (sx[0], sx[1]),
            _ => (0, usize::MAX),
        };
        if sw.len() != 2 || sw[0] != k || sb != [sw[1]] {
            return Err(Error::Dimension {
                op: "affine",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let n = sw[1];
        let out_shape = if sx.len() == 1 { vec![n] } else { vec![m, n] };
        let bias = self.value(b).data();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias);
        }
        kernels::matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, m, k, n);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Affine { x, w, b, m, k, n }, &[x, w, b]))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() || sb.len() == 1 {
            Ok(dims(sa))
        } else if sa.len() == 1 {
            Ok(dims(sb))
        } else {
            Err(Error::Dimension {
                op,
                lhs: dims(sa),
                rhs: dims(sb),
            })
        }
    }

    fn zip(&self, a: Var, b: Var, shape: Vec<usize>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let at = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
        let bt = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
        Tensor::new(shape, (0..n).map(|i| f(at(i), bt(i))).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast("add", a, b)?;
        let value = self.zip(a, b, shape, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast("sub", a, b)?;
        let value = self.zip(a, b, shape, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.broadcast("mul", a, b)?;
        let value = self.zip(a, b, shape, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let src = self.value(a);
        let value = Tensor::new(dims(src), src.data().iter().map(|&x| x * factor).collect())
            .expect("same shape");
        self.push(value, Op::Scale(a, factor), &[a])
    }

    fn map(&mut self, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let src = self.value(a);
        let value =
            Tensor::new(dims(src), src.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        self.push(value, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let n = *src.shape().last().unwrap_or(&1);
        if n == 0 {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: dims(src),
                rhs: vec![],
            });
        }
        let mut out = src.data().to_vec();
        for row in out.chunks_mut(n) {
            kernels::softmax_in_place(row);
        }
        let value = Tensor::new(dims(src), out)?;
        Ok(self.push(value, Op::Softmax(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Concatenates rank-2 `[B×wᵢ]` (or rank-1) tensors along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let rows = if first.len() == 2 { first[0] } else { 1 };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || (s.len() == 2 && s[0] != rows) || s.len() > 2 {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap_or(&1));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let shape = if first.len() == 2 { vec![rows, total] } else { vec![total] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
            parts,
        ))
    }

    /// Time step `t` of a `[B×L×d]` batch, as `[B×d]`.
    pub fn select_step(&mut self, seq: Var, t: usize) -> Result<Var> {
        let s = self.shape(seq).to_vec();
        if s.len() != 3 {
            return Err(Error::Dimension {
                op: "select_step",
                lhs: s,
                rhs: vec![t],
            });
        }
        if t >= s[1] {
            return Err(Error::Bounds {
                what: "time step",
                value: t,
                min: 0,
                max: s[1].saturating_sub(1),
            });
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let src = self.value(seq).data();
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            let off = (i * l + t) * d;
            out.extend_from_slice(&src[off..off + d]);
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::SelectStep { seq, t }, &[seq]))
    }

    /// Row-wise select: row `i` comes from `on_true` when `mask[i]`.
    pub fn select_rows(&mut self, mask: &[bool], on_true: Var, on_false: Var) -> Result<Var> {
        let (st, sf) = (self.shape(on_true), self.shape(on_false));
        if st != sf || st.len() != 2 || st[0] != mask.len() {
            return Err(Error::Dimension {
                op: "select_rows",
                lhs: st.to_vec(),
                rhs: sf.to_vec(),
            });
        }
        let n = st[1];
        let (dt, df) = (self.value(on_true).data(), self.value(on_false).data());
        let mut out = Vec::with_capacity(dt.len());
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { dt } else { df };
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(st.to_vec(), out)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                mask: mask.to_vec(),
                on_true,
                on_false,
            },
            &[on_true, on_false],
        ))
    }

    /// Looks up rows of a `[R×n]` table.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: s,
                rhs: vec![],
            });
        }
        let n = s[1];
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= s[0] {
                return Err(Error::Bounds {
                    what: "table row",
                    value: r,
                    min: 0,
                    max: s[0] - 1,
                });
            }
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let value = Tensor::new(vec![rows.len(), n], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            &[table],
        ))
    }

    /// Sliding-window convolution over token rows.
    ///
    /// `seq` is `[L×d]` (with one entry in `lens`) or `[B×L×d]`; `filters`
    /// is `[w×d×c]`. The output has `max(lens) − w + 1` time positions;
    /// positions past a record's own valid region are left at zero.
    pub fn conv1d(&mut self, seq: Var, filters: Var, lens: &[usize]) -> Result<Var> {
        let ss = self.shape(seq).to_vec();
        let sf = self.shape(filters).to_vec();
        let (batch, l, d) = match ss.len() {
            2 => (1, ss[0], ss[1]),
            3 => (ss[0], ss[1], ss[2]),
            _ => (0, 0, usize::MAX),
        };
        if sf.len() != 3 || sf[1] != d || lens.len() != batch {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: ss,
                rhs: sf,
            });
        }
        let (w, c) = (sf[0], sf[2]);
        for &len in lens {
            if len > l {
                return Err(Error::Bounds {
                    what: "valid length",
                    value: len,
                    min: w,
                    max: l,
                });
            }
            if len < w {
                return Err(Error::SequenceTooShort { len, width: w });
            }
        }
        let out_t = lens.iter().max().copied().unwrap_or(w) - w + 1;
        let src = self.value(seq).data();
        let f = self.value(filters).data();
        let mut out = vec![S::zero(); batch * out_t * c];
        for (b, &len) in lens.iter().enumerate() {
            let positions = len - w + 1;
            let window_base = b * l * d;
            // Windows of consecutive rows are contiguous in row-major order,
            // so the whole record is one strided matmul.
            for t in 0..positions {
                let window = &src[window_base + t * d..window_base + (t + w) * d];
                let dst = &mut out[(b * out_t + t) * c..(b * out_t + t + 1) * c];
                kernels::matmul_acc(window, f, dst, 1, w * d, c);
            }
        }
        let shape = if ss.len() == 2 {
            vec![out_t, c]
        } else {
            vec![batch, out_t, c]
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                seq,
                filters,
                lens: lens.to_vec(),
            },
            &[seq, filters],
        ))
    }

    /// Per-channel maximum over the first `lens[b]` rows of `[L×c]` or
    /// `[B×L×c]`. Ties route the gradient to the lowest index.
    pub fn max_over_time(&mut self, input: Var, lens: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        let (batch, l, c) = match s.len() {
            2 => (1, s[0], s[1]),
            3 => (s[0], s[1], s[2]),
            _ => (0, 0, 0),
        };
        if lens.len() != batch || batch == 0 {
            return Err(Error::Dimension {
                op: "max_over_time",
                lhs: s,
                rhs: vec![lens.len()],
            });
        }
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(batch * c);
        let mut argmax = Vec::with_capacity(batch * c);
        for (b, &len) in lens.iter().enumerate() {
            if len == 0 || len > l {
                return Err(Error::Bounds {
                    what: "valid length",
                    value: len,
                    min: 1,
                    max: l,
                });
            }
            for ch in 0..c {
                let mut best = b * l * c + ch;
                for t in 1..len {
                    let idx = (b * l + t) * c + ch;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                argmax.push(best);
                out.push(src[best]);
            }
        }
        let shape = if s.len() == 2 { vec![c] } else { vec![batch, c] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MaxOverTime { input, argmax }, &[input]))
    }

    /// `Σᵢ alpha[·, i] · parts[i]` row by row; `alpha` is `[B×T]` (or `[T]`)
    /// and each part `[B×E]` (or `[E]`).
    pub fn weighted_sum(&mut self, alpha: Var, parts: &[Var]) -> Result<Var> {
        let sa = self.shape(alpha).to_vec();
        let t = *sa.last().unwrap_or(&0);
        if parts.len() != t || t == 0 {
            return Err(Error::usage(format!(
                "weighted_sum: {} weights for {} parts",
                t,
                parts.len()
            )));
        }
        let rows = if sa.len() == 2 { sa[0] } else { 1 };
        let sp = self.shape(parts[0]).to_vec();
        let e = *sp.last().unwrap_or(&0);
        for &p in parts {
            let s = self.shape(p);
            let ok = if sa.len() == 2 {
                s == [rows, e]
            } else {
                s == [e]
            };
            if !ok {
                return Err(Error::Dimension {
                    op: "weighted_sum",
                    lhs: sa.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let a = self.value(alpha).data();
        let mut out = vec![S::zero(); rows * e];
        for (i, &p) in parts.iter().enumerate() {
            let pd = self.value(p).data();
            for r in 0..rows {
                let wgt = a[r * t + i];
                for (o, &x) in out[r * e..(r + 1) * e].iter_mut().zip(&pd[r * e..(r + 1) * e]) {
                    *o = *o + wgt * x;
                }
            }
        }
        let value = Tensor::new(sp, out)?;
        let mut inputs = vec![alpha];
        inputs.extend_from_slice(parts);
        Ok(self.push(
            value,
            Op::WeightedSum {
                alpha,
                parts: parts.to_vec(),
            },
            &inputs,
        ))
    }

    /// Summed binary cross-entropy with probabilities clamped to
    /// `[1e-7, 1 − 1e-7]`.
    pub fn bce(&mut self, probs: Var, labels: &[S]) -> Result<Var> {
        let p = self.value(probs).data();
        if p.len() != labels.len() || labels.is_empty() {
            return Err(Error::input(format!(
                "bce: {} predictions for {} labels",
                p.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != S::zero() && y != S::one()) {
            return Err(Error::input(format!("bce: label {bad} not in {{0, 1}}")));
        }
        let (lo, hi) = (S::lit(PROB_CLAMP), S::one() - S::lit(PROB_CLAMP));
        let mut loss = S::zero();
        for (&pi, &y) in p.iter().zip(labels) {
            let q = pi.max(lo).min(hi);
            loss = loss - (y * q.ln() + (S::one() - y) * (S::one() - q).ln());
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    /// Summed cross-entropy `−Σ ln p[label]` over rows of `[N×K]`
    /// probabilities, with the same clamp as [`Tape::bce`].
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(probs).to_vec();
        let (n, k) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => (0, 0),
        };
        if n != labels.len() || n == 0 {
            return Err(Error::input(format!(
                "cross_entropy: {} rows for {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::input(format!(
                "cross_entropy: label index {bad} outside 0..{k}"
            )));
        }
        let p = self.value(probs).data();
        let lo = S::lit(PROB_CLAMP);
        let hi = S::one() - lo;
        let loss = labels
            .iter()
            .enumerate()
            .fold(S::zero(), |acc, (i, &y)| acc - p[i * k + y].max(lo).min(hi).ln());
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Records an operation with a caller-supplied backward rule. The rule
    /// receives the input values, the output value and the output gradient,
    /// and returns one gradient per input.
    pub fn custom<F>(&mut self, inputs: &[Var], value: Tensor<S>, backward: F) -> Var
    where
        F: Fn(&[&Tensor<S>], &Tensor<S>, &[S]) -> Vec<Vec<S>> + 'static,
    {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward: Box::new(backward),
            },
            inputs,
        )
    }

    /// Runs reverse-mode accumulation from a scalar `loss` and consumes the
    /// tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![S::one()]);
        let mut visited = 0;
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.propagate(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut [S]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn acc_elementwise(&self, grads: &mut [Option<Vec<S>>], v: Var, contrib: impl Fn(usize) -> S, n: usize) {
        if let Some(dst) = self.slot(grads, v) {
            if dst.len() == 1 && n > 1 {
                dst[0] = dst[0] + (0..n).map(&contrib).sum::<S>();
            } else {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d = *d + contrib(i);
                }
            }
        }
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let n = g.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n: cols } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    kernels::matmul_bt_acc(g, bv, ga, *m, *k, *cols);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    kernels::matmul_at_acc(av, g, gb, *m, *k, *cols);
                }
            }
            Op::Affine { x, w, b, m, k, n: cols } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                if let Some(gx) = self.slot(grads, *x) {
                    kernels::matmul_bt_acc(g, wv, gx, *m, *k, *cols);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    kernels::matmul_at_acc(xv, g, gw, *m, *k, *cols);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(*cols) {
                        for (d, &x) in gb.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.acc_elementwise(grads, *a, |j| g[j], n);
                self.acc_elementwise(grads, *b, |j| g[j], n);
            }
            Op::Sub(a, b) => {
                self.acc_elementwise(grads, *a, |j| g[j], n);
                self.acc_elementwise(grads, *b, |j| -g[j], n);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let at = |j: usize| if av.len() == 1 { av[0] } else { av[j] };
                let bt = |j: usize| if bv.len() == 1 { bv[0] } else { bv[j] };
                self.acc_elementwise(grads, *a, |j| g[j] * bt(j), n);
                self.acc_elementwise(grads, *b, |j| g[j] * at(j), n);
            }
            Op::Scale(a, f) => self.acc_elementwise(grads, *a, |j| g[j] * *f, n),
            Op::Sigmoid(a) => {
                self.acc_elementwise(grads, *a, |j| g[j] * out[j] * (S::one() - out[j]), n)
            }
            Op::Tanh(a) => self.acc_elementwise(grads, *a, |j| g[j] * (S::one() - out[j] * out[j]), n),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.acc_elementwise(grads, *a, |j| if x[j] > S::zero() { g[j] } else { S::zero() }, n)
            }
            Op::Softmax(a) => {
                let cols = *node.value.shape().last().unwrap_or(&1);
                if let Some(dst) = self.slot(grads, *a) {
                    for ((d, y), gr) in dst.chunks_mut(cols).zip(out.chunks(cols)).zip(g.chunks(cols)) {
                        let dot: S = y.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..cols {
                            d[j] = d[j] + y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                if let Some(dst) = self.slot(grads, *a) {
                    debug_assert_eq!(dst.len(), len);
                    dst.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = n / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if let Some(dst) = self.slot(grads, p) {
                        for r in 0..rows {
                            for j in 0..w {
                                dst[r * w + j] = dst[r * w + j] + g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SelectStep { seq, t } => {
                let s = self.shape(*seq).to_vec();
                let (l, d) = (s[1], s[2]);
                if let Some(dst) = self.slot(grads, *seq) {
                    for b in 0..s[0] {
                        let off = (b * l + t) * d;
                        for j in 0..d {
                            dst[off + j] = dst[off + j] + g[b * d + j];
                        }
                    }
                }
            }
            Op::SelectRows { mask, on_true, on_false } => {
                let cols = n / mask.len().max(1);
                for (target, want) in [(*on_true, true), (*on_false, false)] {
                    if let Some(dst) = self.slot(grads, target) {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == want {
                                for j in r * cols..(r + 1) * cols {
                                    dst[j] = dst[j] + g[j];
                                }
                            }
                        }
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let cols = self.shape(*table)[1];
                if let Some(dst) = self.slot(grads, *table) {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..cols {
                            dst[r * cols + j] = dst[r * cols + j] + g[i * cols + j];
                        }
                    }
                }
            }
            Op::Conv1d { seq, filters, lens } => {
                let ss = self.shape(*seq).to_vec();
                let sf = self.shape(*filters).to_vec();
                let (l, d) = if ss.len() == 2 { (ss[0], ss[1]) } else { (ss[1], ss[2]) };
                let (w, c) = (sf[0], sf[2]);
                let out_t = n / (c * lens.len());
                let src = self.value(*seq).data();
                let f = self.value(*filters).data();
                if let Some(gf) = self.slot(grads, *filters) {
                    for (b, &len) in lens.iter().enumerate() {
                        for t in 0..len + 1 - w {
                            let window = &src[b * l * d + t * d..b * l * d + (t + w) * d];
                            let gr = &g[(b * out_t + t) * c..(b * out_t + t + 1) * c];
                            kernels::matmul_at_acc(window, gr, gf, 1, w * d, c);
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *seq) {
                    for (b, &len) in lens.iter().enumerate() {
                        for t in 0..len + 1 - w {
                            let gr = &g[(b * out_t + t) * c..(b * out_t + t + 1) * c];
                            let dst = &mut gs[b * l * d + t * d..b * l * d + (t + w) * d];
                            kernels::matmul_bt_acc(gr, f, dst, 1, w * d, c);
                        }
                    }
                }
            }
            Op::MaxOverTime { input, argmax } => {
                if let Some(dst) = self.slot(grads, *input) {
                    for (&idx, &gr) in argmax.iter().zip(g) {
                        dst[idx] = dst[idx] + gr;
                    }
                }
            }
            Op::WeightedSum { alpha, parts } => {
                let t = parts.len();
                let e = *node.value.shape().last().unwrap_or(&1);
                let rows = n / e;
                let av = self.value(*alpha).data();
                if let Some(ga) = self.slot(grads, *alpha) {
                    for (i, &p) in parts.iter().enumerate() {
                        let pd = self.value(p).data();
                        for r in 0..rows {
                            let dot: S = g[r * e..(r + 1) * e]
                                .iter()
                                .zip(&pd[r * e..(r + 1) * e])
                                .map(|(&x, &y)| x * y)
                                .sum();
                            ga[r * t + i] = ga[r * t + i] + dot;
                        }
                    }
                }
                for (i, &p) in parts.iter().enumerate() {
                    if let Some(dst) = self.slot(grads, p) {
                        for r in 0..rows {
                            let wgt = av[r * t + i];
                            for j in r * e..(r + 1) * e {
                                dst[j] = dst[j] + wgt * g[j];
                            }
                        }
                    }
                }
            }
            Op::Bce { probs, labels } => {
                let p = self.value(*probs).data();
                let (lo, hi) = (S::lit(PROB_CLAMP), S::one() - S::lit(PROB_CLAMP));
                if let Some(dst) = self.slot(grads, *probs) {
                    for (j, (&pi, &y)) in p.iter().zip(labels).enumerate() {
                        if pi > lo && pi < hi {
                            let d = -y / pi + (S::one() - y) / (S::one() - pi);
                            dst[j] = dst[j] + g[0] * d;
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let p = self.value(*probs).data();
                let k = p.len() / labels.len();
                let (lo, hi) = (S::lit(PROB_CLAMP), S::one() - S::lit(PROB_CLAMP));
                if let Some(dst) = self.slot(grads, *probs) {
                    for (r, &y) in labels.iter().enumerate() {
                        let pi = p[r * k + y];
                        if pi > lo && pi < hi {
                            dst[r * k + y] = dst[r * k + y] - g[0] / pi;
                        }
                    }
                }
            }
            Op::Reshape(a) => self.acc_elementwise(grads, *a, |j| g[j], n),
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
                let contribs = backward(&values, &node.value, g);
                for (&v, c) in inputs.iter().zip(contribs) {
                    if let Some(dst) = self.slot(grads, v) {
                        for (d, x) in dst.iter_mut().zip(c) {
                            *d = *d + x;
                        }
                    }
                }
            }
        }
    }
}
