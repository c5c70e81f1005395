//! Reverse-mode differentiation over a linear tape of fused tensor ops.
//!
//! Every op appends one node holding its forward value plus whatever it
//! needs for the backward sweep. A node takes part in the backward sweep only
//! if at least one of its inputs does; constants and frozen parameters never
//! receive gradients.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, MatRef, Real};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        trans_w: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Attention {
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        key_mask: Vec<bool>,
        probs: Vec<T>,
    },
    AddFirstRow {
        x: Var,
        rows: Var,
        seq: usize,
    },
    Mix {
        weights: Var,
        inputs: Vec<Var>,
        seq: usize,
    },
    Softmax(Var),
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    tracked: bool,
}

pub struct Tape<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn gelu<T: Real>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::from_f64_lossy(0.797_884_560_802_865_4);
    let k = T::from_f64_lossy(0.044_715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let value = half * x * (T::one() + t);
    let du = c * (T::one() + three * k * x * x);
    let deriv = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (value, deriv)
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// `x · W + b` over the last dimension of `x`. `W` is `[in, out]`, or
    /// `[out, in]` when `trans_w` is set.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>, trans_w: bool) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, d_in) = (xv.rows(), xv.cols());
        let (w_rows, w_cols) = (wv.shape()[0], wv.shape()[1]);
        let (w_ref, d_out) = if trans_w {
            assert_eq!(w_cols, d_in, "linear: weight/input mismatch");
            (MatRef::new(wv.data(), w_rows, w_cols).t(), w_rows)
        } else {
            assert_eq!(w_rows, d_in, "linear: weight/input mismatch");
            (MatRef::new(wv.data(), w_rows, w_cols), w_cols)
        };
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("non-scalar input") = d_out;
        let mut out = vec![T::zero(); n * d_out];
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), d_out, "linear: bias length");
            for row in out.chunks_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(
            T::one(),
            MatRef::new(xv.data(), n, d_in),
            w_ref,
            beta,
            &mut out,
            0,
            d_out,
        );
        let tracked = self.tracked(x) || self.tracked(w) || b.is_some_and(|b| self.tracked(b));
        self.push(
            Cow::Owned(Tensor::from_vec(&shape, out)),
            Op::Linear { x, w, b, trans_w },
            tracked,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(av.shape(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Cow::Owned(t), Op::Add(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul: shape mismatch");
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(av.shape(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Cow::Owned(t), Op::Mul(a, b), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let tracked = self.tracked(a);
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a), tracked)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu(v).0).collect();
        let t = Tensor::from_vec(xv.shape(), data);
        let tracked = self.tracked(x);
        self.push(Cow::Owned(t), Op::Gelu(x), tracked)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        assert_eq!(g.len(), d);
        assert_eq!(bt.len(), d);
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let dn = T::from_usize(d).expect("dim");
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + bt[c];
            }
        }
        let t = Tensor::from_vec(xv.shape(), out);
        let tracked = self.tracked(x) || self.tracked(gamma) || self.tracked(beta);
        self.push(
            Cow::Owned(t),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            tracked,
        )
    }

    /// Gathers rows of `table` (`[V, H]`) into an `[ids.len(), H]` tensor.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let h = tv.cols();
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::from_vec(&[ids.len(), h], out);
        let tracked = self.tracked(table);
        self.push(
            Cow::Owned(t),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            tracked,
        )
    }

    /// Multi-head scaled dot-product self-attention over packed `[B·S, 3H]`
    /// query/key/value projections. Masked-out positions neither attend nor
    /// are attended to; their output rows are zero.
    pub fn attention(
        &mut self,
        qkv: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        key_mask: &[bool],
    ) -> Var {
        let qv = self.value(qkv);
        let h3 = qv.cols();
        let hidden = h3 / 3;
        let dh = hidden / heads;
        assert_eq!(qv.rows(), batch * seq);
        assert_eq!(key_mask.len(), batch * seq);
        assert_eq!(dh * heads, hidden);
        let scale = T::one() / T::from_usize(dh).expect("dim").sqrt();
        let data = qv.data();
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); batch * seq * hidden];
        for b in 0..batch {
            let mask = &key_mask[b * seq..(b + 1) * seq];
            for hd in 0..heads {
                let p = &mut probs[(b * heads + hd) * seq * seq..(b * heads + hd + 1) * seq * seq];
                let q = MatRef::strided(data, b * seq * h3 + hd * dh, seq, dh, h3);
                let k = MatRef::strided(data, b * seq * h3 + hidden + hd * dh, seq, dh, h3);
                gemm(scale, q, k.t(), T::zero(), p, 0, seq);
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    if !mask[i] {
                        row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let mut max = T::neg_infinity();
                    for j in 0..seq {
                        if mask[j] && row[j] > max {
                            max = row[j];
                        }
                    }
                    let mut total = T::zero();
                    for j in 0..seq {
                        row[j] = if mask[j] {
                            (row[j] - max).exp()
                        } else {
                            T::zero()
                        };
                        total += row[j];
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
                let v = MatRef::strided(data, b * seq * h3 + 2 * hidden + hd * dh, seq, dh, h3);
                gemm(
                    T::one(),
                    MatRef::new(p, seq, seq),
                    v,
                    T::zero(),
                    &mut out,
                    b * seq * hidden + hd * dh,
                    hidden,
                );
            }
        }
        let t = Tensor::from_vec(&[batch * seq, hidden], out);
        let tracked = self.tracked(qkv);
        self.push(
            Cow::Owned(t),
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                key_mask: key_mask.to_vec(),
                probs,
            },
            tracked,
        )
    }

    /// Adds `rows[b]` to the first position of sequence `b` in `x`
    /// (`[B·S, H]`), leaving every other position untouched.
    pub fn add_first_row(&mut self, x: Var, rows: Var, seq: usize) -> Var {
        let mut t = self.value(x).clone();
        let rv = self.value(rows);
        let h = t.cols();
        assert_eq!(rv.cols(), h);
        assert_eq!(rv.rows() * seq, t.rows());
        for b in 0..rv.rows() {
            for (o, &r) in t.row_mut(b * seq).iter_mut().zip(rv.row(b)) {
                *o += r;
            }
        }
        let tracked = self.tracked(x) || self.tracked(rows);
        self.push(Cow::Owned(t), Op::AddFirstRow { x, rows, seq }, tracked)
    }

    /// Per-sequence convex mixture: `out[b, s] = Σ_c weights[b, c] · inputs[c][b, s]`.
    pub fn mix(&mut self, weights: Var, inputs: &[Var], seq: usize) -> Var {
        let wv = self.value(weights);
        let channels = wv.cols();
        assert_eq!(channels, inputs.len());
        let first = self.value(inputs[0]);
        let (rows, h) = (first.rows(), first.cols());
        let shape = first.shape().to_vec();
        let mut out = vec![T::zero(); rows * h];
        for (c, &input) in inputs.iter().enumerate() {
            let iv = self.value(input);
            assert_eq!(iv.shape(), &shape[..]);
            for r in 0..rows {
                let w = wv.row(r / seq)[c];
                for (o, &v) in out[r * h..(r + 1) * h].iter_mut().zip(iv.row(r)) {
                    *o += w * v;
                }
            }
        }
        let tracked = self.tracked(weights) || inputs.iter().any(|&i| self.tracked(i));
        self.push(
            Cow::Owned(Tensor::from_vec(&shape, out)),
            Op::Mix {
                weights,
                inputs: inputs.to_vec(),
                seq,
            },
            tracked,
        )
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut t = xv.clone();
        for r in 0..t.rows() {
            softmax_in_place(t.row_mut(r));
        }
        let tracked = self.tracked(x);
        self.push(Cow::Owned(t), Op::Softmax(x), tracked)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let xv = self.value(x);
        let h = xv.cols();
        let mut out = Vec::with_capacity(rows.len() * h);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        let tracked = self.tracked(x);
        self.push(
            Cow::Owned(Tensor::from_vec(&[rows.len(), h], out)),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            tracked,
        )
    }

    /// Mean natural-log cross-entropy of `logits` (`[n, V]`) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        let (n, v) = (lv.rows(), lv.cols());
        assert_eq!(n, labels.len());
        assert!(n > 0, "cross entropy over zero rows");
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            let log_norm = log_sum_exp(row);
            total += log_norm - row[label];
            for p in row.iter_mut() {
                *p = (*p - log_norm).exp();
            }
        }
        let loss = total / T::from_usize(n).expect("count");
        let tracked = self.tracked(logits);
        self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        )
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        assert_eq!(self.value(output).len(), 1, "backward from a non-scalar");
        grads[output.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Gradients { grads }
    }

    fn backward_node(&self, node: &Node<'a, T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, g: Tensor<T>| {
            if !self.tracked(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, trans_w } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, d_in) = (xv.rows(), xv.cols());
                let d_out = dy.cols();
                let dyr = MatRef::new(dy.data(), n, d_out);
                if self.tracked(*x) {
                    let mut dx = vec![T::zero(); n * d_in];
                    let wr = MatRef::new(wv.data(), wv.shape()[0], wv.shape()[1]);
                    let wt = if *trans_w { wr } else { wr.t() };
                    gemm(T::one(), dyr, wt, T::zero(), &mut dx, 0, d_in);
                    acc(*x, Tensor::from_vec(xv.shape(), dx));
                }
                if self.tracked(*w) {
                    let mut dw = vec![T::zero(); d_in * d_out];
                    let xr = MatRef::new(xv.data(), n, d_in);
                    if *trans_w {
                        gemm(T::one(), dyr.t(), xr, T::zero(), &mut dw, 0, d_in);
                    } else {
                        gemm(T::one(), xr.t(), dyr, T::zero(), &mut dw, 0, d_out);
                    }
                    acc(*w, Tensor::from_vec(wv.shape(), dw));
                }
                if let Some(b) = b {
                    if self.tracked(*b) {
                        let mut db = vec![T::zero(); d_out];
                        for r in 0..n {
                            for (g, &d) in db.iter_mut().zip(dy.row(r)) {
                                *g += d;
                            }
                        }
                        acc(*b, Tensor::from_vec(&[d_out], db));
                    }
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = dy
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                let db = dy
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(&g, &x)| g * x)
                    .collect();
                acc(*a, Tensor::from_vec(av.shape(), da));
                acc(*b, Tensor::from_vec(bv.shape(), db));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::from_vec(av.shape(), vec![dy.item(); av.len()]));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| g * gelu(v).1)
                    .collect();
                acc(*x, Tensor::from_vec(xv.shape(), dx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let xv = self.value(*x);
                let g = self.value(*gamma).data();
                let (n, d) = (xv.rows(), xv.cols());
                let dn = T::from_usize(d).expect("dim");
                if self.tracked(*gamma) || self.tracked(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for r in 0..n {
                        for c in 0..d {
                            let gy = dy.data()[r * d + c];
                            dg[c] += gy * xhat[r * d + c];
                            db[c] += gy;
                        }
                    }
                    acc(*gamma, Tensor::from_vec(&[d], dg));
                    acc(*beta, Tensor::from_vec(&[d], db));
                }
                if self.tracked(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    for r in 0..n {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for c in 0..d {
                            let dh = dy.data()[r * d + c] * g[c];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + c];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for c in 0..d {
                            let dh = dy.data()[r * d + c] * g[c];
                            dx[r * d + c] = rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                        }
                    }
                    acc(*x, Tensor::from_vec(xv.shape(), dx));
                }
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let h = tv.cols();
                let mut dt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, &g) in dt
                        .row_mut(id)
                        .iter_mut()
                        .zip(&dy.data()[r * h..(r + 1) * h])
                    {
                        *o += g;
                    }
                }
                acc(*table, dt);
            }
            Op::Attention {
                qkv,
                batch,
                seq,
                heads,
                key_mask,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let qv = self.value(*qkv);
                let data = qv.data();
                let h3 = qv.cols();
                let hidden = h3 / 3;
                let dh = hidden / heads;
                let scale = T::one() / T::from_usize(dh).expect("dim").sqrt();
                let mut dqkv = vec![T::zero(); data.len()];
                let mut dp = vec![T::zero(); seq * seq];
                for b in 0..batch {
                    let mask = &key_mask[b * seq..(b + 1) * seq];
                    for hd in 0..heads {
                        let p =
                            &probs[(b * heads + hd) * seq * seq..(b * heads + hd + 1) * seq * seq];
                        let pr = MatRef::new(p, seq, seq);
                        let dout =
                            MatRef::strided(dy.data(), b * seq * hidden + hd * dh, seq, dh, hidden);
                        let q_off = b * seq * h3 + hd * dh;
                        let k_off = q_off + hidden;
                        let v_off = q_off + 2 * hidden;
                        // dV = Pᵀ · dOut
                        gemm(T::one(), pr.t(), dout, T::zero(), &mut dqkv, v_off, h3);
                        // dP = dOut · Vᵀ
                        let v = MatRef::strided(data, v_off, seq, dh, h3);
                        gemm(T::one(), dout, v.t(), T::zero(), &mut dp, 0, seq);
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P)) · scale
                        for i in 0..seq {
                            if !mask[i] {
                                dp[i * seq..(i + 1) * seq]
                                    .iter_mut()
                                    .for_each(|x| *x = T::zero());
                                continue;
                            }
                            let row_p = &p[i * seq..(i + 1) * seq];
                            let row_d = &mut dp[i * seq..(i + 1) * seq];
                            let dot: T = row_p.iter().zip(row_d.iter()).map(|(&a, &b)| a * b).sum();
                            for (d, &pp) in row_d.iter_mut().zip(row_p) {
                                *d = pp * (*d - dot) * scale;
                            }
                        }
                        let ds = MatRef::new(&dp, seq, seq);
                        let q = MatRef::strided(data, q_off, seq, dh, h3);
                        let k = MatRef::strided(data, k_off, seq, dh, h3);
                        // dQ = dS · K ; dK = dSᵀ · Q
                        gemm(T::one(), ds, k, T::zero(), &mut dqkv, q_off, h3);
                        gemm(T::one(), ds.t(), q, T::zero(), &mut dqkv, k_off, h3);
                    }
                }
                acc(*qkv, Tensor::from_vec(qv.shape(), dqkv));
            }
            Op::AddFirstRow { x, rows, seq } => {
                if self.tracked(*rows) {
                    let rv = self.value(*rows);
                    let mut dr = Tensor::zeros(rv.shape());
                    for b in 0..rv.rows() {
                        dr.row_mut(b).copy_from_slice(dy.row(b * *seq));
                    }
                    acc(*rows, dr);
                }
                acc(*x, dy.clone());
            }
            Op::Mix {
                weights,
                inputs,
                seq,
            } => {
                let wv = self.value(*weights);
                let rows = dy.rows();
                let mut dw = Tensor::zeros(wv.shape());
                for (c, &input) in inputs.iter().enumerate() {
                    let iv = self.value(input);
                    if self.tracked(*weights) {
                        for r in 0..rows {
                            let dot: T =
                                dy.row(r).iter().zip(iv.row(r)).map(|(&a, &b)| a * b).sum();
                            dw.row_mut(r / seq)[c] += dot;
                        }
                    }
                    if self.tracked(input) {
                        let mut di = dy.clone();
                        for r in 0..rows {
                            let w = wv.row(r / seq)[c];
                            di.row_mut(r).iter_mut().for_each(|v| *v *= w);
                        }
                        acc(input, di);
                    }
                }
                acc(*weights, dw);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = dy.clone();
                for r in 0..y.rows() {
                    let dot: T = dy.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for (d, &p) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *d = p * (*d - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::GatherRows { x, rows } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                for (i, &r) in rows.iter().enumerate() {
                    for (o, &g) in dx.row_mut(r).iter_mut().zip(dy.row(i)) {
                        *o += g;
                    }
                }
                acc(*x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let lv = self.value(*logits);
                let v = lv.cols();
                let scale = dy.item() / T::from_usize(labels.len()).expect("count");
                let mut dl = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    dl[r * v + label] -= T::one();
                }
                dl.iter_mut().for_each(|g| *g *= scale);
                acc(*logits, Tensor::from_vec(lv.shape(), dl));
            }
        }
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::scalar(3.0f64);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let sq = tape.mul(v, v);
        let grads = tape.backward(sq);
        assert_eq!(tape.value(sq).item(), 9.0);
        assert_eq!(grads.get(v).unwrap().item(), 6.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let x = Tensor::scalar(2.0f64);
        let c = Tensor::scalar(5.0f64);
        let mut tape = Tape::new();
        let xv = tape.param(&x);
        let cv = tape.constant(&c);
        let y = tape.mul(xv, cv);
        let grads = tape.backward(y);
        assert_eq!(grads.get(xv).unwrap().item(), 5.0);
        assert!(grads.get(cv).is_none());
    }

    /// Central differences of a scalar builder against every input entry.
    fn check<F>(inputs: &[Tensor<f64>], build: F)
    where
        F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |inputs: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
            let out = build(&mut tape, &vars);
            tape.value(out).item()
        };
        let h = 1e-5;
        for (i, input) in inputs.iter().enumerate() {
            let g = grads.get(vars[i]).expect("gradient");
            for j in 0..input.len() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = g.data()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-5 * fd.abs().max(an.abs()),
                    "input {i} entry {j}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn linear_gelu_layernorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = [
            random(&[4, 3], &mut rng),
            random(&[3, 5], &mut rng),
            random(&[5], &mut rng),
            random(&[5], &mut rng),
            random(&[5], &mut rng),
            random(&[4, 5], &mut rng),
        ];
        check(&inputs, |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]), false);
            let y = t.gelu(y);
            let y = t.layer_norm(y, v[3], v[4]);
            let y = t.mul(y, v[5]);
            t.sum(y)
        });
    }

    #[test]
    fn transposed_linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = [
            random(&[3, 4], &mut rng),
            random(&[6, 4], &mut rng),
            random(&[3, 6], &mut rng),
        ];
        check(&inputs, |t, v| {
            let y = t.linear(v[0], v[1], None, true);
            let y = t.mul(y, v[2]);
            t.sum(y)
        });
    }

    #[test]
    fn attention_gradients_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (batch, seq, heads, hidden) = (2, 4, 2, 4);
        let inputs = [
            random(&[batch * seq, 3 * hidden], &mut rng),
            random(&[batch * seq, hidden], &mut rng),
        ];
        let mask = [true, true, true, false, true, true, false, false];
        check(&inputs, |t, v| {
            let y = t.attention(v[0], batch, seq, heads, &mask);
            let y = t.mul(y, v[1]);
            t.sum(y)
        });
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qkv = random(&[6, 12], &mut rng);
        let mask = [true, true, false, true, true, true];
        let mut tape = Tape::new();
        let v = tape.constant(&qkv);
        let _ = tape.attention(v, 2, 3, 2, &mask);
        let Op::Attention { probs, .. } = &tape.nodes[1].op else {
            panic!()
        };
        for (row_idx, row) in probs.chunks(3).enumerate() {
            let query = row_idx % 3;
            let b = row_idx / 6;
            let s: f64 = row.iter().sum();
            if mask[b * 3 + query] {
                assert!((s - 1.0).abs() < 1e-12);
                // padded keys get nothing
                for (j, &p) in row.iter().enumerate() {
                    if !mask[b * 3 + j] {
                        assert_eq!(p, 0.0);
                    }
                }
            } else {
                assert_eq!(s, 0.0);
            }
        }
    }

    #[test]
    fn mix_softmax_gather_cross_entropy_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (batch, seq, h, c) = (2, 3, 4, 3);
        let inputs = [
            random(&[batch, c], &mut rng),
            random(&[batch * seq, h], &mut rng),
            random(&[batch * seq, h], &mut rng),
            random(&[batch * seq, h], &mut rng),
            random(&[batch, h], &mut rng),
        ];
        check(&inputs, |t, v| {
            let w = t.softmax(v[0]);
            let y = t.mix(w, &[v[1], v[2], v[3]], seq);
            let y = t.add_first_row(y, v[4], seq);
            let rows = t.gather_rows(y, &[0, 2, 4, 2]);
            t.cross_entropy(rows, &[1, 3, 0, 2])
        });
    }

    #[test]
    fn embedding_gradient_scatters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = [random(&[5, 3], &mut rng), random(&[4, 3], &mut rng)];
        check(&inputs, |t, v| {
            let e = t.embedding(v[0], &[1, 3, 1, 0]);
            let y = t.mul(e, v[1]);
            t.sum(y)
        });
    }

    #[test]
    fn cross_entropy_uniform_and_perfect() {
        let uniform = Tensor::from_vec(&[2, 16], vec![0.3f64; 32]);
        let mut tape = Tape::new();
        let v = tape.constant(&uniform);
        let l = tape.cross_entropy(v, &[3, 9]);
        assert!((tape.value(l).item() - 16f64.ln()).abs() < 1e-12);

        let mut sharp = vec![-1e4f64; 4];
        sharp[2] = 1e4;
        let sharp = Tensor::from_vec(&[1, 4], sharp);
        let mut tape = Tape::new();
        let v = tape.constant(&sharp);
        let l = tape.cross_entropy(v, &[2]);
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn cross_entropy_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = random(&[5, 7], &mut rng);
        let labels = [0usize, 6, 3, 3, 1];
        let mut tape = Tape::new();
        let v = tape.constant(&logits);
        let l = tape.cross_entropy(v, &labels);
        let mut expected = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            expected += -(row[y].exp() / z).ln();
        }
        expected /= labels.len() as f64;
        assert!((tape.value(l).item() - expected).abs() < 1e-10);
    }
}
