use crate::tensor::{matmul, matmul_nt, matmul_tn};
use crate::{AutodiffError, Result, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Batch-norm statistics source.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchNormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleBy {
        x: Var,
        s: Var,
    },
    MulConst {
        x: Var,
        c: f64,
    },
    Relu {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterAdd {
        x: Var,
        idx: Vec<usize>,
        rows: usize,
    },
    ConcatCols {
        xs: Vec<Var>,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    Sum {
        x: Var,
    },
    MaskedSoftmaxCe {
        logits: Var,
        mask: Vec<bool>,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    GaussianKl {
        mu: Var,
        logvar: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// A reverse-mode tape: values are computed eagerly as ops are recorded.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; absent entries mean "no path to the output".
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` if no path exists.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let op = Op::Linear { x, w, b };
        let value = self.eval(&op)?;
        Ok(self.push(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul { a, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul { a, b })
    }

    /// Multiplies every entry of `x` by the single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.record(Op::ScaleBy { x, s })
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        self.record_infallible(Op::MulConst { x, c })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.record_infallible(Op::Relu { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.record_infallible(Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.record_infallible(Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.record_infallible(Op::Exp { x })
    }

    /// Inverted dropout with a precomputed keep mask (entries 0 or 1/(1-p)).
    /// Eval-mode dropout is the identity and needs no node at all.
    pub fn dropout(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(mismatch("dropout", self.value(x).shape(), &[mask.len()]));
        }
        self.record(Op::Dropout { x, mask })
    }

    /// One-dimensional batch normalization over the rows of `x`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode,
    ) -> Result<Var> {
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mode,
            mean: Vec::new(),
            inv_std: Vec::new(),
        };
        let (value, op) = self.eval_batch_norm(op)?;
        Ok(self.push(op, value))
    }

    /// Batch mean and biased variance recorded by a train-mode batch norm.
    pub fn batch_norm_stats(&self, v: Var) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                mode: BatchNormMode::Train,
                mean,
                inv_std,
                ..
            } => {
                let var = inv_std.iter().map(|s| 1.0 / (s * s) - BN_EPS).collect();
                Some((mean.clone(), var))
            }
            _ => None,
        }
    }

    /// Row lookup into an embedding table `[vocab, dim]`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        self.gather_rows(table, idx)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.record(Op::Gather {
            x,
            idx: idx.to_vec(),
        })
    }

    /// `out[idx[i]] += x[i]` into a fresh `[rows, cols]` tensor.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        self.record(Op::ScatterAdd {
            x,
            idx: idx.to_vec(),
            rows,
        })
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        self.record(Op::ConcatCols { xs: xs.to_vec() })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.record(Op::SliceCols { x, start, len })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.record_infallible(Op::Sum { x })
    }

    /// Summed cross-entropy over rows; masked-out classes get a logit of
    /// negative infinity before normalization.
    pub fn masked_softmax_cross_entropy(
        &mut self,
        logits: Var,
        mask: &[bool],
        targets: &[usize],
    ) -> Result<Var> {
        self.record(Op::MaskedSoftmaxCe {
            logits,
            mask: mask.to_vec(),
            targets: targets.to_vec(),
            probs: Vec::new(),
        })
    }

    /// `-1/2 * sum(1 + logvar - mu^2 - exp(logvar))`
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var> {
        self.record(Op::GaussianKl { mu, logvar })
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let (value, op) = match op {
            Op::MaskedSoftmaxCe { .. } => self.eval_ce(op)?,
            op => (self.eval(&op)?, op),
        };
        Ok(self.push(op, value))
    }

    fn record_infallible(&mut self, op: Op) -> Var {
        let value = self.eval(&op).expect("unary op cannot fail");
        self.push(op, value)
    }

    fn v(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        Ok(match op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.v(*x), self.v(*w));
                let (n, k) = (xv.rows(), xv.cols());
                if wv.rows() != k || wv.shape().len() != 2 {
                    return Err(mismatch("linear", &[k, wv.cols()], wv.shape()));
                }
                let m = wv.cols();
                let mut out = matmul(xv.data(), wv.data(), n, k, m);
                if let Some(b) = b {
                    let bv = self.v(*b);
                    if bv.len() != m {
                        return Err(mismatch("linear bias", &[m], bv.shape()));
                    }
                    for row in out.chunks_mut(m) {
                        for (o, bb) in row.iter_mut().zip(bv.data()) {
                            *o += bb;
                        }
                    }
                }
                Tensor::with_shape(vec![n, m], out)
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.v(*a), self.v(*b));
                if av.cols() != bv.rows() {
                    return Err(mismatch("matmul", &[av.cols()], &[bv.rows()]));
                }
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                Tensor::with_shape(vec![n, m], matmul(av.data(), bv.data(), n, k, m))
            }
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                let (av, bv) = (self.v(*a), self.v(*b));
                if av.shape() != bv.shape() {
                    return Err(mismatch("elementwise", av.shape(), bv.shape()));
                }
                match op {
                    Op::Add { .. } => av.zip_map(bv, |x, y| x + y),
                    Op::Sub { .. } => av.zip_map(bv, |x, y| x - y),
                    _ => av.zip_map(bv, |x, y| x * y),
                }
            }
            Op::ScaleBy { x, s } => {
                let sv = self.v(*s);
                if sv.len() != 1 {
                    return Err(mismatch("scale_by", &[1], sv.shape()));
                }
                let c = sv.item();
                self.v(*x).map(|v| v * c)
            }
            Op::MulConst { x, c } => self.v(*x).map(|v| v * c),
            Op::Relu { x } => self.v(*x).map(|v| v.max(0.0)),
            Op::Tanh { x } => self.v(*x).map(f64::tanh),
            Op::Sigmoid { x } => self.v(*x).map(sigmoid),
            Op::Exp { x } => self.v(*x).map(f64::exp),
            Op::Dropout { x, mask } => {
                let xv = self.v(*x);
                Tensor::with_shape(
                    xv.shape().to_vec(),
                    xv.data().iter().zip(mask).map(|(a, m)| a * m).collect(),
                )
            }
            Op::BatchNorm { .. } => unreachable!("handled by eval_batch_norm"),
            Op::Gather { x, idx } => {
                let xv = self.v(*x);
                let c = xv.cols();
                let mut out = Vec::with_capacity(idx.len() * c);
                for &i in idx {
                    if i >= xv.rows() {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: "gather_rows",
                            index: i,
                            len: xv.rows(),
                        });
                    }
                    out.extend_from_slice(xv.row(i));
                }
                Tensor::with_shape(vec![idx.len(), c], out)
            }
            Op::ScatterAdd { x, idx, rows } => {
                let xv = self.v(*x);
                if idx.len() != xv.rows() {
                    return Err(mismatch("scatter_add_rows", &[xv.rows()], &[idx.len()]));
                }
                let c = xv.cols();
                let mut out = vec![0.0; rows * c];
                for (r, &i) in idx.iter().enumerate() {
                    if i >= *rows {
                        return Err(AutodiffError::IndexOutOfRange {
                            op: "scatter_add_rows",
                            index: i,
                            len: *rows,
                        });
                    }
                    for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(xv.row(r)) {
                        *o += v;
                    }
                }
                Tensor::with_shape(vec![*rows, c], out)
            }
            Op::ConcatCols { xs } => {
                let n = self.v(xs[0]).rows();
                for x in xs {
                    if self.v(*x).rows() != n {
                        return Err(mismatch("concat_cols", &[n], &[self.v(*x).rows()]));
                    }
                }
                let total: usize = xs.iter().map(|x| self.v(*x).cols()).sum();
                let mut out = Vec::with_capacity(n * total);
                for r in 0..n {
                    for x in xs {
                        out.extend_from_slice(self.v(*x).row(r));
                    }
                }
                Tensor::with_shape(vec![n, total], out)
            }
            Op::SliceCols { x, start, len } => {
                let xv = self.v(*x);
                if start + len > xv.cols() {
                    return Err(mismatch("slice_cols", &[start + len], &[xv.cols()]));
                }
                let mut out = Vec::with_capacity(xv.rows() * len);
                for r in 0..xv.rows() {
                    out.extend_from_slice(&xv.row(r)[*start..start + len]);
                }
                Tensor::with_shape(vec![xv.rows(), *len], out)
            }
            Op::Sum { x } => Tensor::scalar(self.v(*x).sum()),
            Op::MaskedSoftmaxCe { .. } => unreachable!("handled by eval_ce"),
            Op::GaussianKl { mu, logvar } => {
                let (m, lv) = (self.v(*mu), self.v(*logvar));
                if m.shape() != lv.shape() {
                    return Err(mismatch("gaussian_kl", m.shape(), lv.shape()));
                }
                let s: f64 = m
                    .data()
                    .iter()
                    .zip(lv.data())
                    .map(|(mu, lv)| 1.0 + lv - mu * mu - lv.exp())
                    .sum();
                Tensor::scalar(-0.5 * s)
            }
        })
    }

    fn eval_batch_norm(&self, op: Op) -> Result<(Tensor, Op)> {
        let Op::BatchNorm {
            x,
            gamma,
            beta,
            mode,
            ..
        } = op
        else {
            unreachable!()
        };
        let xv = self.v(x);
        let (n, d) = (xv.rows(), xv.cols());
        let (g, b) = (self.v(gamma), self.v(beta));
        if g.len() != d || b.len() != d {
            return Err(mismatch("batch_norm", &[d], g.shape()));
        }
        let (mean, inv_std) = match &mode {
            BatchNormMode::Train => {
                if n < 2 {
                    return Err(AutodiffError::BatchTooSmall { rows: n });
                }
                let mut mean = vec![0.0; d];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let inv_std: Vec<f64> = var
                    .iter()
                    .map(|s| 1.0 / (s / n as f64 + BN_EPS).sqrt())
                    .collect();
                (mean, inv_std)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != d || var.len() != d {
                    return Err(mismatch("batch_norm running stats", &[d], &[mean.len()]));
                }
                let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + BN_EPS).sqrt()).collect();
                (mean.clone(), inv_std)
            }
        };
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            for (j, v) in xv.row(r).iter().enumerate() {
                out.push(g.data()[j] * (v - mean[j]) * inv_std[j] + b.data()[j]);
            }
        }
        let value = Tensor::with_shape(vec![n, d], out);
        Ok((
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            },
        ))
    }

    fn eval_ce(&self, op: Op) -> Result<(Tensor, Op)> {
        let Op::MaskedSoftmaxCe {
            logits,
            mask,
            targets,
            ..
        } = op
        else {
            unreachable!()
        };
        let lv = self.v(logits);
        let (n, c) = (lv.rows(), lv.cols());
        if mask.len() != n * c || targets.len() != n {
            return Err(mismatch(
                "masked_softmax_cross_entropy",
                &[n, c],
                &[targets.len(), mask.len() / n.max(1)],
            ));
        }
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = lv.row(r);
            let m = &mask[r * c..(r + 1) * c];
            let t = targets[r];
            if !m.iter().any(|&b| b) {
                return Err(AutodiffError::MaskAllFalse { row: r });
            }
            if t >= c || !m[t] {
                return Err(AutodiffError::TargetMasked { row: r, target: t });
            }
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &b)| b)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    probs[r * c + j] = e;
                    z += e;
                }
            }
            for p in &mut probs[r * c..(r + 1) * c] {
                *p /= z;
            }
            loss += -(row[t] - max - z.ln());
        }
        Ok((
            Tensor::scalar(loss),
            Op::MaskedSoftmaxCe {
                logits,
                mask,
                targets,
                probs,
            },
        ))
    }

    /// Recomputes every non-leaf value from its recorded inputs in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut g = Graph {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for node in &self.nodes {
            let value = match &node.op {
                Op::Leaf => node.value.clone(),
                op @ Op::BatchNorm { .. } => g.eval_batch_norm(op.clone())?.0,
                op @ Op::MaskedSoftmaxCe { .. } => g.eval_ce(op.clone())?.0,
                op => g.eval(op)?,
            };
            g.nodes.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(g.nodes.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let ov = self.v(out);
        if ov.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: ov.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Tensor::full(ov.shape(), 1.0));
        for i in (0..=out.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            self.backprop(&node.op, &node.value, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, op: &Op, out: &Tensor, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.v(*x), self.v(*w));
                let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
                let gx = matmul_nt(gout.data(), wv.data(), n, m, k);
                acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
                let gw = matmul_tn(xv.data(), gout.data(), n, k, m);
                acc(*w, Tensor::with_shape(wv.shape().to_vec(), gw));
                if let Some(b) = b {
                    let mut gb = vec![0.0; m];
                    for row in gout.data().chunks(m) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*b, Tensor::with_shape(self.v(*b).shape().to_vec(), gb));
                }
            }
            Op::MatMul { a, b } => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let ga = matmul_nt(gout.data(), bv.data(), n, m, k);
                acc(*a, Tensor::with_shape(av.shape().to_vec(), ga));
                let gb = matmul_tn(av.data(), gout.data(), n, k, m);
                acc(*b, Tensor::with_shape(bv.shape().to_vec(), gb));
            }
            Op::Add { a, b } => {
                acc(*a, gout.clone());
                acc(*b, gout.clone());
            }
            Op::Sub { a, b } => {
                acc(*a, gout.clone());
                acc(*b, gout.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.v(*a), self.v(*b));
                acc(*a, gout.zip_map(bv, |g, y| g * y));
                acc(*b, gout.zip_map(av, |g, x| g * x));
            }
            Op::ScaleBy { x, s } => {
                let (xv, sv) = (self.v(*x), self.v(*s));
                let c = sv.item();
                acc(*x, gout.map(|g| g * c));
                let gs: f64 = gout.data().iter().zip(xv.data()).map(|(g, v)| g * v).sum();
                acc(*s, Tensor::with_shape(sv.shape().to_vec(), vec![gs]));
            }
            Op::MulConst { x, c } => acc(*x, gout.map(|g| g * c)),
            Op::Relu { x } => {
                let xv = self.v(*x);
                acc(*x, gout.zip_map(xv, |g, v| if v > 0.0 { g } else { 0.0 }));
            }
            Op::Tanh { x } => acc(*x, gout.zip_map(out, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid { x } => acc(*x, gout.zip_map(out, |g, y| g * y * (1.0 - y))),
            Op::Exp { x } => acc(*x, gout.zip_map(out, |g, y| g * y)),
            Op::Dropout { x, mask } => {
                let data = gout.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                acc(*x, Tensor::with_shape(gout.shape().to_vec(), data));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mode,
                mean,
                inv_std,
            } => {
                let xv = self.v(*x);
                let gv = self.v(*gamma);
                let (n, d) = (xv.rows(), xv.cols());
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                // xhat and per-feature reductions
                let mut sum_g = vec![0.0; d];
                let mut sum_g_xhat = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let xhat = (xv.get(r, j) - mean[j]) * inv_std[j];
                        let g = gout.get(r, j);
                        ggamma[j] += g * xhat;
                        gbeta[j] += g;
                        sum_g[j] += g * gv.data()[j];
                        sum_g_xhat[j] += g * gv.data()[j] * xhat;
                    }
                }
                let mut gx = vec![0.0; n * d];
                match mode {
                    BatchNormMode::Train => {
                        let nf = n as f64;
                        for r in 0..n {
                            for j in 0..d {
                                let xhat = (xv.get(r, j) - mean[j]) * inv_std[j];
                                let gxhat = gout.get(r, j) * gv.data()[j];
                                gx[r * d + j] = inv_std[j] / nf
                                    * (nf * gxhat - sum_g[j] - xhat * sum_g_xhat[j]);
                            }
                        }
                    }
                    BatchNormMode::Eval { .. } => {
                        for r in 0..n {
                            for j in 0..d {
                                gx[r * d + j] = gout.get(r, j) * gv.data()[j] * inv_std[j];
                            }
                        }
                    }
                }
                acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
                acc(*gamma, Tensor::with_shape(gv.shape().to_vec(), ggamma));
                acc(
                    *beta,
                    Tensor::with_shape(self.v(*beta).shape().to_vec(), gbeta),
                );
            }
            Op::Gather { x, idx } => {
                let xv = self.v(*x);
                let c = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (o, g) in gx[i * c..(i + 1) * c].iter_mut().zip(gout.row(r)) {
                        *o += g;
                    }
                }
                acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
            }
            Op::ScatterAdd { x, idx, .. } => {
                let xv = self.v(*x);
                let mut gx = Vec::with_capacity(xv.len());
                for &i in idx {
                    gx.extend_from_slice(gout.row(i));
                }
                acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
            }
            Op::ConcatCols { xs } => {
                let n = gout.rows();
                let mut offset = 0;
                for x in xs {
                    let xv = self.v(*x);
                    let c = xv.cols();
                    let mut gx = Vec::with_capacity(n * c);
                    for r in 0..n {
                        gx.extend_from_slice(&gout.row(r)[offset..offset + c]);
                    }
                    acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
                    offset += c;
                }
            }
            Op::SliceCols { x, start, len } => {
                let xv = self.v(*x);
                let c = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    gx[r * c + start..r * c + start + len].copy_from_slice(gout.row(r));
                }
                acc(*x, Tensor::with_shape(xv.shape().to_vec(), gx));
            }
            Op::Sum { x } => {
                let g = gout.item();
                acc(*x, Tensor::full(self.v(*x).shape(), g));
            }
            Op::MaskedSoftmaxCe {
                logits,
                targets,
                probs,
                ..
            } => {
                let lv = self.v(*logits);
                let c = lv.cols();
                let g = gout.item();
                let mut gl: Vec<f64> = probs.iter().map(|p| p * g).collect();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] -= g;
                }
                acc(*logits, Tensor::with_shape(lv.shape().to_vec(), gl));
            }
            Op::GaussianKl { mu, logvar } => {
                let g = gout.item();
                let (m, lv) = (self.v(*mu), self.v(*logvar));
                acc(*mu, m.map(|v| g * v));
                acc(*logvar, lv.map(|v| g * 0.5 * (v.exp() - 1.0)));
            }
        }
    }
}
