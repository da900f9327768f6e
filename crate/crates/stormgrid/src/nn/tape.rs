use super::{gelu_grad_scalar, gelu_scalar, NnError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `[m,n] + [1,n]`, the second operand broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    Gelu(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    },
    MeanRows(NodeId),
    Mse(NodeId, NodeId),
    Transpose(NodeId),
    SliceCols {
        x: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    AddN(Vec<NodeId>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for a node that was created with `requires_grad`; zero if it
    /// never influenced the loss.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads[id.0].take()
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Records a computation graph op by op; values are computed eagerly and a
/// single reverse sweep yields every gradient. Construction order is the
/// topological order, so each node is visited exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Leaf holding data the loss is not differentiated against.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId, NnError> {
        value.check_finite("constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Leaf holding a trainable parameter.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId, NnError> {
        value.check_finite("param")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rq = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), rq))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).add(self.value(b))?;
        let rq = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rq))
    }

    /// Broadcast a `1 x n` row over every row of an `m x n` tensor.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId, NnError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                detail: format!("{:?} + {:?}", x.shape(), r.shape()),
            });
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for c in 0..value.cols() {
                let v = value.get(i, c) + r.get(0, c);
                value.set(i, c, v);
            }
        }
        value.check_finite("add_row")?;
        let rq = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::AddRow(a, row), rq))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, NnError> {
        let value = self.value(a).scale(s)?;
        let rq = self.requires(a);
        Ok(self.push(value, Op::Scale(a, s), rq))
    }

    /// Numerically stable row-wise softmax (max-subtracted exponentials).
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let x = self.value(a);
        let mut value = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let exps: Vec<f64> = row
                .iter()
                .map(|&v| {
                    let e = (v - max).exp();
                    sum += e;
                    e
                })
                .collect();
            for (c, e) in exps.into_iter().enumerate() {
                value.set(r, c, e / sum);
            }
        }
        value.check_finite("softmax_rows")?;
        let rq = self.requires(a);
        Ok(self.push(value, Op::SoftmaxRows(a), rq))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).map(gelu_scalar);
        value.check_finite("gelu")?;
        let rq = self.requires(a);
        Ok(self.push(value, Op::Gelu(a), rq))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).map(|v| v.max(0.0));
        let rq = self.requires(a);
        Ok(self.push(value, Op::Relu(a), rq))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).map(f64::tanh);
        let rq = self.requires(a);
        Ok(self.push(value, Op::Tanh(a), rq))
    }

    /// Row-wise normalization to zero mean / unit variance followed by the
    /// learned affine map. `gain` and `bias` are `1 x d`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, NnError> {
        let (xv, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if d < 2 {
            return Err(NnError::InvalidDimension(format!(
                "layer_norm needs at least 2 columns, got {d}"
            )));
        }
        if g.shape() != (1, d) || b.shape() != (1, d) {
            return Err(NnError::ShapeMismatch {
                op: "layer_norm",
                detail: format!("x {:?}, gain {:?}, bias {:?}", xv.shape(), g.shape(), b.shape()),
            });
        }
        let mut value = Tensor::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for c in 0..d {
                let norm = (row[c] - mean) * inv_std;
                value.set(r, c, g.get(0, c) * norm + b.get(0, c));
            }
        }
        value.check_finite("layer_norm")?;
        let rq = self.requires(x) || self.requires(gain) || self.requires(bias);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias }, rq))
    }

    /// Mean over rows, `m x n -> 1 x n`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let x = self.value(a);
        let value = x.col_sums().scale(1.0 / x.rows() as f64)?;
        let rq = self.requires(a);
        Ok(self.push(value, Op::MeanRows(a), rq))
    }

    /// Mean squared error between two same-shape tensors, producing `1 x 1`.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NnError> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(NnError::ShapeMismatch {
                op: "mse",
                detail: format!("{:?} vs {:?}", p.shape(), t.shape()),
            });
        }
        let n = p.len() as f64;
        let sum: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b).powi(2))
            .sum();
        let value = Tensor::scalar(sum / n)?;
        let rq = self.requires(pred) || self.requires(target);
        Ok(self.push(value, Op::Mse(pred, target), rq))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let value = self.value(a).transpose();
        let rq = self.requires(a);
        Ok(self.push(value, Op::Transpose(a), rq))
    }

    /// Columns `[start, start + len)` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let x = self.value(a);
        if start + len > x.cols() {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("[{start}, {}) of {} cols", start + len, x.cols()),
            });
        }
        let mut value = Tensor::zeros(x.rows(), len);
        for r in 0..x.rows() {
            for c in 0..len {
                value.set(r, c, x.get(r, start + c));
            }
        }
        let rq = self.requires(a);
        Ok(self.push(value, Op::SliceCols { x: a, start, len }, rq))
    }

    /// Concatenate same-row-count tensors along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        if parts.is_empty() {
            return Err(NnError::InvalidDimension("concat_cols of nothing".into()));
        }
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {} vs {}", rows, t.rows()),
                });
            }
            for r in 0..rows {
                for c in 0..t.cols() {
                    value.set(r, offset + c, t.get(r, c));
                }
            }
            offset += t.cols();
        }
        let rq = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rq))
    }

    /// Elementwise sum of same-shape tensors.
    pub fn add_n(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        if parts.is_empty() {
            return Err(NnError::InvalidDimension("add_n of nothing".into()));
        }
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            value = value.add(self.value(p))?;
        }
        let rq = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::AddN(parts.to_vec()), rq))
    }

    /// Reverse sweep from a scalar loss. Consumes the tape's ability to run
    /// again; re-record the graph for another pass.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NnError> {
        if self.consumed {
            return Err(NnError::TapeConsumed);
        }
        self.consumed = true;
        let loss_val = self.value(loss);
        if loss_val.shape() != (1, 1) {
            return Err(NnError::NonScalarLoss {
                rows: loss_val.rows(),
                cols: loss_val.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0)?);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.apply_rule(idx, &dout, &mut grads)?;
            grads[idx] = Some(dout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.requires(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.accumulate(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn apply_rule(
        &self,
        idx: usize,
        dout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NnError> {
        match self.nodes[idx].op.clone() {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires(a) {
                    let d = dout.matmul(&self.value(b).transpose())?;
                    self.accumulate(grads, a, d);
                }
                if self.requires(b) {
                    let d = self.value(a).transpose().matmul(dout)?;
                    self.accumulate(grads, b, d);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, dout.clone());
                self.accumulate(grads, b, dout.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, a, dout.clone());
                self.accumulate(grads, row, dout.col_sums());
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, a, dout.scale(s)?);
            }
            Op::SoftmaxRows(a) => {
                let y = self.value(NodeId(idx));
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y
                        .row(r)
                        .iter()
                        .zip(dout.row(r))
                        .map(|(&yv, &dv)| yv * dv)
                        .sum();
                    for c in 0..y.cols() {
                        d.set(r, c, y.get(r, c) * (dout.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::Gelu(a) => {
                let x = self.value(a);
                let d = Tensor::from_vec(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(dout.data())
                        .map(|(&xv, &dv)| dv * gelu_grad_scalar(xv))
                        .collect(),
                )?;
                self.accumulate(grads, a, d);
            }
            Op::Relu(a) => {
                let x = self.value(a);
                let d = Tensor::from_vec(
                    x.rows(),
                    x.cols(),
                    x.data()
                        .iter()
                        .zip(dout.data())
                        .map(|(&xv, &dv)| if xv > 0.0 { dv } else { 0.0 })
                        .collect(),
                )?;
                self.accumulate(grads, a, d);
            }
            Op::Tanh(a) => {
                let y = self.value(NodeId(idx));
                let d = Tensor::from_vec(
                    y.rows(),
                    y.cols(),
                    y.data()
                        .iter()
                        .zip(dout.data())
                        .map(|(&yv, &dv)| dv * (1.0 - yv * yv))
                        .collect(),
                )?;
                self.accumulate(grads, a, d);
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(x);
                let g = self.value(gain);
                let d = xv.cols();
                let df = d as f64;
                let mut dx = Tensor::zeros(xv.rows(), d);
                let mut dgain = Tensor::zeros(1, d);
                let mut dbias = Tensor::zeros(1, d);
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let mean = row.iter().sum::<f64>() / df;
                    let var = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / df;
                    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    // dnorm = dy * gain; reduce over the row for the mean/var terms
                    let mut sum_dnorm = 0.0;
                    let mut sum_dnorm_xhat = 0.0;
                    let dnorm: Vec<f64> = (0..d)
                        .map(|c| {
                            let dn = dout.get(r, c) * g.get(0, c);
                            let xhat = (row[c] - mean) * inv_std;
                            sum_dnorm += dn;
                            sum_dnorm_xhat += dn * xhat;
                            dn
                        })
                        .collect();
                    for c in 0..d {
                        let xhat = (row[c] - mean) * inv_std;
                        let v = inv_std * (dnorm[c] - sum_dnorm / df - xhat * sum_dnorm_xhat / df);
                        dx.set(r, c, v);
                        dgain.set(0, c, dgain.get(0, c) + dout.get(r, c) * xhat);
                        dbias.set(0, c, dbias.get(0, c) + dout.get(r, c));
                    }
                }
                self.accumulate(grads, x, dx);
                self.accumulate(grads, gain, dgain);
                self.accumulate(grads, bias, dbias);
            }
            Op::MeanRows(a) => {
                let x = self.value(a);
                let m = x.rows() as f64;
                let mut d = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        d.set(r, c, dout.get(0, c) / m);
                    }
                }
                self.accumulate(grads, a, d);
            }
            Op::Mse(pred, target) => {
                let p = self.value(pred);
                let t = self.value(target);
                let n = p.len() as f64;
                let scale = dout.get(0, 0) * 2.0 / n;
                let diff: Vec<f64> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                if self.requires(pred) {
                    let d = Tensor::from_vec(p.rows(), p.cols(), diff.clone())?;
                    self.accumulate(grads, pred, d);
                }
                if self.requires(target) {
                    let d = Tensor::from_vec(p.rows(), p.cols(), diff.iter().map(|v| -v).collect())?;
                    self.accumulate(grads, target, d);
                }
            }
            Op::Transpose(a) => {
                self.accumulate(grads, a, dout.transpose());
            }
            Op::SliceCols { x, start, len } => {
                let full = self.value(x);
                let mut d = Tensor::zeros(full.rows(), full.cols());
                for r in 0..full.rows() {
                    for c in 0..len {
                        d.set(r, start + c, dout.get(r, c));
                    }
                }
                self.accumulate(grads, x, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.value(p).cols();
                    let rows = self.value(p).rows();
                    let mut d = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d.set(r, c, dout.get(r, offset + c));
                        }
                    }
                    self.accumulate(grads, p, d);
                    offset += cols;
                }
            }
            Op::AddN(parts) => {
                for p in parts {
                    self.accumulate(grads, p, dout.clone());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of a scalar-valued graph with respect to
    /// one leaf tensor; the oracle for every analytic rule below.
    fn numeric_grad(
        build: impl Fn(&mut Tape, NodeId) -> NodeId,
        x0: &Tensor,
        eps: f64,
    ) -> Tensor {
        let mut out = Tensor::zeros(x0.rows(), x0.cols());
        for i in 0..x0.len() {
            let mut lo = x0.clone();
            lo.data_mut()[i] -= eps;
            let mut hi = x0.clone();
            hi.data_mut()[i] += eps;
            let eval = |t: Tensor| {
                let mut tape = Tape::new();
                let x = tape.param(t).unwrap();
                let y = build(&mut tape, x);
                tape.value(y).item().unwrap()
            };
            out.data_mut()[i] = (eval(hi) - eval(lo)) / (2.0 * eps);
        }
        out
    }

    fn analytic_grad(build: impl Fn(&mut Tape, NodeId) -> NodeId, x0: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone()).unwrap();
        let y = build(&mut tape, x);
        let mut grads = tape.backward(y).unwrap();
        grads.take(x).unwrap()
    }

    fn assert_grad_close(
        build: impl Fn(&mut Tape, NodeId) -> NodeId + Copy,
        x0: &Tensor,
        rel_tol: f64,
    ) {
        let num = numeric_grad(build, x0, 1e-5);
        let ana = analytic_grad(build, x0);
        for i in 0..x0.len() {
            let (n, a) = (num.data()[i], ana.data()[i]);
            let denom = n.abs().max(a.abs()).max(1e-8);
            assert!(
                ((n - a) / denom).abs() < rel_tol,
                "element {i}: numeric {n} vs analytic {a}"
            );
        }
    }

    fn seeded(rows: usize, cols: usize, seed: u64) -> Tensor {
        // tiny deterministic LCG keeps these tests free of RNG plumbing
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) * 4.0 - 2.0
            })
            .collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_grad_matches_finite_differences() {
        let w = seeded(3, 4, 7);
        let build = move |tape: &mut Tape, x: NodeId| {
            let wid = tape.constant(w.clone()).unwrap();
            let y = tape.matmul(x, wid).unwrap();
            let t = tape.constant(Tensor::zeros(2, 4)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&build, &seeded(2, 3, 1), 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_grad_checks() {
        let x0 = seeded(3, 5, 2);
        let mut tape = Tape::new();
        let x = tape.param(x0.clone()).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        for r in 0..3 {
            let sum: f64 = tape.value(y).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(tape.value(y).row(r).iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let build = |tape: &mut Tape, x: NodeId| {
            let s = tape.softmax_rows(x).unwrap();
            let t = tape.constant(Tensor::zeros(3, 5)).unwrap();
            tape.mse(s, t).unwrap()
        };
        assert_grad_close(&build, &x0, 1e-6);
    }

    #[test]
    fn softmax_uniform_and_saturated_rows() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_vec(2, 3, vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let y = tape.softmax_rows(x).unwrap();
        for c in 0..3 {
            assert!((tape.value(y).get(0, c) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((tape.value(y).get(1, 0) - 1.0).abs() < 1e-12);
        assert!(tape.value(y).get(1, 1) < 1e-12);
    }

    #[test]
    fn gelu_grad_checks() {
        let build = |tape: &mut Tape, x: NodeId| {
            let g = tape.gelu(x).unwrap();
            let t = tape.constant(Tensor::zeros(2, 4)).unwrap();
            tape.mse(g, t).unwrap()
        };
        assert_grad_close(&build, &seeded(2, 4, 3), 1e-5);
    }

    #[test]
    fn tanh_and_relu_grad_checks() {
        let tanh_build = |tape: &mut Tape, x: NodeId| {
            let y = tape.tanh(x).unwrap();
            let t = tape.constant(Tensor::zeros(2, 4)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&tanh_build, &seeded(2, 4, 4), 1e-5);
        // keep relu probes away from the kink at zero
        let x0 = seeded(2, 4, 5).map(|v| if v.abs() < 0.2 { v + 0.5 } else { v });
        let relu_build = |tape: &mut Tape, x: NodeId| {
            let y = tape.relu(x).unwrap();
            let t = tape.constant(Tensor::zeros(2, 4)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&relu_build, &x0, 1e-5);
    }

    #[test]
    fn layer_norm_constant_row_is_zero_before_affine() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_vec(1, 4, vec![3.0, 3.0, 3.0, 3.0]).unwrap())
            .unwrap();
        let gain = tape.constant(Tensor::from_vec(1, 4, vec![1.0; 4]).unwrap()).unwrap();
        let bias = tape.constant(Tensor::zeros(1, 4)).unwrap();
        let y = tape.layer_norm(x, gain, bias).unwrap();
        for c in 0..4 {
            assert!(tape.value(y).get(0, c).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(seeded(3, 6, 9)).unwrap();
        let gain = tape.constant(Tensor::from_vec(1, 6, vec![1.0; 6]).unwrap()).unwrap();
        let bias = tape.constant(Tensor::zeros(1, 6)).unwrap();
        let y = tape.layer_norm(x, gain, bias).unwrap();
        for r in 0..3 {
            let row = tape.value(y).row(r);
            let mean: f64 = row.iter().sum::<f64>() / 6.0;
            let var: f64 = row.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12, "row {r} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "row {r} var {var}");
        }
    }

    #[test]
    fn layer_norm_grad_checks() {
        let build = |tape: &mut Tape, x: NodeId| {
            let gain = tape
                .constant(Tensor::from_vec(1, 5, vec![1.1, 0.9, 1.3, 0.8, 1.0]).unwrap())
                .unwrap();
            let bias = tape
                .constant(Tensor::from_vec(1, 5, vec![0.1, -0.2, 0.0, 0.3, -0.1]).unwrap())
                .unwrap();
            let y = tape.layer_norm(x, gain, bias).unwrap();
            let t = tape.constant(Tensor::zeros(3, 5)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&build, &seeded(3, 5, 11), 1e-5);
    }

    #[test]
    fn layer_norm_gain_bias_grads_check() {
        let x0 = seeded(3, 5, 12);
        let g0 = Tensor::from_vec(1, 5, vec![1.1, 0.9, 1.3, 0.8, 1.0]).unwrap();
        let x0c = x0.clone();
        let build = move |tape: &mut Tape, g: NodeId| {
            let x = tape.constant(x0c.clone()).unwrap();
            let bias = tape.constant(Tensor::zeros(1, 5)).unwrap();
            let y = tape.layer_norm(x, g, bias).unwrap();
            let t = tape.constant(Tensor::zeros(3, 5)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&build, &g0, 1e-6);
    }

    #[test]
    fn mse_values_and_grad() {
        let mut tape = Tape::new();
        let p = tape
            .param(Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap())
            .unwrap();
        let t = tape.constant(Tensor::zeros(1, 2)).unwrap();
        let l = tape.mse(p, t).unwrap();
        assert!((tape.value(l).item().unwrap() - 1.0).abs() < 1e-15);
        let mut grads = tape.backward(l).unwrap();
        let g = grads.take(p).unwrap();
        // 2*(pred-target)/n = 2*1/2 = 1
        assert!((g.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((g.get(0, 1) - 1.0).abs() < 1e-15);

        let build = |tape: &mut Tape, x: NodeId| {
            let t = tape.constant(seeded(2, 3, 20)).unwrap();
            tape.mse(x, t).unwrap()
        };
        assert_grad_close(&build, &seeded(2, 3, 21), 1e-6);
    }

    #[test]
    fn mse_identical_inputs_is_zero() {
        let mut tape = Tape::new();
        let v = seeded(2, 2, 30);
        let p = tape.constant(v.clone()).unwrap();
        let t = tape.constant(v).unwrap();
        let l = tape.mse(p, t).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn composite_chain_grad_checks() {
        // gelu(x . w) through mean_rows, slicing and concat
        let w = seeded(4, 6, 40);
        let build = move |tape: &mut Tape, x: NodeId| {
            let wid = tape.constant(w.clone()).unwrap();
            let h = tape.matmul(x, wid).unwrap();
            let g = tape.gelu(h).unwrap();
            let left = tape.slice_cols(g, 0, 3).unwrap();
            let right = tape.slice_cols(g, 3, 3).unwrap();
            let back = tape.concat_cols(&[right, left]).unwrap();
            let pooled = tape.mean_rows(back).unwrap();
            let t = tape.constant(Tensor::zeros(1, 6)).unwrap();
            tape.mse(pooled, t).unwrap()
        };
        assert_grad_close(&build, &seeded(3, 4, 41), 1e-4);
    }

    #[test]
    fn sum_loss_gradient_is_all_ones() {
        // loss = mean of w over 1x4 equals sum/4; gradient 1/4 each
        let mut tape = Tape::new();
        let w = tape.param(seeded(1, 4, 50)).unwrap();
        let pooled = tape.mean_rows(w).unwrap();
        let all = tape.add_n(&[pooled]).unwrap();
        // collapse 1x4 to scalar via matmul with ones
        let ones = tape.constant(Tensor::from_vec(4, 1, vec![1.0; 4]).unwrap()).unwrap();
        let s = tape.matmul(all, ones).unwrap();
        let mut grads = tape.backward(s).unwrap();
        let g = grads.take(w).unwrap();
        for i in 0..4 {
            assert!((g.data()[i] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0).unwrap()).unwrap();
        let t = tape.constant(Tensor::scalar(0.0).unwrap()).unwrap();
        let l = tape.mse(x, t).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l).unwrap_err(), NnError::TapeConsumed);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(seeded(2, 2, 60)).unwrap();
        let y = tape.tanh(x).unwrap();
        assert!(matches!(
            tape.backward(y).unwrap_err(),
            NnError::NonScalarLoss { rows: 2, cols: 2 }
        ));
    }

    #[test]
    fn add_row_broadcast_grad() {
        let build = |tape: &mut Tape, b: NodeId| {
            let x = tape.constant(seeded(3, 4, 70)).unwrap();
            let y = tape.add_row(x, b).unwrap();
            let t = tape.constant(Tensor::zeros(3, 4)).unwrap();
            tape.mse(y, t).unwrap()
        };
        assert_grad_close(&build, &seeded(1, 4, 71), 1e-6);
    }
}
