//! Wengert-list tape: every primitive appends a node holding its forward
//! value, and [`Tape::backward`] replays the list in reverse.

use super::tensor::{self, gemm, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: f64 },
    MaskedLogSoftmax { x: Var },
    Gather { x: Var, index: Vec<usize> },
    IndexAdd { x: Var, index: Vec<usize> },
    Concat { parts: Vec<Var> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    AddScalar { x: Var, s: Var },
    Square { x: Var },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Vec<f64> },
    SegmentCumsum { x: Var, starts: Vec<bool> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine { .. } => "affine",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::MaskedLogSoftmax { .. } => "masked_log_softmax",
            Op::Gather { .. } => "gather",
            Op::IndexAdd { .. } => "index_add",
            Op::Concat { .. } => "concat",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Square { .. } => "square",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::SegmentCumsum { .. } => "segment_cumsum",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; build one per loss evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// First node whose forward value was NaN or infinite.
    non_finite: Option<(usize, &'static str)>,
}

/// Gradients of a scalar with respect to every node of the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(id)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Error if any forward value so far was not finite.
    pub fn check_finite(&self) -> Result<(), AutodiffError> {
        match self.non_finite {
            Some((node, op)) => Err(AutodiffError::NonFinite { node, op }),
            None => Ok(()),
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let value = tensor::affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Op::Affine { x, w, b }, value, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = tensor::leaky_relu(self.value(x), slope);
        let rg = self.rg(x);
        self.push(Op::LeakyRelu { x, slope }, value, rg)
    }

    /// Row-wise log-softmax; `mask[i] == false` marks an illegal entry.
    pub fn masked_log_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let value = tensor::masked_log_softmax(self.value(x), mask)?;
        let rg = self.rg(x);
        Ok(self.push(Op::MaskedLogSoftmax { x }, value, rg))
    }

    /// 1-D vector of `x`'s entries at the given flat indices.
    pub fn gather(&mut self, x: Var, index: Vec<usize>) -> Result<Var, AutodiffError> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather",
                index: bad,
                len: src.len(),
            });
        }
        let value = Tensor::vector(index.iter().map(|&i| src[i]).collect());
        let rg = self.rg(x);
        Ok(self.push(Op::Gather { x, index }, value, rg))
    }

    /// `out[index[i]] += x[i]` into a vector of length `out_len`.
    pub fn index_add(&mut self, x: Var, index: Vec<usize>, out_len: usize) -> Result<Var, AutodiffError> {
        let src = self.value(x).data();
        if index.len() != src.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "index_add",
                expected: vec![src.len()],
                found: vec![index.len()],
            });
        }
        let mut out = vec![0.0; out_len];
        for (&i, &v) in index.iter().zip(src) {
            if i >= out_len {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "index_add",
                    index: i,
                    len: out_len,
                });
            }
            out[i] += v;
        }
        let rg = self.rg(x);
        Ok(self.push(Op::IndexAdd { x, index }, Tensor::vector(out), rg))
    }

    /// Flattened concatenation into a 1-D vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            Tensor::vector(data),
            rg,
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                expected: sa.to_vec(),
                found: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub { a, b }, value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul { a, b }, value, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Scale { x, factor }, value, rg)
    }

    /// `x + s` with a one-element `s` broadcast over `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, AutodiffError> {
        let Some(sv) = self.value(s).item() else {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_scalar",
                expected: vec![1],
                found: self.value(s).shape().to_vec(),
            });
        };
        let t = self.value(x);
        let value =
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v + sv).collect()).expect("same shape");
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Op::AddScalar { x, s }, value, rg))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value =
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * v).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(Op::Square { x }, value, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(x);
        self.push(Op::Sum { x }, value, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let weights = vec![1.0 / n as f64; self.value(x).len()];
        self.weighted_sum(x, weights).expect("weights sized to input")
    }

    /// `sum_i weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if weights.len() != t.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum",
                expected: vec![t.len()],
                found: vec![weights.len()],
            });
        }
        let value = Tensor::scalar(t.data().iter().zip(&weights).map(|(v, w)| v * w).sum());
        let rg = self.rg(x);
        Ok(self.push(Op::WeightedSum { x, weights }, value, rg))
    }

    /// Running sum that restarts wherever `starts[i]` is true.
    pub fn segment_cumsum(&mut self, x: Var, starts: Vec<bool>) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        if starts.len() != t.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_cumsum",
                expected: vec![t.len()],
                found: vec![starts.len()],
            });
        }
        let mut out = Vec::with_capacity(t.len());
        let mut acc = 0.0;
        for (&v, &start) in t.data().iter().zip(&starts) {
            acc = if start { v } else { acc + v };
            out.push(acc);
        }
        let rg = self.rg(x);
        Ok(self.push(Op::SegmentCumsum { x, starts }, Tensor::vector(out), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        self.check_finite()?;
        let loss_shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(loss_shape, vec![1.0]).expect("scalar"));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[id] = Some(dy);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(var) {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| Tensor::zeros(self.value(var).shape()));
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, inputs, outputs) = (xv.rows(), xv.cols(), wv.cols());
                self.accumulate(grads, *x, |dx| {
                    gemm(rows, outputs, inputs, g, false, wv.data(), true, 1.0, dx)
                });
                self.accumulate(grads, *w, |dw| {
                    gemm(inputs, rows, outputs, xv.data(), true, g, false, 1.0, dw)
                });
                self.accumulate(grads, *b, |db| {
                    for row in g.chunks(outputs) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &v), &gi) in dx.iter_mut().zip(xv).zip(g) {
                        *d += if v > 0.0 { gi } else { slope * gi };
                    }
                });
            }
            Op::MaskedLogSoftmax { x } => {
                let y = node.value.data();
                let cols = node.value.cols();
                self.accumulate(grads, *x, |dx| {
                    for ((drow, yrow), grow) in dx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let total: f64 = grow.iter().sum();
                        for ((d, &yi), &gi) in drow.iter_mut().zip(yrow).zip(grow) {
                            *d += gi - yi.exp() * total;
                        }
                    }
                });
            }
            Op::Gather { x, index } => {
                self.accumulate(grads, *x, |dx| {
                    for (&i, &gi) in index.iter().zip(g) {
                        dx[i] += gi;
                    }
                });
            }
            Op::IndexAdd { x, index } => {
                self.accumulate(grads, *x, |dx| {
                    for (d, &i) in dx.iter_mut().zip(index) {
                        *d += g[i];
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let slice = &g[offset..offset + n];
                    self.accumulate(grads, p, |dp| dp.iter_mut().zip(slice).for_each(|(d, v)| *d += v));
                    offset += n;
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |da| da.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                self.accumulate(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, v)| *d += v));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |da| da.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                self.accumulate(grads, *b, |db| db.iter_mut().zip(g).for_each(|(d, v)| *d -= v));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |da| {
                    for ((d, &gi), &o) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * o;
                    }
                });
                self.accumulate(grads, *b, |db| {
                    for ((d, &gi), &o) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * o;
                    }
                });
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, |dx| {
                    dx.iter_mut().zip(g).for_each(|(d, v)| *d += factor * v)
                });
            }
            Op::AddScalar { x, s } => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().zip(g).for_each(|(d, v)| *d += v));
                self.accumulate(grads, *s, |ds| ds[0] += g.iter().sum::<f64>());
            }
            Op::Square { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |dx| {
                    for ((d, &v), &gi) in dx.iter_mut().zip(xv).zip(g) {
                        *d += 2.0 * v * gi;
                    }
                });
            }
            Op::Sum { x } => {
                self.accumulate(grads, *x, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::WeightedSum { x, weights } => {
                self.accumulate(grads, *x, |dx| {
                    dx.iter_mut().zip(weights).for_each(|(d, w)| *d += g[0] * w)
                });
            }
            Op::SegmentCumsum { x, starts } => {
                self.accumulate(grads, *x, |dx| {
                    let mut acc = 0.0;
                    for i in (0..g.len()).rev() {
                        let continues = i + 1 < g.len() && !starts[i + 1];
                        acc = if continues { acc + g[i] } else { g[i] };
                        dx[i] += acc;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.5, -2.0, 3.0]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn squared_product_chain_rule() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(2.0));
        let x = tape.constant(Tensor::scalar(3.0));
        let wx = tape.mul(w, x).unwrap();
        let loss = tape.square(wx);
        assert_eq!(tape.value(loss).item(), Some(36.0));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).item(), Some(36.0));
    }

    #[test]
    fn detached_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let q = tape.param(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(q).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.square(w);
        assert!(matches!(
            tape.backward(sq),
            Err(AutodiffError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn non_finite_forward_value_is_a_hard_error() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(f64::MAX));
        let sq = tape.square(w);
        let loss = tape.sum(sq);
        assert!(matches!(
            tape.backward(loss),
            Err(AutodiffError::NonFinite { op: "square", .. })
        ));
    }

    #[test]
    fn backward_leaves_forward_values_untouched() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![0.1, -0.7, 1.3]));
        let y = tape.masked_log_softmax(w, &[true, false, true]).unwrap();
        let sq = tape.square(y);
        let loss = tape.sum(sq);
        let before: Vec<Tensor> = (0..tape.len()).map(|i| tape.nodes[i].value.clone()).collect();
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        for (i, b) in before.iter().enumerate() {
            assert!(tape.nodes[i].value.bits_eq(b));
        }
    }

    #[test]
    fn segment_cumsum_backward_is_reverse_cumsum() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
        let c = tape
            .segment_cumsum(x, vec![true, false, false, true, false])
            .unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 6.0, 4.0, 9.0]);
        let loss = tape
            .weighted_sum(c, vec![1.0, 10.0, 100.0, 1000.0, 10000.0])
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[111.0, 110.0, 100.0, 11000.0, 10000.0]);
    }
}
