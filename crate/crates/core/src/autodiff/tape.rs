use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A value grid on the tape together with its gradient slot.
#[derive(Debug)]
pub struct Tensor {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
}

impl Tensor {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    ScaleShift { x: Var, alpha: Var, beta: Var },
    MaskFill { x: Var, keep: Vec<bool> },
    LayerNormRows { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mse { pred: Var, target: Var },
}

/// Linear record of operations in creation order.
///
/// Every operation's inputs are created before it, so the recording order is
/// a topological order and `backward` can replay it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
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

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Tensor {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        let rg = self.needs(&[x]);
        self.push(value, Op::Transpose(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Hadamard(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Multiplication by a fixed (non-trainable) scalar.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// Row-wise softmax with max subtraction. Entries equal to `-inf` get
    /// weight exactly zero.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// `alpha * x + beta` where `alpha` and `beta` are 1×1 tensors broadcast
    /// over `x`.
    pub fn scale_shift(&mut self, x: Var, alpha: Var, beta: Var) -> Result<Var> {
        for s in [alpha, beta] {
            if self.shape(s) != (1, 1) {
                return Err(Error::dim("scale_shift", self.shape(s), (1, 1)));
            }
        }
        let (a, b) = (self.value(alpha)[(0, 0)], self.value(beta)[(0, 0)]);
        let value = self.value(x).map(|v| a * v + b);
        let rg = self.needs(&[x, alpha, beta]);
        Ok(self.push(value, Op::ScaleShift { x, alpha, beta }, rg))
    }

    /// Keeps entries where `keep` is true and replaces the rest with `fill`.
    /// Replaced entries pass no gradient.
    pub fn mask_fill(&mut self, x: Var, keep: Vec<bool>, fill: f64) -> Result<Var> {
        let src = self.value(x);
        if keep.len() != src.len() {
            return Err(Error::contract(format!(
                "mask_fill pattern has {} entries for a {:?} tensor",
                keep.len(),
                src.shape()
            )));
        }
        let mut value = src.clone();
        for (v, &k) in value.as_mut_slice().iter_mut().zip(&keep) {
            if !k {
                *v = fill;
            }
        }
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::MaskFill { x, keep }, rg))
    }

    /// Normalizes each row to zero mean and unit variance (population
    /// variance, `eps` added before the square root). No affine part.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let src = self.value(x);
        let (rows, cols) = src.shape();
        let mut value = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = src.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, v) in value.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.needs(&[x]);
        self.push(value, Op::LayerNormRows { x, inv_std }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean squared error over all entries, as a 1×1 tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len() as f64;
        let sq: f64 = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let rg = self.needs(&[pred, target]);
        Ok(self.push(Matrix::scalar(sq / n), Op::Mse { pred, target }, rg))
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse pass from a scalar loss. Gradients from previous passes are
    /// discarded; contributions from multiple consumers are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.zero_grad();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (input, delta) in contributions {
                let node = &mut self.nodes[input.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Matrix) -> Vec<(Var, Matrix)> {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    out.push((*a, g.matmul_unchecked(&val(*b).transpose())));
                }
                if wants(*b) {
                    out.push((*b, val(*a).transpose().matmul_unchecked(g)));
                }
            }
            Op::Transpose(x) => out.push((*x, g.transpose())),
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    out.push((*a, g.zip_map(val(*b), |u, v| u * v)));
                }
                if wants(*b) {
                    out.push((*b, g.zip_map(val(*a), |u, v| u * v)));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|u| -u)));
            }
            Op::Scale(x, c) => out.push((*x, g.map(|u| u * c))),
            Op::Sigmoid(x) => {
                out.push((*x, g.zip_map(&node.value, |u, s| u * s * (1.0 - s))));
            }
            Op::Relu(x) => {
                out.push((*x, g.zip_map(val(*x), |u, v| if v > 0.0 { u } else { 0.0 })));
            }
            Op::SoftmaxRows(x) => {
                let s = &node.value;
                let mut dx = Matrix::zeros(s.rows(), s.cols());
                for i in 0..s.rows() {
                    let (si, gi) = (s.row(i), g.row(i));
                    let dot: f64 = si.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for ((d, sv), gv) in dx.row_mut(i).iter_mut().zip(si).zip(gi) {
                        *d = sv * (gv - dot);
                    }
                }
                out.push((*x, dx));
            }
            Op::ScaleShift { x, alpha, beta } => {
                let a = val(*alpha)[(0, 0)];
                if wants(*x) {
                    out.push((*x, g.map(|u| u * a)));
                }
                if wants(*alpha) {
                    let da: f64 = g
                        .as_slice()
                        .iter()
                        .zip(val(*x).as_slice())
                        .map(|(u, v)| u * v)
                        .sum();
                    out.push((*alpha, Matrix::scalar(da)));
                }
                if wants(*beta) {
                    out.push((*beta, Matrix::scalar(g.sum())));
                }
            }
            Op::MaskFill { x, keep } => {
                let mut dx = g.clone();
                for (d, &k) in dx.as_mut_slice().iter_mut().zip(keep) {
                    if !k {
                        *d = 0.0;
                    }
                }
                out.push((*x, dx));
            }
            Op::LayerNormRows { x, inv_std } => {
                let y = &node.value;
                let cols = y.cols() as f64;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yi, gi) = (y.row(i), g.row(i));
                    let mean_g = gi.iter().sum::<f64>() / cols;
                    let mean_gy = gi.iter().zip(yi).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((d, yv), gv) in dx.row_mut(i).iter_mut().zip(yi).zip(gi) {
                        *d = inv_std[i] * (gv - mean_g - yv * mean_gy);
                    }
                }
                out.push((*x, dx));
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                out.push((*x, Matrix::filled(r, c, g[(0, 0)])));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(*pred), val(*target));
                let k = 2.0 * g[(0, 0)] / p.len() as f64;
                let d = p.zip_map(t, |a, b| k * (a - b));
                if wants(*target) {
                    out.push((*target, d.map(|u| -u)));
                }
                if wants(*pred) {
                    out.push((*pred, d));
                }
            }
        }
        out
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
