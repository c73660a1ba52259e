use std::sync::Arc;

use super::{dense_matmul, sigmoid, softplus, Result, SparseMatrix, Tensor, TensorError, SQRT_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Axis {
    /// Reduce every element to a scalar.
    All,
    /// Reduce along one dimension, removing it.
    Dim(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Div,
    Sigmoid,
    Log,
    Sqrt,
    /// `sqrt(x + SQRT_EPS)`, defined for `x >= 0`.
    SqrtEps,
    Scale(f64),
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    LeakyRelu(f64),
    Clamp(f64, f64),
}

impl ElementwiseKind {
    fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }

    fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
            Self::Sigmoid => "sigmoid",
            Self::Log => "log",
            Self::Sqrt => "sqrt",
            Self::SqrtEps => "sqrt_eps",
            Self::Scale(_) => "scale",
            Self::Softplus => "softplus",
            Self::LeakyRelu(_) => "leaky_relu",
            Self::Clamp(..) => "clamp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: ElementwiseKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: ElementwiseKind,
        a: Var,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Transpose(Var),
    Spmm {
        matrix: Arc<SparseMatrix>,
        x: Var,
    },
    Reduce {
        kind: ReduceKind,
        axis: Axis,
        a: Var,
    },
    GatherRows {
        a: Var,
        indices: Vec<usize>,
    },
    RepeatRows(Var),
    ConcatCols(Vec<Var>),
    PairwiseDistance(Var),
    DoubleCenter(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations for one forward pass and replays them backwards.
///
/// A tape is built per training step and consumed by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Every variable that
    /// required a gradient has one, zero-filled when unused.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Learnable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        // Nodes that cannot reach a parameter keep no backward information.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Applies an elementwise operation. Binary kinds take `b`, which must
    /// have the shape of `a` or hold a single element.
    pub fn elementwise(&mut self, kind: ElementwiseKind, a: Var, b: Option<Var>) -> Result<Var> {
        if kind.is_binary() {
            let b = b.ok_or_else(|| {
                TensorError::InvalidArgument(format!("{} needs a second operand", kind.name()))
            })?;
            return self.binary(kind, a, b);
        }
        self.unary(kind, a)
    }

    fn binary(&mut self, kind: ElementwiseKind, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let scalar = bv.len() == 1 && av.len() != 1;
        if !scalar && av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op: kind.name(),
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseKind::Add => |x, y| x + y,
            ElementwiseKind::Sub => |x, y| x - y,
            ElementwiseKind::Mul => |x, y| x * y,
            ElementwiseKind::Div => |x, y| x / y,
            _ => unreachable!("binary kinds only"),
        };
        if kind == ElementwiseKind::Div {
            if let Some(k) = bv.values().iter().position(|&y| y == 0.0) {
                return Err(TensorError::Domain {
                    op: "div",
                    index: k,
                    value: 0.0,
                });
            }
        }
        let values: Vec<f64> = if scalar {
            let y = bv.item();
            av.values().iter().map(|&x| f(x, y)).collect()
        } else {
            av.values()
                .iter()
                .zip(bv.values())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::Binary { kind, a, b }))
    }

    fn unary(&mut self, kind: ElementwiseKind, a: Var) -> Result<Var> {
        let av = self.value(a);
        match kind {
            ElementwiseKind::Log | ElementwiseKind::Sqrt => {
                if let Some(k) = av.values().iter().position(|&x| x.is_nan() || x <= 0.0) {
                    return Err(TensorError::Domain {
                        op: kind.name(),
                        index: k,
                        value: av.values()[k],
                    });
                }
            }
            ElementwiseKind::SqrtEps => {
                if let Some(k) = av
                    .values()
                    .iter()
                    .position(|&x| x.is_nan() || x + SQRT_EPS <= 0.0)
                {
                    return Err(TensorError::Domain {
                        op: kind.name(),
                        index: k,
                        value: av.values()[k],
                    });
                }
            }
            _ => {}
        }
        let values: Vec<f64> = av
            .values()
            .iter()
            .map(|&x| match kind {
                ElementwiseKind::Sigmoid => sigmoid(x),
                ElementwiseKind::Log => x.ln(),
                ElementwiseKind::Sqrt => x.sqrt(),
                ElementwiseKind::SqrtEps => (x + SQRT_EPS).sqrt(),
                ElementwiseKind::Scale(c) => c * x,
                ElementwiseKind::Softplus => softplus(x),
                ElementwiseKind::LeakyRelu(s) => {
                    if x > 0.0 {
                        x
                    } else {
                        s * x
                    }
                }
                ElementwiseKind::Clamp(lo, hi) => x.clamp(lo, hi),
                _ => unreachable!("unary kinds only"),
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), values)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Unary { kind, a }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseKind::Div, a, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sigmoid, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Log, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Sqrt, a)
    }

    pub fn sqrt_eps(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::SqrtEps, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(ElementwiseKind::Scale(c), a)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(ElementwiseKind::Softplus, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(ElementwiseKind::LeakyRelu(slope), a)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(ElementwiseKind::Clamp(lo, hi), a)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let value = Tensor::matrix(m, n, dense_matmul(av.values(), bv.values(), m, k, n))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, rg, Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(TensorError::InvalidArgument(format!(
                "transpose needs a matrix, got {:?}",
                av.shape()
            )));
        }
        let value = transposed(av);
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Transpose(a)))
    }

    /// Sparse-dense product `matrix · x`. The matrix is a constant.
    pub fn spmm(&mut self, matrix: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || matrix.cols() != xv.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                left: vec![matrix.rows(), matrix.cols()],
                right: xv.shape().to_vec(),
            });
        }
        let d = xv.cols();
        let value = Tensor::matrix(matrix.rows(), d, matrix.mul_dense(xv.values(), d))?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            value,
            rg,
            Op::Spmm {
                matrix: Arc::clone(matrix),
                x,
            },
        ))
    }

    pub fn reduce(&mut self, kind: ReduceKind, a: Var, axis: Axis) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        let n = av.len();
        let value = match (axis, shape.len()) {
            (Axis::All, _) => {
                let s: f64 = av.values().iter().sum();
                let denom = if kind == ReduceKind::Mean { n.max(1) as f64 } else { 1.0 };
                Tensor::scalar(s / denom)
            }
            (Axis::Dim(0), 1) => {
                let s: f64 = av.values().iter().sum();
                let denom = if kind == ReduceKind::Mean { n.max(1) as f64 } else { 1.0 };
                Tensor::scalar(s / denom)
            }
            (Axis::Dim(0), 2) => {
                let (r, c) = (shape[0], shape[1]);
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in out.iter_mut().zip(av.row(i)) {
                        *o += v;
                    }
                }
                if kind == ReduceKind::Mean && r > 0 {
                    out.iter_mut().for_each(|o| *o /= r as f64);
                }
                Tensor::vector(out)
            }
            (Axis::Dim(1), 2) => {
                let c = shape[1];
                let out = (0..shape[0])
                    .map(|i| {
                        let s: f64 = av.row(i).iter().sum();
                        if kind == ReduceKind::Mean && c > 0 {
                            s / c as f64
                        } else {
                            s
                        }
                    })
                    .collect();
                Tensor::vector(out)
            }
            _ => {
                return Err(TensorError::InvalidAxis {
                    op: "reduce",
                    axis,
                    shape,
                })
            }
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::Reduce { kind, axis, a }))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, Axis::All)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, Axis::All)
    }

    /// Row-wise dot products of two equally shaped matrices.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.reduce(ReduceKind::Sum, p, Axis::Dim(1))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(TensorError::InvalidArgument(format!(
                "gather_rows needs a matrix, got {:?}",
                av.shape()
            )));
        }
        let (rows, d) = (av.rows(), av.cols());
        let mut values = Vec::with_capacity(indices.len() * d);
        for &r in indices {
            if r >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: r,
                    len: rows,
                });
            }
            values.extend_from_slice(av.row(r));
        }
        let value = Tensor::matrix(indices.len(), d, values)?;
        let rg = self.requires_grad(a);
        Ok(self.push(
            value,
            rg,
            Op::GatherRows {
                a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Tiles a single row (`[d]` or `[1, d]`) into an `n × d` matrix.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 || av.shape().is_empty() {
            return Err(TensorError::InvalidArgument(format!(
                "repeat_rows needs a single row, got {:?}",
                av.shape()
            )));
        }
        let d = av.cols();
        let values = av.values().repeat(n);
        let value = Tensor::matrix(n, d, values)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::RepeatRows(a)))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.rows() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(*first).to_vec(),
                    right: pv.shape().to_vec(),
                });
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, values)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Euclidean distances between all row pairs, `sqrt(|x_j - x_k|² + ε)`
    /// off the diagonal and exactly zero on it.
    pub fn pairwise_distance(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 {
            return Err(TensorError::InvalidArgument(format!(
                "pairwise_distance needs a matrix, got {:?}",
                av.shape()
            )));
        }
        let n = av.rows();
        let mut values = vec![0.0; n * n];
        for j in 0..n {
            for k in (j + 1)..n {
                let sq: f64 = av
                    .row(j)
                    .iter()
                    .zip(av.row(k))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let dist = (sq + SQRT_EPS).sqrt();
                values[j * n + k] = dist;
                values[k * n + j] = dist;
            }
        }
        let value = Tensor::matrix(n, n, values)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::PairwiseDistance(a)))
    }

    /// Double centering `a_jk - mean_j· - mean_·k + mean_··` of a square matrix.
    pub fn double_center(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.shape().len() != 2 || av.rows() != av.cols() {
            return Err(TensorError::InvalidArgument(format!(
                "double_center needs a square matrix, got {:?}",
                av.shape()
            )));
        }
        let value = double_centered(av);
        let rg = self.requires_grad(a);
        Ok(self.push(value, rg, Op::DoubleCenter(a)))
    }

    /// Runs reverse accumulation from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let av = self.value(*a).values();
                let bv = self.value(*b).values();
                let scalar = bv.len() == 1 && av.len() != 1;
                let bval = |i: usize| if scalar { bv[0] } else { bv[i] };
                if self.requires_grad(*a) {
                    let ga: Vec<f64> = match kind {
                        ElementwiseKind::Add | ElementwiseKind::Sub => g.to_vec(),
                        ElementwiseKind::Mul => g.iter().enumerate().map(|(i, gi)| gi * bval(i)).collect(),
                        ElementwiseKind::Div => g.iter().enumerate().map(|(i, gi)| gi / bval(i)).collect(),
                        _ => unreachable!(),
                    };
                    accumulate(grads, *a, &ga);
                }
                if self.requires_grad(*b) {
                    let gb: Vec<f64> = match kind {
                        ElementwiseKind::Add => g.to_vec(),
                        ElementwiseKind::Sub => g.iter().map(|x| -x).collect(),
                        ElementwiseKind::Mul => g.iter().zip(av).map(|(gi, x)| gi * x).collect(),
                        ElementwiseKind::Div => g
                            .iter()
                            .enumerate()
                            .map(|(i, gi)| -gi * av[i] / (bval(i) * bval(i)))
                            .collect(),
                        _ => unreachable!(),
                    };
                    if scalar {
                        accumulate(grads, *b, &[gb.iter().sum()]);
                    } else {
                        accumulate(grads, *b, &gb);
                    }
                }
            }
            Op::Unary { kind, a } => {
                let av = self.value(*a).values();
                let ov = out.values();
                let ga: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let x = av[i];
                        gi * match *kind {
                            ElementwiseKind::Sigmoid => ov[i] * (1.0 - ov[i]),
                            ElementwiseKind::Log => 1.0 / x,
                            ElementwiseKind::Sqrt | ElementwiseKind::SqrtEps => 0.5 / ov[i],
                            ElementwiseKind::Scale(c) => c,
                            ElementwiseKind::Softplus => sigmoid(x),
                            ElementwiseKind::LeakyRelu(s) => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    s
                                }
                            }
                            ElementwiseKind::Clamp(lo, hi) => {
                                if x >= lo && x <= hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            _ => unreachable!(),
                        }
                    })
                    .collect();
                accumulate(grads, *a, &ga);
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    // grad_a = g · bᵀ
                    let bt = transposed(bv);
                    accumulate(grads, *a, &dense_matmul(g, bt.values(), m, n, k));
                }
                if self.requires_grad(*b) {
                    // grad_b = aᵀ · g
                    let at = transposed(av);
                    accumulate(grads, *b, &dense_matmul(at.values(), g, k, m, n));
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::matrix(out.rows(), out.cols(), g.to_vec()).expect("shape");
                accumulate(grads, *a, transposed(&gt).values());
            }
            Op::Spmm { matrix, x } => {
                let d = out.cols();
                accumulate(grads, *x, &matrix.transpose_mul_dense(g, d));
            }
            Op::Reduce { kind, axis, a } => {
                let av = self.value(*a);
                let shape = av.shape();
                let mut ga = vec![0.0; av.len()];
                match (axis, shape.len()) {
                    (Axis::All, _) | (Axis::Dim(0), 1) => {
                        let s = if *kind == ReduceKind::Mean {
                            g[0] / av.len().max(1) as f64
                        } else {
                            g[0]
                        };
                        ga.iter_mut().for_each(|x| *x = s);
                    }
                    (Axis::Dim(0), 2) => {
                        let (r, c) = (shape[0], shape[1]);
                        let scale = if *kind == ReduceKind::Mean { 1.0 / r as f64 } else { 1.0 };
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] = g[j] * scale;
                            }
                        }
                    }
                    (Axis::Dim(1), 2) => {
                        let (r, c) = (shape[0], shape[1]);
                        let scale = if *kind == ReduceKind::Mean { 1.0 / c as f64 } else { 1.0 };
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] = g[i] * scale;
                            }
                        }
                    }
                    _ => unreachable!("validated in forward"),
                }
                accumulate(grads, *a, &ga);
            }
            Op::GatherRows { a, indices } => {
                let av = self.value(*a);
                let d = av.cols();
                let mut ga = vec![0.0; av.len()];
                for (k, &r) in indices.iter().enumerate() {
                    for (o, v) in ga[r * d..(r + 1) * d].iter_mut().zip(&g[k * d..(k + 1) * d]) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::RepeatRows(a) => {
                let d = out.cols();
                let mut ga = vec![0.0; d];
                for row in g.chunks(d) {
                    for (o, v) in ga.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.requires_grad(p) {
                        let gp: Vec<f64> = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + pc].iter().copied())
                            .collect();
                        accumulate(grads, p, &gp);
                    }
                    offset += pc;
                }
            }
            Op::PairwiseDistance(a) => {
                let av = self.value(*a);
                let (n, d) = (av.rows(), av.cols());
                let dist = out.values();
                let mut ga = vec![0.0; av.len()];
                for j in 0..n {
                    for k in 0..n {
                        if j == k {
                            continue;
                        }
                        let coef = (g[j * n + k] + g[k * n + j]) / dist[j * n + k];
                        let (xj, xk) = (av.row(j), av.row(k));
                        for c in 0..d {
                            ga[j * d + c] += coef * (xj[c] - xk[c]);
                        }
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::DoubleCenter(a) => {
                // The centering map is self-adjoint.
                let gt = Tensor::matrix(out.rows(), out.cols(), g.to_vec()).expect("shape");
                accumulate(grads, *a, double_centered(&gt).values());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, g: &[f64]) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn transposed(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut values = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            values[j * r + i] = t.values()[i * c + j];
        }
    }
    Tensor::matrix(c, r, values).expect("transpose shape")
}

fn double_centered(t: &Tensor) -> Tensor {
    let n = t.rows();
    let v = t.values();
    let mut row_mean = vec![0.0; n];
    let mut col_mean = vec![0.0; n];
    for j in 0..n {
        for k in 0..n {
            row_mean[j] += v[j * n + k];
            col_mean[k] += v[j * n + k];
        }
    }
    let nf = n as f64;
    let grand: f64 = row_mean.iter().sum::<f64>() / (nf * nf);
    row_mean.iter_mut().for_each(|x| *x /= nf);
    col_mean.iter_mut().for_each(|x| *x /= nf);
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            out[j * n + k] = v[j * n + k] - row_mean[j] - col_mean[k] + grand;
        }
    }
    Tensor::matrix(n, n, out).expect("square")
}
