//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation eagerly during the forward pass;
//! [`Var::backward`] replays the tape in reverse to accumulate gradients
//! into `requires_grad` leaves. Tensors are row-major `f64` buffers with
//! an explicit shape: `[]` for scalars, `[n]` for vectors, `[r, c]` for
//! matrices. There is no implicit broadcasting beyond scalar-with-tensor
//! ops; callers make every shape explicit (see [`Var::repeat_rows`] for
//! the bias-add pattern).
//!
//! One graph instance is single-threaded. Independent graphs share no
//! state and may live on separate threads.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Dense tensor: shape, flat row-major data, and (for leaves) an
/// accumulated gradient of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Operation record; indices refer to earlier nodes of the same graph,
/// so creation order is already a topological order.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Neg { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Relu { a: usize },
    Abs { a: usize },
    Sigmoid { a: usize },
    AddScalar { a: usize },
    MulScalar { a: usize, s: f64 },
    MaxScalar { a: usize, s: f64 },
    MinScalar { a: usize, s: f64 },
    SoftmaxRows { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    GatherRows { a: usize, rows: Vec<usize> },
    Pick { a: usize, coords: Vec<(usize, usize)> },
    RepeatRows { a: usize, n: usize },
}

struct Node {
    tensor: Tensor,
    op: Op,
}

struct GraphInner {
    nodes: Vec<Node>,
}

/// Recording tape shared by all [`Var`]s created from it.
#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Graph`]. Cheap to clone.
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner { nodes: Vec::new() })),
        }
    }

    /// Inserts a tensor as a leaf node.
    pub fn leaf(&self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    /// Constant scalar leaf (never tracked).
    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, tensor: Tensor, op: Op) -> Var {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node { tensor, op });
        Var {
            graph: self.clone(),
            id,
        }
    }

    fn same_graph(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

fn shape_2d(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

impl Var {
    /// Handle to the graph this var belongs to.
    pub fn graph(&self) -> Graph {
        self.graph.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.id].tensor.shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.graph.inner.borrow().nodes[self.id].tensor.numel()
    }

    /// Copies the node's values out of the graph.
    pub fn value(&self) -> Vec<f64> {
        self.graph.inner.borrow().nodes[self.id].tensor.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self) -> f64 {
        let inner = self.graph.inner.borrow();
        let t = &inner.nodes[self.id].tensor;
        debug_assert_eq!(t.numel(), 1, "scalar_value on non-scalar tensor");
        t.data[0]
    }

    /// Accumulated gradient of a leaf, if any backward pass has run.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.graph.inner.borrow().nodes[self.id].tensor.grad.clone()
    }

    pub fn zero_grad(&self) {
        let mut inner = self.graph.inner.borrow_mut();
        if let Some(g) = inner.nodes[self.id].tensor.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_same_graph(&self, other: &Var) -> Result<()> {
        if !self.graph.same_graph(&other.graph) {
            return Err(Error::Usage(
                "operands belong to different computation graphs".into(),
            ));
        }
        Ok(())
    }

    fn unary<F>(&self, op: impl FnOnce(usize) -> Op, f: F) -> Var
    where
        F: Fn(f64) -> f64,
    {
        let (shape, data, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            (
                t.shape.clone(),
                t.data.iter().map(|&x| f(x)).collect::<Vec<_>>(),
                t.requires_grad,
            )
        };
        let mut out = Tensor::new(shape, data).expect("unary preserves shape");
        out.requires_grad = rg;
        self.graph.push(out, op(self.id))
    }

    fn binary_same_shape<F>(&self, other: &Var, op: impl FnOnce(usize, usize) -> Op, f: F) -> Result<Var>
    where
        F: Fn(f64, f64) -> f64,
    {
        self.check_same_graph(other)?;
        let (shape, data, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id].tensor;
            let b = &inner.nodes[other.id].tensor;
            if a.shape != b.shape {
                return Err(Error::Shape(format!(
                    "elementwise operands differ: {:?} vs {:?}",
                    a.shape, b.shape
                )));
            }
            let data = a
                .data
                .iter()
                .zip(b.data.iter())
                .map(|(&x, &y)| f(x, y))
                .collect::<Vec<_>>();
            (a.shape.clone(), data, a.requires_grad || b.requires_grad)
        };
        let mut out = Tensor::new(shape, data).expect("same shape");
        out.requires_grad = rg;
        Ok(self.graph.push(out, op(self.id, other.id)))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, |a, b| Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, |a, b| Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_same_shape(other, |a, b| Op::Mul { a, b }, |x, y| x * y)
    }

    pub fn neg(&self) -> Var {
        self.unary(|a| Op::Neg { a }, |x| -x)
    }

    pub fn exp(&self) -> Var {
        self.unary(|a| Op::Exp { a }, f64::exp)
    }

    /// Natural log; every element must be strictly positive.
    pub fn log(&self) -> Result<Var> {
        {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            if let Some(&bad) = t.data.iter().find(|&&x| x <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        Ok(self.unary(|a| Op::Log { a }, f64::ln))
    }

    /// Subgradient at 0 is defined as 0.
    pub fn relu(&self) -> Var {
        self.unary(|a| Op::Relu { a }, |x| if x > 0.0 { x } else { 0.0 })
    }

    /// Absolute value; subgradient at 0 is defined as 0.
    pub fn abs(&self) -> Var {
        self.unary(|a| Op::Abs { a }, f64::abs)
    }

    /// Numerically stable logistic; output clamped into the open (0,1).
    pub fn sigmoid(&self) -> Var {
        self.unary(|a| Op::Sigmoid { a }, sigmoid_stable)
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        self.unary(|a| Op::AddScalar { a }, |x| x + s)
    }

    pub fn mul_scalar(&self, s: f64) -> Var {
        self.unary(|a| Op::MulScalar { a, s }, |x| x * s)
    }

    pub fn div_scalar(&self, s: f64) -> Var {
        self.mul_scalar(1.0 / s)
    }

    /// Elementwise max(x, s). Gradient is 1 where x > s, else 0
    /// (including at equality).
    pub fn max_scalar(&self, s: f64) -> Var {
        self.unary(|a| Op::MaxScalar { a, s }, |x| x.max(s))
    }

    /// Elementwise min(x, s). Gradient is 1 where x < s, else 0.
    pub fn min_scalar(&self, s: f64) -> Var {
        self.unary(|a| Op::MinScalar { a, s }, |x| x.min(s))
    }

    /// max(0, x): the non-negative clamp used by the PU risk estimators.
    pub fn clamp_min_zero(&self) -> Var {
        self.max_scalar(0.0)
    }

    /// Row-wise softmax of an `[n, m]` tensor, computed with
    /// max-subtraction so large logits cannot overflow.
    pub fn softmax_rows(&self) -> Result<Var> {
        let (shape, data, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            let (rows, cols) = shape_2d(&t.shape).ok_or_else(|| {
                Error::Shape(format!("softmax_rows needs a 2-d tensor, got {:?}", t.shape))
            })?;
            if cols == 0 {
                return Err(Error::Shape("softmax_rows on zero-width tensor".into()));
            }
            let mut out = vec![0.0; t.data.len()];
            for r in 0..rows {
                let row = &t.data[r * cols..(r + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for c in 0..cols {
                    let e = (row[c] - m).exp();
                    out[r * cols + c] = e;
                    denom += e;
                }
                for c in 0..cols {
                    out[r * cols + c] /= denom;
                }
            }
            (t.shape.clone(), out, t.requires_grad)
        };
        let mut out = Tensor::new(shape, data).expect("same shape");
        out.requires_grad = rg;
        Ok(self.graph.push(out, Op::SoftmaxRows { a: self.id }))
    }

    /// Matrix product of `[n, k]` and `[k, m]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_same_graph(other)?;
        let (out, rg) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id].tensor;
            let b = &inner.nodes[other.id].tensor;
            let (n, k) = shape_2d(&a.shape).ok_or_else(|| {
                Error::Shape(format!("matmul lhs must be 2-d, got {:?}", a.shape))
            })?;
            let (k2, m) = shape_2d(&b.shape).ok_or_else(|| {
                Error::Shape(format!("matmul rhs must be 2-d, got {:?}", b.shape))
            })?;
            if k != k2 {
                return Err(Error::Shape(format!(
                    "matmul inner dimensions disagree: {:?} x {:?}",
                    a.shape, b.shape
                )));
            }
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for p in 0..k {
                    let av = a.data[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b.data[p * m..(p + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
            (
                Tensor::new(vec![n, m], out).expect("matmul shape"),
                a.requires_grad || b.requires_grad,
            )
        };
        let mut out = out;
        out.requires_grad = rg;
        Ok(self.graph.push(
            out,
            Op::Matmul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Sum of all elements; returns a scalar.
    pub fn sum(&self) -> Var {
        let (v, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            (t.data.iter().sum::<f64>(), t.requires_grad)
        };
        let mut out = Tensor::scalar(v);
        out.requires_grad = rg;
        self.graph.push(out, Op::Sum { a: self.id })
    }

    /// Arithmetic mean of all elements; errors on an empty tensor.
    pub fn mean(&self) -> Result<Var> {
        let (v, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            if t.numel() == 0 {
                return Err(Error::Usage("mean of an empty tensor is undefined".into()));
            }
            (
                t.data.iter().sum::<f64>() / t.numel() as f64,
                t.requires_grad,
            )
        };
        let mut out = Tensor::scalar(v);
        out.requires_grad = rg;
        Ok(self.graph.push(out, Op::Mean { a: self.id }))
    }

    /// Gathers rows of a 2-d tensor (or elements of a 1-d tensor).
    /// Indices may repeat; gradients scatter-add back.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var> {
        let (shape, data, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            let (n, cols) = match t.shape.as_slice() {
                [n] => (*n, 1),
                [n, c] => (*n, *c),
                other => {
                    return Err(Error::Shape(format!(
                        "gather_rows needs a 1-d or 2-d tensor, got {other:?}"
                    )))
                }
            };
            if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
                return Err(Error::Usage(format!(
                    "gather_rows index {bad} out of range for {n} rows"
                )));
            }
            let mut data = Vec::with_capacity(rows.len() * cols);
            for &r in rows {
                data.extend_from_slice(&t.data[r * cols..(r + 1) * cols]);
            }
            let shape = if t.shape.len() == 1 {
                vec![rows.len()]
            } else {
                vec![rows.len(), cols]
            };
            (shape, data, t.requires_grad)
        };
        let mut out = Tensor::new(shape, data).expect("gather shape");
        out.requires_grad = rg;
        Ok(self.graph.push(
            out,
            Op::GatherRows {
                a: self.id,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Picks one element per `(row, col)` coordinate from a 2-d tensor,
    /// producing a 1-d tensor.
    pub fn pick(&self, coords: &[(usize, usize)]) -> Result<Var> {
        let (data, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            let (n, m) = shape_2d(&t.shape).ok_or_else(|| {
                Error::Shape(format!("pick needs a 2-d tensor, got {:?}", t.shape))
            })?;
            if let Some(&(r, c)) = coords.iter().find(|&&(r, c)| r >= n || c >= m) {
                return Err(Error::Usage(format!(
                    "pick coordinate ({r}, {c}) out of range for shape [{n}, {m}]"
                )));
            }
            (
                coords
                    .iter()
                    .map(|&(r, c)| t.data[r * m + c])
                    .collect::<Vec<_>>(),
                t.requires_grad,
            )
        };
        let mut out = Tensor::vector(data);
        out.requires_grad = rg;
        Ok(self.graph.push(
            out,
            Op::Pick {
                a: self.id,
                coords: coords.to_vec(),
            },
        ))
    }

    /// Tiles a `[1, c]` (or `[c]`) tensor into `[n, c]`; the gradient
    /// sums over rows. This is the explicit-shape bias-add helper.
    pub fn repeat_rows(&self, n: usize) -> Result<Var> {
        let (cols, data, rg) = {
            let inner = self.graph.inner.borrow();
            let t = &inner.nodes[self.id].tensor;
            let cols = match t.shape.as_slice() {
                [c] => *c,
                [1, c] => *c,
                other => {
                    return Err(Error::Shape(format!(
                        "repeat_rows needs a [c] or [1, c] tensor, got {other:?}"
                    )))
                }
            };
            let mut data = Vec::with_capacity(n * cols);
            for _ in 0..n {
                data.extend_from_slice(&t.data);
            }
            (cols, data, t.requires_grad)
        };
        let mut out = Tensor::new(vec![n, cols], data).expect("repeat shape");
        out.requires_grad = rg;
        Ok(self
            .graph
            .push(out, Op::RepeatRows { a: self.id, n }))
    }

    /// Reverse-mode pass from a scalar root. Gradients of
    /// `requires_grad` leaves accumulate across repeated calls;
    /// intermediate nodes get fresh buffers each time.
    pub fn backward(&self) -> Result<()> {
        let mut inner = self.graph.inner.borrow_mut();
        let nodes = &mut inner.nodes;
        if nodes[self.id].tensor.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[self.id].tensor.shape
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.id + 1];
        grads[self.id] = Some(vec![1.0]);

        for id in (0..=self.id).rev() {
            let g_out = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !nodes[id].tensor.requires_grad {
                continue;
            }
            let op = nodes[id].op.clone();
            match op {
                Op::Leaf => {
                    let t = &mut nodes[id].tensor;
                    let grad = t.grad.get_or_insert_with(|| vec![0.0; t.data.len()]);
                    for (acc, g) in grad.iter_mut().zip(g_out.iter()) {
                        *acc += g;
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, nodes, a, |i| g_out[i]);
                    accumulate(&mut grads, nodes, b, |i| g_out[i]);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut grads, nodes, a, |i| g_out[i]);
                    accumulate(&mut grads, nodes, b, |i| -g_out[i]);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (nodes[a].tensor.data.clone(), nodes[b].tensor.data.clone());
                    accumulate(&mut grads, nodes, a, |i| g_out[i] * bv[i]);
                    accumulate(&mut grads, nodes, b, |i| g_out[i] * av[i]);
                }
                Op::Neg { a } => accumulate(&mut grads, nodes, a, |i| -g_out[i]),
                Op::Exp { a } => {
                    let y = nodes[id].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| g_out[i] * y[i]);
                }
                Op::Log { a } => {
                    let x = nodes[a].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| g_out[i] / x[i]);
                }
                Op::Relu { a } => {
                    let x = nodes[a].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| {
                        if x[i] > 0.0 {
                            g_out[i]
                        } else {
                            0.0
                        }
                    });
                }
                Op::Abs { a } => {
                    let x = nodes[a].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| g_out[i] * signum_or_zero(x[i]));
                }
                Op::Sigmoid { a } => {
                    let y = nodes[id].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| g_out[i] * y[i] * (1.0 - y[i]));
                }
                Op::AddScalar { a } => accumulate(&mut grads, nodes, a, |i| g_out[i]),
                Op::MulScalar { a, s } => accumulate(&mut grads, nodes, a, |i| g_out[i] * s),
                Op::MaxScalar { a, s } => {
                    let x = nodes[a].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| {
                        if x[i] > s {
                            g_out[i]
                        } else {
                            0.0
                        }
                    });
                }
                Op::MinScalar { a, s } => {
                    let x = nodes[a].tensor.data.clone();
                    accumulate(&mut grads, nodes, a, |i| {
                        if x[i] < s {
                            g_out[i]
                        } else {
                            0.0
                        }
                    });
                }
                Op::SoftmaxRows { a } => {
                    let y = nodes[id].tensor.data.clone();
                    let shape = nodes[id].tensor.shape.clone();
                    let (rows, cols) = shape_2d(&shape).expect("softmax output is 2-d");
                    let mut gin = vec![0.0; y.len()];
                    for r in 0..rows {
                        let y_row = &y[r * cols..(r + 1) * cols];
                        let g_row = &g_out[r * cols..(r + 1) * cols];
                        let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(&s, &g)| s * g).sum();
                        for c in 0..cols {
                            gin[r * cols + c] = y_row[c] * (g_row[c] - dot);
                        }
                    }
                    accumulate(&mut grads, nodes, a, |i| gin[i]);
                }
                Op::Matmul { a, b } => {
                    let a_shape = nodes[a].tensor.shape.clone();
                    let b_shape = nodes[b].tensor.shape.clone();
                    let (n, k) = shape_2d(&a_shape).expect("matmul lhs 2-d");
                    let (_, m) = shape_2d(&b_shape).expect("matmul rhs 2-d");
                    let av = nodes[a].tensor.data.clone();
                    let bv = nodes[b].tensor.data.clone();
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += g_out[i * m + j] * bv[p * m + j];
                            }
                            ga[i * k + p] = acc;
                        }
                    }
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * m];
                    for p in 0..k {
                        for i in 0..n {
                            let aval = av[i * k + p];
                            if aval == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                gb[p * m + j] += aval * g_out[i * m + j];
                            }
                        }
                    }
                    accumulate(&mut grads, nodes, a, |i| ga[i]);
                    accumulate(&mut grads, nodes, b, |i| gb[i]);
                }
                Op::Sum { a } => {
                    let g = g_out[0];
                    accumulate(&mut grads, nodes, a, |_| g);
                }
                Op::Mean { a } => {
                    let n = nodes[a].tensor.numel() as f64;
                    let g = g_out[0] / n;
                    accumulate(&mut grads, nodes, a, |_| g);
                }
                Op::GatherRows { a, rows } => {
                    let cols = match nodes[a].tensor.shape.as_slice() {
                        [_] => 1,
                        [_, c] => *c,
                        _ => unreachable!("validated at construction"),
                    };
                    let mut gin = vec![0.0; nodes[a].tensor.data.len()];
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        for c in 0..cols {
                            gin[src_r * cols + c] += g_out[out_r * cols + c];
                        }
                    }
                    accumulate(&mut grads, nodes, a, |i| gin[i]);
                }
                Op::Pick { a, coords } => {
                    let (_, m) = shape_2d(&nodes[a].tensor.shape).expect("pick input 2-d");
                    let mut gin = vec![0.0; nodes[a].tensor.data.len()];
                    for (out_i, &(r, c)) in coords.iter().enumerate() {
                        gin[r * m + c] += g_out[out_i];
                    }
                    accumulate(&mut grads, nodes, a, |i| gin[i]);
                }
                Op::RepeatRows { a, n } => {
                    let cols = nodes[a].tensor.data.len();
                    let mut gin = vec![0.0; cols];
                    for r in 0..n {
                        for c in 0..cols {
                            gin[c] += g_out[r * cols + c];
                        }
                    }
                    accumulate(&mut grads, nodes, a, |i| gin[i]);
                }
            }
        }
        Ok(())
    }
}

/// Adds `f(i)` into the pending gradient buffer of node `target`,
/// provided that node participates in the gradient path.
fn accumulate<F>(grads: &mut [Option<Vec<f64>>], nodes: &[Node], target: usize, f: F)
where
    F: Fn(usize) -> f64,
{
    if !nodes[target].tensor.requires_grad {
        return;
    }
    let buf = grads[target].get_or_insert_with(|| vec![0.0; nodes[target].tensor.data.len()]);
    for (i, slot) in buf.iter_mut().enumerate() {
        *slot += f(i);
    }
}

fn signum_or_zero(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid_stable(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}
