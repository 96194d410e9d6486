//! Eager tape of differentiable primitives.
//!
//! Every call on [`Tape`] evaluates its primitive immediately and appends a
//! node; [`Tape::backward`] walks the nodes in reverse. The same node list can
//! be re-executed with new leaf values through [`Tape::replay`], which is what
//! the finite-difference oracle relies on.

use crate::error::{contract, dimension, Error, Result};
use crate::linalg;
use crate::scalar::Real;

use super::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Collapse rows, keep columns.
    Rows,
    /// Collapse columns, keep rows.
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, Axis),
    MeanAxis(usize, Axis),
    Concat(Vec<usize>, Axis),
    Slice {
        input: usize,
        axis: Axis,
        start: usize,
        len: usize,
    },
    Transpose(usize),
    QuadForm {
        diffs: usize,
        metric: usize,
    },
    SymPinv {
        input: usize,
        ridge: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::QuadForm { .. } => "quad_form",
            Op::SymPinv { .. } => "sym_pinv",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op,
    value: Tensor<T>,
}

/// Ordered record of primitive applications.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaves: Vec<usize>,
}

/// The recorded computation, viewed as a replayable program.
pub type ComputationRecord<T> = Tape<T>;

/// Adjoints for every node reached by a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            leaves: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf handles in creation order.
    pub fn leaves(&self) -> Vec<Var> {
        self.leaves.iter().map(|&i| Var(i)).collect()
    }

    /// Current values of the leaves, in creation order.
    pub fn leaf_values(&self) -> Vec<Tensor<T>> {
        self.leaves
            .iter()
            .map(|&i| self.nodes[i].value.clone())
            .collect()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let id = self.push_raw(Op::Leaf, value);
        self.leaves.push(id.0);
        id
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Op::Constant, value)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push_raw(&mut self, op: Op, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = forward(&op, &self.nodes)?;
        Ok(self.push_raw(op, value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a.0, b.0))
    }

    /// Broadcasting add: a dimension of size 1 stretches to match the other operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a.0, b.0))
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softplus(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a.0))
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.push(Op::SumAxis(a.0, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.push(Op::MeanAxis(a.0, axis))
    }

    /// Stacks along rows (`Axis::Rows`) or joins columns (`Axis::Cols`).
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat of zero tensors"));
        }
        self.push(Op::Concat(parts.iter().map(|v| v.0).collect(), axis))
    }

    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice {
            input: a.0,
            axis,
            start,
            len,
        })
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a.0))
    }

    /// Row-wise quadratic form: output row `i` is `d_i^T M d_i`.
    pub fn quad_form(&mut self, diffs: Var, metric: Var) -> Result<Var> {
        self.push(Op::QuadForm {
            diffs: diffs.0,
            metric: metric.0,
        })
    }

    /// Moore-Penrose inverse of `C + ridge * I` for symmetric `C`.
    pub fn sym_pinv(&mut self, c: Var, ridge: T) -> Result<Var> {
        self.push(Op::SymPinv {
            input: c.0,
            ridge: ridge.as_f64(),
        })
    }

    /// Multiplies by a constant scalar.
    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let c = self.scalar(s);
        self.mul(a, c)
    }

    /// Adds a constant scalar.
    pub fn shift(&mut self, a: Var, s: T) -> Result<Var> {
        let c = self.scalar(s);
        self.add(a, c)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Re-executes the recorded program with new leaf values.
    pub fn replay(&self, inputs: &[Tensor<T>]) -> Result<Tape<T>> {
        if inputs.len() != self.leaves.len() {
            return Err(contract(format!(
                "replay expects {} inputs, got {}",
                self.leaves.len(),
                inputs.len()
            )));
        }
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
            leaves: self.leaves.clone(),
        };
        let mut next_input = inputs.iter();
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => {
                    let v = next_input.next().expect("leaf count checked");
                    if v.dims() != node.value.dims() {
                        return Err(dimension(format!(
                            "replay input shape {:?} vs recorded {:?}",
                            v.shape(),
                            node.value.shape()
                        )));
                    }
                    v.clone()
                }
                Op::Constant => node.value.clone(),
                _ => forward(&node.op, &out.nodes)?,
            };
            out.nodes.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(out)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(contract(format!(
                "backward from non-scalar node of shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let (r, c) = lv.dims();
        grads[loss.0] = Some(Tensor::full(r, c, T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contrib) in vjp(&node.op, &node.value, &g, &self.nodes)? {
                if !contrib.is_finite() {
                    return Err(Error::Numerical {
                        primitive: node.op.name(),
                        detail: "non-finite gradient in backward pass".into(),
                    });
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dims()).collect(),
        })
    }
}

fn broadcast_dims(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    fn one(x: usize, y: usize) -> Option<usize> {
        match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        }
    }
    Some((one(a.0, b.0)?, one(a.1, b.1)?))
}

fn broadcast_binary<T: Real>(
    name: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (da, db) = (a.dims(), b.dims());
    let (r, c) = broadcast_dims(da, db)
        .ok_or_else(|| dimension(format!("{name}: cannot broadcast {da:?} with {db:?}")))?;
    if da == db {
        return a.zip_with(b, f).map(|t| Tensor::matrix(r, c, t.into_data()).unwrap());
    }
    Ok(Tensor::from_fn(r, c, |i, j| {
        let x = a.at(if da.0 == 1 { 0 } else { i }, if da.1 == 1 { 0 } else { j });
        let y = b.at(if db.0 == 1 { 0 } else { i }, if db.1 == 1 { 0 } else { j });
        f(x, y)
    }))
}

/// Sums a broadcast gradient back down to `target` dims.
fn reduce_to<T: Real>(g: Tensor<T>, target: (usize, usize)) -> Tensor<T> {
    let (r, c) = g.dims();
    if (r, c) == target {
        return g;
    }
    let mut out = Tensor::zeros(target.0, target.1);
    let tc = target.1;
    for i in 0..r {
        for j in 0..c {
            let ti = if target.0 == 1 { 0 } else { i };
            let tj = if target.1 == 1 { 0 } else { j };
            out.data_mut()[ti * tc + tj] = out.data()[ti * tc + tj] + g.at(i, j);
        }
    }
    out
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn check<T: Real>(op: &Op, t: Tensor<T>) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Numerical {
            primitive: op.name(),
            detail: "non-finite value in forward pass".into(),
        })
    }
}

fn forward<T: Real>(op: &Op, nodes: &[Node<T>]) -> Result<Tensor<T>> {
    let v = |i: usize| &nodes[i].value;
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("inputs carry their own values"),
        Op::MatMul(a, b) => v(*a).matmul(v(*b))?,
        Op::Add(a, b) => broadcast_binary("add", v(*a), v(*b), |x, y| x + y)?,
        Op::Sub(a, b) => broadcast_binary("sub", v(*a), v(*b), |x, y| x - y)?,
        Op::Mul(a, b) => broadcast_binary("mul", v(*a), v(*b), |x, y| x * y)?,
        Op::Relu(a) => v(*a).map(|x| if x > T::zero() { x } else { T::zero() }),
        Op::Softplus(a) => v(*a).map(softplus),
        Op::Exp(a) => v(*a).map(T::exp),
        Op::Log(a) => v(*a).map(T::ln),
        Op::Sum(a) => Tensor::scalar(v(*a).sum()),
        Op::Mean(a) => {
            let t = v(*a);
            Tensor::scalar(t.sum() / T::lit(t.len() as f64))
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let t = v(*a);
            let (r, c) = t.dims();
            let mut out = match axis {
                Axis::Rows => Tensor::from_fn(1, c, |_, j| (0..r).map(|i| t.at(i, j)).sum()),
                Axis::Cols => Tensor::from_fn(r, 1, |i, _| t.row_slice(i).iter().copied().sum()),
            };
            if matches!(op, Op::MeanAxis(..)) {
                let n = T::lit(if *axis == Axis::Rows { r } else { c } as f64);
                out = out.map(|x| x / n);
            }
            out
        }
        Op::Concat(parts, axis) => {
            let dims: Vec<_> = parts.iter().map(|&p| v(p).dims()).collect();
            match axis {
                Axis::Rows => {
                    let c = dims[0].1;
                    if dims.iter().any(|d| d.1 != c) {
                        return Err(dimension(format!("row concat of {dims:?}")));
                    }
                    let mut data = Vec::new();
                    for &p in parts {
                        data.extend_from_slice(v(p).data());
                    }
                    Tensor::matrix(data.len() / c.max(1), c, data)?
                }
                Axis::Cols => {
                    let r = dims[0].0;
                    if dims.iter().any(|d| d.0 != r) {
                        return Err(dimension(format!("column concat of {dims:?}")));
                    }
                    let c: usize = dims.iter().map(|d| d.1).sum();
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for &p in parts {
                            data.extend_from_slice(v(p).row_slice(i));
                        }
                    }
                    Tensor::matrix(r, c, data)?
                }
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let t = v(*input);
            let (r, c) = t.dims();
            let extent = if *axis == Axis::Rows { r } else { c };
            if start + len > extent {
                return Err(dimension(format!(
                    "slice {start}..{} out of extent {extent}",
                    start + len
                )));
            }
            match axis {
                Axis::Rows => Tensor::from_fn(*len, c, |i, j| t.at(start + i, j)),
                Axis::Cols => Tensor::from_fn(r, *len, |i, j| t.at(i, start + j)),
            }
        }
        Op::Transpose(a) => v(*a).transpose(),
        Op::QuadForm { diffs, metric } => {
            let d = v(*diffs);
            let m = v(*metric);
            let (n, k) = d.dims();
            if m.dims() != (k, k) {
                return Err(dimension(format!(
                    "quad_form: rows of width {k} against metric {:?}",
                    m.shape()
                )));
            }
            let md = d.matmul(&m.transpose())?; // row i = (M d_i)^T
            Tensor::from_fn(n, 1, |i, _| {
                d.row_slice(i)
                    .iter()
                    .zip(md.row_slice(i))
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
        }
        Op::SymPinv { input, ridge } => linalg::ridge_pinv(v(*input), T::lit(*ridge))?,
    };
    check(op, out)
}

/// Vector-Jacobian products: `(input node, contribution)` pairs.
fn vjp<T: Real>(
    op: &Op,
    out: &Tensor<T>,
    g: &Tensor<T>,
    nodes: &[Node<T>],
) -> Result<Vec<(usize, Tensor<T>)>> {
    let v = |i: usize| &nodes[i].value;
    let res = match op {
        Op::Leaf | Op::Constant => vec![],
        Op::MatMul(a, b) => {
            let ga = g.matmul(&v(*b).transpose())?;
            let gb = v(*a).transpose().matmul(g)?;
            vec![(*a, ga), (*b, gb)]
        }
        Op::Add(a, b) => vec![
            (*a, reduce_to(g.clone(), v(*a).dims())),
            (*b, reduce_to(g.clone(), v(*b).dims())),
        ],
        Op::Sub(a, b) => vec![
            (*a, reduce_to(g.clone(), v(*a).dims())),
            (*b, reduce_to(g.map(|x| -x), v(*b).dims())),
        ],
        Op::Mul(a, b) => {
            let ga = broadcast_binary("mul", g, v(*b), |x, y| x * y)?;
            let gb = broadcast_binary("mul", g, v(*a), |x, y| x * y)?;
            vec![
                (*a, reduce_to(ga, v(*a).dims())),
                (*b, reduce_to(gb, v(*b).dims())),
            ]
        }
        Op::Relu(a) => vec![(
            *a,
            g.zip_with(v(*a), |gi, x| if x > T::zero() { gi } else { T::zero() })?,
        )],
        Op::Softplus(a) => vec![(*a, g.zip_with(v(*a), |gi, x| gi * sigmoid(x))?)],
        Op::Exp(a) => vec![(*a, g.zip_with(out, |gi, y| gi * y)?)],
        Op::Log(a) => vec![(*a, g.zip_with(v(*a), |gi, x| gi / x)?)],
        Op::Sum(a) => {
            let (r, c) = v(*a).dims();
            vec![(*a, Tensor::full(r, c, g.data()[0]))]
        }
        Op::Mean(a) => {
            let t = v(*a);
            let (r, c) = t.dims();
            vec![(*a, Tensor::full(r, c, g.data()[0] / T::lit(t.len() as f64)))]
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let (r, c) = v(*a).dims();
            let n = if *axis == Axis::Rows { r } else { c };
            let s = if matches!(op, Op::MeanAxis(..)) {
                T::one() / T::lit(n as f64)
            } else {
                T::one()
            };
            let ga = match axis {
                Axis::Rows => Tensor::from_fn(r, c, |_, j| g.at(0, j) * s),
                Axis::Cols => Tensor::from_fn(r, c, |i, _| g.at(i, 0) * s),
            };
            vec![(*a, ga)]
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let (r, c) = v(p).dims();
                let piece = match axis {
                    Axis::Rows => Tensor::from_fn(r, c, |i, j| g.at(offset + i, j)),
                    Axis::Cols => Tensor::from_fn(r, c, |i, j| g.at(i, offset + j)),
                };
                offset += if *axis == Axis::Rows { r } else { c };
                res.push((p, piece));
            }
            res
        }
        Op::Slice {
            input,
            axis,
            start,
            len,
        } => {
            let (r, c) = v(*input).dims();
            let ga = Tensor::from_fn(r, c, |i, j| match axis {
                Axis::Rows if i >= *start && i < start + len => g.at(i - start, j),
                Axis::Cols if j >= *start && j < start + len => g.at(i, j - start),
                _ => T::zero(),
            });
            vec![(*input, ga)]
        }
        Op::Transpose(a) => vec![(*a, g.transpose())],
        Op::QuadForm { diffs, metric } => {
            let d = v(*diffs);
            let m = v(*metric);
            let (n, k) = d.dims();
            // d/dD_i = g_i (M + M^T) d_i ; d/dM = sum_i g_i d_i d_i^T
            let sym = m.zip_with(&m.transpose(), |a, b| a + b)?;
            let sd = d.matmul(&sym)?; // (M+M^T) symmetric, so row i = ((M+M^T) d_i)^T
            let gd = Tensor::from_fn(n, k, |i, j| g.at(i, 0) * sd.at(i, j));
            let mut gm = Tensor::zeros(k, k);
            for i in 0..n {
                let gi = g.at(i, 0);
                let row = d.row_slice(i);
                for a in 0..k {
                    let ga = gi * row[a];
                    for b in 0..k {
                        gm.data_mut()[a * k + b] = gm.data()[a * k + b] + ga * row[b];
                    }
                }
            }
            vec![(*diffs, gd), (*metric, gm)]
        }
        Op::SymPinv { input, .. } => {
            // dC = -M^T G M^T
            let mt = out.transpose();
            let gc = mt.matmul(g)?.matmul(&mt)?.map(|x| -x);
            vec![(*input, gc)]
        }
    };
    Ok(res)
}
