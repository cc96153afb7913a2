use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::{gemm, SparseMatrix, Tensor};
use crate::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    SparseMatMul(Rc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    LogCosh(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize),
    Broadcast(usize),
    Reshape(usize),
    SliceCols(usize, usize),
    ConcatCols(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations in execution order so that a single reverse
/// sweep yields gradients for every recorded value.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Records an input. Gradients are reported for every leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            let val = |i: usize| &nodes[i].value;
            match node.op {
                Op::Leaf => unreachable!(),
                Op::SparseMatMul(ref m, a) => accumulate(&mut grads[a], m.transpose().matmul(&g)?),
                Op::MatMul(a, b) => {
                    let (m, k) = val(a).dims2("matmul")?;
                    let n = val(b).shape()[1];
                    // dA = G Bᵀ
                    let mut da = Tensor::zeros([m, k]);
                    gemm(m, n, k, g.data(), (n, 1), val(b).data(), (1, n), da.data_mut());
                    // dB = Aᵀ G
                    let mut db = Tensor::zeros([k, n]);
                    gemm(k, m, n, val(a).data(), (1, k), g.data(), (n, 1), db.data_mut());
                    accumulate(&mut grads[a], da);
                    accumulate(&mut grads[b], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a], g.reduce_to(val(a).shape()));
                    accumulate(&mut grads[b], g.reduce_to(val(b).shape()));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a], g.reduce_to(val(a).shape()));
                    accumulate(&mut grads[b], g.map(|x| -x).reduce_to(val(b).shape()));
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_with(val(b), "mul", |x, y| x * y)?.reduce_to(val(a).shape());
                    let gb = g.zip_with(val(a), "mul", |x, y| x * y)?.reduce_to(val(b).shape());
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Div(a, b) => {
                    let ga = g.zip_with(val(b), "div", |x, y| x / y)?.reduce_to(val(a).shape());
                    // d(a/b)/db = -out / b
                    let gb = g
                        .zip_with(out, "div", |x, o| x * o)?
                        .zip_with(val(b), "div", |x, y| -x / y)?
                        .reduce_to(val(b).shape());
                    accumulate(&mut grads[a], ga);
                    accumulate(&mut grads[b], gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads[a], g.map(|x| x * c)),
                Op::AddScalar(a) => accumulate(&mut grads[a], g),
                Op::Relu(a) => {
                    let ga = g.zip_with(out, "relu", |x, o| if o > 0.0 { x } else { 0.0 })?;
                    accumulate(&mut grads[a], ga);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_with(out, "tanh", |x, o| x * (1.0 - o * o))?;
                    accumulate(&mut grads[a], ga);
                }
                Op::Exp(a) => accumulate(&mut grads[a], g.zip_with(out, "exp", |x, o| x * o)?),
                Op::Log(a) => accumulate(&mut grads[a], g.zip_with(val(a), "log", |x, v| x / v)?),
                Op::LogCosh(a) => {
                    accumulate(&mut grads[a], g.zip_with(val(a), "log_cosh", |x, v| x * v.tanh())?)
                }
                Op::Sum(a) => accumulate(&mut grads[a], Tensor::full(val(a).shape().to_vec(), g.item())),
                Op::Mean(a) => {
                    let n = val(a).len() as f64;
                    accumulate(&mut grads[a], Tensor::full(val(a).shape().to_vec(), g.item() / n));
                }
                Op::SumAxis(a) | Op::Broadcast(a) => {
                    let shape = val(a).shape().to_vec();
                    let ga = if g.len() < val(a).len() { g.broadcast_to(&shape)? } else { g.reduce_to(&shape) };
                    accumulate(&mut grads[a], ga);
                }
                Op::Reshape(a) => accumulate(&mut grads[a], g.reshape(val(a).shape().to_vec())?),
                Op::SliceCols(a, start) => {
                    let (r, c) = val(a).dims2("slice_cols")?;
                    let w = g.shape()[1];
                    let mut ga = Tensor::zeros([r, c]);
                    for i in 0..r {
                        ga.data_mut()[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    accumulate(&mut grads[a], ga);
                }
                Op::ConcatCols(a, b) => {
                    let c1 = val(a).shape()[1];
                    let c = g.shape()[1];
                    accumulate(&mut grads[a], g.slice_cols(0, c1)?);
                    accumulate(&mut grads[b], g.slice_cols(c1, c)?);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match node.op {
                Op::Leaf => Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of a backward sweep, one per leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zero if the leaf did not influence the root.
    pub fn wrt(&self, v: Var<'_>) -> &Tensor {
        self.grads[v.id].as_ref().expect("gradient requested for a non-leaf value")
    }

    pub fn take(&mut self, v: Var<'_>) -> Tensor {
        self.grads[v.id].take().expect("gradient requested for a non-leaf value")
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Copies the value into a fresh leaf, cutting the gradient path.
    pub fn detach(self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.leaf(v)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let v = self.value().zip_with(&other.value(), name, f)?;
        Ok(self.tape.push(v, op))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id)))
    }

    /// Product of a constant sparse matrix with this value.
    pub fn sparse_lmul(self, m: &Rc<SparseMatrix>) -> Result<Var<'t>> {
        let v = m.matmul(&self.value())?;
        Ok(self.tape.push(v, Op::SparseMatMul(Rc::clone(m), self.id)))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// Numerically stable log(cosh(x)).
    pub fn log_cosh(self) -> Var<'t> {
        self.unary(Op::LogCosh(self.id), log_cosh)
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let m = {
            let v = self.value();
            v.sum() / v.len() as f64
        };
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id))
    }

    /// Sum over `axis` of a 2-D value, keeping that axis with size 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value().sum_axis(axis)?;
        Ok(self.tape.push(v, Op::SumAxis(self.id)))
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().broadcast_to(shape)?;
        Ok(self.tape.push(v, Op::Broadcast(self.id)))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let v = self.value().slice_cols(start, end)?;
        Ok(self.tape.push(v, Op::SliceCols(self.id, start)))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().concat_cols(&other.value())?;
        Ok(self.tape.push(v, Op::ConcatCols(self.id, other.id)))
    }
}

pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}
