//! Reverse-mode differentiation over a linear tape of matrix operations.

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var),
    Abs(Var),
    Square(Var),
    /// `q: [B, n]`, `w: [B, n*e]` -> `[B, e]`, one vector-matrix product per row.
    RowVecMat { q: Var, w: Var, n: usize, e: usize },
    RowSum(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient of a scalar loss with respect to every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self { grads: store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }
}

/// Records operations for a single forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Constant, "constant")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(store.get(id).clone(), Op::Param(id), "param")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    /// `a: [B, n]` plus a broadcast row `b: [1, n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.len() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let n = av.cols();
        let data = av.data().iter().enumerate().map(|(i, x)| x + bv.data()[i % n]).collect();
        self.push(Tensor::new(av.shape().to_vec(), data)?, Op::AddRow(a, b), "add_row")
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op, name)
    }

    fn map(&mut self, a: Var, op: Op, name: &str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| f(x)).collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, s), "scale", |x| x * s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Elu(a), "elu", elu)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), "abs", f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn row_vec_mat(&mut self, q: Var, w: Var, n: usize, e: usize) -> Result<Var> {
        let (qv, wv) = (self.value(q), self.value(w));
        let b = qv.rows();
        if qv.cols() != n || wv.rows() != b || wv.cols() != n * e {
            return Err(shape_err("row_vec_mat", qv, wv));
        }
        let mut out = vec![0.0; b * e];
        for r in 0..b {
            matmul_into(qv.row(r), wv.row(r), &mut out[r * e..(r + 1) * e], 1, n, e);
        }
        self.push(Tensor::matrix(b, e, out)?, Op::RowVecMat { q, w, n, e }, "row_vec_mat")
    }

    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let rows = av.rows();
        self.push(Tensor::matrix(rows, 1, data)?, Op::RowSum(a), "row_sum")
    }

    /// Picks column `idx[r]` of row `r`: `[B, A]` -> `[B, 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if idx.len() != av.rows() || idx.iter().any(|&i| i >= av.cols()) {
            return Err(Error::ShapeMismatch(format!("gather of {} indices from {:?}", idx.len(), av.shape())));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| av.row(r)[i]).collect();
        self.push(Tensor::matrix(idx.len(), 1, data)?, Op::Gather(a, idx.to_vec()), "gather")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        self.push(value, Op::Reshape(a), "reshape")
    }

    /// Backpropagates from a `[1, 1]` loss. Parameters that do not feed the
    /// loss receive zero gradient.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        let mut grads = Gradients::zeros_like(store);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let dst = &mut grads.grads[id.0];
                    if !dst.same_shape(&g) {
                        return Err(Error::ShapeMismatch(format!("gradient for {}", store.name(*id))));
                    }
                    dst.data_mut().iter_mut().zip(g.data()).for_each(|(d, s)| *d += s);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA = G B^T, dB = A^T G
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for c in 0..k {
                            let brow = &bv.data()[c * n..(c + 1) * n];
                            da[r * k + c] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        let grow = &g.data()[r * n..(r + 1) * n];
                        for (c, &x) in av.row(r).iter().enumerate() {
                            if x == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                *d += x * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), da)?);
                    accumulate(&mut adj, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
                Op::AddRow(a, b) => {
                    let bv = self.value(*b);
                    let n = bv.len();
                    let mut db = vec![0.0; n];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % n] += v;
                    }
                    accumulate(&mut adj, *b, Tensor::new(bv.shape().to_vec(), db)?);
                    accumulate(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = map_t(&g, |x| -x);
                    accumulate(&mut adj, *a, g);
                    accumulate(&mut adj, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = zip_t(&g, self.value(*b), |x, y| x * y);
                    let db = zip_t(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, map_t(&g, |x| x * s)),
                Op::Relu(a) => {
                    let d = zip_t(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Elu(a) => {
                    let d = zip_t(&g, self.value(*a), |x, y| if y > 0.0 { x } else { x * y.exp() });
                    accumulate(&mut adj, *a, d);
                }
                Op::Abs(a) => {
                    let d = zip_t(&g, self.value(*a), |x, y| {
                        if y > 0.0 {
                            x
                        } else if y < 0.0 {
                            -x
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, *a, d);
                }
                Op::Square(a) => accumulate(&mut adj, *a, zip_t(&g, self.value(*a), |x, y| 2.0 * x * y)),
                Op::RowVecMat { q, w, n, e } => {
                    let (qv, wv) = (self.value(*q), self.value(*w));
                    let (n, e) = (*n, *e);
                    let mut dq = vec![0.0; qv.len()];
                    let mut dw = vec![0.0; wv.len()];
                    for r in 0..qv.rows() {
                        let grow = &g.data()[r * e..(r + 1) * e];
                        let qrow = qv.row(r);
                        let wrow = wv.row(r);
                        for i in 0..n {
                            let wi = &wrow[i * e..(i + 1) * e];
                            dq[r * n + i] = wi.iter().zip(grow).map(|(x, y)| x * y).sum();
                            for (j, &gv) in grow.iter().enumerate() {
                                dw[r * n * e + i * e + j] = qrow[i] * gv;
                            }
                        }
                    }
                    accumulate(&mut adj, *q, Tensor::new(qv.shape().to_vec(), dq)?);
                    accumulate(&mut adj, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                Op::RowSum(a) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let data = (0..av.len()).map(|i| g.data()[i / c]).collect();
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), data)?);
                }
                Op::Gather(a, idx) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut data = vec![0.0; av.len()];
                    for (r, &i) in idx.iter().enumerate() {
                        data[r * c + i] = g.data()[r];
                    }
                    accumulate(&mut adj, *a, Tensor::new(av.shape().to_vec(), data)?);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    accumulate(&mut adj, *a, Tensor::filled(av.shape(), g.data()[0]));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let v = g.data()[0] / av.len().max(1) as f64;
                    accumulate(&mut adj, *a, Tensor::filled(av.shape(), v));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut adj, *a, g.reshaped(shape)?);
                }
            }
        }
        if grads.grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(grads)
    }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn map_t(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same length")
}

fn zip_t(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}
