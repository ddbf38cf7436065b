//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op is evaluated eagerly and appended to the [`Tape`]; node
//! ids are therefore already in topological order and `backward` just walks
//! them in reverse.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use super::sparse::CsrMatrix;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Exponent arguments are clamped here so `exp` stays finite.
const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Exp(usize),
    Log(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    NormalizeRows(usize, Rc<Vec<f64>>),
    GatherRows(usize, Rc<Vec<usize>>),
    Diag(usize),
    Spmm(Arc<CsrMatrix>, usize),
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    is_param: bool,
}

/// Records a computation for later differentiation. Confined to one thread.
#[derive(Debug, Default)]
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
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
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

    fn push(&self, value: Tensor, op: Op, is_param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            is_param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Input that does not need a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; listed in the tape's parameter registry.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn param_ids(&self) -> Vec<usize> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_param)
            .map(|(i, _)| i)
            .collect()
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id].value;
        if !root.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| Rc::clone(&nodes[i].value);
            let mut acc = |i: usize, d: Tensor| match &mut grads[i] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.matmul_nt(&bv)?);
                    acc(*b, av.matmul_tn(&g)?);
                }
                Op::MatMulNt(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.matmul(&bv)?);
                    acc(*b, g.matmul_tn(&av)?);
                }
                Op::Transpose(a) => acc(*a, g.transpose()?),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.mul(&bv)?);
                    acc(*b, g.mul(&av)?);
                }
                Op::AddBias(a, b) => {
                    let cols = g.cols();
                    let mut db = Tensor::zeros(&[1, cols]);
                    for r in 0..g.rows() {
                        for (d, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    acc(*a, g);
                    acc(*b, db);
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::Relu(a) => {
                    let x = val(*a);
                    acc(*a, g.zip_map(&x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
                }
                Op::Sigmoid(a) => {
                    let y = Rc::clone(&node.value);
                    acc(*a, g.zip_map(&y, |gi, yi| gi * yi * (1.0 - yi)));
                }
                Op::LogSigmoid(a) => {
                    let x = val(*a);
                    acc(*a, g.zip_map(&x, |gi, xi| gi * sigmoid(-xi)));
                }
                Op::Exp(a) => {
                    let y = Rc::clone(&node.value);
                    acc(*a, g.zip_map(&y, |gi, yi| gi * yi));
                }
                Op::Log(a) => {
                    let x = val(*a);
                    acc(*a, g.zip_map(&x, |gi, xi| gi / xi.max(f64::MIN_POSITIVE)));
                }
                Op::SoftmaxRows(a) => {
                    let y = Rc::clone(&node.value);
                    let mut d = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = Rc::clone(&node.value);
                    let mut d = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let gsum: f64 = gr.iter().sum();
                        for ((o, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = gi - yi.exp() * gsum;
                        }
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = nodes[p].value.cols();
                        let mut d = Tensor::zeros(&[g.rows(), c]);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        acc(p, d);
                        offset += c;
                    }
                }
                Op::Sum(a) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    acc(*a, Tensor::full(&shape, g.item()));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    acc(*a, Tensor::full(x.shape(), g.item() / x.len() as f64));
                }
                Op::SumCols(a) => {
                    let x = val(*a);
                    let mut d = Tensor::zeros(x.shape());
                    for r in 0..x.rows() {
                        let gi = g.get(r, 0);
                        d.row_mut(r).iter_mut().for_each(|o| *o = gi);
                    }
                    acc(*a, d);
                }
                Op::NormalizeRows(a, norms) => {
                    let y = Rc::clone(&node.value);
                    let mut d = Tensor::zeros(y.shape());
                    for (r, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, &yi), &gi) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = (gi - yi * dot) / n;
                        }
                    }
                    acc(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let shape = nodes[*a].value.shape().to_vec();
                    let mut d = Tensor::zeros(&shape);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, &x) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += x;
                        }
                    }
                    acc(*a, d);
                }
                Op::Diag(a) => {
                    let n = g.rows();
                    let mut d = Tensor::zeros(&[n, n]);
                    for i in 0..n {
                        d.set(i, i, g.get(i, 0));
                    }
                    acc(*a, d);
                }
                Op::Spmm(m, a) => acc(*a, m.transpose().matmul(&g)?),
            }
        }
        Ok(Gradients { grads })
    }
}

/// Output of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`; all zeros when `var` is not on the loss path.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, false)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul(&other.value())?;
        Ok(self.unary(v, Op::MatMul(self.id, other.id)))
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().matmul_nt(&other.value())?;
        Ok(self.unary(v, Op::MatMulNt(self.id, other.id)))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let v = self.value().transpose()?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().add(&other.value())?;
        Ok(self.unary(v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().sub(&other.value())?;
        Ok(self.unary(v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let v = self.value().mul(&other.value())?;
        Ok(self.unary(v, Op::Mul(self.id, other.id)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let b = bias.value();
        let (_, c) = x.require_matrix("add_bias")?;
        if b.shape() != [1, c] {
            return Err(Error::Shape {
                op: "add_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let mut out = (*x).clone();
        for r in 0..out.rows() {
            for (o, &bi) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bi;
            }
        }
        Ok(self.unary(out, Op::AddBias(self.id, bias.id)))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn relu(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        let v = self.value().map(sigmoid);
        self.unary(v, Op::Sigmoid(self.id))
    }

    /// `ln(sigmoid(x))`, evaluated without cancellation.
    pub fn log_sigmoid(&self) -> Var<'t> {
        let v = self.value().map(log_sigmoid);
        self.unary(v, Op::LogSigmoid(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        let v = self.value().map(|x| x.min(EXP_CLAMP).exp());
        self.unary(v, Op::Exp(self.id))
    }

    /// Natural log; non-positive inputs are clamped to the smallest positive
    /// normal so the result stays finite.
    pub fn log(&self) -> Var<'t> {
        let v = self.value().map(|x| x.max(f64::MIN_POSITIVE).ln());
        self.unary(v, Op::Log(self.id))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        x.require_matrix("softmax_rows")?;
        let mut out = (*x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(self.unary(out, Op::SoftmaxRows(self.id)))
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        x.require_matrix("log_softmax_rows")?;
        let mut out = (*x).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(self.unary(out, Op::LogSoftmaxRows(self.id)))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = vals[0].require_matrix("concat_cols")?.0;
        for v in &vals {
            let (r, _) = v.require_matrix("concat_cols")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: vals[0].shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
        }
        let total: usize = vals.iter().map(|v| v.cols()).sum();
        let mut out = Tensor::zeros(&[rows, total]);
        for r in 0..rows {
            let mut offset = 0;
            for v in &vals {
                let c = v.cols();
                out.row_mut(r)[offset..offset + c].copy_from_slice(v.row(r));
                offset += c;
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(first.unary(out, Op::ConcatCols(ids)))
    }

    pub fn sum(&self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.len().max(1) as f64);
        self.unary(v, Op::Mean(self.id))
    }

    /// Row sums: `r x c -> r x 1`.
    pub fn sum_cols(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, _) = x.require_matrix("sum_cols")?;
        let data = (0..r).map(|i| x.row(i).iter().sum()).collect();
        let v = Tensor::matrix(r, 1, data)?;
        Ok(self.unary(v, Op::SumCols(self.id)))
    }

    /// Scales each row to unit L2 norm; zero rows stay zero.
    pub fn normalize_rows(&self) -> Result<Var<'t>> {
        let x = self.value();
        x.require_matrix("normalize_rows")?;
        let mut out = (*x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        Ok(self.unary(out, Op::NormalizeRows(self.id, Rc::new(norms))))
    }

    /// Row-wise cosine similarity of two equally shaped matrices, `r x 1`.
    /// A zero row has cosine 0 with anything.
    pub fn cosine_similarity(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.normalize_rows()?
            .mul(other.normalize_rows()?)?
            .sum_cols()
    }

    /// All-pairs cosine similarity, `r1 x r2`.
    pub fn cosine_matrix(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.normalize_rows()?.matmul_nt(other.normalize_rows()?)
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let v = self.value().select_rows(idx)?;
        Ok(self.unary(v, Op::GatherRows(self.id, Rc::new(idx.to_vec()))))
    }

    /// Diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&self) -> Result<Var<'t>> {
        let x = self.value();
        let (r, c) = x.require_matrix("diag")?;
        if r != c {
            return Err(Error::Shape {
                op: "diag",
                left: vec![r, c],
                right: vec![r, r],
            });
        }
        let v = Tensor::matrix(r, 1, (0..r).map(|i| x.get(i, i)).collect())?;
        Ok(self.unary(v, Op::Diag(self.id)))
    }

    /// Constant sparse matrix times `self`.
    pub fn spmm(&self, m: &Arc<CsrMatrix>) -> Result<Var<'t>> {
        let v = m.matmul(&self.value())?;
        Ok(self.unary(v, Op::Spmm(Arc::clone(m), self.id)))
    }
}

/// Sums a non-empty list of equally shaped vars.
pub fn add_all<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    let (first, rest) = vars
        .split_first()
        .ok_or_else(|| Error::Contract("add_all of nothing".into()))?;
    rest.iter().try_fold(*first, |acc, v| acc.add(*v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let y = x.softmax_rows().unwrap().value();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let tape = Tape::new();
        let w = tape.param(Tensor::matrix(2, 3, vec![1., -2., 3., 0., 5., -6.]).unwrap());
        let g = tape.backward(w.sum()).unwrap();
        assert_eq!(g.wrt(w), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn relu_gradient_is_indicator_with_zero_at_zero() {
        let tape = Tape::new();
        let w = tape.param(Tensor::matrix(1, 4, vec![-1.0, 0.0, 2.0, 1e-9]).unwrap());
        let g = tape.backward(w.relu().sum()).unwrap();
        assert_eq!(g.wrt(w).data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn off_path_parameter_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.param(Tensor::ones(&[2, 2]));
        let b = tape.param(Tensor::ones(&[3, 1]));
        let g = tape.backward(a.sum()).unwrap();
        assert_eq!(g.wrt(b), Tensor::zeros(&[3, 1]));
        assert_eq!(tape.param_ids(), vec![a.id(), b.id()]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let a = tape.param(Tensor::ones(&[2, 2]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn log_and_exp_stay_finite() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 3, vec![0.0, -1.0, 1e6]).unwrap());
        assert!(x.log().value().is_finite());
        assert!(x.exp().value().is_finite());
        assert!(x.scale(-1.0).log_sigmoid().value().is_finite());
    }

    #[test]
    fn cosine_identity_and_zero_convention() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::matrix(2, 3, vec![0.2, -3.0, 1.5, 0.0, 0.0, 0.0]).unwrap());
        let c = v.cosine_similarity(v).unwrap().value();
        assert!((c.get(0, 0) - 1.0).abs() < 1e-12);
        assert_eq!(c.get(1, 0), 0.0);
    }
}
