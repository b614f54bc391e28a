//! Reverse-mode differentiation over a fixed operation vocabulary.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`].
//! [`Tape::backward`] walks the nodes in reverse and writes parameter gradients
//! into a [`ParamStore`]. Outputs are checked for finiteness as they are produced.

use std::sync::Arc;

use super::matrix::{log_sigmoid, sigmoid, Matrix, RowGroups};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Log(Var),
    Exp(Var),
    Sqrt(Var),
    Concat(Var, Var),
    MeanRows(Var, Arc<RowGroups>),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Detach,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, name: &str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, m: Matrix) -> Result<Var> {
        self.push(m, Op::Constant, "constant")
    }

    /// Records a leaf bound to the named parameter in `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        self.push(value, Op::Param(name.to_string()), name)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), "add")
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: x.shape(),
                right: r.shape(),
            });
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).relu();
        self.push(v, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sigmoid();
        self.push(v, Op::Sigmoid(a), "sigmoid")
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(log_sigmoid);
        self.push(v, Op::LogSigmoid(a), "log_sigmoid")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), "log")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), "exp")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), "sqrt")
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_cols(self.value(b))?;
        self.push(v, Op::Concat(a, b), "concat_cols")
    }

    pub fn mean_rows(&mut self, a: Var, groups: Arc<RowGroups>) -> Result<Var> {
        let v = self.value(a).mean_rows(&groups)?;
        self.push(v, Op::MeanRows(a, groups), "mean_rows")
    }

    /// Row gather expressed as a singleton-group mean.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.mean_rows(a, Arc::new(RowGroups::gather(indices)))
    }

    /// Sums each row to a single column.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        let v = Matrix::from_vec(x.rows(), 1, data)?;
        self.push(v, Op::RowSum(a), "row_sum")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = x.data().len();
        if n == 0 {
            return Err(Error::invalid("mean of empty matrix"));
        }
        let v = Matrix::scalar(x.sum() / n as f64);
        self.push(v, Op::Mean(a), "mean")
    }

    /// Identity in the forward pass; blocks gradient flow in the backward pass.
    pub fn detach(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).clone();
        self.push(v, Op::Detach, "detach")
    }

    /// Computes `d loss / d param` for every parameter leaf on the tape.
    ///
    /// All gradient accumulators in `store` are overwritten: parameters that do not
    /// reach `loss` end with a zero gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward called before a forward pass"));
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        store.zero_grad();

        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Detach => {}
                Op::Param(name) => {
                    store.get_mut(name)?.grad.add_assign(&g)?;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *row, dr)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Sub(a, b) => {
                    let neg = g.map(|v| -v);
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *b, neg)?;
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), "mul", |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), "mul", |x, y| x * y)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|v| v * c))?;
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g)?,
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid", |gv, s| gv * s * (1.0 - s))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::LogSigmoid(a) => {
                    let d = g.zip_map(self.value(*a), "log_sigmoid", |gv, x| gv * sigmoid(-x))?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Log(a) => {
                    let d = g.zip_map(self.value(*a), "log", |gv, x| gv / x)?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Exp(a) => {
                    let d = g.zip_map(&node.value, "exp", |gv, e| gv * e)?;
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sqrt(a) => {
                    let d = g.zip_map(&node.value, "sqrt", |gv, s| gv * 0.5 / s)?;
                    accumulate(&mut grads, *a, d.ensure_finite("sqrt gradient")?)?;
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for r in 0..g.rows() {
                        let row = g.row(r);
                        da.row_mut(r).copy_from_slice(&row[..ca]);
                        db.row_mut(r).copy_from_slice(&row[ca..]);
                    }
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MeanRows(a, groups) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for gi in 0..groups.len() {
                        let members = groups.group(gi);
                        if members.is_empty() {
                            continue;
                        }
                        let scale = 1.0 / members.len() as f64;
                        let grow = g.row(gi);
                        for &m in members {
                            for (o, v) in d.row_mut(m).iter_mut().zip(grow) {
                                *o += v * scale;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::RowSum(a) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let gv = g.get(r, 0);
                        d.row_mut(r).fill(gv);
                    }
                    accumulate(&mut grads, *a, d)?;
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, Matrix::filled(x.rows(), x.cols(), g.item()?))?;
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let n = x.data().len() as f64;
                    accumulate(&mut grads, *a, Matrix::filled(x.rows(), x.cols(), g.item()? / n))?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_w() {
        let w0 = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let mut store = ParamStore::new();
        store.insert("w", w0.clone());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &w0.map(|v| 2.0 * v));
    }

    #[test]
    fn unreachable_params_get_zero() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::scalar(2.0));
        store.insert("b", Matrix::scalar(5.0));
        store.get_mut("b").unwrap().grad = Matrix::scalar(7.0);
        let mut tape = Tape::new();
        let a = tape.param(&store, "a").unwrap();
        let loss = tape.scale(a, 3.0).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("a").unwrap().item().unwrap(), 3.0);
        assert_eq!(store.grad("b").unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        assert!(tape.backward(Var(0), &mut store).is_err());
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store = ParamStore::new();
        store.insert("w", Matrix::scalar(1.5));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let d = tape.detach(w).unwrap();
        let y = tape.mul(d, w).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        // only the non-detached factor contributes
        assert_eq!(store.grad("w").unwrap().item().unwrap(), 1.5);
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::scalar(-1.0)).unwrap();
        assert!(matches!(tape.log(x), Err(Error::NonFinite(_))));
    }
}
