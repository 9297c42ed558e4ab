//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and the rule needed to push gradients back
//! to its inputs. [`Tape::backward`] walks the nodes in reverse insertion
//! order, so gradient accumulation order is fixed for a given graph.

use crate::error::{Error, Result};

use super::matrix::{dot, Matrix};
use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Gather { param: ParamId, rows: Vec<usize>, table_shape: (usize, usize) },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    RowSoftmax(Var),
    RowLogSoftmax(Var),
    Sum(Var),
    SumRows(Var),
    Pick(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const)
    }

    /// Records a copy of `v`'s value that gradients do not flow through.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Selects rows of a parameter table (an embedding lookup). Gradients are
    /// scattered back into the selected rows only.
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = store.value(id);
        let mut out = Matrix::zeros(rows.len(), table.cols());
        for (i, &r) in rows.iter().enumerate() {
            if r >= table.rows() {
                return Err(Error::Vocabulary(format!(
                    "row {r} outside table `{}` with {} rows",
                    store.slot(id).name,
                    table.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        let table_shape = table.shape();
        Ok(self.push(
            out,
            Op::Gather {
                param: id,
                rows: rows.to_vec(),
                table_shape,
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: am.shape(),
                right: bm.shape(),
            });
        }
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (x, &y) in v.row_mut(r).iter_mut().zip(bm.data()) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(super::sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a).row_softmax();
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let v = self.value(a).row_log_softmax();
        self.push(v, Op::RowLogSoftmax(a))
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Column sums, as a `1 × cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(1, m.cols());
        for r in 0..m.rows() {
            for (o, &x) in out.data_mut().iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Entry `(r, c)` as a `1 × 1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let m = self.value(a);
        if r >= m.rows() || c >= m.cols() {
            return Err(Error::Dimension {
                op: "pick",
                left: m.shape(),
                right: (r, c),
            });
        }
        let v = Matrix::scalar(m.get(r, c));
        Ok(self.push(v, Op::Pick(a, r, c)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(parts[0]).shape(),
                    right: m.shape(),
                });
            }
            cols += m.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.value(parts[0]).shape(),
                    right: m.shape(),
                });
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let out = Matrix::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = Matrix::new(rows, cols, self.value(a).data().to_vec())?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: shape,
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.slot_mut(*id, g.shape()).add_assign(&g),
                Op::Gather {
                    param,
                    rows,
                    table_shape,
                } => {
                    let table = out.slot_mut(*param, *table_shape);
                    for (k, &r) in rows.iter().enumerate() {
                        for (t, &x) in table.row_mut(r).iter_mut().zip(g.row(k)) {
                            *t += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_nt(self.value(*b))?;
                    let gb = self.value(*a).matmul_tn(&g)?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.matmul(self.value(*b))?;
                    let gb = g.matmul_tn(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(self.value(*b))?;
                    let gb = g.hadamard(self.value(*a))?;
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Tanh(a) => acc(&mut grads, *a, g.zip_with(y, "tanh'", |g, t| g * (1.0 - t * t))?),
                Op::Sigmoid(a) => acc(&mut grads, *a, g.zip_with(y, "sigmoid'", |g, s| g * s * (1.0 - s))?),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_with(x, "relu'", |g, x| if x > 0.0 { g } else { 0.0 })?);
                }
                Op::RowSoftmax(a) => {
                    // s ⊙ (g − ⟨g, s⟩) per row
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = y.row(r);
                        let inner = dot(g.row(r), s);
                        for (x, &sv) in ga.row_mut(r).iter_mut().zip(s) {
                            *x = sv * (*x - inner);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::RowLogSoftmax(a) => {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (x, &ls) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *x -= ls.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::SumRows(a) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for k in 0..r {
                        ga.row_mut(k).copy_from_slice(g.data());
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Pick(a, r, c) => {
                    let (rows, cols) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    ga.set(*r, *c, g.item());
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let mut gp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let gp = Matrix::new(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec())?;
                        off += rows;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::new(r, c, g.into_data())?);
                }
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
