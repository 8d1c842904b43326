//! Define-by-run computation graph.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep. A graph
//! is built fresh for every training step and dropped afterwards.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norms at or below this are rejected by [`Graph::l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Softplus(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Normalize(Var),
    Sum(Var),
    SumRows(Var),
    GatherRows(Var, Vec<usize>),
    Cdist(Var, Var),
    MaskedLogSumExp(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when the root does not depend on it.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Elementwise `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    softplus_scalar(x)
}

/// Row-wise softmax of plain values, with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
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

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn row_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn cdist_values(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (a.rows(), b.rows());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let d2: f64 = ai
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            out.data_mut()[i * m + j] = d2.sqrt();
        }
    }
    out
}

/// Row-wise log-sum-exp over the entries where `mask` is nonzero; rows with an
/// empty mask yield 0. Returns the values and the masked softmax weights.
fn masked_lse(x: &Tensor, mask: &Tensor) -> (Tensor, Tensor) {
    let (n, m) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(n, 1);
    let mut weights = Tensor::zeros(n, m);
    for r in 0..n {
        let xr = x.row(r);
        let mr = mask.row(r);
        let max = xr
            .iter()
            .zip(mr)
            .filter(|(_, &k)| k != 0.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let w = weights.row_mut(r);
        let mut total = 0.0;
        for j in 0..m {
            if mr[j] != 0.0 {
                w[j] = (xr[j] - max).exp();
                total += w[j];
            }
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        out.data_mut()[r] = max + total.ln();
    }
    (out, weights)
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input; no gradient is tracked for it or through it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Copies the value of `x` into a new constant, cutting gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(v, Op::Transpose(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.rows() != sb.rows() || sa.cols() != sb.cols() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", sa.shape(), sb.shape()),
            ));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = f(*o, y);
        }
        out
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    /// `x [m×n] + row [1×n]`, broadcasting the row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", xv.shape(), rv.shape()),
            ));
        }
        let mut out = xv.clone();
        let bias = rv.data().to_vec();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&bias) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    /// `x [m×n] + col [m×1]`, broadcasting the column.
    pub fn add_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(Error::shape(
                "add_col",
                format!("{:?} + {:?}", xv.shape(), cv.shape()),
            ));
        }
        let mut out = xv.clone();
        let col_vals = cv.data().to_vec();
        for (r, c) in col_vals.iter().enumerate() {
            for o in out.row_mut(r) {
                *o += c;
            }
        }
        let rg = self.rg(x) || self.rg(col);
        Ok(self.push(out, Op::AddCol(x, col), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|a| a * factor);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a + c);
        let rg = self.rg(x);
        self.push(v, Op::AddScalar(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    /// Clamps into `[lo, hi]`; the derivative is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(v, Op::Clamp(x, lo, hi), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(softplus_scalar);
        let rg = self.rg(x);
        self.push(v, Op::Softplus(x), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(v, Op::Softmax(x), rg)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = log_softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(v, Op::LogSoftmax(x), rg)
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let norms = row_norms(xv);
        if let Some((row, &norm)) = norms.iter().enumerate().find(|(_, &n)| n <= NORM_EPS) {
            return Err(Error::DegenerateRow { row, norm });
        }
        let mut out = xv.clone();
        for (r, n) in norms.iter().enumerate() {
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::L2Normalize(x), rg))
    }

    /// Sum of all entries, as a `[1×1]` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums, `[n×m] -> [n×1]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let v = Tensor::new(vec![xv.rows(), 1], data).expect("column shape");
        let rg = self.rg(x);
        self.push(v, Op::SumRows(x), rg)
    }

    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} out of range for {} rows", xv.rows()),
            ));
        }
        let v = xv.select_rows(indices);
        let v = Tensor::new(vec![indices.len(), xv.cols()], v.into_data())?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::GatherRows(x, indices.to_vec()), rg))
    }

    /// Pairwise Euclidean distances between rows, `[n×d], [m×d] -> [n×m]`.
    ///
    /// Where a distance is exactly zero the derivative is taken as zero.
    pub fn cdist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape(
                "cdist",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let v = cdist_values(av, bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Cdist(a, b), rg))
    }

    /// `out[i] = ln Σ_{j: mask[i][j] ≠ 0} exp(x[i][j])`, and 0 for rows whose mask is empty.
    pub fn masked_logsumexp(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if mask.rows() != xv.rows() || mask.cols() != xv.cols() {
            return Err(Error::shape(
                "masked_logsumexp",
                format!("{:?} vs mask {:?}", xv.shape(), mask.shape()),
            ));
        }
        let (v, _) = masked_lse(xv, &mask);
        let rg = self.rg(x);
        Ok(self.push(v, Op::MaskedLogSumExp(x, mask), rg))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0])?);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, contrib: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    acc(*a, g.matmul(&bv.transpose()).expect("matmul adjoint"));
                }
                if self.rg(*b) {
                    acc(*b, av.transpose().matmul(g).expect("matmul adjoint"));
                }
            }
            Op::Transpose(x) => {
                let t = g.transpose();
                let shape = self.value(*x).shape().to_vec();
                acc(*x, t.reshape(shape).expect("transpose adjoint"));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut ga = g.clone();
                    for (o, &bb) in ga.data_mut().iter_mut().zip(bv.data()) {
                        *o *= bb;
                    }
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = g.clone();
                    for (o, &aa) in gb.data_mut().iter_mut().zip(av.data()) {
                        *o *= aa;
                    }
                    acc(*b, gb);
                }
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                if self.rg(*row) {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    for r in 0..g.rows() {
                        for (o, v) in gr.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    acc(*row, Tensor::new(shape, gr).expect("row adjoint"));
                }
            }
            Op::AddCol(x, col) => {
                acc(*x, g.clone());
                if self.rg(*col) {
                    let gc = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    let shape = self.value(*col).shape().to_vec();
                    acc(*col, Tensor::new(shape, gc).expect("col adjoint"));
                }
            }
            Op::Scale(x, f) => acc(*x, g.map(|v| v * f)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xv <= 0.0 {
                        *o = 0.0;
                    }
                }
                acc(*x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    if xv < *lo || xv > *hi {
                        *o = 0.0;
                    }
                }
                acc(*x, gx);
            }
            Op::Softplus(x) => {
                let mut gx = g.clone();
                for (o, &xv) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *o *= sigmoid(xv);
                }
                acc(*x, gx);
            }
            Op::Softmax(x) => {
                let mut gx = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, &yy) in gx.row_mut(r).iter_mut().zip(yr) {
                        *o = yy * (*o - dot);
                    }
                }
                acc(*x, gx);
            }
            Op::LogSoftmax(x) => {
                let mut gx = g.clone();
                for r in 0..y.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (o, &ly) in gx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * total;
                    }
                }
                acc(*x, gx);
            }
            Op::L2Normalize(x) => {
                let norms = row_norms(self.value(*x));
                let mut gx = g.clone();
                for (r, n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (o, &yy) in gx.row_mut(r).iter_mut().zip(yr) {
                        *o = (*o - yy * dot) / n;
                    }
                }
                acc(*x, gx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                acc(*x, Tensor::new(xv.shape().to_vec(), vec![g.item(); xv.numel()]).expect("sum adjoint"));
            }
            Op::SumRows(x) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros_like(xv);
                for r in 0..xv.rows() {
                    let gr = g.data()[r];
                    gx.data_mut()[r * cols..(r + 1) * cols].fill(gr);
                }
                acc(*x, gx);
            }
            Op::GatherRows(x, indices) => {
                let xv = self.value(*x);
                let cols = xv.cols();
                let mut gx = Tensor::zeros_like(xv);
                for (out_row, &src) in indices.iter().enumerate() {
                    let gd = &g.data()[out_row * cols..(out_row + 1) * cols];
                    for (o, v) in gx.data_mut()[src * cols..(src + 1) * cols].iter_mut().zip(gd) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::Cdist(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, m, d) = (av.rows(), bv.rows(), av.cols());
                let mut ga = Tensor::zeros_like(av);
                let mut gb = Tensor::zeros_like(bv);
                for i in 0..n {
                    for j in 0..m {
                        let dist = y.data()[i * m + j];
                        let gij = g.data()[i * m + j];
                        if dist == 0.0 || gij == 0.0 {
                            continue;
                        }
                        let w = gij / dist;
                        for k in 0..d {
                            let diff = av.data()[i * d + k] - bv.data()[j * d + k];
                            ga.data_mut()[i * d + k] += w * diff;
                            gb.data_mut()[j * d + k] -= w * diff;
                        }
                    }
                }
                if self.rg(*a) {
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    acc(*b, gb);
                }
            }
            Op::MaskedLogSumExp(x, mask) => {
                let (_, weights) = masked_lse(self.value(*x), mask);
                let mut gx = weights;
                for r in 0..gx.rows() {
                    let gr = g.data()[r];
                    for o in gx.row_mut(r) {
                        *o *= gr;
                    }
                }
                acc(*x, gx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i = g.constant(t(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let m = g.constant(t(&[vec![2.0, 3.0], vec![4.0, 5.0]]));
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p), g.value(m));

        let a = g.constant(t(&[vec![1.0, 2.0]]));
        let b = g.constant(t(&[vec![3.0], vec![4.0]]));
        let ab = g.matmul(a, b).unwrap();
        assert_eq!(g.value(ab).data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![0.0; 4], vec![1000.0, 0.0, -1000.0, 0.0]]));
        let s = g.softmax(x);
        let v = g.value(s);
        assert_eq!(v.row(0), &[0.25; 4]);
        assert!((v.at(1, 0) - 1.0).abs() < 1e-12);
        assert!(v.at(1, 1).abs() < 1e-12);
        assert!(v.is_finite());
    }

    #[test]
    fn l2_normalize_values_and_degenerate_row() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![3.0, 4.0], vec![0.0, 1.0]]));
        let y = g.l2_normalize(x).unwrap();
        assert!((g.value(y).at(0, 0) - 0.6).abs() < 1e-15);
        assert!((g.value(y).at(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(g.value(y).row(1), &[0.0, 1.0]);

        let z = g.constant(t(&[vec![1.0, 0.0], vec![0.0, 0.0]]));
        match g.l2_normalize(z) {
            Err(Error::DegenerateRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected degenerate row, got {other:?}"),
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(0.5) - 0.974077).abs() < 1e-6);
        assert!((softplus(100.0) - 100.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn backward_of_sum_is_ones_and_of_square_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, -2.0, 3.5]]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5));
        let sq = g.mul(x, x).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 3.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(1, 2));
        let c = g.constant(Tensor::ones(1, 2));
        let d = g.detach(x);
        let p = g.mul(x, c).unwrap();
        let q = g.mul(p, d).unwrap();
        let s = g.sum(q);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert!(grads.get(d).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn cdist_zero_distance_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, 2.0], vec![1.0, 2.0]]));
        let d = g.cdist(x, x).unwrap();
        let s = g.sum(d);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_logsumexp_empty_row_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let mask = t(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let l = g.masked_logsumexp(x, mask).unwrap();
        let expected = (1f64.exp() + 2f64.exp()).ln();
        assert!((g.value(l).data()[0] - expected).abs() < 1e-14);
        assert_eq!(g.value(l).data()[1], 0.0);
        let s = g.sum(l);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().row(1), &[0.0, 0.0]);
    }
}
