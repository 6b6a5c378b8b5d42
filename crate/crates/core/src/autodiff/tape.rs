use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{AutodiffError, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    MatMul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Square(usize),
    Scale(usize, T),
    Sum(usize),
    Mean(usize),
    SqNorm(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ImqGram { a: usize, b: usize, c: T, zero_diag: bool },
    WeightedSum(usize, Tensor<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SqNorm(_) => "sqnorm",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::ImqGram { .. } => "imq_gram",
            Op::WeightedSum(..) => "weighted_sum",
        }
    }
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Leaves may borrow their tensors (`param`), so model parameters are never
/// copied onto a tape. A tape is rebuilt for every evaluation.
pub struct Tape<'p, T: Real> {
    id: u64,
    nodes: Vec<Node<'p, T>>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    /// New tape. Non-finite checks follow `debug_assertions`.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf that borrows its value.
    pub fn param(&mut self, value: &'p Tensor<T>) -> Var {
        self.push_raw(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Differentiable leaf that owns its value.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Cow::Owned(value), Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'p Tensor<T>) -> Var {
        self.push_raw(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.idx].value
    }

    fn push_raw(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var, AutodiffError> {
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFiniteValue { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(Cow::Owned(value), op, requires_grad))
    }

    fn idx(&self, v: Var) -> Result<usize, AutodiffError> {
        if v.tape != self.id {
            return Err(AutodiffError::DetachedGraph);
        }
        Ok(v.idx)
    }

    fn t(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn mat(&self, i: usize, op: &'static str) -> Result<(usize, usize), AutodiffError> {
        self.t(i).dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op,
            lhs: self.t(i).shape().to_vec(),
            rhs: vec![],
        })
    }

    fn same_shape(&self, a: usize, b: usize, op: &'static str) -> Result<(), AutodiffError> {
        if self.t(a).shape() != self.t(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: self.t(a).shape().to_vec(),
                rhs: self.t(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(ia, ib, op.name())?;
        let ta = self.t(ia);
        let data = ta
            .data()
            .iter()
            .zip(self.t(ib).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, op, &[ia, ib])
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let out = self.t(ia).map(f);
        self.push(out, op, &[ia])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(a, b, Op::Add(a.idx, b.idx), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(a, b, Op::Sub(a.idx, b.idx), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_with(a, b, Op::Mul(a.idx, b.idx), |x, y| x * y)
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let (rows, cols) = self.mat(ix, "add_bias")?;
        let b = self.t(ib);
        if b.numel() != cols || b.rank() > 2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                lhs: self.t(ix).shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = self.t(ix).clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        debug_assert_eq!(out.numel(), rows * cols);
        self.push(out, Op::AddBias(ix, ib), &[ix, ib])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k) = self.mat(ia, "matmul")?;
        let (k2, n) = self.mat(ib, "matmul")?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.t(ia).data(),
            (k as isize, 1),
            self.t(ib).data(),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        self.push(Tensor::matrix(m, n, out), Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Sigmoid(a.idx), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Tanh(a.idx), |x| x.tanh())
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Square(a.idx), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        self.unary(a, Op::Scale(a.idx, c), |x| x * c)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let s = self.t(ia).sum();
        self.push(Tensor::scalar(s), Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let t = self.t(ia);
        let s = t.sum() / T::from_usize(t.numel()).unwrap();
        self.push(Tensor::scalar(s), Op::Mean(ia), &[ia])
    }

    /// Sum of squares of all entries.
    pub fn sqnorm(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let s = self.t(ia).data().iter().map(|&x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SqNorm(ia), &[ia])
    }

    /// `sum(a * w)` with a constant weight tensor of the same shape.
    pub fn weighted_sum(&mut self, a: Var, w: Tensor<T>) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        if self.t(ia).shape() != w.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "weighted_sum",
                lhs: self.t(ia).shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let s = self.t(ia).data().iter().zip(w.data()).map(|(&x, &y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(ia, w), &[ia])
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>, _>>()?;
        let dims = ids
            .iter()
            .map(|&i| self.mat(i, "concat_cols"))
            .collect::<Result<Vec<_>, _>>()?;
        let rows = dims.first().map(|d| d.0).ok_or(AutodiffError::EmptyInput("concat_cols"))?;
        if let Some(&(r, _)) = dims.iter().find(|d| d.0 != rows) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                lhs: vec![rows],
                rhs: vec![r],
            });
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &(_, c)) in ids.iter().zip(&dims) {
                out.extend_from_slice(&self.t(i).data()[r * c..(r + 1) * c]);
            }
        }
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(ids.clone()), &ids)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let ids = parts.iter().map(|&v| self.idx(v)).collect::<Result<Vec<_>, _>>()?;
        let dims = ids
            .iter()
            .map(|&i| self.mat(i, "concat_rows"))
            .collect::<Result<Vec<_>, _>>()?;
        let cols = dims.first().map(|d| d.1).ok_or(AutodiffError::EmptyInput("concat_rows"))?;
        if let Some(&(_, c)) = dims.iter().find(|d| d.1 != cols) {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_rows",
                lhs: vec![cols],
                rhs: vec![c],
            });
        }
        let rows: usize = dims.iter().map(|d| d.0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &i in &ids {
            out.extend_from_slice(self.t(i).data());
        }
        self.push(Tensor::matrix(rows, cols, out), Op::ConcatRows(ids.clone()), &ids)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let (rows, cols) = self.mat(ia, "slice_cols")?;
        if start >= end || end > cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![rows, cols],
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let src = self.t(ia).data();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        self.push(Tensor::matrix(rows, w, out), Op::SliceCols(ia, start), &[ia])
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let ia = self.idx(a)?;
        let (rows, cols) = self.mat(ia, "slice_rows")?;
        if start >= end || end > rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_rows",
                lhs: vec![rows, cols],
                rhs: vec![start, end],
            });
        }
        let out = self.t(ia).data()[start * cols..end * cols].to_vec();
        self.push(Tensor::matrix(end - start, cols, out), Op::SliceRows(ia, start), &[ia])
    }

    /// Inverse multiquadratic Gram matrix `K[i][j] = c / (c + |a_i - b_j|^2)`
    /// between the rows of `a` and `b`. With `zero_diag` the diagonal is
    /// masked to zero (square inputs only).
    pub fn imq_gram(&mut self, a: Var, b: Var, c: T, zero_diag: bool) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, la) = self.mat(ia, "imq_gram")?;
        let (n, lb) = self.mat(ib, "imq_gram")?;
        if la != lb || (zero_diag && m != n) {
            return Err(AutodiffError::ShapeMismatch {
                op: "imq_gram",
                lhs: vec![m, la],
                rhs: vec![n, lb],
            });
        }
        let out = imq_gram_values(self.t(ia).data(), self.t(ib).data(), m, n, la, c, zero_diag);
        self.push(
            Tensor::matrix(m, n, out),
            Op::ImqGram {
                a: ia,
                b: ib,
                c,
                zero_diag,
            },
            &[ia, ib],
        )
    }

    /// Reverse pass from a scalar output.
    ///
    /// Contributions to a node are summed in reverse tape order, so repeated
    /// calls on the same graph give bit-identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let root = self.idx(loss)?;
        let root_value = self.t(root);
        if root_value.numel() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root + 1];
        grads[root] = Some(Tensor::filled(root_value.shape(), T::one()));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, node: &Node<'p, T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let two = T::one() + T::one();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, || hadamard(g, self.t(*b)));
                self.accumulate(grads, *b, || hadamard(g, self.t(*a)));
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, || g.clone());
                self.accumulate(grads, *b, || {
                    let bias = self.t(*b);
                    let cols = bias.numel();
                    let mut out = vec![T::zero(); cols];
                    for row in g.data().chunks_exact(cols) {
                        for (o, &v) in out.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                    Tensor::new(bias.shape().to_vec(), out).expect("bias shape")
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.t(*a).dims2().unwrap();
                let n = self.t(*b).dims2().unwrap().1;
                // dA = G B^T
                self.accumulate(grads, *a, || {
                    let mut out = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g.data(),
                        (n as isize, 1),
                        self.t(*b).data(),
                        (1, n as isize),
                        T::zero(),
                        &mut out,
                        (k as isize, 1),
                    );
                    Tensor::matrix(m, k, out)
                });
                // dB = A^T G
                self.accumulate(grads, *b, || {
                    let mut out = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        self.t(*a).data(),
                        (1, k as isize),
                        g.data(),
                        (n as isize, 1),
                        T::zero(),
                        &mut out,
                        (n as isize, 1),
                    );
                    Tensor::matrix(k, n, out)
                });
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, || zip_map(g, y, |gv, yv| gv * yv * (T::one() - yv)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, || zip_map(g, y, |gv, yv| gv * (T::one() - yv * yv)));
            }
            Op::Square(a) => {
                self.accumulate(grads, *a, || zip_map(g, self.t(*a), |gv, x| two * x * gv));
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, || g.map(|v| v * c));
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, || Tensor::filled(self.t(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let t = self.t(*a);
                let gv = g.item() / T::from_usize(t.numel()).unwrap();
                self.accumulate(grads, *a, || Tensor::filled(t.shape(), gv));
            }
            Op::SqNorm(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, || self.t(*a).map(|x| two * x * gv));
            }
            Op::WeightedSum(a, w) => {
                let gv = g.item();
                self.accumulate(grads, *a, || w.map(|x| x * gv));
            }
            Op::ConcatCols(ids) => {
                let (rows, total) = g.dims2().unwrap();
                let mut offset = 0;
                for &i in ids {
                    let c = self.t(i).dims2().unwrap().1;
                    self.accumulate(grads, i, || {
                        let mut out = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            out.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        Tensor::matrix(rows, c, out)
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(ids) => {
                let cols = g.dims2().unwrap().1;
                let mut offset = 0;
                for &i in ids {
                    let r = self.t(i).dims2().unwrap().0;
                    self.accumulate(grads, i, || {
                        Tensor::matrix(r, cols, g.data()[offset * cols..(offset + r) * cols].to_vec())
                    });
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.t(*a).dims2().unwrap();
                let w = g.dims2().unwrap().1;
                self.accumulate(grads, *a, || {
                    let mut out = vec![T::zero(); rows * cols];
                    for r in 0..rows {
                        out[r * cols + start..r * cols + start + w]
                            .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    Tensor::matrix(rows, cols, out)
                });
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.t(*a).dims2().unwrap();
                self.accumulate(grads, *a, || {
                    let mut out = vec![T::zero(); rows * cols];
                    out[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                    Tensor::matrix(rows, cols, out)
                });
            }
            Op::ImqGram { a, b, c, zero_diag } => {
                let (ta, tb) = (self.t(*a), self.t(*b));
                let (m, l) = ta.dims2().unwrap();
                let n = tb.dims2().unwrap().0;
                let k = &node.value;
                // dK/dd = -K^2 / c, dd/da_i = 2 (a_i - b_j), dd/db_j = -2 (a_i - b_j)
                let coeff = |i: usize, j: usize| {
                    if *zero_diag && i == j {
                        return T::zero();
                    }
                    let kv = k.data()[i * n + j];
                    -two * kv * kv / *c * g.data()[i * n + j]
                };
                self.accumulate(grads, *a, || {
                    let mut out = vec![T::zero(); m * l];
                    for i in 0..m {
                        let ai = &ta.data()[i * l..(i + 1) * l];
                        let oi = &mut out[i * l..(i + 1) * l];
                        for j in 0..n {
                            let w = coeff(i, j);
                            let bj = &tb.data()[j * l..(j + 1) * l];
                            for d in 0..l {
                                oi[d] = oi[d] + w * (ai[d] - bj[d]);
                            }
                        }
                    }
                    Tensor::matrix(m, l, out)
                });
                self.accumulate(grads, *b, || {
                    let mut out = vec![T::zero(); n * l];
                    for i in 0..m {
                        let ai = &ta.data()[i * l..(i + 1) * l];
                        for j in 0..n {
                            let w = coeff(i, j);
                            let bj = &tb.data()[j * l..(j + 1) * l];
                            let oj = &mut out[j * l..(j + 1) * l];
                            for d in 0..l {
                                oj[d] = oj[d] - w * (ai[d] - bj[d]);
                            }
                        }
                    }
                    Tensor::matrix(n, l, out)
                });
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], i: usize, contribution: impl FnOnce() -> Tensor<T>) {
        if !self.wants(i) {
            return;
        }
        let c = contribution();
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&c),
            slot @ None => *slot = Some(c),
        }
    }
}

pub(crate) fn imq_gram_values<T: Real>(
    a: &[T],
    b: &[T],
    m: usize,
    n: usize,
    l: usize,
    c: T,
    zero_diag: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let ai = &a[i * l..(i + 1) * l];
        for j in 0..n {
            if zero_diag && i == j {
                continue;
            }
            let bj = &b[j * l..(j + 1) * l];
            let d: T = ai.iter().zip(bj).map(|(&x, &y)| (x - y) * (x - y)).sum();
            out[i * n + j] = c / (c + d);
        }
    }
    out
}

fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    /// Moves a gradient out; absent gradients become zeros of `shape`.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<T> {
        if v.tape == self.tape {
            if let Some(g) = self.grads.get_mut(v.idx).and_then(Option::take) {
                return g;
            }
        }
        Tensor::zeros(shape)
    }
}
