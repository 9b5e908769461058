//! Minimal reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; each op
//! only references earlier nodes, so a single reverse sweep in
//! [`Tape::backward`] yields exact gradients for every leaf. The op set is
//! exactly what the model needs: dense/sparse products, row softmax (causal
//! and full), layer norm, the contrastive cross-entropy head, and a handful
//! of pointwise maps. Sparse matrices enter as constants (graph adjacency and
//! pooling weights are data, not parameters).

use std::rc::Rc;

use crate::linalg::{Csr, Matrix};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A constant sparse matrix together with its transpose (needed in backward).
#[derive(Debug)]
pub struct SparsePair<T> {
    pub fwd: Csr<T>,
    pub bwd: Csr<T>,
}

impl<T: Scalar> SparsePair<T> {
    pub fn new(m: Csr<T>) -> Rc<Self> {
        let t = m.transpose();
        Rc::new(Self { fwd: m, bwd: t })
    }

    /// For symmetric matrices the transpose equals the matrix itself.
    pub fn symmetric(m: Csr<T>) -> Rc<Self> {
        Rc::new(Self { bwd: m.clone(), fwd: m })
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulElem(Var, Var),
    MulConst(Var, Rc<Matrix<T>>),
    AddRowVec(Var, Var),
    ScaleConst(Var, T),
    ScaleVar(Var, Var),
    LeakyRelu(Var, T),
    Relu(Var),
    Softplus(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    MeanAll(Var),
    SumAll(Var),
    SpMM(Rc<SparsePair<T>>, Var),
    RowNormalize(Var),
    SoftmaxRows(Var),
    CausalSoftmaxRows(Var),
    CrossEntropyDiag(Var),
    LayerNormRows { x: Var, gain: Var, bias: Var, eps: T },
    DotRows(Var, Var),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Records a forward computation and differentiates it in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar payload of a 1×1 node.
    pub fn scalar_value(&self, v: Var) -> T {
        let m = self.value(v);
        assert!(m.is_scalar(), "expected 1x1 node");
        m.data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_transpose_b(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul_transpose_b(&self.nodes[b.0].value);
        self.push(v, Op::MatMulTransB(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        v.add_in_place(&self.nodes[b.0].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "sub shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x - y).collect();
        let v = Matrix::from_rows(va.rows, va.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "mul_elem shape mismatch");
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| x * y).collect();
        let v = Matrix::from_rows(va.rows, va.cols, data);
        self.push(v, Op::MulElem(a, b))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Rc<Matrix<T>>) -> Var {
        let va = &self.nodes[a.0].value;
        assert!(va.same_shape(&m), "mul_const shape mismatch");
        let data = va.data.iter().zip(&m.data).map(|(&x, &y)| x * y).collect();
        let v = Matrix::from_rows(va.rows, va.cols, data);
        self.push(v, Op::MulConst(a, m))
    }

    /// Broadcast-add a 1×n row vector to every row of `a`.
    pub fn add_row_vec(&mut self, a: Var, row: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vr = &self.nodes[row.0].value;
        assert_eq!(vr.rows, 1, "row vector expected");
        assert_eq!(va.cols, vr.cols, "add_row_vec width mismatch");
        let mut v = va.clone();
        for i in 0..v.rows {
            for j in 0..v.cols {
                v.data[i * v.cols + j] += vr.data[j];
            }
        }
        self.push(v, Op::AddRowVec(a, row))
    }

    pub fn scale_const(&mut self, a: Var, c: T) -> Var {
        let v = self.nodes[a.0].value.map(|x| x * c);
        self.push(v, Op::ScaleConst(a, c))
    }

    /// Multiply a matrix by a 1×1 scalar variable.
    pub fn scale_var(&mut self, s: Var, a: Var) -> Var {
        let sv = self.scalar_value(s);
        let v = self.nodes[a.0].value.map(|x| x * sv);
        self.push(v, Op::ScaleVar(s, a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let v = self.nodes[a.0].value.map(|x| if x > T::zero() { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(v, Op::Relu(a))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(softplus_stable);
        self.push(v, Op::Softplus(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Var {
        let va = &self.nodes[a.0].value;
        let mut v = Matrix::zeros(idx.len(), va.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(va.row(i));
        }
        self.push(v, Op::GatherRows(a, idx))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.cols;
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in &parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&v.data);
        }
        self.push(Matrix::from_rows(rows, cols, data), Op::ConcatRows(parts))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.rows;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in &parts {
            let m = &self.nodes[p.0].value;
            assert_eq!(m.rows, rows, "concat_cols height mismatch");
            for i in 0..rows {
                v.data[i * cols + offset..i * cols + offset + m.cols].copy_from_slice(m.row(i));
            }
            offset += m.cols;
        }
        self.push(v, Op::ConcatCols(parts))
    }

    /// Column means over rows: (m×n) → (1×n).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let inv = T::of(1.0 / va.rows as f64);
        let mut v = Matrix::zeros(1, va.cols);
        for i in 0..va.rows {
            for j in 0..va.cols {
                v.data[j] += va.data[i * va.cols + j];
            }
        }
        v.scale_in_place(inv);
        self.push(v, Op::MeanRows(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let n = T::of((va.rows * va.cols) as f64);
        let s = va.data.iter().copied().sum::<T>() / n;
        self.push(Matrix::scalar(s), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().copied().sum::<T>();
        self.push(Matrix::scalar(s), Op::SumAll(a))
    }

    /// Sparse-constant × dense-variable product.
    pub fn spmm(&mut self, m: Rc<SparsePair<T>>, h: Var) -> Var {
        let v = m.fwd.matmul_dense(&self.nodes[h.0].value);
        self.push(v, Op::SpMM(m, h))
    }

    /// Rows scaled to unit L2 norm; zero rows stay zero. Returns the node and
    /// the number of zero-norm rows encountered (for diagnostics).
    pub fn row_normalize(&mut self, a: Var) -> (Var, usize) {
        let va = &self.nodes[a.0].value;
        let mut v = va.clone();
        let mut zero_rows = 0usize;
        for i in 0..v.rows {
            let norm = row_norm(va.row(i));
            if norm == T::zero() {
                zero_rows += 1;
            } else {
                for x in v.row_mut(i) {
                    *x /= norm;
                }
            }
        }
        (self.push(v, Op::RowNormalize(a)), zero_rows)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let mut v = va.clone();
        for i in 0..v.rows {
            softmax_in_place(v.row_mut(i));
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row softmax over the causal support `j ≤ i`; masked entries are 0.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Var {
        let va = &self.nodes[a.0].value;
        assert_eq!(va.rows, va.cols, "causal mask expects square scores");
        let mut v = va.clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            softmax_in_place(&mut row[..=i]);
            for x in row[i + 1..].iter_mut() {
                *x = T::zero();
            }
        }
        self.push(v, Op::CausalSoftmaxRows(a))
    }

    /// InfoNCE-style head: for an N×N similarity matrix S returns
    /// `Σ_i [logsumexp_j S_ij − S_ii]` as a 1×1 node.
    pub fn cross_entropy_diag(&mut self, s: Var) -> Var {
        let vs = &self.nodes[s.0].value;
        assert_eq!(vs.rows, vs.cols, "cross_entropy_diag expects square input");
        let mut total = T::zero();
        for i in 0..vs.rows {
            total += log_sum_exp(vs.row(i)) - vs.at(i, i);
        }
        self.push(Matrix::scalar(total), Op::CrossEntropyDiag(s))
    }

    /// Per-row layer normalization with learnable gain/bias (1×n each).
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Var {
        let vx = &self.nodes[x.0].value;
        let vg = &self.nodes[gain.0].value;
        let vb = &self.nodes[bias.0].value;
        assert_eq!(vg.rows, 1);
        assert_eq!(vb.rows, 1);
        assert_eq!(vg.cols, vx.cols);
        assert_eq!(vb.cols, vx.cols);
        let mut v = Matrix::zeros(vx.rows, vx.cols);
        for i in 0..vx.rows {
            let row = vx.row(i);
            let (mean, var) = mean_var(row);
            let inv = (var + eps).sqrt().recip();
            for j in 0..vx.cols {
                let xhat = (row[j] - mean) * inv;
                v.data[i * vx.cols + j] = vg.data[j] * xhat + vb.data[j];
            }
        }
        self.push(v, Op::LayerNormRows { x, gain, bias, eps })
    }

    /// Row-wise dot product of two N×d matrices → N×1.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        assert!(va.same_shape(vb), "dot_rows shape mismatch");
        let mut v = Matrix::zeros(va.rows, 1);
        for i in 0..va.rows {
            let mut s = T::zero();
            for j in 0..va.cols {
                s += va.at(i, j) * vb.at(i, j);
            }
            v.data[i] = s;
        }
        self.push(v, Op::DotRows(a, b))
    }

    /// Reverse sweep from a 1×1 root node; fills gradients for every node
    /// contributing to it.
    pub fn backward(&mut self, root: Var) {
        assert!(self.nodes[root.0].value.is_scalar(), "backward root must be 1x1");
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Matrix::scalar(T::one()));

        for i in (0..self.nodes.len()).rev() {
            let g = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn accum(&mut self, v: Var, delta: Matrix<T>) {
        match &mut self.grads[v.0] {
            Some(g) => g.add_in_place(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix<T>) {
        // Values are read before mutation of grads; ops reference only earlier
        // nodes so the borrow is safe through cloned handles.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.matmul_transpose_b(&self.nodes[b.0].value);
                let gb = self.nodes[a.0].value.transpose_a_matmul(g);
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::MatMulTransB(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.matmul(&self.nodes[b.0].value);
                let gb = g.transpose_a_matmul(&self.nodes[a.0].value);
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g.clone());
                self.accum(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g.clone());
                self.accum(b, g.map(|x| -x));
            }
            Op::MulElem(a, b) => {
                let (a, b) = (*a, *b);
                let ga = hadamard(g, &self.nodes[b.0].value);
                let gb = hadamard(g, &self.nodes[a.0].value);
                self.accum(a, ga);
                self.accum(b, gb);
            }
            Op::MulConst(a, m) => {
                let (a, m) = (*a, Rc::clone(m));
                self.accum(a, hadamard(g, &m));
            }
            Op::AddRowVec(a, row) => {
                let (a, row) = (*a, *row);
                let mut gr = Matrix::zeros(1, g.cols);
                for i in 0..g.rows {
                    for j in 0..g.cols {
                        gr.data[j] += g.data[i * g.cols + j];
                    }
                }
                self.accum(a, g.clone());
                self.accum(row, gr);
            }
            Op::ScaleConst(a, c) => {
                let (a, c) = (*a, *c);
                self.accum(a, g.map(|x| x * c));
            }
            Op::ScaleVar(s, a) => {
                let (s, a) = (*s, *a);
                let sv = self.nodes[s.0].value.data[0];
                let va = &self.nodes[a.0].value;
                let gs = g.data.iter().zip(&va.data).map(|(&gx, &ax)| gx * ax).sum::<T>();
                self.accum(s, Matrix::scalar(gs));
                self.accum(a, g.map(|x| x * sv));
            }
            Op::LeakyRelu(a, slope) => {
                let (a, slope) = (*a, *slope);
                let va = &self.nodes[a.0].value;
                let data = g
                    .data
                    .iter()
                    .zip(&va.data)
                    .map(|(&gx, &x)| if x > T::zero() { gx } else { gx * slope })
                    .collect();
                self.accum(a, Matrix::from_rows(g.rows, g.cols, data));
            }
            Op::Relu(a) => {
                let a = *a;
                let va = &self.nodes[a.0].value;
                let data = g
                    .data
                    .iter()
                    .zip(&va.data)
                    .map(|(&gx, &x)| if x > T::zero() { gx } else { T::zero() })
                    .collect();
                self.accum(a, Matrix::from_rows(g.rows, g.cols, data));
            }
            Op::Softplus(a) => {
                let a = *a;
                let va = &self.nodes[a.0].value;
                let data = g.data.iter().zip(&va.data).map(|(&gx, &x)| gx * sigmoid(x)).collect();
                self.accum(a, Matrix::from_rows(g.rows, g.cols, data));
            }
            Op::GatherRows(a, idx) => {
                let (a, idx) = (*a, Rc::clone(idx));
                let va_shape = (self.nodes[a.0].value.rows, self.nodes[a.0].value.cols);
                let mut ga = Matrix::zeros(va_shape.0, va_shape.1);
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..g.cols {
                        ga.data[i * g.cols + j] += g.data[r * g.cols + j];
                    }
                }
                self.accum(a, ga);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p.0].value.rows;
                    let cols = self.nodes[p.0].value.cols;
                    let slice = g.data[offset * cols..(offset + rows) * cols].to_vec();
                    self.accum(p, Matrix::from_rows(rows, cols, slice));
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let rows = self.nodes[p.0].value.rows;
                    let cols = self.nodes[p.0].value.cols;
                    let mut gp = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                    }
                    self.accum(p, gp);
                    offset += cols;
                }
            }
            Op::MeanRows(a) => {
                let a = *a;
                let rows = self.nodes[a.0].value.rows;
                let inv = T::of(1.0 / rows as f64);
                let mut ga = Matrix::zeros(rows, g.cols);
                for i in 0..rows {
                    for j in 0..g.cols {
                        ga.data[i * g.cols + j] = g.data[j] * inv;
                    }
                }
                self.accum(a, ga);
            }
            Op::MeanAll(a) => {
                let a = *a;
                let (rows, cols) = (self.nodes[a.0].value.rows, self.nodes[a.0].value.cols);
                let c = g.data[0] * T::of(1.0 / (rows * cols) as f64);
                self.accum(a, Matrix::from_rows(rows, cols, vec![c; rows * cols]));
            }
            Op::SumAll(a) => {
                let a = *a;
                let (rows, cols) = (self.nodes[a.0].value.rows, self.nodes[a.0].value.cols);
                let c = g.data[0];
                self.accum(a, Matrix::from_rows(rows, cols, vec![c; rows * cols]));
            }
            Op::SpMM(m, h) => {
                let (m, h) = (Rc::clone(m), *h);
                self.accum(h, m.bwd.matmul_dense(g));
            }
            Op::RowNormalize(a) => {
                let a = *a;
                let va = &self.nodes[a.0].value;
                let mut ga = Matrix::zeros(va.rows, va.cols);
                for i in 0..va.rows {
                    let x = va.row(i);
                    let norm = row_norm(x);
                    if norm == T::zero() {
                        continue; // zero rows are mapped to zero; subgradient 0
                    }
                    let gi = g.row(i);
                    let mut dot = T::zero();
                    for j in 0..va.cols {
                        dot += gi[j] * x[j] / norm;
                    }
                    for j in 0..va.cols {
                        ga.data[i * va.cols + j] = (gi[j] - x[j] / norm * dot) / norm;
                    }
                }
                self.accum(a, ga);
            }
            Op::SoftmaxRows(a) | Op::CausalSoftmaxRows(a) => {
                // Masked entries have y = 0, so they receive zero gradient.
                let a = *a;
                let y = &self.nodes[i].value;
                self.accum(a, softmax_backward(y, g));
            }
            Op::CrossEntropyDiag(s) => {
                let s = *s;
                let vs = &self.nodes[s.0].value;
                let gs_scalar = g.data[0];
                let mut gs = Matrix::zeros(vs.rows, vs.cols);
                for r in 0..vs.rows {
                    let mut p = vs.row(r).to_vec();
                    softmax_in_place(&mut p);
                    for j in 0..vs.cols {
                        let delta = if r == j { T::one() } else { T::zero() };
                        gs.data[r * vs.cols + j] = gs_scalar * (p[j] - delta);
                    }
                }
                self.accum(s, gs);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                let vx = &self.nodes[x.0].value;
                let vg = &self.nodes[gain.0].value;
                let cols = vx.cols;
                let n = T::of(cols as f64);
                let mut gx = Matrix::zeros(vx.rows, cols);
                let mut ggain = Matrix::zeros(1, cols);
                let mut gbias = Matrix::zeros(1, cols);
                for r in 0..vx.rows {
                    let row = vx.row(r);
                    let (mean, var) = mean_var(row);
                    let inv = (var + eps).sqrt().recip();
                    let gr = g.row(r);
                    let mut sum_gxhat = T::zero();
                    let mut sum_gxhat_xhat = T::zero();
                    let mut xhat = vec![T::zero(); cols];
                    let mut gxhat = vec![T::zero(); cols];
                    for j in 0..cols {
                        xhat[j] = (row[j] - mean) * inv;
                        gxhat[j] = gr[j] * vg.data[j];
                        ggain.data[j] += gr[j] * xhat[j];
                        gbias.data[j] += gr[j];
                        sum_gxhat += gxhat[j];
                        sum_gxhat_xhat += gxhat[j] * xhat[j];
                    }
                    for j in 0..cols {
                        gx.data[r * cols + j] =
                            inv * (gxhat[j] - sum_gxhat / n - xhat[j] * sum_gxhat_xhat / n);
                    }
                }
                self.accum(x, gx);
                self.accum(gain, ggain);
                self.accum(bias, gbias);
            }
            Op::DotRows(a, b) => {
                let (a, b) = (*a, *b);
                let va = self.nodes[a.0].value.clone();
                let vb = self.nodes[b.0].value.clone();
                let mut ga = Matrix::zeros(va.rows, va.cols);
                let mut gb = Matrix::zeros(va.rows, va.cols);
                for i in 0..va.rows {
                    let gi = g.data[i];
                    for j in 0..va.cols {
                        ga.data[i * va.cols + j] = gi * vb.at(i, j);
                        gb.data[i * va.cols + j] = gi * va.at(i, j);
                    }
                }
                self.accum(a, ga);
                self.accum(b, gb);
            }
        }
    }
}

fn softmax_backward<T: Scalar>(y: &Matrix<T>, g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        let yr = y.row(i);
        let gr = g.row(i);
        let mut dot = T::zero();
        for j in 0..y.cols {
            dot += gr[j] * yr[j];
        }
        for j in 0..y.cols {
            out.data[i * y.cols + j] = yr[j] * (gr[j] - dot);
        }
    }
    out
}

fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect();
    Matrix::from_rows(a.rows, a.cols, data)
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    row.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn mean_var<T: Scalar>(row: &[T]) -> (T, T) {
    let n = T::of(row.len() as f64);
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var)
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = row.iter().map(|&x| (x - max).exp()).sum::<T>();
    max + sum.ln()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_stable<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (T::one() + (-x).exp()).ln()
    } else {
        (T::one() + x.exp()).ln()
    }
}

/// Central finite-difference gradients of `f` at `params` with step `h`.
///
/// Test utility: the analytic gradients from [`Tape::backward`] are checked
/// against this everywhere a loss is differentiable.
pub fn finite_difference_gradients<T: Scalar>(
    params: &[Matrix<T>],
    h: T,
    mut f: impl FnMut(&[Matrix<T>]) -> T,
) -> Vec<Matrix<T>> {
    let mut work: Vec<Matrix<T>> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    let two_h = h + h;
    for p in 0..params.len() {
        let mut gp = Matrix::zeros(params[p].rows, params[p].cols);
        for k in 0..gp.data.len() {
            let orig = work[p].data[k];
            work[p].data[k] = orig + h;
            let up = f(&work);
            work[p].data[k] = orig - h;
            let down = f(&work);
            work[p].data[k] = orig;
            gp.data[k] = (up - down) / two_h;
        }
        grads.push(gp);
    }
    grads
}

/// Norm-based relative error between two gradient sets.
pub fn gradient_relative_error<T: Scalar>(analytic: &[Matrix<T>], numeric: &[Matrix<T>]) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.data.iter().zip(&n.data) {
            let (x, y) = (x.as_f64(), y.as_f64());
            diff += (x - y) * (x - y);
            scale += x * x + y * y;
        }
    }
    diff.sqrt() / (scale.sqrt() + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// FD check of a loss built from leaves.
    fn check<F>(params: Vec<Matrix<f64>>, build: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.backward(loss);
        let analytic: Vec<Matrix<f64>> = vars
            .iter()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| {
                let m = tape.value(v);
                Matrix::zeros(m.rows, m.cols)
            }))
            .collect();
        let numeric = finite_difference_gradients(&params, 1e-5, |ps| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
            let l = build(&mut t, &vs);
            t.scalar_value(l)
        });
        let err = gradient_relative_error(&analytic, &numeric);
        assert!(err < 1e-7, "relative error {err}");
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = crate::rng::stream(1, "autodiff-test", 0);
        let a = rand_matrix(3, 4, &mut rng);
        let b = rand_matrix(4, 5, &mut rng);
        let c = rand_matrix(3, 5, &mut rng);
        check(vec![a, b, c], |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let s = t.mul_elem(ab, v[2]);
            t.sum_all(s)
        });
    }

    #[test]
    fn grad_attention_pieces() {
        let mut rng = crate::rng::stream(2, "autodiff-test", 0);
        let q = rand_matrix(4, 3, &mut rng);
        let k = rand_matrix(4, 3, &mut rng);
        let v = rand_matrix(4, 3, &mut rng);
        check(vec![q, k, v], |t, vars| {
            let scores = t.matmul_transpose_b(vars[0], vars[1]);
            let scaled = t.scale_const(scores, (3.0f64).sqrt().recip());
            let attn = t.causal_softmax_rows(scaled);
            let out = t.matmul(attn, vars[2]);
            let sq = t.mul_elem(out, out);
            t.mean_all(sq)
        });
    }

    #[test]
    fn grad_softmax_layernorm_ffn() {
        let mut rng = crate::rng::stream(3, "autodiff-test", 0);
        let x = rand_matrix(5, 4, &mut rng);
        let gain = rand_matrix(1, 4, &mut rng).map(|v| v + 1.5);
        let bias = rand_matrix(1, 4, &mut rng);
        let w = rand_matrix(4, 4, &mut rng);
        let b = rand_matrix(1, 4, &mut rng);
        check(vec![x, gain, bias, w, b], |t, vars| {
            let sm = t.softmax_rows(vars[0]);
            let ln = t.layer_norm_rows(sm, vars[1], vars[2], 1e-8);
            let h = t.matmul(ln, vars[3]);
            let h = t.add_row_vec(h, vars[4]);
            let h = t.relu(h);
            let h = t.leaky_relu(h, 0.01);
            t.mean_all(h)
        });
    }

    #[test]
    fn grad_contrastive_pieces() {
        let mut rng = crate::rng::stream(4, "autodiff-test", 0);
        let q = rand_matrix(6, 5, &mut rng);
        let k = rand_matrix(6, 5, &mut rng);
        check(vec![q, k], |t, vars| {
            let (qn, _) = t.row_normalize(vars[0]);
            let (kn, _) = t.row_normalize(vars[1]);
            let s = t.matmul_transpose_b(qn, kn);
            let s = t.scale_const(s, 1.0 / 0.07);
            t.cross_entropy_diag(s)
        });
    }

    #[test]
    fn grad_gather_concat_scale() {
        let mut rng = crate::rng::stream(5, "autodiff-test", 0);
        let table = rand_matrix(6, 3, &mut rng);
        let s = Matrix::scalar(rng.random_range(0.2..0.8));
        let row = rand_matrix(1, 6, &mut rng);
        check(vec![table, s, row], |t, vars| {
            let g1 = t.gather_rows(vars[0], Rc::new(vec![0, 2, 2, 5]));
            let g2 = t.gather_rows(vars[0], Rc::new(vec![1, 3, 4, 4]));
            let cat = t.concat_cols(vec![g1, g2]);
            let catr = t.concat_rows(vec![cat]);
            let sc = t.scale_var(vars[1], catr);
            let m = t.mean_rows(sc);
            let shifted = t.add(m, vars[2]);
            let sp = t.softplus(shifted);
            t.sum_all(sp)
        });
    }

    #[test]
    fn grad_spmm_and_dot_rows() {
        let mut rng = crate::rng::stream(6, "autodiff-test", 0);
        let h = rand_matrix(5, 3, &mut rng);
        let z = rand_matrix(4, 3, &mut rng);
        let adj = Csr::from_triplets(
            4,
            5,
            vec![(0, 0, 0.5), (0, 3, 0.5), (1, 1, 1.0), (2, 2, 0.7), (2, 4, 0.3), (3, 0, 1.0)],
        );
        let pair = SparsePair::new(adj);
        check(vec![h, z], move |t, vars| {
            let prop = t.spmm(Rc::clone(&pair), vars[0]);
            let d = t.dot_rows(prop, vars[1]);
            let sub = t.sub(d, d);
            let d2 = t.add(d, sub);
            t.mean_all(d2)
        });
    }

    #[test]
    fn zero_row_normalize_is_guarded() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::from_rows(2, 3, vec![0.0, 0.0, 0.0, 3.0, 0.0, 4.0]));
        let (y, zero_rows) = tape.row_normalize(x);
        assert_eq!(zero_rows, 1);
        assert_eq!(tape.value(y).row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.value(y).row(1), &[0.6, 0.0, 0.8]);
        let s = tape.sum_all(y);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap().row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Matrix::from_rows(2, 2, vec![1.0, 99.0, 0.5, 0.5]));
        let y = tape.causal_softmax_rows(x);
        assert_eq!(tape.value(y).at(0, 0), 1.0);
        assert_eq!(tape.value(y).at(0, 1), 0.0);
        assert!((tape.value(y).at(1, 0) - 0.5).abs() < 1e-12);
    }
}
