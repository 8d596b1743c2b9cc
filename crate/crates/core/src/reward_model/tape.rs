//! Dense row-major matrices and a reverse-mode tape over matrix operations.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and returns the adjoint of every node.

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shapes");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shapes");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shapes");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    SumAll(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a.0, b.0))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.rows, 1, "add_row expects a single row");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, r.cols, "add_row width");
        for i in 0..v.rows {
            for (x, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a.0, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            let row = v.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Row-wise layer normalisation with learned `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat.data[r * cols + c] = h;
                out.data[r * cols + c] = g[c] * h + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * av.cols);
        for &r in idx {
            data.extend_from_slice(av.row(r));
        }
        let v = Matrix::from_vec(idx.len(), av.cols, data);
        self.push(v, Op::GatherRows(a.0, idx.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols, "concat_rows widths");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let v = Matrix::from_vec(rows, cols, data);
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(av.rows * len);
        for r in 0..av.rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let v = Matrix::from_vec(av.rows, len, data);
        self.push(v, Op::SliceCols(a.0, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let m = self.value(*p);
                assert_eq!(m.rows, rows, "concat_cols heights");
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
                off += m.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a.0))
    }

    /// Adjoints of every node given `d root = seed` (root must be 1 x 1 or
    /// the seed is applied to every entry of `root`).
    pub fn backward(&self, root: Var, seed: f64) -> Vec<Option<Matrix>> {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let rv = &self.nodes[root.0].value;
        grads[root.0] = Some(Matrix::from_vec(rv.rows, rv.cols, vec![seed; rv.rows * rv.cols]));

        fn accumulate(grads: &mut [Option<Matrix>], i: usize, g: Matrix) {
            match &mut grads[i] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    accumulate(&mut grads, *a, g.matmul_t(bv));
                    accumulate(&mut grads, *b, av.t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    accumulate(&mut grads, *a, g.matmul(bv));
                    accumulate(&mut grads, *b, g.t_matmul(av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (acc, x) in gr.data.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for (dx, yy) in d.data.iter_mut().zip(&y.data) {
                        *dx *= 1.0 - yy * yy;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g.clone();
                    for (dx, xx) in d.data.iter_mut().zip(&x.data) {
                        *dx *= sigmoid(*xx);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols {
                            d.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = &self.nodes[*gamma].value.data;
                    let (rows, cols) = (xhat.rows, xhat.cols);
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        for c in 0..cols {
                            dgamma.data[c] += gr[c] * hr[c];
                            dbeta.data[c] += gr[c];
                            dxhat[c] = gr[c] * gv[c];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                        let mean_dh =
                            dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            dx.data[r * cols + c] = inv_std[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *beta, dbeta);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *x, dx);
                }
                Op::GatherRows(a, idx) => {
                    let av = &self.nodes[*a].value;
                    let mut d = Matrix::zeros(av.rows, av.cols);
                    for (k, &r) in idx.iter().enumerate() {
                        for (acc, x) in d.row_mut(r).iter_mut().zip(g.row(k)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let n = pv.rows * pv.cols;
                        let d = Matrix::from_vec(pv.rows, pv.cols, g.data[off..off + n].to_vec());
                        off += n;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = &self.nodes[*a].value;
                    let mut d = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let mut d = Matrix::zeros(pv.rows, pv.cols);
                        for r in 0..pv.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + pv.cols]);
                        }
                        off += pv.cols;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::SumAll(a) => {
                    let av = &self.nodes[*a].value;
                    let s = g.data[0];
                    accumulate(&mut grads, *a, Matrix::from_vec(av.rows, av.cols, vec![s; av.rows * av.cols]));
                }
            }
            grads[idx] = Some(g);
        }
        grads
    }
}
