//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! then walks it in reverse and returns the gradient of a scalar output with
//! respect to every recorded node.

use crate::tensor::Mat;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub usize);

/// Pre-normalization norms below this map to the uniform unit vector.
pub const NORM_FLOOR: f64 = 1e-12;

const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LayerNorm { x: usize, rstd: Vec<f64> },
    Softmax(usize),
    Transpose(usize),
    ColSlice(usize, usize),
    HConcat(Vec<usize>),
    VStack(Vec<usize>),
    MeanRows(usize),
    L2Normalize { x: usize, norms: Vec<f64> },
    MaxAll { x: usize, idx: usize },
    LogSumExp { x: usize, temp: f64 },
    ShiftRows(usize, isize),
    CrossEntropyDiag(usize),
    Assemble(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m.data[0]
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a.0, b.0))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (x, r) = (self.value(a), self.value(b));
        assert_eq!((1, x.cols), r.shape(), "add_row shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, b) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(v, Op::AddRow(a.0, b.0))
    }

    /// Multiplies every row of `a` elementwise by the `1 x n` row `g`.
    pub fn mul_row(&mut self, a: Var, g: Var) -> Var {
        let (x, r) = (self.value(a), self.value(g));
        assert_eq!((1, x.cols), r.shape(), "mul_row shape");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, g) in v.row_mut(i).iter_mut().zip(&r.data) {
                *o *= g;
            }
        }
        self.push(v, Op::MulRow(a.0, g.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a.0))
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut rstd = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let row = v.row_mut(i);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.iter_mut().for_each(|y| *y = (*y - mu) * r);
            rstd.push(r);
        }
        self.push(v, Op::LayerNorm { x: a.0, rstd })
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            softmax_row(x.row(i), v.row_mut(i));
        }
        self.push(v, Op::Softmax(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "col_slice out of range");
        let mut v = Mat::zeros(x.rows, len);
        for i in 0..x.rows {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(v, Op::ColSlice(a.0, start))
    }

    pub fn hconcat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "hconcat rows");
            for i in 0..rows {
                v.row_mut(i)[off..off + x.cols].copy_from_slice(x.row(i));
            }
            off += x.cols;
        }
        self.push(v, Op::HConcat(parts.iter().map(|p| p.0).collect()))
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols, cols, "vstack cols");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::VStack(parts.iter().map(|p| p.0).collect()),
        )
    }

    /// Column means as a `1 x n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(1, x.cols, x.mean_rows());
        self.push(v, Op::MeanRows(a.0))
    }

    /// Scales each row to unit length. A row whose norm is below
    /// [`NORM_FLOOR`] becomes the uniform vector `1/sqrt(n)` and passes no
    /// gradient.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut norms = Vec::with_capacity(x.rows);
        let uniform = 1.0 / (x.cols as f64).sqrt();
        for i in 0..x.rows {
            let row = v.row_mut(i);
            let n = row.iter().map(|y| y * y).sum::<f64>().sqrt();
            if n < NORM_FLOOR {
                row.iter_mut().for_each(|y| *y = uniform);
            } else {
                row.iter_mut().for_each(|y| *y /= n);
            }
            norms.push(n);
        }
        self.push(v, Op::L2Normalize { x: a.0, norms })
    }

    pub fn max_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert!(!x.is_empty(), "max of an empty matrix");
        let mut idx = 0;
        for (i, &y) in x.data.iter().enumerate() {
            if y > x.data[idx] {
                idx = i;
            }
        }
        let v = Mat::scalar(x.data[idx]);
        self.push(v, Op::MaxAll { x: a.0, idx })
    }

    /// `temp * ln(sum(exp(x / temp)))` over all entries.
    pub fn log_sum_exp(&mut self, a: Var, temp: f64) -> Var {
        let x = self.value(a);
        let scaled: Vec<f64> = x.data.iter().map(|y| y / temp).collect();
        let v = Mat::scalar(temp * log_sum_exp(&scaled));
        self.push(v, Op::LogSumExp { x: a.0, temp })
    }

    /// Moves row `i` to row `i + k`, filling vacated rows with zeros.
    pub fn shift_rows(&mut self, a: Var, k: isize) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let j = i as isize + k;
            if j >= 0 && (j as usize) < x.rows {
                v.row_mut(j as usize).copy_from_slice(x.row(i));
            }
        }
        self.push(v, Op::ShiftRows(a.0, k))
    }

    /// Mean over rows of the cross-entropy of `softmax(row i)` against class `i`.
    pub fn cross_entropy_diag(&mut self, a: Var) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, x.cols, "cross_entropy_diag needs a square matrix");
        let n = x.rows;
        let total: f64 = (0..n).map(|i| log_sum_exp(x.row(i)) - x.at(i, i)).sum();
        self.push(Mat::scalar(total / n as f64), Op::CrossEntropyDiag(a.0))
    }

    /// Arranges `1 x 1` nodes row-major into a `rows x cols` matrix.
    pub fn assemble(&mut self, parts: &[Var], rows: usize, cols: usize) -> Var {
        assert_eq!(parts.len(), rows * cols, "assemble count");
        let data = parts.iter().map(|p| self.scalar(*p)).collect();
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::Assemble(parts.iter().map(|p| p.0).collect()),
        )
    }

    /// Gradients of the scalar `out` with respect to every leaf; `None` for
    /// leaves it does not depend on and for all interior nodes.
    pub fn backward(&self, out: Var) -> Vec<Option<Mat>> {
        assert_eq!(
            self.value(out).shape(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(Mat::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => g[i] = Some(dy),
                Op::MatMul(a, b) => {
                    let da = dy.matmul_t(&self.nodes[*b].value);
                    let db = self.nodes[*a].value.t_matmul(&dy);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = dy.matmul(&self.nodes[*b].value);
                    let db = dy.t_matmul(&self.nodes[*a].value);
                    acc(&mut g, *a, da);
                    acc(&mut g, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut g, *a, dy.clone());
                    acc(&mut g, *b, dy);
                }
                Op::AddRow(a, b) => {
                    let db = Mat::from_vec(1, dy.cols, col_sums(&dy));
                    acc(&mut g, *b, db);
                    acc(&mut g, *a, dy);
                }
                Op::MulRow(a, r) => {
                    let x = &self.nodes[*a].value;
                    let gain = &self.nodes[*r].value;
                    let mut dr = vec![0.0; dy.cols];
                    let mut da = dy.clone();
                    for row in 0..dy.rows {
                        for c in 0..dy.cols {
                            dr[c] += dy.at(row, c) * x.at(row, c);
                            da.data[row * dy.cols + c] *= gain.data[c];
                        }
                    }
                    acc(&mut g, *r, Mat::from_vec(1, dy.cols, dr));
                    acc(&mut g, *a, da);
                }
                Op::Scale(a, c) => acc(&mut g, *a, dy.scale(*c)),
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut da = dy;
                    for (d, &xv) in da.data.iter_mut().zip(&x.data) {
                        *d *= gelu_grad(xv);
                    }
                    acc(&mut g, *a, da);
                }
                Op::LayerNorm { x, rstd } => {
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    let n = y.cols as f64;
                    for r in 0..y.rows {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let m1 = dr.iter().sum::<f64>() / n;
                        let m2 = dr.iter().zip(yr).map(|(d, h)| d * h).sum::<f64>() / n;
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = rstd[r] * (dr[c] - m1 - yr[c] * m2);
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::Softmax(a) => {
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let s: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = yr[c] * (dr[c] - s);
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::Transpose(a) => acc(&mut g, *a, dy.transpose()),
                Op::ColSlice(a, start) => {
                    let x = &self.nodes[*a].value;
                    let mut dx = Mat::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        dx.row_mut(r)[*start..*start + dy.cols].copy_from_slice(dy.row(r));
                    }
                    acc(&mut g, *a, dx);
                }
                Op::HConcat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.nodes[*p].value.cols;
                        let mut dp = Mat::zeros(dy.rows, cols);
                        for r in 0..dy.rows {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[off..off + cols]);
                        }
                        acc(&mut g, *p, dp);
                        off += cols;
                    }
                }
                Op::VStack(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (rows, cols) = self.nodes[*p].value.shape();
                        let dp = Mat::from_vec(
                            rows,
                            cols,
                            dy.data[off * cols..(off + rows) * cols].to_vec(),
                        );
                        acc(&mut g, *p, dp);
                        off += rows;
                    }
                }
                Op::MeanRows(a) => {
                    let rows = self.nodes[*a].value.rows;
                    let mut dx = Mat::zeros(rows, dy.cols);
                    for r in 0..rows {
                        for (o, d) in dx.row_mut(r).iter_mut().zip(&dy.data) {
                            *o = d / rows as f64;
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::L2Normalize { x, norms } => {
                    let mut dx = Mat::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        if norms[r] < NORM_FLOOR {
                            continue;
                        }
                        let (yr, dr) = (y.row(r), dy.row(r));
                        let s: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = (dr[c] - yr[c] * s) / norms[r];
                        }
                    }
                    acc(&mut g, *x, dx);
                }
                Op::MaxAll { x, idx } => {
                    let (rows, cols) = self.nodes[*x].value.shape();
                    let mut dx = Mat::zeros(rows, cols);
                    dx.data[*idx] = dy.data[0];
                    acc(&mut g, *x, dx);
                }
                Op::LogSumExp { x, temp } => {
                    let xv = &self.nodes[*x].value;
                    let scaled: Vec<f64> = xv.data.iter().map(|v| v / temp).collect();
                    let mut p = vec![0.0; scaled.len()];
                    softmax_row(&scaled, &mut p);
                    let dx =
                        Mat::from_vec(xv.rows, xv.cols, p.iter().map(|q| q * dy.data[0]).collect());
                    acc(&mut g, *x, dx);
                }
                Op::ShiftRows(a, k) => {
                    let mut dx = Mat::zeros(dy.rows, dy.cols);
                    for r in 0..dy.rows {
                        let j = r as isize + k;
                        if j >= 0 && (j as usize) < dy.rows {
                            dx.row_mut(r).copy_from_slice(dy.row(j as usize));
                        }
                    }
                    acc(&mut g, *a, dx);
                }
                Op::CrossEntropyDiag(a) => {
                    let x = &self.nodes[*a].value;
                    let n = x.rows;
                    let mut dx = Mat::zeros(n, n);
                    for r in 0..n {
                        softmax_row(x.row(r), dx.row_mut(r));
                        dx.data[r * n + r] -= 1.0;
                    }
                    acc(&mut g, *a, dx.scale(dy.data[0] / n as f64));
                }
                Op::Assemble(parts) => {
                    for (k, p) in parts.iter().enumerate() {
                        acc(&mut g, *p, Mat::scalar(dy.data[k]));
                    }
                }
            }
        }
        g
    }
}

fn col_sums(m: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (o, x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out
}

fn acc(g: &mut [Option<Mat>], i: usize, d: Mat) {
    match &mut g[i] {
        Some(m) => m.add_assign(&d),
        slot => *slot = Some(d),
    }
}
