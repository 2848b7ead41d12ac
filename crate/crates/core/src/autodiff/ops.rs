use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{op} expects a matrix, got shape {s:?}"))),
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), &mut out);
    out
}

fn transpose_raw<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

const GELU_C: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = T::lit(0.5);
    half * x * (T::one() + (k * (x + T::lit(GELU_C) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(GELU_C);
    let half = T::lit(0.5);
    let t = (k * (x + c * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::lit(3.0) * c * x * x)
}

/// Strides for iterating slices along `axis`: (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Transpose(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    /// `x[n×c] + b[c]`, adding `b` to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddRow(x, bias))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.push(Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Relu(x))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.push(Op::Softmax { x, axis })
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        self.push(Op::LayerNorm { x, gain, bias, eps })
    }

    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        self.push(Op::ConcatLast(xs.to_vec()))
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        self.push(Op::ConcatRows(xs.to_vec()))
    }

    /// Rows `start..start+len` of a matrix (token slicing).
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.push(Op::SliceRows { x, start, len })
    }

    /// Column `col` of a matrix as an `n×1` matrix.
    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        self.push(Op::SelectCol { x, col })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(x, shape.to_vec()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    /// Elementwise Huber: `u²/2` for `|u| ≤ κ`, `κ(|u| − κ/2)` beyond.
    pub fn huber(&mut self, x: Var, kappa: T) -> Result<Var> {
        if kappa <= T::zero() {
            return Err(Error::Config(format!("huber kappa must be positive, got {kappa}")));
        }
        self.push(Op::Huber { x, kappa })
    }

    /// Affine map `x·w + b` for `x[n×in]`, `w[in×out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub(super) fn compute(&self, op: &Op<T>) -> Result<(Tensor<T>, Vec<T>)> {
        let v = |x: &Var| &self.nodes[x.0].value;
        let plain = |t: Tensor<T>| Ok((t, Vec::new()));
        match op {
            Op::Leaf => unreachable!("leaves are never recomputed"),
            Op::MatMul(a, b) => {
                let (a, b) = (v(a), v(b));
                let ((m, k), (k2, n)) = (dims2(a, "matmul")?, dims2(b, "matmul")?);
                if k != k2 {
                    return Err(Error::Dimension {
                        op: "matmul",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                plain(Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?)
            }
            Op::Transpose(x) => {
                let x = v(x);
                let (r, c) = dims2(x, "transpose")?;
                plain(Tensor::new(vec![c, r], transpose_raw(x.data(), r, c))?)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (v(a), v(b));
                let name = match op {
                    Op::Add(..) => "add",
                    Op::Sub(..) => "sub",
                    _ => "mul",
                };
                let f: fn(T, T) -> T = match op {
                    Op::Add(..) => |x, y| x + y,
                    Op::Sub(..) => |x, y| x - y,
                    _ => |x, y| x * y,
                };
                if b.len() == 1 && a.len() != 1 {
                    let s = b.data()[0];
                    return plain(Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x, s)).collect())?);
                }
                if a.len() == 1 && b.len() != 1 {
                    let s = a.data()[0];
                    return plain(Tensor::new(b.shape().to_vec(), b.data().iter().map(|&y| f(s, y)).collect())?);
                }
                same_shape(name, a, b)?;
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                plain(Tensor::new(a.shape().to_vec(), data)?)
            }
            Op::AddRow(x, b) => {
                let (x, b) = (v(x), v(b));
                let (_, cols) = x.rows_cols();
                if b.len() != cols {
                    return Err(Error::Dimension {
                        op: "add_row",
                        lhs: x.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let data = x
                    .data()
                    .chunks(cols)
                    .flat_map(|row| row.iter().zip(b.data()).map(|(&p, &q)| p + q))
                    .collect();
                plain(Tensor::new(x.shape().to_vec(), data)?)
            }
            Op::Scale(x, s) => {
                let x = v(x);
                plain(Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| p * *s).collect())?)
            }
            Op::Relu(x) => {
                let x = v(x);
                let data = x.data().iter().map(|&p| if p > T::zero() { p } else { T::zero() }).collect();
                plain(Tensor::new(x.shape().to_vec(), data)?)
            }
            Op::Gelu(x) => {
                let x = v(x);
                plain(Tensor::new(x.shape().to_vec(), x.data().iter().map(|&p| gelu(p)).collect())?)
            }
            Op::Softmax { x, axis } => {
                let x = v(x);
                if *axis >= x.rank() {
                    return Err(Error::Shape(format!(
                        "softmax axis {axis} out of range for shape {:?}",
                        x.shape()
                    )));
                }
                let (outer, n, inner) = axis_split(x.shape(), *axis);
                let src = x.data();
                let mut out = vec![T::zero(); src.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let max = (0..n).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
                        let mut total = T::zero();
                        for j in 0..n {
                            let e = (src[idx(j)] - max).exp();
                            out[idx(j)] = e;
                            total += e;
                        }
                        for j in 0..n {
                            out[idx(j)] /= total;
                        }
                    }
                }
                plain(Tensor::new(x.shape().to_vec(), out)?)
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, g, b) = (v(x), v(gain), v(bias));
                let (rows, c) = x.rows_cols();
                if g.len() != c || b.len() != c {
                    return Err(Error::Dimension {
                        op: "layer_norm",
                        lhs: x.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                let cf = T::lit(c as f64);
                let mut out = vec![T::zero(); x.len()];
                // saved: normalized values then per-row reciprocal std
                let mut saved = vec![T::zero(); x.len() + rows];
                for r in 0..rows {
                    let row = x.row(r);
                    let mean = row.iter().copied().sum::<T>() / cf;
                    let var = row.iter().map(|&p| (p - mean) * (p - mean)).sum::<T>() / cf;
                    let rstd = T::one() / (var + *eps).sqrt();
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        saved[r * c + j] = xhat;
                        out[r * c + j] = xhat * g.data()[j] + b.data()[j];
                    }
                    saved[x.len() + r] = rstd;
                }
                Ok((Tensor::new(x.shape().to_vec(), out)?, saved))
            }
            Op::ConcatLast(xs) => {
                let parts: Vec<&Tensor<T>> = xs.iter().map(v).collect();
                let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
                let (rows, _) = first.rows_cols();
                let lead = &first.shape()[..first.rank() - 1];
                let mut total = 0;
                for p in &parts {
                    if &p.shape()[..p.rank() - 1] != lead {
                        return Err(Error::Dimension {
                            op: "concat_last",
                            lhs: first.shape().to_vec(),
                            rhs: p.shape().to_vec(),
                        });
                    }
                    total += p.rows_cols().1;
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in &parts {
                        data.extend_from_slice(p.row(r));
                    }
                }
                let mut shape = lead.to_vec();
                shape.push(total);
                plain(Tensor::new(shape, data)?)
            }
            Op::ConcatRows(xs) => {
                let parts: Vec<&Tensor<T>> = xs.iter().map(v).collect();
                let first = parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
                let (_, cols) = dims2(first, "concat_rows")?;
                let mut rows = 0;
                let mut data = Vec::new();
                for p in &parts {
                    let (r, c) = dims2(p, "concat_rows")?;
                    if c != cols {
                        return Err(Error::Dimension {
                            op: "concat_rows",
                            lhs: first.shape().to_vec(),
                            rhs: p.shape().to_vec(),
                        });
                    }
                    rows += r;
                    data.extend_from_slice(p.data());
                }
                plain(Tensor::new(vec![rows, cols], data)?)
            }
            Op::SliceRows { x, start, len } => {
                let x = v(x);
                let (rows, cols) = dims2(x, "slice_rows")?;
                if *len == 0 || start + len > rows {
                    return Err(Error::Shape(format!(
                        "row slice {start}..{} out of range for {rows} rows",
                        start + len
                    )));
                }
                plain(Tensor::new(vec![*len, cols], x.data()[start * cols..(start + len) * cols].to_vec())?)
            }
            Op::SelectCol { x, col } => {
                let x = v(x);
                let (rows, cols) = dims2(x, "select_col")?;
                if *col >= cols {
                    return Err(Error::Shape(format!("column {col} out of range for {cols} columns")));
                }
                plain(Tensor::new(vec![rows, 1], (0..rows).map(|r| x.data()[r * cols + col]).collect())?)
            }
            Op::Reshape(x, shape) => plain(v(x).clone().reshape(shape.clone())?),
            Op::Sum(x) => plain(Tensor::scalar(v(x).data().iter().copied().sum())),
            Op::Mean(x) => {
                let x = v(x);
                plain(Tensor::scalar(x.data().iter().copied().sum::<T>() / T::lit(x.len() as f64)))
            }
            Op::Huber { x, kappa } => {
                let x = v(x);
                let k = *kappa;
                let half = T::lit(0.5);
                let data = x
                    .data()
                    .iter()
                    .map(|&u| if u.abs() <= k { half * u * u } else { k * (u.abs() - half * k) })
                    .collect();
                plain(Tensor::new(x.shape().to_vec(), data)?)
            }
        }
    }

    /// Vector-Jacobian products of node `i` for each input.
    pub(super) fn local_grads(&self, i: usize, up: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let v = |x: &Var| &self.nodes[x.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(a), v(b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].requires_grad {
                    // dA = dC · Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, up, (n as isize, 1), tb.data(), (1, n as isize), &mut da);
                    out.push((*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · dC
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, ta.data(), (1, k as isize), up, (n as isize, 1), &mut db);
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(x) => {
                let (r, c) = (v(x).shape()[0], v(x).shape()[1]);
                vec![(*x, transpose_raw(up, c, r))]
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                let reduce = |t: &Tensor<T>, s: T| -> Vec<T> {
                    if t.len() == 1 && up.len() != 1 {
                        vec![up.iter().copied().sum::<T>() * s]
                    } else {
                        up.iter().map(|&g| g * s).collect()
                    }
                };
                vec![(*a, reduce(v(a), T::one())), (*b, reduce(v(b), sign))]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (v(a), v(b));
                let side = |mine: &Tensor<T>, other: &Tensor<T>| -> Vec<T> {
                    if mine.len() == 1 && up.len() != 1 {
                        vec![up.iter().zip(other.data()).map(|(&g, &o)| g * o).sum()]
                    } else if other.len() == 1 && up.len() != 1 {
                        let s = other.data()[0];
                        up.iter().map(|&g| g * s).collect()
                    } else {
                        up.iter().zip(other.data()).map(|(&g, &o)| g * o).collect()
                    }
                };
                vec![(*a, side(ta, tb)), (*b, side(tb, ta))]
            }
            Op::AddRow(x, b) => {
                let cols = v(b).len();
                let mut db = vec![T::zero(); cols];
                for row in up.chunks(cols) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
                vec![(*x, up.to_vec()), (*b, db)]
            }
            Op::Scale(x, s) => vec![(*x, up.iter().map(|&g| g * *s).collect())],
            Op::Relu(x) => vec![(
                *x,
                up.iter()
                    .zip(v(x).data())
                    .map(|(&g, &p)| if p > T::zero() { g } else { T::zero() })
                    .collect(),
            )],
            Op::Gelu(x) => vec![(*x, up.iter().zip(v(x).data()).map(|(&g, &p)| g * gelu_grad(p)).collect())],
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: T = (0..n).map(|j| up[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = y[idx(j)] * (up[idx(j)] - dot);
                        }
                    }
                }
                vec![(*x, dx)]
            }
            Op::LayerNorm { x, gain, bias, .. } => {
                let g = v(gain).data();
                let (rows, c) = node.value.rows_cols();
                let n = rows * c;
                let xhat = &node.saved[..n];
                let rstd = &node.saved[n..];
                let cf = T::lit(c as f64);
                let mut dx = vec![T::zero(); n];
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for r in 0..rows {
                    let up_r = &up[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..c {
                        let d = up_r[j] * g[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                        dg[j] += up_r[j] * xh[j];
                        db[j] += up_r[j];
                    }
                    mean_d /= cf;
                    mean_dx /= cf;
                    for j in 0..c {
                        let d = up_r[j] * g[j];
                        dx[r * c + j] = rstd[r] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                vec![(*x, dx), (*gain, dg), (*bias, db)]
            }
            Op::ConcatLast(xs) => {
                let total = *node.value.shape().last().unwrap();
                let rows = node.value.len() / total;
                let mut offset = 0;
                let mut out = Vec::with_capacity(xs.len());
                for x in xs {
                    let w = v(x).rows_cols().1;
                    let mut g = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        g.extend_from_slice(&up[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    out.push((*x, g));
                }
                out
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                xs.iter()
                    .map(|x| {
                        let n = v(x).len();
                        let g = up[offset..offset + n].to_vec();
                        offset += n;
                        (*x, g)
                    })
                    .collect()
            }
            Op::SliceRows { x, start, len } => {
                let src = v(x);
                let cols = src.shape()[1];
                let mut g = vec![T::zero(); src.len()];
                g[start * cols..(start + len) * cols].copy_from_slice(up);
                vec![(*x, g)]
            }
            Op::SelectCol { x, col } => {
                let src = v(x);
                let cols = src.shape()[1];
                let mut g = vec![T::zero(); src.len()];
                for (r, &u) in up.iter().enumerate() {
                    g[r * cols + col] = u;
                }
                vec![(*x, g)]
            }
            Op::Reshape(x, _) => vec![(*x, up.to_vec())],
            Op::Sum(x) => vec![(*x, vec![up[0]; v(x).len()])],
            Op::Mean(x) => {
                let n = v(x).len();
                vec![(*x, vec![up[0] / T::lit(n as f64); n])]
            }
            Op::Huber { x, kappa } => vec![(
                *x,
                up.iter()
                    .zip(v(x).data())
                    .map(|(&g, &u)| {
                        if u.abs() <= *kappa {
                            g * u
                        } else {
                            g * *kappa * u.signum()
                        }
                    })
                    .collect(),
            )],
        }
    }
}
