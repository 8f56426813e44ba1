//! Differentiable primitives and their backward rules.

use super::broadcast;
use super::{Graph, OpKind, TensorNode, Var};
use crate::error::{Error, Result};

/// Added to the product of norms in cosine similarity so that all-zero rows
/// (fresh memory) give similarity 0 instead of NaN.
pub const COSINE_EPS: f64 = 1e-8;

/// Every primitive the graph knows how to differentiate, with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[.., m, k] x [k, n]` with shared right operand, or `[B, m, k] x [B, k, n]`.
    MatMul,
    Add,
    Sub,
    Mul,
    /// `scale * x + shift`
    Affine {
        scale: f64,
        shift: f64,
    },
    Sigmoid,
    Tanh,
    Relu,
    /// Over the last axis.
    Softmax,
    /// `1 + ln(1 + e^x)`
    OnePlus,
    /// Rows `[.., N, W]` against keys `[.., H, W]`, giving `[.., H, N]`.
    Cosine,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Sum {
        axis: usize,
    },
    Mean {
        axis: usize,
    },
    SumAll,
    Reshape {
        shape: Vec<usize>,
    },
    /// Swaps the last two axes.
    Transpose,
    /// Mean over rows with a target of `-log softmax(logits)[target]`.
    /// Rows with `None` are ignored.
    SoftmaxCrossEntropy {
        targets: Vec<Option<usize>>,
    },
    /// Rows of a `[K, E]` table, output `[ids.len(), E]`.
    Embedding {
        ids: Vec<usize>,
    },
    /// Row `b` of the output is row `b` of the first input where `mask[b]`,
    /// else of the second.
    SelectRows {
        mask: Vec<bool>,
    },
}

impl Primitive {
    pub fn tag(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Affine { .. } => "affine",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Softmax => "softmax",
            Primitive::OnePlus => "oneplus",
            Primitive::Cosine => "cosine",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::SumAll => "sum_all",
            Primitive::Reshape { .. } => "reshape",
            Primitive::Transpose => "transpose",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Primitive::Embedding { .. } => "embedding",
            Primitive::SelectRows { .. } => "select_rows",
        }
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

pub fn oneplus(x: f64) -> f64 {
    1.0 + x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// In-place softmax of every `width`-sized row of `data`.
pub fn softmax_rows(data: &mut [f64], width: usize) {
    if width == 0 {
        return;
    }
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
}

/// `c = a * b + beta * c` with arbitrary strides; `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserted bounds above cover every element dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

enum MatMulMode {
    Shared {
        rows: usize,
        k: usize,
        n: usize,
    },
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

fn matmul_mode(a: &[usize], b: &[usize]) -> Result<MatMulMode> {
    let err = || Error::Shape {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    match (a.len(), b.len()) {
        (ra, 2) if ra >= 1 => {
            let k = a[ra - 1];
            if k != b[0] {
                return Err(err());
            }
            let rows = a[..ra - 1].iter().product();
            Ok(MatMulMode::Shared { rows, k, n: b[1] })
        }
        (3, 3) if a[0] == b[0] && a[2] == b[1] => Ok(MatMulMode::Batched {
            batch: a[0],
            m: a[1],
            k: a[2],
            n: b[2],
        }),
        _ => Err(err()),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn expect_arity(prim: &Primitive, inputs: &[Var], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} takes {n} inputs, got {}",
            prim.tag(),
            inputs.len()
        )));
    }
    Ok(())
}

impl Graph {
    /// Evaluates `prim` on `inputs` and records it for the backward pass.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let (shape, value, saved) = self.forward(&prim, inputs)?;
        Ok(self.push(shape, value, inputs.to_vec(), OpKind::Prim { prim, saved }))
    }

    fn forward(
        &self,
        prim: &Primitive,
        inputs: &[Var],
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        use Primitive::*;
        let no_saved = Vec::new;
        match prim {
            MatMul => {
                expect_arity(prim, inputs, 2)?;
                let (sa, sb) = (self.shape(inputs[0]), self.shape(inputs[1]));
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                match matmul_mode(sa, sb)? {
                    MatMulMode::Shared { rows, k, n } => {
                        let mut out = vec![0.0; rows * n];
                        gemm(rows, k, n, a, (k, 1), b, (n, 1), 0.0, &mut out, (n, 1));
                        let mut shape = sa[..sa.len() - 1].to_vec();
                        shape.push(n);
                        Ok((shape, out, no_saved()))
                    }
                    MatMulMode::Batched { batch, m, k, n } => {
                        let mut out = vec![0.0; batch * m * n];
                        for i in 0..batch {
                            gemm(
                                m,
                                k,
                                n,
                                &a[i * m * k..],
                                (k, 1),
                                &b[i * k * n..],
                                (n, 1),
                                0.0,
                                &mut out[i * m * n..],
                                (n, 1),
                            );
                        }
                        Ok((vec![batch, m, n], out, no_saved()))
                    }
                }
            }
            Add | Sub | Mul => {
                expect_arity(prim, inputs, 2)?;
                let (sa, sb) = (self.shape(inputs[0]), self.shape(inputs[1]));
                let shape = broadcast::broadcast_shape(prim.tag(), sa, sb)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let mut out = vec![0.0; shape.iter().product()];
                match prim {
                    Add => broadcast::for_each(sa, sb, &shape, |o, i, j| out[o] = a[i] + b[j]),
                    Sub => broadcast::for_each(sa, sb, &shape, |o, i, j| out[o] = a[i] - b[j]),
                    _ => broadcast::for_each(sa, sb, &shape, |o, i, j| out[o] = a[i] * b[j]),
                }
                Ok((shape, out, no_saved()))
            }
            Affine { scale, shift } => {
                expect_arity(prim, inputs, 1)?;
                let out = self
                    .value(inputs[0])
                    .iter()
                    .map(|x| scale * x + shift)
                    .collect();
                Ok((self.shape(inputs[0]).to_vec(), out, no_saved()))
            }
            Sigmoid | Tanh | Relu | OnePlus => {
                expect_arity(prim, inputs, 1)?;
                let f: fn(f64) -> f64 = match prim {
                    Sigmoid => sigmoid,
                    Tanh => f64::tanh,
                    Relu => |x: f64| x.max(0.0),
                    _ => oneplus,
                };
                let out = self.value(inputs[0]).iter().map(|&x| f(x)).collect();
                Ok((self.shape(inputs[0]).to_vec(), out, no_saved()))
            }
            Softmax => {
                expect_arity(prim, inputs, 1)?;
                let shape = self.shape(inputs[0]).to_vec();
                let width = *shape
                    .last()
                    .ok_or_else(|| Error::InvalidArgument("softmax of a rank-0 tensor".into()))?;
                let mut out = self.value(inputs[0]).to_vec();
                softmax_rows(&mut out, width);
                Ok((shape, out, no_saved()))
            }
            Cosine => {
                expect_arity(prim, inputs, 2)?;
                let (sm, sk) = (self.shape(inputs[0]), self.shape(inputs[1]));
                let dims = cosine_dims(sm, sk)?;
                let mut out = vec![0.0; dims.batch * dims.heads * dims.rows];
                cosine_forward(
                    &dims,
                    self.value(inputs[0]),
                    self.value(inputs[1]),
                    &mut out,
                );
                let mut shape = sm[..sm.len() - 2].to_vec();
                shape.extend([dims.heads, dims.rows]);
                Ok((shape, out, no_saved()))
            }
            Concat { axis } => {
                let axis = *axis;
                let first = inputs
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
                let base = self.shape(*first).to_vec();
                check_axis("concat", &base, axis)?;
                let mut total = 0;
                for v in inputs {
                    let s = self.shape(*v);
                    let compatible = s.len() == base.len()
                        && s.iter()
                            .zip(&base)
                            .enumerate()
                            .all(|(d, (x, y))| d == axis || x == y);
                    if !compatible {
                        return Err(Error::Shape {
                            op: "concat",
                            lhs: base.clone(),
                            rhs: s.to_vec(),
                        });
                    }
                    total += s[axis];
                }
                let mut shape = base.clone();
                shape[axis] = total;
                let (outer, _, inner) = axis_split(&shape, axis);
                let mut out = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for v in inputs {
                        let len = self.shape(*v)[axis] * inner;
                        out.extend_from_slice(&self.value(*v)[o * len..(o + 1) * len]);
                    }
                }
                Ok((shape, out, no_saved()))
            }
            Slice { axis, start, len } => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                check_axis("slice", s, *axis)?;
                if start + len > s[*axis] {
                    return Err(Error::InvalidArgument(format!(
                        "slice: range {start}..{} exceeds axis {axis} of {s:?}",
                        start + len
                    )));
                }
                let (outer, dim, inner) = axis_split(s, *axis);
                let x = self.value(inputs[0]);
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    out.extend_from_slice(&x[base..base + len * inner]);
                }
                let mut shape = s.to_vec();
                shape[*axis] = *len;
                Ok((shape, out, no_saved()))
            }
            Sum { axis } | Mean { axis } => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                check_axis(prim.tag(), s, *axis)?;
                let (outer, dim, inner) = axis_split(s, *axis);
                let x = self.value(inputs[0]);
                let scale = if matches!(prim, Mean { .. }) {
                    1.0 / dim as f64
                } else {
                    1.0
                };
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for d in 0..dim {
                        let row = &x[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v *= scale);
                let mut shape = s.to_vec();
                shape.remove(*axis);
                Ok((shape, out, no_saved()))
            }
            SumAll => {
                expect_arity(prim, inputs, 1)?;
                Ok((vec![], vec![self.value(inputs[0]).iter().sum()], no_saved()))
            }
            Reshape { shape } => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                if shape.iter().product::<usize>() != s.iter().product::<usize>() {
                    return Err(Error::Shape {
                        op: "reshape",
                        lhs: s.to_vec(),
                        rhs: shape.clone(),
                    });
                }
                Ok((shape.clone(), self.value(inputs[0]).to_vec(), no_saved()))
            }
            Transpose => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                if s.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "transpose needs rank >= 2, got {s:?}"
                    )));
                }
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let x = self.value(inputs[0]);
                let mut out = vec![0.0; x.len()];
                for (src, dst) in x.chunks(r * c).zip(out.chunks_mut(r * c)) {
                    for i in 0..r {
                        for j in 0..c {
                            dst[j * r + i] = src[i * c + j];
                        }
                    }
                }
                let mut shape = s.to_vec();
                let n = shape.len();
                shape.swap(n - 2, n - 1);
                Ok((shape, out, no_saved()))
            }
            SoftmaxCrossEntropy { targets } => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                let width = *s.last().unwrap_or(&0);
                let rows = self.value(inputs[0]).len().checked_div(width).unwrap_or(0);
                if rows != targets.len() {
                    return Err(Error::Shape {
                        op: "softmax_cross_entropy",
                        lhs: s.to_vec(),
                        rhs: vec![targets.len()],
                    });
                }
                let mut probs = self.value(inputs[0]).to_vec();
                softmax_rows(&mut probs, width);
                let mut total = 0.0;
                let mut count = 0usize;
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        if t >= width {
                            return Err(Error::IdOutOfRange { id: t, size: width });
                        }
                        total -= probs[r * width + t].max(f64::MIN_POSITIVE).ln();
                        count += 1;
                    }
                }
                let loss = if count == 0 {
                    0.0
                } else {
                    total / count as f64
                };
                Ok((vec![], vec![loss], probs))
            }
            Embedding { ids } => {
                expect_arity(prim, inputs, 1)?;
                let s = self.shape(inputs[0]);
                if s.len() != 2 {
                    return Err(Error::InvalidArgument(format!(
                        "embedding table must be rank 2, got {s:?}"
                    )));
                }
                let (k, e) = (s[0], s[1]);
                let table = self.value(inputs[0]);
                let mut out = Vec::with_capacity(ids.len() * e);
                for &id in ids {
                    if id >= k {
                        return Err(Error::IdOutOfRange { id, size: k });
                    }
                    out.extend_from_slice(&table[id * e..(id + 1) * e]);
                }
                Ok((vec![ids.len(), e], out, no_saved()))
            }
            SelectRows { mask } => {
                expect_arity(prim, inputs, 2)?;
                let (sa, sb) = (self.shape(inputs[0]), self.shape(inputs[1]));
                if sa != sb || sa.first() != Some(&mask.len()) {
                    return Err(Error::Shape {
                        op: "select_rows",
                        lhs: sa.to_vec(),
                        rhs: sb.to_vec(),
                    });
                }
                let row = if mask.is_empty() {
                    0
                } else {
                    self.value(inputs[0]).len() / mask.len()
                };
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                let mut out = Vec::with_capacity(a.len());
                for (r, &m) in mask.iter().enumerate() {
                    let src = if m { a } else { b };
                    out.extend_from_slice(&src[r * row..(r + 1) * row]);
                }
                Ok((sa.to_vec(), out, no_saved()))
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(Primitive::Affine { scale, shift }, x)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Primitive::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Primitive::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Primitive::Relu, x)
    }

    pub fn oneplus(&mut self, x: Var) -> Var {
        self.unary(Primitive::OnePlus, x)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn cosine(&mut self, rows: Var, keys: Var) -> Result<Var> {
        self.apply(Primitive::Cosine, &[rows, keys])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, xs)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[x])
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Sum { axis }, &[x])
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Mean { axis }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        self.unary(Primitive::SumAll, x)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            Primitive::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[x])
    }

    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<Option<usize>>,
    ) -> Result<Var> {
        self.apply(Primitive::SoftmaxCrossEntropy { targets }, &[logits])
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Embedding { ids }, &[table])
    }

    pub fn select_rows(&mut self, mask: Vec<bool>, on_true: Var, on_false: Var) -> Result<Var> {
        self.apply(Primitive::SelectRows { mask }, &[on_true, on_false])
    }

    fn unary(&mut self, prim: Primitive, x: Var) -> Var {
        self.apply(prim, &[x])
            .expect("unary elementwise primitives accept any shape")
    }
}

pub(crate) struct CosineDims {
    pub batch: usize,
    pub heads: usize,
    pub rows: usize,
    pub width: usize,
}

pub(crate) fn cosine_dims(rows: &[usize], keys: &[usize]) -> Result<CosineDims> {
    let err = || Error::Shape {
        op: "cosine",
        lhs: rows.to_vec(),
        rhs: keys.to_vec(),
    };
    if rows.len() < 2 || keys.len() != rows.len() {
        return Err(err());
    }
    let r = rows.len();
    if rows[..r - 2] != keys[..r - 2] || rows[r - 1] != keys[r - 1] {
        return Err(err());
    }
    Ok(CosineDims {
        batch: rows[..r - 2].iter().product(),
        heads: keys[r - 2],
        rows: rows[r - 2],
        width: rows[r - 1],
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn cosine_forward(d: &CosineDims, m: &[f64], k: &[f64], out: &mut [f64]) {
    let (n, w, h) = (d.rows, d.width, d.heads);
    for b in 0..d.batch {
        let mem = &m[b * n * w..(b + 1) * n * w];
        let row_norms: Vec<f64> = mem.chunks(w).map(norm).collect();
        for hd in 0..h {
            let key = &k[(b * h + hd) * w..(b * h + hd + 1) * w];
            let kn = norm(key);
            for (i, row) in mem.chunks(w).enumerate() {
                out[(b * h + hd) * n + i] = dot(row, key) / (row_norms[i] * kn + COSINE_EPS);
            }
        }
    }
}

fn cosine_backward(
    d: &CosineDims,
    m: &[f64],
    k: &[f64],
    g: &[f64],
    wrt_rows: bool,
    grad_in: &mut [f64],
) {
    let (n, w, h) = (d.rows, d.width, d.heads);
    for b in 0..d.batch {
        let mem = &m[b * n * w..(b + 1) * n * w];
        for hd in 0..h {
            let key = &k[(b * h + hd) * w..(b * h + hd + 1) * w];
            let kn = norm(key);
            for i in 0..n {
                let gi = g[(b * h + hd) * n + i];
                if gi == 0.0 {
                    continue;
                }
                let row = &mem[i * w..(i + 1) * w];
                let rn = norm(row);
                let den = rn * kn + COSINE_EPS;
                let num = dot(row, key);
                let c = num / (den * den);
                if wrt_rows {
                    let dst = &mut grad_in[b * n * w + i * w..b * n * w + (i + 1) * w];
                    let radial = if rn > 0.0 { c * kn / rn } else { 0.0 };
                    for j in 0..w {
                        dst[j] += gi * (key[j] / den - radial * row[j]);
                    }
                } else {
                    let dst = &mut grad_in[(b * h + hd) * w..(b * h + hd + 1) * w];
                    let radial = if kn > 0.0 { c * rn / kn } else { 0.0 };
                    for j in 0..w {
                        dst[j] += gi * (row[j] / den - radial * key[j]);
                    }
                }
            }
        }
    }
}

pub(super) fn backward(
    graph: &Graph,
    node: &TensorNode,
    prim: &Primitive,
    saved: &[f64],
    k: usize,
    g: &[f64],
    grad_in: &mut [f64],
) {
    use Primitive::*;
    let input = |i: usize| graph.value(node.parents[i]);
    let in_shape = |i: usize| graph.shape(node.parents[i]);
    match prim {
        MatMul => {
            let (a, b) = (input(0), input(1));
            match matmul_mode(in_shape(0), in_shape(1)).expect("validated in forward") {
                MatMulMode::Shared { rows, k: kk, n } => {
                    if k == 0 {
                        // dA = G B^T
                        gemm(rows, n, kk, g, (n, 1), b, (1, n), 1.0, grad_in, (kk, 1));
                    } else {
                        // dB = A^T G
                        gemm(kk, rows, n, a, (1, kk), g, (n, 1), 1.0, grad_in, (n, 1));
                    }
                }
                MatMulMode::Batched { batch, m, k: kk, n } => {
                    for i in 0..batch {
                        let gi = &g[i * m * n..];
                        if k == 0 {
                            gemm(
                                m,
                                n,
                                kk,
                                gi,
                                (n, 1),
                                &b[i * kk * n..],
                                (1, n),
                                1.0,
                                &mut grad_in[i * m * kk..],
                                (kk, 1),
                            );
                        } else {
                            gemm(
                                kk,
                                m,
                                n,
                                &a[i * m * kk..],
                                (1, kk),
                                gi,
                                (n, 1),
                                1.0,
                                &mut grad_in[i * kk * n..],
                                (n, 1),
                            );
                        }
                    }
                }
            }
        }
        Add | Sub | Mul => {
            let (sa, sb) = (in_shape(0), in_shape(1));
            let (a, b) = (input(0), input(1));
            match (prim, k) {
                (Add, 0) | (Sub, 0) => {
                    broadcast::for_each(sa, sb, &node.shape, |o, i, _| grad_in[i] += g[o])
                }
                (Add, _) => broadcast::for_each(sa, sb, &node.shape, |o, _, j| grad_in[j] += g[o]),
                (Sub, _) => broadcast::for_each(sa, sb, &node.shape, |o, _, j| grad_in[j] -= g[o]),
                (_, 0) => {
                    broadcast::for_each(sa, sb, &node.shape, |o, i, j| grad_in[i] += g[o] * b[j])
                }
                _ => broadcast::for_each(sa, sb, &node.shape, |o, i, j| grad_in[j] += g[o] * a[i]),
            }
        }
        Affine { scale, .. } => {
            for (d, go) in grad_in.iter_mut().zip(g) {
                *d += scale * go;
            }
        }
        Sigmoid => {
            for ((d, go), y) in grad_in.iter_mut().zip(g).zip(&node.value) {
                *d += go * y * (1.0 - y);
            }
        }
        Tanh => {
            for ((d, go), y) in grad_in.iter_mut().zip(g).zip(&node.value) {
                *d += go * (1.0 - y * y);
            }
        }
        Relu => {
            for ((d, go), x) in grad_in.iter_mut().zip(g).zip(input(0)) {
                if *x > 0.0 {
                    *d += go;
                }
            }
        }
        OnePlus => {
            for ((d, go), x) in grad_in.iter_mut().zip(g).zip(input(0)) {
                *d += go * sigmoid(*x);
            }
        }
        Softmax => {
            let width = *node.shape.last().unwrap();
            for ((d, go), y) in grad_in
                .chunks_mut(width)
                .zip(g.chunks(width))
                .zip(node.value.chunks(width))
            {
                let s: f64 = go.iter().zip(y).map(|(a, b)| a * b).sum();
                for j in 0..width {
                    d[j] += y[j] * (go[j] - s);
                }
            }
        }
        Cosine => {
            let dims = cosine_dims(in_shape(0), in_shape(1)).expect("validated in forward");
            cosine_backward(&dims, input(0), input(1), g, k == 0, grad_in);
        }
        Concat { axis } => {
            let (outer, _, inner) = axis_split(&node.shape, *axis);
            let total = node.shape[*axis] * inner;
            let offset: usize = node.parents[..k]
                .iter()
                .map(|p| graph.shape(*p)[*axis] * inner)
                .sum();
            let len = in_shape(k)[*axis] * inner;
            for o in 0..outer {
                let src = &g[o * total + offset..o * total + offset + len];
                for (d, s) in grad_in[o * len..(o + 1) * len].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Slice { axis, start, len } => {
            let (outer, dim, inner) = axis_split(in_shape(0), *axis);
            for o in 0..outer {
                let base = o * dim * inner + start * inner;
                let src = &g[o * len * inner..(o + 1) * len * inner];
                for (d, s) in grad_in[base..base + len * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Sum { axis } | Mean { axis } => {
            let (outer, dim, inner) = axis_split(in_shape(0), *axis);
            let scale = if matches!(prim, Mean { .. }) {
                1.0 / dim as f64
            } else {
                1.0
            };
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for d in 0..dim {
                    let dst = &mut grad_in[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                    for (x, s) in dst.iter_mut().zip(src) {
                        *x += scale * s;
                    }
                }
            }
        }
        SumAll => {
            for d in grad_in.iter_mut() {
                *d += g[0];
            }
        }
        Reshape { .. } => {
            for (d, s) in grad_in.iter_mut().zip(g) {
                *d += s;
            }
        }
        Transpose => {
            let s = in_shape(0);
            let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
            for (dst, src) in grad_in.chunks_mut(r * c).zip(g.chunks(r * c)) {
                for i in 0..r {
                    for j in 0..c {
                        dst[i * c + j] += src[j * r + i];
                    }
                }
            }
        }
        SoftmaxCrossEntropy { targets } => {
            let width = *in_shape(0).last().unwrap();
            let count = targets.iter().filter(|t| t.is_some()).count();
            if count == 0 {
                return;
            }
            let scale = g[0] / count as f64;
            for (r, t) in targets.iter().enumerate() {
                if let Some(t) = *t {
                    let p = &saved[r * width..(r + 1) * width];
                    let d = &mut grad_in[r * width..(r + 1) * width];
                    for j in 0..width {
                        d[j] += scale * p[j];
                    }
                    d[t] -= scale;
                }
            }
        }
        Embedding { ids } => {
            let e = in_shape(0)[1];
            for (r, &id) in ids.iter().enumerate() {
                for (d, s) in grad_in[id * e..(id + 1) * e]
                    .iter_mut()
                    .zip(&g[r * e..(r + 1) * e])
                {
                    *d += s;
                }
            }
        }
        SelectRows { mask } => {
            let row = if mask.is_empty() {
                0
            } else {
                g.len() / mask.len()
            };
            for (r, &m) in mask.iter().enumerate() {
                if m == (k == 0) {
                    for (d, s) in grad_in[r * row..(r + 1) * row]
                        .iter_mut()
                        .zip(&g[r * row..(r + 1) * row])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}
