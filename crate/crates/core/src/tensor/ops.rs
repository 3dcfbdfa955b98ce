use super::{numel, DiffTensor, Result, TensorError};

pub(super) enum Op {
    Leaf,
    MatMul(DiffTensor, DiffTensor),
    Transpose(DiffTensor),
    Add(DiffTensor, DiffTensor),
    Sub(DiffTensor, DiffTensor),
    Mul(DiffTensor, DiffTensor),
    AddRow(DiffTensor, DiffTensor),
    Scale(DiffTensor, f64),
    AddConst(DiffTensor),
    MulConst(DiffTensor, Vec<f64>),
    Relu(DiffTensor),
    Softmax {
        input: DiffTensor,
        axis: usize,
    },
    LogSoftmax(DiffTensor),
    LayerNorm {
        input: DiffTensor,
        gain: DiffTensor,
        bias: DiffTensor,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        input: DiffTensor,
        start: usize,
    },
    ConcatCols(Vec<DiffTensor>),
    ConcatRows(Vec<DiffTensor>),
    GatherRows {
        table: DiffTensor,
        ids: Vec<usize>,
    },
    PickPerRow {
        input: DiffTensor,
        idx: Vec<usize>,
    },
    Sum(DiffTensor),
    Reshape(DiffTensor),
}

impl Op {
    pub(super) fn parents(&self) -> Vec<&DiffTensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![a, b]
            }
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![a],
            Op::Softmax { input, .. } | Op::SliceCols { input, .. } | Op::PickPerRow { input, .. } => {
                vec![input]
            }
            Op::LayerNorm {
                input, gain, bias, ..
            } => vec![input, gain, bias],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.iter().collect(),
            Op::GatherRows { table, .. } => vec![table],
        }
    }

    /// Pushes the gradient of each parent given the output gradient `g`.
    pub(super) fn backprop(
        &self,
        out: &DiffTensor,
        g: &[f64],
        emit: &mut dyn FnMut(&DiffTensor, Vec<f64>),
    ) {
        match self {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims2(a.shape());
                let m = b.shape()[1];
                if a.requires_grad() {
                    let bv = b.values();
                    let mut da = vec![0.0; n * k];
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[i * m + j] * bv[p * m + j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    drop(bv);
                    emit(a, da);
                }
                if b.requires_grad() {
                    let av = a.values();
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            let row = &mut db[p * m..(p + 1) * m];
                            for (d, gv) in row.iter_mut().zip(&g[i * m..(i + 1) * m]) {
                                *d += x * gv;
                            }
                        }
                    }
                    drop(av);
                    emit(b, db);
                }
            }
            Op::Transpose(a) => {
                let (n, m) = dims2(a.shape());
                emit(a, transpose_raw(g, m, n));
            }
            Op::Add(a, b) => {
                emit(a, g.to_vec());
                emit(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                emit(a, g.to_vec());
                emit(b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let bv = b.values();
                    let da = g.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
                    drop(bv);
                    emit(a, da);
                }
                if b.requires_grad() {
                    let av = a.values();
                    let db = g.iter().zip(av.iter()).map(|(x, y)| x * y).collect();
                    drop(av);
                    emit(b, db);
                }
            }
            Op::AddRow(a, b) => {
                let m = b.numel();
                emit(a, g.to_vec());
                let mut db = vec![0.0; m];
                for row in g.chunks(m) {
                    db.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                }
                emit(b, db);
            }
            Op::Scale(a, c) => emit(a, g.iter().map(|x| x * c).collect()),
            Op::AddConst(a) => emit(a, g.to_vec()),
            Op::MulConst(a, mask) => emit(a, g.iter().zip(mask).map(|(x, m)| x * m).collect()),
            Op::Relu(a) => {
                let av = a.values();
                let da = g
                    .iter()
                    .zip(av.iter())
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                drop(av);
                emit(a, da);
            }
            Op::Softmax { input, axis } => {
                let y = out.values();
                let (outer, len, inner) = axis_split(input.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                        for i in 0..len {
                            dx[at(i)] = y[at(i)] * (g[at(i)] - dot);
                        }
                    }
                }
                drop(y);
                emit(input, dx);
            }
            Op::LogSoftmax(a) => {
                let l = out.values();
                let len = *a.shape().last().unwrap_or(&1);
                let mut dx = vec![0.0; l.len()];
                for (r, (lr, gr)) in l.chunks(len).zip(g.chunks(len)).enumerate() {
                    let gs: f64 = gr.iter().sum();
                    for i in 0..len {
                        dx[r * len + i] = gr[i] - lr[i].exp() * gs;
                    }
                }
                drop(l);
                emit(a, dx);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let d = gain.numel();
                let gv = gain.values();
                let mut dx = vec![0.0; normed.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for (r, &istd) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &normed[r * d..(r + 1) * d];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_x = 0.0;
                    for i in 0..d {
                        dgain[i] += gr[i] * xr[i];
                        dbias[i] += gr[i];
                        let dxhat = gr[i] * gv[i];
                        sum_dxhat += dxhat;
                        sum_dxhat_x += dxhat * xr[i];
                    }
                    let dn = d as f64;
                    for i in 0..d {
                        let dxhat = gr[i] * gv[i];
                        dx[r * d + i] = istd / dn * (dn * dxhat - sum_dxhat - xr[i] * sum_dxhat_x);
                    }
                }
                drop(gv);
                emit(input, dx);
                emit(gain, dgain);
                emit(bias, dbias);
            }
            Op::SliceCols { input, start } => {
                let (n, m) = dims2(input.shape());
                let w = out.shape()[1];
                let mut dx = vec![0.0; n * m];
                for i in 0..n {
                    dx[i * m + start..i * m + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                emit(input, dx);
            }
            Op::ConcatCols(parts) => {
                let total = out.shape()[1];
                let n = out.shape()[0];
                let mut off = 0;
                for p in parts {
                    let w = p.shape()[1];
                    if p.requires_grad() {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&g[i * total + off..i * total + off + w]);
                        }
                        emit(p, dp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = p.numel();
                    if p.requires_grad() {
                        emit(p, g[off..off + len].to_vec());
                    }
                    off += len;
                }
            }
            Op::GatherRows { table, ids } => {
                let d = table.shape()[1];
                let mut dt = vec![0.0; table.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
                emit(table, dt);
            }
            Op::PickPerRow { input, idx } => {
                let m = input.shape()[1];
                let mut dx = vec![0.0; input.numel()];
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * m + c] = g[r];
                }
                emit(input, dx);
            }
            Op::Sum(a) => emit(a, vec![g[0]; a.numel()]),
            Op::Reshape(a) => emit(a, g.to_vec()),
        }
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let len = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, len, inner)
}

fn transpose_raw(v: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = v[i * m + j];
        }
    }
    out
}

fn require_2d(t: &DiffTensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, m] => Ok((*n, *m)),
        s => Err(TensorError::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn same_shape(a: &DiffTensor, b: &DiffTensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &DiffTensor, b: &DiffTensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let (av, bv) = (a.values(), b.values());
    av.iter().zip(bv.iter()).map(|(x, y)| f(*x, *y)).collect()
}

impl DiffTensor {
    /// Matrix product of `[n×k]` and `[k×m]`.
    pub fn matmul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        let (n, k) = require_2d(self, "matmul")?;
        let (k2, m) = require_2d(other, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        {
            let (a, b) = (self.values(), other.values());
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let x = a[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    for (o, y) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                        *o += x * y;
                    }
                }
            }
        }
        Ok(Self::from_op(out, vec![n, m], Op::MatMul(self.clone(), other.clone())))
    }

    pub fn transpose(&self) -> Result<DiffTensor> {
        let (n, m) = require_2d(self, "transpose")?;
        let out = transpose_raw(&self.values(), n, m);
        Ok(Self::from_op(out, vec![m, n], Op::Transpose(self.clone())))
    }

    pub fn add(&self, other: &DiffTensor) -> Result<DiffTensor> {
        same_shape(self, other, "add")?;
        let out = zip_map(self, other, |x, y| x + y);
        Ok(Self::from_op(out, self.shape().to_vec(), Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &DiffTensor) -> Result<DiffTensor> {
        same_shape(self, other, "sub")?;
        let out = zip_map(self, other, |x, y| x - y);
        Ok(Self::from_op(out, self.shape().to_vec(), Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &DiffTensor) -> Result<DiffTensor> {
        same_shape(self, other, "mul")?;
        let out = zip_map(self, other, |x, y| x * y);
        Ok(Self::from_op(out, self.shape().to_vec(), Op::Mul(self.clone(), other.clone())))
    }

    /// Adds a length-`m` row vector to every row of an `[n×m]` matrix.
    pub fn add_row(&self, row: &DiffTensor) -> Result<DiffTensor> {
        let (_, m) = require_2d(self, "add_row")?;
        if row.shape() != [m] {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: row.shape().to_vec(),
            });
        }
        let mut out = self.to_vec();
        {
            let r = row.values();
            for chunk in out.chunks_mut(m) {
                chunk.iter_mut().zip(r.iter()).for_each(|(o, b)| *o += b);
            }
        }
        Ok(Self::from_op(out, self.shape().to_vec(), Op::AddRow(self.clone(), row.clone())))
    }

    pub fn scale(&self, c: f64) -> DiffTensor {
        let out = self.values().iter().map(|x| x * c).collect();
        Self::from_op(out, self.shape().to_vec(), Op::Scale(self.clone(), c))
    }

    /// Adds a non-differentiable constant array of the same size.
    pub fn add_const(&self, c: &[f64]) -> Result<DiffTensor> {
        if c.len() != self.numel() {
            return Err(TensorError::Length {
                len: c.len(),
                shape: self.shape().to_vec(),
            });
        }
        let out = self.values().iter().zip(c).map(|(x, y)| x + y).collect();
        Ok(Self::from_op(out, self.shape().to_vec(), Op::AddConst(self.clone())))
    }

    /// Multiplies by a non-differentiable constant array (dropout masks).
    pub fn mul_const(&self, c: Vec<f64>) -> Result<DiffTensor> {
        if c.len() != self.numel() {
            return Err(TensorError::Length {
                len: c.len(),
                shape: self.shape().to_vec(),
            });
        }
        let out = self.values().iter().zip(&c).map(|(x, y)| x * y).collect();
        Ok(Self::from_op(out, self.shape().to_vec(), Op::MulConst(self.clone(), c)))
    }

    pub fn relu(&self) -> DiffTensor {
        let out = self.values().iter().map(|x| x.max(0.0)).collect();
        Self::from_op(out, self.shape().to_vec(), Op::Relu(self.clone()))
    }

    /// Softmax along `axis`, stabilized by subtracting the lane maximum.
    pub fn softmax(&self, axis: usize) -> Result<DiffTensor> {
        if axis >= self.shape().len() {
            return Err(TensorError::Axis {
                axis,
                shape: self.shape().to_vec(),
            });
        }
        let x = self.values();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("softmax"));
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for i in 0..len {
                    let e = (x[at(i)] - max).exp();
                    out[at(i)] = e;
                    sum += e;
                }
                for i in 0..len {
                    out[at(i)] /= sum;
                }
            }
        }
        drop(x);
        Ok(Self::from_op(
            out,
            self.shape().to_vec(),
            Op::Softmax {
                input: self.clone(),
                axis,
            },
        ))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&self) -> Result<DiffTensor> {
        let len = *self.shape().last().ok_or(TensorError::Axis {
            axis: 0,
            shape: Vec::new(),
        })?;
        let x = self.values();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("log_softmax"));
        }
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks(len) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        drop(x);
        Ok(Self::from_op(out, self.shape().to_vec(), Op::LogSoftmax(self.clone())))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<DiffTensor> {
        let (n, m) = require_2d(self, "slice_cols")?;
        if start + len > m {
            return Err(TensorError::Index {
                index: start + len,
                extent: m,
            });
        }
        let v = self.values();
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&v[i * m + start..i * m + start + len]);
        }
        drop(v);
        Ok(Self::from_op(
            out,
            vec![n, len],
            Op::SliceCols {
                input: self.clone(),
                start,
            },
        ))
    }

    /// Side-by-side concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[DiffTensor]) -> Result<DiffTensor> {
        let first = parts.first().ok_or(TensorError::Length {
            len: 0,
            shape: Vec::new(),
        })?;
        let (n, _) = require_2d(first, "concat_cols")?;
        let mut total = 0;
        for p in parts {
            let (pn, pm) = require_2d(p, "concat_cols")?;
            if pn != n {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            total += pm;
        }
        let mut out = Vec::with_capacity(n * total);
        let views: Vec<_> = parts.iter().map(|p| p.values()).collect();
        for i in 0..n {
            for (p, v) in parts.iter().zip(&views) {
                let w = p.shape()[1];
                out.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
        }
        drop(views);
        Ok(Self::from_op(out, vec![n, total], Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts. Zero-row parts are allowed.
    pub fn concat_rows(parts: &[DiffTensor]) -> Result<DiffTensor> {
        let first = parts.first().ok_or(TensorError::Length {
            len: 0,
            shape: Vec::new(),
        })?;
        let (_, m) = require_2d(first, "concat_rows")?;
        let mut rows = 0;
        for p in parts {
            let (pn, pm) = require_2d(p, "concat_rows")?;
            if pm != m {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            rows += pn;
        }
        let mut out = Vec::with_capacity(rows * m);
        for p in parts {
            out.extend_from_slice(&p.values());
        }
        Ok(Self::from_op(out, vec![rows, m], Op::ConcatRows(parts.to_vec())))
    }

    /// Embedding lookup: rows `ids` of a `[V×d]` table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<DiffTensor> {
        let (v, d) = require_2d(self, "gather_rows")?;
        let table = self.values();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    index: id,
                    extent: v,
                });
            }
            out.extend_from_slice(&table[id * d..(id + 1) * d]);
        }
        drop(table);
        Ok(Self::from_op(
            out,
            vec![ids.len(), d],
            Op::GatherRows {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    /// Element `idx[r]` of each row `r`, as a vector.
    pub fn pick_per_row(&self, idx: &[usize]) -> Result<DiffTensor> {
        let (n, m) = require_2d(self, "pick_per_row")?;
        if idx.len() != n {
            return Err(TensorError::Shape {
                op: "pick_per_row",
                lhs: self.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let v = self.values();
        let mut out = Vec::with_capacity(n);
        for (r, &c) in idx.iter().enumerate() {
            if c >= m {
                return Err(TensorError::Index { index: c, extent: m });
            }
            out.push(v[r * m + c]);
        }
        drop(v);
        Ok(Self::from_op(
            out,
            vec![n],
            Op::PickPerRow {
                input: self.clone(),
                idx: idx.to_vec(),
            },
        ))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> DiffTensor {
        let s = self.values().iter().sum();
        Self::from_op(vec![s], Vec::new(), Op::Sum(self.clone()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<DiffTensor> {
        if numel(shape) != self.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_op(self.to_vec(), shape.to_vec(), Op::Reshape(self.clone())))
    }
}

/// Normalizes each row of `x` (last axis) to zero mean and unit variance,
/// then applies `gain` and `bias`.
pub fn layer_norm(
    x: &DiffTensor,
    gain: &DiffTensor,
    bias: &DiffTensor,
    eps: f64,
) -> Result<DiffTensor> {
    let d = *x.shape().last().ok_or(TensorError::Axis {
        axis: 0,
        shape: Vec::new(),
    })?;
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(TensorError::Shape {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let xv = x.values();
    let (gv, bv) = (gain.values(), bias.values());
    let rows = xv.len() / d.max(1);
    let mut normed = Vec::with_capacity(xv.len());
    let mut inv_std = Vec::with_capacity(rows);
    let mut out = Vec::with_capacity(xv.len());
    for row in xv.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        for i in 0..d {
            let h = (row[i] - mean) * istd;
            normed.push(h);
            out.push(h * gv[i] + bv[i]);
        }
    }
    drop((xv, gv, bv));
    Ok(DiffTensor::from_op(
        out,
        x.shape().to_vec(),
        Op::LayerNorm {
            input: x.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            normed,
            inv_std,
        },
    ))
}
