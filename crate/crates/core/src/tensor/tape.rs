//! Operation tape and backward rules.
//!
//! A [`Tape`] is an append-only arena of values. Forward operations push a
//! node whose inputs always precede it, so a single reverse sweep visits
//! every node exactly once. Tapes are independent: one tape is
//! single-threaded, many tapes can run on separate threads.

use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// Nonlinearity selector. `Identity` exists as a test hook so oracle
/// examples can be evaluated without the activation folded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Relu { a: ValueId },
    Scale { a: ValueId, k: f64 },
    AddRow { a: ValueId, bias: ValueId },
    SoftmaxRows { a: ValueId },
    SumAxis { a: ValueId, axis: usize },
    MeanAxis { a: ValueId, axis: usize },
    ConcatLast { parts: Vec<ValueId> },
    Transpose { a: ValueId },
    SliceCols { a: ValueId, start: usize, len: usize },
    GatherRows { table: ValueId, indices: Vec<usize> },
    LayerNorm { x: ValueId, gamma: ValueId, beta: ValueId, eps: f64 },
    MeanPoolRows { a: ValueId, window: usize },
    RepeatRows { a: ValueId, factor: usize, target: usize },
    CrossEntropyLogits { logits: ValueId, label: usize },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
}

/// Append-only record of forward operations with reverse-mode backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

/// Row-major matrix product, fixed loop order for determinism.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * p..(i + 1) * p];
        for (l, &av) in arow.iter().enumerate() {
            let brow = &b[l * p..(l + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Stable softmax of one row (max subtraction before exponentiation).
fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn ceil_div(n: usize, d: usize) -> usize {
    n.div_ceil(d)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { shape, data, op });
        id
    }

    /// Registers a tensor's values as a tape leaf (copies the data).
    pub fn leaf(&mut self, t: &Tensor) -> ValueId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<ValueId, TensorError> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape_of(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn to_tensor(&self, id: ValueId) -> Tensor {
        Tensor::from_vec(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("tape nodes hold valid tensors")
    }

    /// Gradient of the last `backward` pass with respect to `id`.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads.get(id.0).map(Vec::as_slice)
    }

    fn rank2(&self, op: &'static str, id: ValueId) -> Result<(usize, usize), TensorError> {
        let s = &self.nodes[id.0].shape;
        if s.len() != 2 {
            return Err(TensorError::RankMismatch {
                op,
                expected: 2,
                shape: s.clone(),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Forward operations ──────────────────────────────────────────

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, p) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, p],
            });
        }
        let data = matmul_raw(self.value(a), self.value(b), m, k, p);
        Ok(self.push(vec![m, p], data, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(TensorError::DimensionMismatch {
                op: "add",
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(self.shape_of(a).to_vec(), data, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, TensorError> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(TensorError::DimensionMismatch {
                op: "mul",
                lhs: self.shape_of(a).to_vec(),
                rhs: self.shape_of(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(self.shape_of(a).to_vec(), data, Op::Mul { a, b }))
    }

    /// Pointwise max(x, 0). The subgradient at exactly 0 is defined as 0.
    pub fn relu(&mut self, a: ValueId) -> ValueId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(self.shape_of(a).to_vec(), data, Op::Relu { a })
    }

    pub fn activation(&mut self, act: Activation, a: ValueId) -> ValueId {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Identity => a,
        }
    }

    pub fn scale(&mut self, a: ValueId, k: f64) -> ValueId {
        let data: Vec<f64> = self.value(a).iter().map(|&x| x * k).collect();
        self.push(self.shape_of(a).to_vec(), data, Op::Scale { a, k })
    }

    /// Adds a rank-1 bias row to every row of a rank-2 tensor.
    pub fn add_row(&mut self, a: ValueId, bias: ValueId) -> Result<ValueId, TensorError> {
        let (n, d) = self.rank2("add_row", a)?;
        let bshape = self.shape_of(bias);
        if bshape != [d] {
            return Err(TensorError::DimensionMismatch {
                op: "add_row",
                lhs: vec![n, d],
                rhs: bshape.to_vec(),
            });
        }
        let mut data = self.value(a).to_vec();
        let b = self.value(bias).to_vec();
        for row in data.chunks_mut(d) {
            for (x, &bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        Ok(self.push(vec![n, d], data, Op::AddRow { a, bias }))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        let (m, c) = self.rank2("softmax_rows", a)?;
        let input = self.value(a).to_vec();
        let mut data = vec![0.0; m * c];
        for (orow, irow) in data.chunks_mut(c).zip(input.chunks(c)) {
            softmax_row(irow, orow);
        }
        Ok(self.push(vec![m, c], data, Op::SoftmaxRows { a }))
    }

    pub fn sum_axis(&mut self, a: ValueId, axis: usize) -> Result<ValueId, TensorError> {
        let (m, d) = self.rank2("sum_axis", a)?;
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: vec![m, d],
            });
        }
        let x = self.value(a);
        let (shape, data) = if axis == 0 {
            let mut out = vec![0.0; d];
            for row in x.chunks(d) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            (vec![1, d], out)
        } else {
            let out: Vec<f64> = x.chunks(d).map(|row| row.iter().sum()).collect();
            (vec![m, 1], out)
        };
        Ok(self.push(shape, data, Op::SumAxis { a, axis }))
    }

    pub fn mean_axis(&mut self, a: ValueId, axis: usize) -> Result<ValueId, TensorError> {
        let (m, d) = self.rank2("mean_axis", a)?;
        if axis > 1 {
            return Err(TensorError::InvalidAxis {
                axis,
                shape: vec![m, d],
            });
        }
        let x = self.value(a);
        let (shape, data) = if axis == 0 {
            let mut out = vec![0.0; d];
            for row in x.chunks(d) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= m as f64;
            }
            (vec![1, d], out)
        } else {
            let out: Vec<f64> = x
                .chunks(d)
                .map(|row| row.iter().sum::<f64>() / d as f64)
                .collect();
            (vec![m, 1], out)
        };
        Ok(self.push(shape, data, Op::MeanAxis { a, axis }))
    }

    /// Concatenates rank-2 tensors along the feature (last) axis.
    pub fn concat_last(&mut self, parts: &[ValueId]) -> Result<ValueId, TensorError> {
        let first = *parts.first().ok_or(TensorError::DimensionMismatch {
            op: "concat_last",
            lhs: vec![],
            rhs: vec![],
        })?;
        let (rows, _) = self.rank2("concat_last", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rank2("concat_last", p)?;
            if r != rows {
                return Err(TensorError::DimensionMismatch {
                    op: "concat_last",
                    lhs: self.shape_of(first).to_vec(),
                    rhs: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..rows {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            vec![rows, total],
            data,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId, TensorError> {
        let (m, d) = self.rank2("transpose", a)?;
        let data = transpose_raw(self.value(a), m, d);
        Ok(self.push(vec![d, m], data, Op::Transpose { a }))
    }

    pub fn slice_cols(
        &mut self,
        a: ValueId,
        start: usize,
        len: usize,
    ) -> Result<ValueId, TensorError> {
        let (m, d) = self.rank2("slice_cols", a)?;
        if start + len > d || len == 0 {
            return Err(TensorError::ColSliceOutOfRange {
                start,
                len,
                cols: d,
            });
        }
        let src = self.value(a);
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * d + start..i * d + start + len]);
        }
        Ok(self.push(vec![m, len], data, Op::SliceCols { a, start, len }))
    }

    /// Embedding-style row lookup; backward scatter-adds into the table.
    pub fn gather_rows(&mut self, table: ValueId, indices: &[usize]) -> Result<ValueId, TensorError> {
        let (rows, d) = self.rank2("gather_rows", table)?;
        for &idx in indices {
            if idx >= rows {
                return Err(TensorError::RowOutOfRange { index: idx, rows });
            }
        }
        let src = self.value(table);
        let mut data = vec![0.0; indices.len() * d];
        for (i, &idx) in indices.iter().enumerate() {
            data[i * d..(i + 1) * d].copy_from_slice(&src[idx * d..(idx + 1) * d]);
        }
        Ok(self.push(
            vec![indices.len(), d],
            data,
            Op::GatherRows {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Per-row normalization to zero mean and unit variance, then an affine
    /// transform by `gamma` and `beta` (both rank-1 of the row width).
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<ValueId, TensorError> {
        let (n, d) = self.rank2("layer_norm", x)?;
        if self.shape_of(gamma) != [d] || self.shape_of(beta) != [d] {
            return Err(TensorError::DimensionMismatch {
                op: "layer_norm",
                lhs: vec![n, d],
                rhs: self.shape_of(gamma).to_vec(),
            });
        }
        let xv = self.value(x).to_vec();
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut data = vec![0.0; n * d];
        for (orow, irow) in data.chunks_mut(d).zip(xv.chunks(d)) {
            let mean = irow.iter().sum::<f64>() / d as f64;
            let var = irow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                orow[j] = (irow[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        Ok(self.push(vec![n, d], data, Op::LayerNorm { x, gamma, beta, eps }))
    }

    /// Non-overlapping mean pooling over the row axis with the given window;
    /// a final partial window is averaged over its actual length.
    pub fn mean_pool_rows(&mut self, a: ValueId, window: usize) -> Result<ValueId, TensorError> {
        let (n, d) = self.rank2("mean_pool_rows", a)?;
        if window == 0 {
            return Err(TensorError::InvalidAxis {
                axis: 0,
                shape: vec![n, d],
            });
        }
        let out_rows = ceil_div(n, window);
        let src = self.value(a);
        let mut data = vec![0.0; out_rows * d];
        for j in 0..out_rows {
            let lo = j * window;
            let hi = ((j + 1) * window).min(n);
            let len = (hi - lo) as f64;
            let orow = &mut data[j * d..(j + 1) * d];
            for row in src[lo * d..hi * d].chunks(d) {
                for (o, &v) in orow.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o /= len;
            }
        }
        Ok(self.push(vec![out_rows, d], data, Op::MeanPoolRows { a, window }))
    }

    /// Nearest-neighbor upsampling along the row axis: output row `i` is
    /// input row `i / factor`, truncated to `target` rows. Requires the
    /// input row count to be exactly `ceil(target / factor)`.
    pub fn repeat_rows(
        &mut self,
        a: ValueId,
        factor: usize,
        target: usize,
    ) -> Result<ValueId, TensorError> {
        let (m, d) = self.rank2("repeat_rows", a)?;
        if factor == 0 || target == 0 || m != ceil_div(target, factor) {
            return Err(TensorError::DimensionMismatch {
                op: "repeat_rows",
                lhs: vec![m, d],
                rhs: vec![ceil_div(target.max(1), factor.max(1)), d],
            });
        }
        let src = self.value(a);
        let mut data = vec![0.0; target * d];
        for i in 0..target {
            let j = i / factor;
            data[i * d..(i + 1) * d].copy_from_slice(&src[j * d..(j + 1) * d]);
        }
        Ok(self.push(vec![target, d], data, Op::RepeatRows { a, factor, target }))
    }

    /// Fused numerically-stable cross-entropy from logits via log-sum-exp.
    /// `logits` is a single row `[1, C]`; the result is a scalar.
    pub fn cross_entropy_logits(
        &mut self,
        logits: ValueId,
        label: usize,
    ) -> Result<ValueId, TensorError> {
        let (rows, c) = self.rank2("cross_entropy_logits", logits)?;
        if rows != 1 {
            return Err(TensorError::RankMismatch {
                op: "cross_entropy_logits",
                expected: 2,
                shape: vec![rows, c],
            });
        }
        if label >= c {
            return Err(TensorError::LabelOutOfRange { label, classes: c });
        }
        let row = self.value(logits);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - row[label];
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropyLogits { logits, label }))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates gradients for every node;
    /// query them with [`Tape::grad`].
    pub fn backward(&mut self, loss: ValueId) -> Result<(), TensorError> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.grads = self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        self.grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut self.grads[i]);
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let p = self.nodes[b.0].shape[1];
                    let bt = transpose_raw(&self.nodes[b.0].data, k, p);
                    let da = matmul_raw(&g, &bt, m, p, k);
                    let at = transpose_raw(&self.nodes[a.0].data, m, k);
                    let db = matmul_raw(&at, &g, k, m, p);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &g);
                    self.accumulate(b, &g);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].data)
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(gv, av)| gv * av)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].data)
                        .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Scale { a, k } => {
                    let da: Vec<f64> = g.iter().map(|gv| gv * k).collect();
                    self.accumulate(a, &da);
                }
                Op::AddRow { a, bias } => {
                    let d = self.nodes[bias.0].data.len();
                    let mut db = vec![0.0; d];
                    for row in g.chunks(d) {
                        for (o, &gv) in db.iter_mut().zip(row) {
                            *o += gv;
                        }
                    }
                    self.accumulate(a, &g);
                    self.accumulate(bias, &db);
                }
                Op::SoftmaxRows { a } => {
                    let c = self.nodes[i].shape[1];
                    let s = &self.nodes[i].data;
                    let mut da = vec![0.0; g.len()];
                    for ((orow, grow), srow) in da.chunks_mut(c).zip(g.chunks(c)).zip(s.chunks(c)) {
                        let dot: f64 = grow.iter().zip(srow).map(|(gv, sv)| gv * sv).sum();
                        for j in 0..c {
                            orow[j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SumAxis { a, axis } => {
                    let (m, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut da = vec![0.0; m * d];
                    if axis == 0 {
                        for row in da.chunks_mut(d) {
                            row.copy_from_slice(&g);
                        }
                    } else {
                        for (r, row) in da.chunks_mut(d).enumerate() {
                            row.fill(g[r]);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::MeanAxis { a, axis } => {
                    let (m, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut da = vec![0.0; m * d];
                    if axis == 0 {
                        let inv = 1.0 / m as f64;
                        for row in da.chunks_mut(d) {
                            for (o, &gv) in row.iter_mut().zip(&g) {
                                *o = gv * inv;
                            }
                        }
                    } else {
                        let inv = 1.0 / d as f64;
                        for (r, row) in da.chunks_mut(d).enumerate() {
                            row.fill(g[r] * inv);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::ConcatLast { parts } => {
                    let rows = self.nodes[i].shape[0];
                    let total = self.nodes[i].shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p.0].shape[1];
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w]
                                .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(p, &dp);
                        offset += w;
                    }
                }
                Op::Transpose { a } => {
                    let (d, m) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let da = transpose_raw(&g, d, m);
                    self.accumulate(a, &da);
                }
                Op::SliceCols { a, start, len } => {
                    let (m, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut da = vec![0.0; m * d];
                    for r in 0..m {
                        da[r * d + start..r * d + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    self.accumulate(a, &da);
                }
                Op::GatherRows { table, indices } => {
                    let d = self.nodes[table.0].shape[1];
                    let mut dt = vec![0.0; self.nodes[table.0].data.len()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            dt[idx * d + j] += g[r * d + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = self.nodes[gamma.0].data.len();
                    let xv = self.nodes[x.0].data.clone();
                    let gv = self.nodes[gamma.0].data.clone();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for (r, (row, grow)) in xv.chunks(d).zip(g.chunks(d)).enumerate() {
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            grow.iter().zip(&gv).map(|(gr, ga)| gr * ga).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        for j in 0..d {
                            dgamma[j] += grow[j] * xhat[j];
                            dbeta[j] += grow[j];
                            dx[r * d + j] = inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::MeanPoolRows { a, window } => {
                    let (n, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let out_rows = self.nodes[i].shape[0];
                    let mut da = vec![0.0; n * d];
                    for j in 0..out_rows {
                        let lo = j * window;
                        let hi = ((j + 1) * window).min(n);
                        let inv = 1.0 / (hi - lo) as f64;
                        for r in lo..hi {
                            for c in 0..d {
                                da[r * d + c] += g[j * d + c] * inv;
                            }
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::RepeatRows { a, factor, target } => {
                    let (m, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let mut da = vec![0.0; m * d];
                    for r in 0..target {
                        let j = r / factor;
                        for c in 0..d {
                            da[j * d + c] += g[r * d + c];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::CrossEntropyLogits { logits, label } => {
                    let c = self.nodes[logits.0].shape[1];
                    let row = &self.nodes[logits.0].data;
                    let mut probs = vec![0.0; c];
                    softmax_row(row, &mut probs);
                    let mut dl = vec![0.0; c];
                    for j in 0..c {
                        let onehot = if j == label { 1.0 } else { 0.0 };
                        dl[j] = g[0] * (probs[j] - onehot);
                    }
                    self.accumulate(logits, &dl);
                }
            }
            self.grads[i] = g;
        }
        Ok(())
    }

    fn accumulate(&mut self, id: ValueId, delta: &[f64]) {
        let slot = &mut self.grads[id.0];
        for (s, d) in slot.iter_mut().zip(delta) {
            *s += d;
        }
    }
}
