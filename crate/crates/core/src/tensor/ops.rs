//! Differentiable ops over [`Tensor`].
//!
//! Every op validates shapes, computes the forward value, and records itself
//! when the graph is recording and any input participates in differentiation.
//! Broadcasting is restricted to rank-1-over-last-axis bias addition; all
//! other binary ops demand identical shapes.

use super::graph::{Node, NodeId};
use super::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy)]
pub(crate) struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_shared: bool,
}

pub(crate) enum Op<T> {
    Matmul(MatmulDims),
    Add,
    AddBias,
    Mul,
    Scale(T),
    Gelu,
    Softmax,
    LayerNorm { eps: T },
    Embedding { ids: Vec<u32>, vocab: usize, dim: usize },
    CrossEntropy { predicted: Vec<usize>, targets: Vec<u32>, probs: Vec<T>, vocab: usize },
    TransposeLast2,
    SwapAxes12,
    Reshape,
    StackRows,
    PrependRows,
    SumAll,
    MeanAll,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// (rows, width) view of a tensor flattened over all but the last axis.
fn rows_of(shape: &[usize]) -> (usize, usize) {
    let width = *shape.last().unwrap_or(&1);
    let rows = shape.iter().product::<usize>() / width.max(1);
    (rows, width)
}

// ---------------------------------------------------------------------------
// forward ops
// ---------------------------------------------------------------------------

/// `a @ b` for shapes `[m,k]@[k,n]`, `[B,m,k]@[k,n]` (shared rhs) and
/// `[B,m,k]@[B,k,n]`.
pub fn matmul<T: Scalar>(g: &mut Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let sa = a.shape();
    let sb = b.shape();
    let dims = match (sa.len(), sb.len()) {
        (2, 2) if sa[1] == sb[0] => {
            MatmulDims { batch: 1, m: sa[0], k: sa[1], n: sb[1], b_shared: true }
        }
        (3, 2) if sa[2] == sb[0] => {
            MatmulDims { batch: sa[0], m: sa[1], k: sa[2], n: sb[1], b_shared: true }
        }
        (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => {
            MatmulDims { batch: sa[0], m: sa[1], k: sa[2], n: sb[2], b_shared: false }
        }
        _ => return Err(shape_err("matmul", format!("lhs {sa:?} rhs {sb:?}"))),
    };
    let MatmulDims { batch, m, k, n, b_shared } = dims;
    let mut out = vec![T::zero(); batch * m * n];
    {
        let da = a.data();
        let db = b.data();
        for i in 0..batch {
            let bp = if b_shared { db.as_ptr() } else { db[i * k * n..].as_ptr() };
            unsafe {
                T::gemm(
                    m,
                    k,
                    n,
                    da[i * m * k..].as_ptr(),
                    k as isize,
                    1,
                    bp,
                    n as isize,
                    1,
                    out[i * m * n..].as_mut_ptr(),
                );
            }
        }
    }
    let out_shape: Vec<usize> = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
    let out = Tensor::from_vec(&out_shape, out)?;
    if g.should_record(&[a, b]) {
        g.record(Op::Matmul(dims), &[a, b], &out);
    }
    Ok(out)
}

/// Elementwise sum of two identically shaped tensors.
pub fn add<T: Scalar>(g: &mut Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::from_vec(&a.shape(), out)?;
    if g.should_record(&[a, b]) {
        g.record(Op::Add, &[a, b], &out);
    }
    Ok(out)
}

/// Adds a rank-1 bias over the last axis.
pub fn add_bias<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let sx = x.shape();
    let sb = b.shape();
    let (_, width) = rows_of(&sx);
    if sb.len() != 1 || sb[0] != width {
        return Err(shape_err("add_bias", format!("x {sx:?} bias {sb:?}")));
    }
    let bd = b.to_vec();
    let out: Vec<T> =
        x.data().chunks(width).flat_map(|row| row.iter().zip(&bd).map(|(&v, &c)| v + c)).collect();
    let out = Tensor::from_vec(&sx, out)?;
    if g.should_record(&[x, b]) {
        g.record(Op::AddBias, &[x, b], &out);
    }
    Ok(out)
}

/// Elementwise product of two identically shaped tensors.
pub fn mul<T: Scalar>(g: &mut Graph<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::from_vec(&a.shape(), out)?;
    if g.should_record(&[a, b]) {
        g.record(Op::Mul, &[a, b], &out);
    }
    Ok(out)
}

pub fn scale<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
    let out: Vec<T> = x.data().iter().map(|&v| v * c).collect();
    let out = Tensor::from_vec(&x.shape(), out)?;
    if g.should_record(&[x]) {
        g.record(Op::Scale(c), &[x], &out);
    }
    Ok(out)
}

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = T::cast(GELU_C);
    let a = T::cast(GELU_A);
    let half = T::cast(0.5);
    let out: Vec<T> = x
        .data()
        .iter()
        .map(|&v| {
            let u = c * (v + a * v * v * v);
            half * v * (T::one() + u.tanh())
        })
        .collect();
    let out = Tensor::from_vec(&x.shape(), out)?;
    if g.should_record(&[x]) {
        g.record(Op::Gelu, &[x], &out);
    }
    Ok(out)
}

/// Row-wise softmax over the last axis. With `causal` the last two axes must
/// be square and row `i` only distributes mass over columns `j <= i`.
pub fn softmax_rows<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.is_empty() {
        return Err(shape_err("softmax", format!("rank 0 tensor {shape:?}")));
    }
    let (rows, width) = rows_of(&shape);
    if causal && (shape.len() < 2 || shape[shape.len() - 2] != width) {
        return Err(shape_err("softmax", format!("causal needs square last axes, got {shape:?}")));
    }
    let mut out = vec![T::zero(); rows * width];
    {
        let data = x.data();
        for r in 0..rows {
            let support = if causal { (r % width) + 1 } else { width };
            let row = &data[r * width..r * width + support];
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out[r * width + j] = e;
                sum += e;
            }
            for v in &mut out[r * width..r * width + support] {
                *v = *v / sum;
            }
        }
    }
    let out = Tensor::from_vec(&shape, out)?;
    if g.should_record(&[x]) {
        g.record(Op::Softmax, &[x], &out);
    }
    Ok(out)
}

/// Layer normalization over the last axis with affine gain/bias.
pub fn layer_norm<T: Scalar>(
    g: &mut Graph<T>,
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let shape = x.shape();
    let (rows, width) = rows_of(&shape);
    if gain.shape() != [width] || bias.shape() != [width] {
        return Err(shape_err(
            "layer_norm",
            format!("x {:?} gain {:?} bias {:?}", shape, gain.shape(), bias.shape()),
        ));
    }
    let mut out = vec![T::zero(); rows * width];
    {
        let data = x.data();
        let gd = gain.data();
        let bd = bias.data();
        for r in 0..rows {
            let row = &data[r * width..(r + 1) * width];
            let (mean, inv_std) = row_stats(row, eps);
            for j in 0..width {
                let xhat = (row[j] - mean) * inv_std;
                out[r * width + j] = gd[j] * xhat + bd[j];
            }
        }
    }
    let out = Tensor::from_vec(&shape, out)?;
    if g.should_record(&[x, gain, bias]) {
        g.record(Op::LayerNorm { eps }, &[x, gain, bias], &out);
    }
    Ok(out)
}

fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::cast(row.len() as f64);
    let mut mean = T::zero();
    for &v in row {
        mean += v;
    }
    mean = mean / n;
    let mut var = T::zero();
    for &v in row {
        let d = v - mean;
        var += d * d;
    }
    var = var / n;
    (mean, (var + eps).sqrt().recip())
}

/// Row lookup: `table[ids]` reshaped to `batch_shape x dim`.
pub fn embedding<T: Scalar>(
    g: &mut Graph<T>,
    table: &Tensor<T>,
    ids: &[u32],
    batch_shape: &[usize],
) -> Result<Tensor<T>> {
    let st = table.shape();
    if st.len() != 2 {
        return Err(shape_err("embedding", format!("table must be rank 2, got {st:?}")));
    }
    let (vocab, dim) = (st[0], st[1]);
    if batch_shape.iter().product::<usize>() != ids.len() {
        return Err(shape_err(
            "embedding",
            format!("batch shape {batch_shape:?} vs {} ids", ids.len()),
        ));
    }
    let mut out = vec![T::zero(); ids.len() * dim];
    {
        let td = table.data();
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out[i * dim..(i + 1) * dim].copy_from_slice(&td[id as usize * dim..(id as usize + 1) * dim]);
        }
    }
    let mut out_shape = batch_shape.to_vec();
    out_shape.push(dim);
    let out = Tensor::from_vec(&out_shape, out)?;
    if g.should_record(&[table]) {
        g.record(Op::Embedding { ids: ids.to_vec(), vocab, dim }, &[table], &out);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the rows where `predict` is true.
///
/// `logits` is `[..., vocab]`; `targets` and `predict` have one entry per
/// row. Rows with `predict == false` contribute nothing and receive zero
/// gradient.
pub fn cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: &Tensor<T>,
    targets: &[u32],
    predict: &[bool],
) -> Result<Tensor<T>> {
    let shape = logits.shape();
    let (rows, vocab) = rows_of(&shape);
    if targets.len() != rows || predict.len() != rows {
        return Err(shape_err(
            "cross_entropy",
            format!("{rows} rows vs {} targets / {} mask entries", targets.len(), predict.len()),
        ));
    }
    let predicted: Vec<usize> = (0..rows).filter(|&r| predict[r]).collect();
    if predicted.is_empty() {
        return Err(Error::EmptyPredictionSet);
    }
    let record = g.should_record(&[logits]);
    let mut probs = if record { vec![T::zero(); predicted.len() * vocab] } else { Vec::new() };
    let mut total = T::zero();
    {
        let data = logits.data();
        for (pi, &r) in predicted.iter().enumerate() {
            let t = targets[r];
            if t as usize >= vocab {
                return Err(Error::TokenOutOfRange { id: t, vocab });
            }
            let row = &data[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            let lse = max + sum.ln();
            total += lse - row[t as usize];
            if record {
                for (j, &v) in row.iter().enumerate() {
                    probs[pi * vocab + j] = (v - lse).exp();
                }
            }
        }
    }
    let loss = total / T::cast(predicted.len() as f64);
    let out = Tensor::scalar(loss);
    if record {
        g.record(
            Op::CrossEntropy { predicted, targets: targets.to_vec(), probs, vocab },
            &[logits],
            &out,
        );
    }
    Ok(out)
}

/// Swaps the last two axes.
pub fn transpose_last2<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(shape_err("transpose", format!("rank {} < 2", shape.len())));
    }
    let (out_shape, out) = transpose_last2_data(&shape, &x.data());
    let out = Tensor::from_vec(&out_shape, out)?;
    if g.should_record(&[x]) {
        g.record(Op::TransposeLast2, &[x], &out);
    }
    Ok(out)
}

fn transpose_last2_data<T: Scalar>(shape: &[usize], data: &[T]) -> (Vec<usize>, Vec<T>) {
    let rank = shape.len();
    let (rows, cols) = (shape[rank - 2], shape[rank - 1]);
    let mats = data.len() / (rows * cols);
    let mut out = vec![T::zero(); data.len()];
    for m in 0..mats {
        let base = m * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = data[base + i * cols + j];
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(rank - 2, rank - 1);
    (out_shape, out)
}

/// Swaps axes 1 and 2 of a rank-4 tensor, e.g. `[B,S,H,D] -> [B,H,S,D]`.
pub fn swap_axes12<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() != 4 {
        return Err(shape_err("swap_axes12", format!("rank must be 4, got {shape:?}")));
    }
    let (out_shape, out) = swap_axes12_data(&shape, &x.data());
    let out = Tensor::from_vec(&out_shape, out)?;
    if g.should_record(&[x]) {
        g.record(Op::SwapAxes12, &[x], &out);
    }
    Ok(out)
}

fn swap_axes12_data<T: Scalar>(shape: &[usize], data: &[T]) -> (Vec<usize>, Vec<T>) {
    let (a, b, c, d) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![T::zero(); data.len()];
    for ia in 0..a {
        for ib in 0..b {
            for ic in 0..c {
                let src = ((ia * b + ib) * c + ic) * d;
                let dst = ((ia * c + ic) * b + ib) * d;
                out[dst..dst + d].copy_from_slice(&data[src..src + d]);
            }
        }
    }
    (vec![a, c, b, d], out)
}

/// Reinterprets the buffer under a new shape of equal element count.
pub fn reshape<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    if new_shape.iter().product::<usize>() != x.numel() {
        return Err(shape_err(
            "reshape",
            format!("{:?} ({} elems) -> {:?}", x.shape(), x.numel(), new_shape),
        ));
    }
    let out = Tensor::from_vec(new_shape, x.to_vec())?;
    if g.should_record(&[x]) {
        g.record(Op::Reshape, &[x], &out);
    }
    Ok(out)
}

/// Stacks rank-1 tensors of equal length into a matrix, one per row.
pub fn stack_rows<T: Scalar>(g: &mut Graph<T>, rows: &[Tensor<T>]) -> Result<Tensor<T>> {
    if rows.is_empty() {
        return Err(shape_err("stack_rows", "no inputs".into()));
    }
    let width = rows[0].numel();
    let mut out = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.rank() != 1 || r.numel() != width {
            return Err(shape_err("stack_rows", format!("expected [{width}], got {:?}", r.shape())));
        }
        out.extend_from_slice(&r.data());
    }
    let out = Tensor::from_vec(&[rows.len(), width], out)?;
    let refs: Vec<&Tensor<T>> = rows.iter().collect();
    if g.should_record(&refs) {
        g.record(Op::StackRows, &refs, &out);
    }
    Ok(out)
}

/// Prepends one row per batch element: `[B,D] + [B,S,D] -> [B,S+1,D]`.
pub fn prepend_rows<T: Scalar>(
    g: &mut Graph<T>,
    front: &Tensor<T>,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let sf = front.shape();
    let sx = x.shape();
    if sf.len() != 2 || sx.len() != 3 || sf[0] != sx[0] || sf[1] != sx[2] {
        return Err(shape_err("prepend_rows", format!("front {sf:?} x {sx:?}")));
    }
    let (b, s, d) = (sx[0], sx[1], sx[2]);
    let mut out = vec![T::zero(); b * (s + 1) * d];
    {
        let fd = front.data();
        let xd = x.data();
        for bi in 0..b {
            let dst = bi * (s + 1) * d;
            out[dst..dst + d].copy_from_slice(&fd[bi * d..(bi + 1) * d]);
            out[dst + d..dst + (s + 1) * d].copy_from_slice(&xd[bi * s * d..(bi + 1) * s * d]);
        }
    }
    let out = Tensor::from_vec(&[b, s + 1, d], out)?;
    if g.should_record(&[front, x]) {
        g.record(Op::PrependRows, &[front, x], &out);
    }
    Ok(out)
}

pub fn sum_all<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut total = T::zero();
    for &v in x.data().iter() {
        total += v;
    }
    let out = Tensor::scalar(total);
    if g.should_record(&[x]) {
        g.record(Op::SumAll, &[x], &out);
    }
    Ok(out)
}

pub fn mean_all<T: Scalar>(g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut total = T::zero();
    for &v in x.data().iter() {
        total += v;
    }
    let out = Tensor::scalar(total / T::cast(x.numel() as f64));
    if g.should_record(&[x]) {
        g.record(Op::MeanAll, &[x], &out);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

impl<T: Scalar> Op<T> {
    pub(crate) fn backward(
        &self,
        nodes: &[Node<T>],
        inputs: &[NodeId],
        output: NodeId,
        out_grad: &[T],
    ) -> Result<Vec<Option<Vec<T>>>> {
        let value = |id: NodeId| nodes[id.0].tensor.clone();
        let active = |id: NodeId| nodes[id.0].active;
        match self {
            Op::Matmul(dims) => {
                let a = value(inputs[0]);
                let b = value(inputs[1]);
                let MatmulDims { batch, m, k, n, b_shared } = *dims;
                let da = active(inputs[0]).then(|| {
                    let bd = b.data();
                    let mut grad = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let bp = if b_shared { bd.as_ptr() } else { bd[i * k * n..].as_ptr() };
                        // dA_i = dC_i @ B_i^T
                        unsafe {
                            T::gemm(
                                m,
                                n,
                                k,
                                out_grad[i * m * n..].as_ptr(),
                                n as isize,
                                1,
                                bp,
                                1,
                                n as isize,
                                grad[i * m * k..].as_mut_ptr(),
                            );
                        }
                    }
                    grad
                });
                let db = active(inputs[1]).then(|| {
                    let ad = a.data();
                    let len = if b_shared { k * n } else { batch * k * n };
                    let mut grad = vec![T::zero(); len];
                    for i in 0..batch {
                        let gp = if b_shared {
                            grad.as_mut_ptr()
                        } else {
                            grad[i * k * n..].as_mut_ptr()
                        };
                        // dB_i (+)= A_i^T @ dC_i
                        unsafe {
                            T::gemm(
                                k,
                                m,
                                n,
                                ad[i * m * k..].as_ptr(),
                                1,
                                k as isize,
                                out_grad[i * m * n..].as_ptr(),
                                n as isize,
                                1,
                                gp,
                            );
                        }
                    }
                    grad
                });
                Ok(vec![da, db])
            }
            Op::Add => Ok(vec![
                active(inputs[0]).then(|| out_grad.to_vec()),
                active(inputs[1]).then(|| out_grad.to_vec()),
            ]),
            Op::AddBias => {
                let width = value(inputs[1]).numel();
                let db = active(inputs[1]).then(|| {
                    let mut grad = vec![T::zero(); width];
                    for row in out_grad.chunks(width) {
                        for (g, &v) in grad.iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    grad
                });
                Ok(vec![active(inputs[0]).then(|| out_grad.to_vec()), db])
            }
            Op::Mul => {
                let a = value(inputs[0]);
                let b = value(inputs[1]);
                let da = active(inputs[0])
                    .then(|| out_grad.iter().zip(b.data().iter()).map(|(&g, &v)| g * v).collect());
                let db = active(inputs[1])
                    .then(|| out_grad.iter().zip(a.data().iter()).map(|(&g, &v)| g * v).collect());
                Ok(vec![da, db])
            }
            Op::Scale(c) => {
                Ok(vec![active(inputs[0]).then(|| out_grad.iter().map(|&g| g * *c).collect())])
            }
            Op::Gelu => {
                let x = value(inputs[0]);
                let dx = active(inputs[0]).then(|| {
                    let c = T::cast(GELU_C);
                    let a = T::cast(GELU_A);
                    let half = T::cast(0.5);
                    let three = T::cast(3.0);
                    x.data()
                        .iter()
                        .zip(out_grad)
                        .map(|(&v, &g)| {
                            let u = c * (v + a * v * v * v);
                            let t = u.tanh();
                            let du = c * (T::one() + three * a * v * v);
                            let dy = half * (T::one() + t) + half * v * (T::one() - t * t) * du;
                            g * dy
                        })
                        .collect()
                });
                Ok(vec![dx])
            }
            Op::Softmax => {
                // Masked-out entries have y == 0, which zeroes their gradient.
                let y = value(output);
                let dx = active(inputs[0]).then(|| {
                    let yd = y.data();
                    let width = *y.shape().last().unwrap();
                    let mut grad = vec![T::zero(); yd.len()];
                    for r in 0..yd.len() / width {
                        let ys = &yd[r * width..(r + 1) * width];
                        let gs = &out_grad[r * width..(r + 1) * width];
                        let mut dot = T::zero();
                        for (y, g) in ys.iter().zip(gs) {
                            dot += *y * *g;
                        }
                        for j in 0..width {
                            grad[r * width + j] = ys[j] * (gs[j] - dot);
                        }
                    }
                    grad
                });
                Ok(vec![dx])
            }
            Op::LayerNorm { eps } => {
                let x = value(inputs[0]);
                let gain = value(inputs[1]);
                let xd = x.data();
                let gd = gain.data();
                let width = gd.len();
                let rows = xd.len() / width;
                let n = T::cast(width as f64);
                let mut dx = active(inputs[0]).then(|| vec![T::zero(); xd.len()]);
                let mut dgain = active(inputs[1]).then(|| vec![T::zero(); width]);
                let mut dbias = active(inputs[2]).then(|| vec![T::zero(); width]);
                for r in 0..rows {
                    let row = &xd[r * width..(r + 1) * width];
                    let gs = &out_grad[r * width..(r + 1) * width];
                    let (mean, inv_std) = row_stats(row, *eps);
                    if let Some(dg) = dgain.as_mut() {
                        for j in 0..width {
                            dg[j] += gs[j] * (row[j] - mean) * inv_std;
                        }
                    }
                    if let Some(db) = dbias.as_mut() {
                        for j in 0..width {
                            db[j] += gs[j];
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let mut mean_dxhat = T::zero();
                        let mut mean_dxhat_xhat = T::zero();
                        for j in 0..width {
                            let xhat = (row[j] - mean) * inv_std;
                            let dxhat = gs[j] * gd[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat = mean_dxhat / n;
                        mean_dxhat_xhat = mean_dxhat_xhat / n;
                        for j in 0..width {
                            let xhat = (row[j] - mean) * inv_std;
                            let dxhat = gs[j] * gd[j];
                            dx[r * width + j] =
                                inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
                Ok(vec![dx, dgain, dbias])
            }
            Op::Embedding { ids, vocab, dim } => {
                let dtable = active(inputs[0]).then(|| {
                    let mut grad = vec![T::zero(); vocab * dim];
                    for (i, &id) in ids.iter().enumerate() {
                        let dst = &mut grad[id as usize * dim..(id as usize + 1) * dim];
                        for (g, &v) in dst.iter_mut().zip(&out_grad[i * dim..(i + 1) * dim]) {
                            *g += v;
                        }
                    }
                    grad
                });
                Ok(vec![dtable])
            }
            Op::CrossEntropy { predicted, targets, probs, vocab } => {
                let logits = value(inputs[0]);
                let dlogits = active(inputs[0]).then(|| {
                    let scale = out_grad[0] / T::cast(predicted.len() as f64);
                    let mut grad = vec![T::zero(); logits.numel()];
                    for (pi, &r) in predicted.iter().enumerate() {
                        let t = targets[r] as usize;
                        for j in 0..*vocab {
                            let p = probs[pi * vocab + j];
                            let y = if j == t { T::one() } else { T::zero() };
                            grad[r * vocab + j] = (p - y) * scale;
                        }
                    }
                    grad
                });
                Ok(vec![dlogits])
            }
            Op::TransposeLast2 => {
                let dx = active(inputs[0]).then(|| {
                    let out_shape = nodes[output.0].tensor.shape();
                    transpose_last2_data(&out_shape, out_grad).1
                });
                Ok(vec![dx])
            }
            Op::SwapAxes12 => {
                let dx = active(inputs[0]).then(|| {
                    let out_shape = nodes[output.0].tensor.shape();
                    swap_axes12_data(&out_shape, out_grad).1
                });
                Ok(vec![dx])
            }
            Op::Reshape => Ok(vec![active(inputs[0]).then(|| out_grad.to_vec())]),
            Op::StackRows => {
                let width = value(inputs[0]).numel();
                Ok(inputs
                    .iter()
                    .enumerate()
                    .map(|(i, &id)| active(id).then(|| out_grad[i * width..(i + 1) * width].to_vec()))
                    .collect())
            }
            Op::PrependRows => {
                let front = value(inputs[0]);
                let sx = value(inputs[1]).shape();
                let (b, s, d) = (sx[0], sx[1], sx[2]);
                debug_assert_eq!(front.numel(), b * d);
                let dfront = active(inputs[0]).then(|| {
                    let mut grad = vec![T::zero(); b * d];
                    for bi in 0..b {
                        grad[bi * d..(bi + 1) * d]
                            .copy_from_slice(&out_grad[bi * (s + 1) * d..bi * (s + 1) * d + d]);
                    }
                    grad
                });
                let dx = active(inputs[1]).then(|| {
                    let mut grad = vec![T::zero(); b * s * d];
                    for bi in 0..b {
                        let src = bi * (s + 1) * d + d;
                        grad[bi * s * d..(bi + 1) * s * d]
                            .copy_from_slice(&out_grad[src..src + s * d]);
                    }
                    grad
                });
                Ok(vec![dfront, dx])
            }
            Op::SumAll => {
                let n = value(inputs[0]).numel();
                Ok(vec![active(inputs[0]).then(|| vec![out_grad[0]; n])])
            }
            Op::MeanAll => {
                let n = value(inputs[0]).numel();
                let g = out_grad[0] / T::cast(n as f64);
                Ok(vec![active(inputs[0]).then(|| vec![g; n])])
            }
        }
    }
}
