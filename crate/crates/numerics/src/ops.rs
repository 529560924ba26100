use crate::flops;
use crate::mask::AttnMask;
use crate::tensor::{DenseTensor, NumericsError};

/// 2-D matrix product with a fixed accumulation order: for each output
/// element the inner dimension is summed left to right. This order is the
/// numeric contract that lets parallel reductions be compared at 1e-6
/// instead of bitwise.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor, NumericsError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(NumericsError::ShapeMismatch {
            context: "matmul",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    flops::record(2 * (m * n * k) as u64);
    let ad = a.data();
    let bd = b.data();
    let mut out = DenseTensor::zeros(&[m, n]);
    let od = out.data_mut();
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += ad[i * k + p] * bd[p * n + j];
            }
            od[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// Numerically-stable softmax over the last dimension: each slice is
/// max-subtracted before exponentiation and sums to 1 within 1e-12.
pub fn softmax_lastdim(x: &DenseTensor) -> DenseTensor {
    let last = *x.shape().last().expect("non-empty shape");
    let mut out = x.clone();
    let data = out.data_mut();
    for row in data.chunks_mut(last) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// LayerNorm over the last dimension. `gamma`/`beta` have the last
/// dimension's extent and broadcast over leading dims. Uses the biased
/// variance with `eps` inside the square root.
pub fn layer_norm(
    x: &DenseTensor,
    gamma: &DenseTensor,
    beta: &DenseTensor,
    eps: f64,
) -> Result<DenseTensor, NumericsError> {
    let last = *x.shape().last().expect("non-empty shape");
    if gamma.numel() != last || beta.numel() != last {
        return Err(NumericsError::ShapeMismatch {
            context: "layer_norm affine",
            expected: vec![last],
            got: gamma.shape().to_vec(),
        });
    }
    let g = gamma.data();
    let b = beta.data();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(last) {
        let mean = row.iter().sum::<f64>() / last as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / last as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * g[j] + b[j];
        }
    }
    Ok(out)
}

/// Serial scaled-dot-product attention, the oracle for every parallel
/// attention variant.
///
/// `q` is `[s_q, dh]`, `k`/`v` are `[s_kv, dh]`; an optional boolean mask
/// (`[s_q, s_kv]`) denies pairs by setting the pre-softmax score to -inf.
/// A fully-masked query row yields a zero output row; packed padding
/// relies on that convention.
pub fn reference_attention(
    q: &DenseTensor,
    k: &DenseTensor,
    v: &DenseTensor,
    mask: Option<&AttnMask>,
) -> Result<DenseTensor, NumericsError> {
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(NumericsError::InvalidShape {
            shape: q.shape().to_vec(),
            reason: "attention inputs must be rank 2".into(),
        });
    }
    let (sq, dh) = (q.shape()[0], q.shape()[1]);
    let skv = k.shape()[0];
    if k.shape()[1] != dh || v.shape()[0] != skv || v.shape()[1] != dh {
        return Err(NumericsError::ShapeMismatch {
            context: "reference_attention",
            expected: vec![skv, dh],
            got: v.shape().to_vec(),
        });
    }
    if let Some(m) = mask {
        if m.rows() != sq || m.cols() != skv {
            return Err(NumericsError::ShapeMismatch {
                context: "reference_attention mask",
                expected: vec![sq, skv],
                got: vec![m.rows(), m.cols()],
            });
        }
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut scores = matmul(q, &k.transpose2d()?)?.scale(scale);
    if let Some(m) = mask {
        let sd = scores.data_mut();
        for i in 0..sq {
            for j in 0..skv {
                if !m.allowed(i, j) {
                    sd[i * skv + j] = f64::NEG_INFINITY;
                }
            }
        }
    }
    let mut out = DenseTensor::zeros(&[sq, dh]);
    let vd = v.data();
    for i in 0..sq {
        if mask.map_or(false, |m| m.row_fully_masked(i)) {
            continue; // zero row by convention
        }
        let row = &scores.data()[i * skv..(i + 1) * skv];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights = vec![0.0; skv];
        let mut sum = 0.0;
        for (j, &s) in row.iter().enumerate() {
            let w = (s - max).exp();
            weights[j] = w;
            sum += w;
        }
        flops::record(2 * (skv * dh) as u64);
        for j in 0..skv {
            let w = weights[j] / sum;
            for d in 0..dh {
                out.data_mut()[i * dh + d] += w * vd[j * dh + d];
            }
        }
    }
    Ok(out)
}

/// Normalizes each per-head slice of `x` (`[s, heads, dh]`) to unit L2 norm,
/// then multiplies by `scale`. Zero slices are returned unchanged.
pub fn per_head_l2_normalize(x: &DenseTensor, scale: f64) -> Result<DenseTensor, NumericsError> {
    if x.rank() != 3 {
        return Err(NumericsError::InvalidShape {
            shape: x.shape().to_vec(),
            reason: "per_head_l2_normalize requires [s, heads, dh]".into(),
        });
    }
    let dh = x.shape()[2];
    let mut out = x.clone();
    for slice in out.data_mut().chunks_mut(dh) {
        let norm = slice.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let f = scale / norm;
        for v in slice.iter_mut() {
            *v *= f;
        }
    }
    Ok(out)
}
