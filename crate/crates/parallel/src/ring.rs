use crate::sharded::{ParallelError, ShardedTensor};
use crate::trace::{CollectiveKind, CollectiveTrace};
use vdt_numerics::{reference_attention, AttnMask, DenseTensor};

/// Context-parallel attention over sequence-sharded q/k/v (`[s/cp, d]` per
/// device, `d = heads * dh`).
///
/// Each device keeps its query block and walks the ring: at every round it
/// computes blockwise attention against the KV block it currently holds,
/// merges with a running log-sum-exp, then passes the block to the next
/// device. Exactly `cp - 1` P2P rounds are traced, each carrying every
/// device's K and V block (`2 * s * d * 8` bytes per round). The gathered
/// output matches [`reference_attention`] on the full sequence within 1e-6.
///
/// `mask` is a global `[s, s]` boolean mask; fully-masked query rows
/// produce zero output rows, matching the serial convention.
pub fn ring_attention_cp(
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    heads: usize,
    mask: Option<&AttnMask>,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let cp = q.n_parts();
    if k.n_parts() != cp || v.n_parts() != cp {
        return Err(ParallelError::ShardMismatch("q/k/v shard counts differ".into()));
    }
    if q.sharded_dim() != Some(0) || k.sharded_dim() != Some(0) || v.sharded_dim() != Some(0) {
        return Err(ParallelError::NotSharded { op: "ring_attention_cp" });
    }
    let s_total = q.global_shape()[0];
    let d = q.global_shape()[1];
    if d % heads != 0 {
        return Err(ParallelError::Layout(format!("heads {heads} must divide width {d}")));
    }
    if let Some(m) = mask {
        if m.rows() != s_total || m.cols() != s_total {
            return Err(ParallelError::Layout(format!(
                "mask {}x{} does not cover sequence {s_total}",
                m.rows(),
                m.cols()
            )));
        }
    }

    // cp == 1 degenerates to the serial oracle exactly (same op order).
    if cp == 1 {
        let out = mh_reference(q.part(0), k.part(0), v.part(0), heads, mask, 0, 0)?;
        return ShardedTensor::from_parts(vec![out], 0, q.axis());
    }

    let s_local = s_total / cp;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // per device, per head, per local row: running (max, sum, weighted acc)
    let mut acc: Vec<DenseTensor> = (0..cp).map(|_| DenseTensor::zeros(&[s_local, d])).collect();
    let mut row_max = vec![vec![f64::NEG_INFINITY; s_local * heads]; cp];
    let mut row_sum = vec![vec![0.0f64; s_local * heads]; cp];

    for round in 0..cp {
        for dev in 0..cp {
            // block held by `dev` after `round` ring passes
            let kv_block = (dev + cp - round) % cp;
            let qd = q.part(dev);
            let kb = k.part(kv_block);
            let vb = v.part(kv_block);
            blockwise_merge(
                qd,
                kb,
                vb,
                heads,
                scale,
                mask,
                dev * s_local,
                kv_block * s_local,
                &mut acc[dev],
                &mut row_max[dev],
                &mut row_sum[dev],
            );
        }
        if round < cp - 1 {
            // every device hands its current KV block to the next one
            trace.record(
                CollectiveKind::P2p,
                q.axis(),
                (2 * s_total * d * 8) as u64,
                cp,
            );
        }
    }

    let mut outs = Vec::with_capacity(cp);
    for dev in 0..cp {
        let mut out = acc[dev].clone();
        for i in 0..s_local {
            for h in 0..heads {
                let l = row_sum[dev][i * heads + h];
                let inv = if l == 0.0 { 0.0 } else { 1.0 / l };
                for c in 0..dh {
                    out.data_mut()[i * d + h * dh + c] *= inv;
                }
            }
        }
        outs.push(out);
    }
    ShardedTensor::from_parts(outs, 0, q.axis())
}

/// One (query block x KV block) update of the running log-sum-exp state.
#[allow(clippy::too_many_arguments)]
fn blockwise_merge(
    q: &DenseTensor,
    k: &DenseTensor,
    v: &DenseTensor,
    heads: usize,
    scale: f64,
    mask: Option<&AttnMask>,
    q_offset: usize,
    k_offset: usize,
    acc: &mut DenseTensor,
    row_max: &mut [f64],
    row_sum: &mut [f64],
) {
    let s_q = q.shape()[0];
    let s_k = k.shape()[0];
    let d = q.shape()[1];
    let dh = d / heads;
    for i in 0..s_q {
        for h in 0..heads {
            // blockwise scores for this (row, head)
            let mut scores = vec![f64::NEG_INFINITY; s_k];
            let mut block_max = f64::NEG_INFINITY;
            for j in 0..s_k {
                if let Some(m) = mask {
                    if !m.allowed(q_offset + i, k_offset + j) {
                        continue;
                    }
                }
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q.data()[i * d + h * dh + c] * k.data()[j * d + h * dh + c];
                }
                let sc = dot * scale;
                scores[j] = sc;
                if sc > block_max {
                    block_max = sc;
                }
            }
            if block_max == f64::NEG_INFINITY {
                continue; // nothing visible in this block for this row
            }
            let slot = i * heads + h;
            let new_max = row_max[slot].max(block_max);
            let rescale = if row_max[slot] == f64::NEG_INFINITY {
                0.0
            } else {
                (row_max[slot] - new_max).exp()
            };
            // rescale prior accumulator to the new max
            if rescale != 1.0 {
                for c in 0..dh {
                    acc.data_mut()[i * d + h * dh + c] *= rescale;
                }
                row_sum[slot] *= rescale;
            }
            for j in 0..s_k {
                if scores[j] == f64::NEG_INFINITY {
                    continue;
                }
                let w = (scores[j] - new_max).exp();
                row_sum[slot] += w;
                for c in 0..dh {
                    acc.data_mut()[i * d + h * dh + c] += w * v.data()[j * d + h * dh + c];
                }
            }
            row_max[slot] = new_max;
        }
    }
}

/// Serial multi-head attention with global-position masking, used for the
/// cp == 1 fast path. Offsets locate the block inside the global mask.
fn mh_reference(
    q: &DenseTensor,
    k: &DenseTensor,
    v: &DenseTensor,
    heads: usize,
    mask: Option<&AttnMask>,
    q_offset: usize,
    k_offset: usize,
) -> Result<DenseTensor, ParallelError> {
    let d = q.shape()[1];
    let dh = d / heads;
    let window = mask.map(|m| {
        m.window(
            q_offset,
            q_offset + q.shape()[0],
            k_offset,
            k_offset + k.shape()[0],
        )
    });
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
        let kh = k.slice_cols(h * dh, (h + 1) * dh)?;
        let vh = v.slice_cols(h * dh, (h + 1) * dh)?;
        outs.push(reference_attention(&qh, &kh, &vh, window.as_ref())?);
    }
    Ok(DenseTensor::concat_cols(&outs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::MeshAxis;
    use vdt_numerics::SeededRng;

    fn serial_oracle(
        q: &DenseTensor,
        k: &DenseTensor,
        v: &DenseTensor,
        heads: usize,
        mask: Option<&AttnMask>,
    ) -> DenseTensor {
        mh_reference(q, k, v, heads, mask, 0, 0).unwrap()
    }

    #[test]
    fn cp1_exactly_matches_reference() {
        let mut rng = SeededRng::new(1);
        let q = DenseTensor::randn(&[8, 4], &mut rng);
        let k = DenseTensor::randn(&[8, 4], &mut rng);
        let v = DenseTensor::randn(&[8, 4], &mut rng);
        let qs = ShardedTensor::shard(&q, 0, 1, MeshAxis::Cp).unwrap();
        let ks = ShardedTensor::shard(&k, 0, 1, MeshAxis::Cp).unwrap();
        let vs = ShardedTensor::shard(&v, 0, 1, MeshAxis::Cp).unwrap();
        let mut trace = CollectiveTrace::new();
        let out = ring_attention_cp(&qs, &ks, &vs, 1, None, &mut trace).unwrap();
        assert!(trace.is_empty());
        assert_eq!(out.gather().unwrap(), serial_oracle(&q, &k, &v, 1, None));
    }

    #[test]
    fn cp4_matches_oracle_with_p2p_rounds() {
        let mut rng = SeededRng::new(2);
        let (s, d, heads) = (16, 8, 2);
        let q = DenseTensor::randn(&[s, d], &mut rng);
        let k = DenseTensor::randn(&[s, d], &mut rng);
        let v = DenseTensor::randn(&[s, d], &mut rng);
        let qs = ShardedTensor::shard(&q, 0, 4, MeshAxis::Cp).unwrap();
        let ks = ShardedTensor::shard(&k, 0, 4, MeshAxis::Cp).unwrap();
        let vs = ShardedTensor::shard(&v, 0, 4, MeshAxis::Cp).unwrap();
        let mut trace = CollectiveTrace::new();
        let out = ring_attention_cp(&qs, &ks, &vs, heads, None, &mut trace).unwrap();
        let oracle = serial_oracle(&q, &k, &v, heads, None);
        assert!(out.gather().unwrap().max_abs_diff(&oracle).unwrap() < 1e-6);
        assert_eq!(trace.count(CollectiveKind::P2p), 3, "cp-1 rounds");
        assert_eq!(trace.bytes(CollectiveKind::P2p), 3 * 2 * (s * d * 8) as u64);
    }

    #[test]
    fn packed_block_mask_preserved_under_cp() {
        let mut rng = SeededRng::new(3);
        let (s, d) = (12, 4);
        let q = DenseTensor::randn(&[s, d], &mut rng);
        let k = DenseTensor::randn(&[s, d], &mut rng);
        let v = DenseTensor::randn(&[s, d], &mut rng);
        // two packed segments and two padding slots
        let mask = AttnMask::block_diagonal(s, &[6, 4]);
        let qs = ShardedTensor::shard(&q, 0, 2, MeshAxis::Cp).unwrap();
        let ks = ShardedTensor::shard(&k, 0, 2, MeshAxis::Cp).unwrap();
        let vs = ShardedTensor::shard(&v, 0, 2, MeshAxis::Cp).unwrap();
        let mut trace = CollectiveTrace::new();
        let out = ring_attention_cp(&qs, &ks, &vs, 1, Some(&mask), &mut trace).unwrap();
        let oracle = serial_oracle(&q, &k, &v, 1, Some(&mask));
        assert!(out.gather().unwrap().max_abs_diff(&oracle).unwrap() < 1e-6);
        // padding rows are exactly zero on both paths
        let gathered = out.gather().unwrap();
        for row in 10..12 {
            for c in 0..d {
                assert_eq!(gathered.get(&[row, c]), 0.0);
            }
        }
    }

    #[test]
    fn indivisible_sequence_rejected() {
        let q = DenseTensor::zeros(&[6, 4]);
        assert!(ShardedTensor::shard(&q, 0, 4, MeshAxis::Cp).is_err());
    }
}
