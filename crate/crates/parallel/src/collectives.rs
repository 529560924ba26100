use crate::sharded::{concat_along, slice_along, ParallelError, Placement, ShardedTensor};
use crate::trace::{CollectiveKind, CollectiveTrace};
use crate::MeshAxis;
use vdt_numerics::DenseTensor;

/// All participants end up holding the identical concatenation of the
/// shards. Group size 1 is a no-op with zero trace bytes.
pub fn all_gather(
    x: &ShardedTensor,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let Placement::Sharded { .. } = x.placement() else {
        return Err(ParallelError::NotSharded { op: "all_gather" });
    };
    let global = x.gather()?;
    if x.n_parts() > 1 {
        trace.record(
            CollectiveKind::AllGather,
            x.axis(),
            (global.numel() * 8) as u64,
            x.n_parts(),
        );
    }
    Ok(ShardedTensor::replicate(&global, x.n_parts(), x.axis()))
}

/// Elementwise sum over devices in fixed device order, then scatter the
/// sum along `dim`. The sum of the output shards equals the all-device sum.
pub fn reduce_scatter(
    xs: &[DenseTensor],
    dim: usize,
    axis: MeshAxis,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let first = xs
        .first()
        .ok_or_else(|| ParallelError::Layout("reduce_scatter of empty device list".into()))?;
    let mut sum = first.clone();
    for x in &xs[1..] {
        sum = sum.add(x)?;
    }
    if xs.len() > 1 {
        trace.record(CollectiveKind::ReduceScatter, axis, (sum.numel() * 8) as u64, xs.len());
    }
    ShardedTensor::shard(&sum, dim, xs.len(), axis)
}

/// Classic equal-split all-to-all: each device splits its local shard into
/// `n` pieces along `split_dim`, sends piece `j` to device `j`, and
/// concatenates what it receives along `concat_dim` (the currently-sharded
/// dim) in mesh order. A pure permutation of the global elements,
/// invertible by the opposite call.
pub fn all_to_all(
    x: &ShardedTensor,
    split_dim: usize,
    concat_dim: usize,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let Placement::Sharded { dim } = x.placement() else {
        return Err(ParallelError::NotSharded { op: "all_to_all" });
    };
    if dim != concat_dim {
        return Err(ParallelError::Layout(format!(
            "all_to_all concat_dim {concat_dim} must be the sharded dim {dim}"
        )));
    }
    let n = x.n_parts();
    if n == 1 {
        return Ok(x.clone());
    }
    let split_extent = x.part(0).shape()[split_dim];
    if split_dim == concat_dim || split_extent % n != 0 {
        return Err(ParallelError::Divisibility {
            dim: split_dim,
            extent: split_extent,
            parts: n,
        });
    }
    let chunk = split_extent / n;
    // piece[r][j]: device r's slice destined for device j
    let mut new_parts = Vec::with_capacity(n);
    for j in 0..n {
        let received: Vec<DenseTensor> = (0..n)
            .map(|r| slice_along(x.part(r), split_dim, j * chunk, (j + 1) * chunk))
            .collect::<Result<_, _>>()?;
        new_parts.push(concat_along(&received, concat_dim)?);
    }
    let global_bytes: usize = x.global_shape().iter().product::<usize>() * 8;
    trace.record(CollectiveKind::AllToAll, x.axis(), global_bytes as u64, n);
    ShardedTensor::from_parts(new_parts, split_dim, x.axis())
}
