use crate::grid::MeshAxis;
use thiserror::Error;
use vdt_numerics::{DenseTensor, NumericsError};

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dit(#[from] vdt_dit::DitError),
    #[error(transparent)]
    Diffusion(#[from] vdt_diffusion::DiffusionError),
    #[error("extent {extent} of dim {dim} not divisible by {parts} shards")]
    Divisibility { dim: usize, extent: usize, parts: usize },
    #[error("tensor is not sharded along a dimension (required by {op})")]
    NotSharded { op: &'static str },
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("shard shapes inconsistent across devices: {0}")]
    ShardMismatch(String),
}

/// Where a tensor's data lives relative to the mesh axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Split into equal contiguous chunks along `dim`, one per device,
    /// in mesh order.
    Sharded { dim: usize },
    /// Every device holds the identical full tensor.
    Replicated,
}

/// Per-device shards of one logical global tensor. Concatenating the
/// shards along the sharded dim in mesh order reconstructs the global
/// tensor exactly.
#[derive(Debug, Clone)]
pub struct ShardedTensor {
    axis: MeshAxis,
    placement: Placement,
    global_shape: Vec<usize>,
    parts: Vec<DenseTensor>,
}

/// Slice `[from, to)` along an arbitrary dim of an n-d tensor.
pub fn slice_along(
    t: &DenseTensor,
    dim: usize,
    from: usize,
    to: usize,
) -> Result<DenseTensor, ParallelError> {
    let shape = t.shape();
    if dim >= shape.len() || to > shape[dim] || from >= to {
        return Err(ParallelError::Layout(format!(
            "slice_along dim {dim} range {from}..{to} invalid for shape {shape:?}"
        )));
    }
    let outer: usize = shape[..dim].iter().product();
    let inner: usize = shape[dim + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[dim] = to - from;
    let mut data = Vec::with_capacity(outer * (to - from) * inner);
    for o in 0..outer {
        let base = o * shape[dim] * inner;
        data.extend_from_slice(&t.data()[base + from * inner..base + to * inner]);
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

/// Concatenate along an arbitrary dim, in argument order.
pub fn concat_along(parts: &[DenseTensor], dim: usize) -> Result<DenseTensor, ParallelError> {
    let first = parts
        .first()
        .ok_or_else(|| ParallelError::Layout("concat_along of empty list".into()))?;
    let shape = first.shape();
    let outer: usize = shape[..dim].iter().product();
    let inner: usize = shape[dim + 1..].iter().product();
    let total_dim: usize = parts.iter().map(|p| p.shape()[dim]).sum();
    for p in parts {
        let ps = p.shape();
        if ps.len() != shape.len()
            || ps[..dim] != shape[..dim]
            || ps[dim + 1..] != shape[dim + 1..]
        {
            return Err(ParallelError::ShardMismatch(format!(
                "{:?} vs {:?} along dim {dim}",
                ps, shape
            )));
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[dim] = total_dim;
    let mut data = Vec::with_capacity(outer * total_dim * inner);
    for o in 0..outer {
        for p in parts {
            let e = p.shape()[dim];
            let base = o * e * inner;
            data.extend_from_slice(&p.data()[base..base + e * inner]);
        }
    }
    Ok(DenseTensor::new(out_shape, data)?)
}

impl ShardedTensor {
    /// Splits a global tensor into `parts` equal chunks along `dim`.
    pub fn shard(
        global: &DenseTensor,
        dim: usize,
        parts: usize,
        axis: MeshAxis,
    ) -> Result<Self, ParallelError> {
        let extent = global.shape()[dim];
        if parts == 0 || extent % parts != 0 {
            return Err(ParallelError::Divisibility { dim, extent, parts });
        }
        let chunk = extent / parts;
        let shards = (0..parts)
            .map(|r| slice_along(global, dim, r * chunk, (r + 1) * chunk))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            axis,
            placement: Placement::Sharded { dim },
            global_shape: global.shape().to_vec(),
            parts: shards,
        })
    }

    /// Every device holds the full tensor.
    pub fn replicate(global: &DenseTensor, parts: usize, axis: MeshAxis) -> Self {
        Self {
            axis,
            placement: Placement::Replicated,
            global_shape: global.shape().to_vec(),
            parts: vec![global.clone(); parts],
        }
    }

    /// Builds from existing per-device shards (used by ops that produce
    /// sharded outputs directly).
    pub fn from_parts(
        parts: Vec<DenseTensor>,
        dim: usize,
        axis: MeshAxis,
    ) -> Result<Self, ParallelError> {
        let joined = concat_along(&parts, dim)?;
        Ok(Self {
            axis,
            placement: Placement::Sharded { dim },
            global_shape: joined.shape().to_vec(),
            parts,
        })
    }

    pub fn axis(&self) -> MeshAxis {
        self.axis
    }

    pub fn placement(&self) -> Placement {
        self.placement
    }

    pub fn global_shape(&self) -> &[usize] {
        &self.global_shape
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, device: usize) -> &DenseTensor {
        &self.parts[device]
    }

    pub fn parts(&self) -> &[DenseTensor] {
        &self.parts
    }

    pub fn parts_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.parts
    }

    /// Reconstructs the global tensor: concatenation in mesh order for
    /// sharded placement, equality-checked copy for replicated.
    pub fn gather(&self) -> Result<DenseTensor, ParallelError> {
        match self.placement {
            Placement::Sharded { dim } => concat_along(&self.parts, dim),
            Placement::Replicated => {
                for p in &self.parts[1..] {
                    if p != &self.parts[0] {
                        return Err(ParallelError::ShardMismatch(
                            "replicated parts diverged".into(),
                        ));
                    }
                }
                Ok(self.parts[0].clone())
            }
        }
    }

    pub fn sharded_dim(&self) -> Option<usize> {
        match self.placement {
            Placement::Sharded { dim } => Some(dim),
            Placement::Replicated => None,
        }
    }
}
