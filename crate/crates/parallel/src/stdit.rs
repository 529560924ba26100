use crate::ring::ring_attention_cp;
use crate::sharded::{concat_along, slice_along, ParallelError, ShardedTensor};
use crate::trace::{CollectiveKind, CollectiveTrace};
use crate::MeshAxis;
use vdt_dit::multihead_attention;
use vdt_numerics::{matmul, DenseTensor, SeededRng};

/// The three ST-DiT activation layouts. Shapes per device:
///   FullSeq  [b, (h*w*t)/cp, d]   sequence-sharded, t-major order
///   Spatial  [(b*t)/cp, h*w, d]   whole frames, b-major frame order
///   Temporal [(b*h*w)/cp, t, d]   whole pixel tracks, b-major track order
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StditVariant {
    FullSeq,
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StditDims {
    pub b: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
}

impl StditDims {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn seq(&self) -> usize {
        self.t * self.hw()
    }

    pub fn tokens(&self) -> usize {
        self.b * self.seq()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StditLayout {
    pub variant: StditVariant,
    pub dims: StditDims,
    pub cp: usize,
}

impl StditLayout {
    pub fn new(variant: StditVariant, dims: StditDims, cp: usize) -> Result<Self, ParallelError> {
        let layout = Self { variant, dims, cp };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), ParallelError> {
        let (sharded_extent, dim) = match self.variant {
            StditVariant::FullSeq => (self.dims.seq(), 1),
            StditVariant::Spatial => (self.dims.b * self.dims.t, 0),
            StditVariant::Temporal => (self.dims.b * self.dims.hw(), 0),
        };
        if self.cp == 0 || sharded_extent % self.cp != 0 {
            return Err(ParallelError::Divisibility {
                dim,
                extent: sharded_extent,
                parts: self.cp,
            });
        }
        Ok(())
    }

    /// Per-device shard shape.
    pub fn local_shape(&self) -> [usize; 3] {
        let d = self.dims.d;
        match self.variant {
            StditVariant::FullSeq => [self.dims.b, self.dims.seq() / self.cp, d],
            StditVariant::Spatial => [self.dims.b * self.dims.t / self.cp, self.dims.hw(), d],
            StditVariant::Temporal => [self.dims.b * self.dims.hw() / self.cp, self.dims.t, d],
        }
    }

    fn sharded_dim(&self) -> usize {
        match self.variant {
            StditVariant::FullSeq => 1,
            StditVariant::Spatial | StditVariant::Temporal => 0,
        }
    }
}

/// A sharded activation tensor tagged with its ST-DiT layout.
#[derive(Debug, Clone)]
pub struct StditSharded {
    pub layout: StditLayout,
    pub data: ShardedTensor,
}

impl StditSharded {
    /// Shards a canonical `[b, t, h*w, d]` tensor into the given layout.
    pub fn from_canonical(
        canonical: &DenseTensor,
        layout: StditLayout,
    ) -> Result<Self, ParallelError> {
        layout.validate()?;
        let global = canonical_to_global(canonical, &layout)?;
        let data = ShardedTensor::shard(&global, layout.sharded_dim(), layout.cp, MeshAxis::Cp)?;
        Ok(Self { layout, data })
    }

    /// Reconstructs the canonical `[b, t, h*w, d]` tensor.
    pub fn to_canonical(&self) -> Result<DenseTensor, ParallelError> {
        global_to_canonical(&self.data.gather()?, &self.layout)
    }

    /// Gathers the FullSeq `[b, seq, d]` view (for oracle comparison).
    pub fn gather_fullseq(&self) -> Result<DenseTensor, ParallelError> {
        let c = self.to_canonical()?;
        let dims = self.layout.dims;
        Ok(c.reshape(&[dims.b, dims.seq(), dims.d])?)
    }
}

/// Layout-specific global tensor from the canonical `[b, t, hw, d]` form.
fn canonical_to_global(
    canonical: &DenseTensor,
    layout: &StditLayout,
) -> Result<DenseTensor, ParallelError> {
    let StditDims { b, t, d, .. } = layout.dims;
    let hw = layout.dims.hw();
    if canonical.shape() != [b, t, hw, d] {
        return Err(ParallelError::Layout(format!(
            "canonical shape {:?} != [{b}, {t}, {hw}, {d}]",
            canonical.shape()
        )));
    }
    let g = match layout.variant {
        // [b, t*hw, d]: t-major sequence is exactly the row-major reshape
        StditVariant::FullSeq => canonical.reshape(&[b, t * hw, d])?,
        // [b*t, hw, d]: frame phi = bi*t + ti, also a plain reshape
        StditVariant::Spatial => canonical.reshape(&[b * t, hw, d])?,
        // [b*hw, t, d]: track psi = bi*hw + p needs the (t, hw) transpose
        StditVariant::Temporal => {
            let mut out = DenseTensor::zeros(&[b * hw, t, d]);
            for bi in 0..b {
                for ti in 0..t {
                    for p in 0..hw {
                        for c in 0..d {
                            let v = canonical.get(&[bi, ti, p, c]);
                            out.set(&[bi * hw + p, ti, c], v);
                        }
                    }
                }
            }
            out
        }
    };
    Ok(g)
}

fn global_to_canonical(
    global: &DenseTensor,
    layout: &StditLayout,
) -> Result<DenseTensor, ParallelError> {
    let StditDims { b, t, d, .. } = layout.dims;
    let hw = layout.dims.hw();
    let c = match layout.variant {
        StditVariant::FullSeq => global.reshape(&[b, t, hw, d])?,
        StditVariant::Spatial => global.reshape(&[b, t, hw, d])?,
        StditVariant::Temporal => {
            let mut out = DenseTensor::zeros(&[b, t, hw, d]);
            for bi in 0..b {
                for p in 0..hw {
                    for ti in 0..t {
                        for ci in 0..d {
                            let v = global.get(&[bi * hw + p, ti, ci]);
                            out.set(&[bi, ti, p, ci], v);
                        }
                    }
                }
            }
            out
        }
    };
    Ok(c)
}

fn adjacent(from: StditVariant, to: StditVariant) -> bool {
    matches!(
        (from, to),
        (StditVariant::FullSeq, StditVariant::Spatial)
            | (StditVariant::Spatial, StditVariant::Temporal)
            | (StditVariant::Temporal, StditVariant::FullSeq)
    )
}

/// Moves a tensor to the next layout in the cycle
/// FullSeq -> Spatial -> Temporal -> FullSeq.
///
/// With cp = 1 this is a local reshape with zero collective bytes; with
/// cp > 1 the redistribution is one fused all-to-all over the cp group
/// (every device exchanges the tokens leaving its shard), traced as a
/// single event carrying the full tensor.
pub fn stdit_transition(
    x: &StditSharded,
    to: StditVariant,
    trace: &mut CollectiveTrace,
) -> Result<StditSharded, ParallelError> {
    if !adjacent(x.layout.variant, to) {
        return Err(ParallelError::Layout(format!(
            "transition {:?} -> {to:?} is not adjacent in the layout cycle",
            x.layout.variant
        )));
    }
    let target = StditLayout::new(to, x.layout.dims, x.layout.cp)?;
    let canonical = x.to_canonical()?;
    let out = StditSharded::from_canonical(&canonical, target)?;
    if x.layout.cp > 1 {
        trace.record(
            CollectiveKind::AllToAll,
            MeshAxis::Cp,
            (x.layout.dims.tokens() * x.layout.dims.d * 8) as u64,
            x.layout.cp,
        );
    }
    Ok(out)
}

/// Projection weights of one attention module.
#[derive(Debug, Clone)]
pub struct AttnProj {
    pub wq: DenseTensor,
    pub wk: DenseTensor,
    pub wv: DenseTensor,
    pub wo: DenseTensor,
}

impl AttnProj {
    pub fn init(d: usize, rng: &mut SeededRng) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        Self {
            wq: DenseTensor::randn(&[d, d], rng).scale(scale),
            wk: DenseTensor::randn(&[d, d], rng).scale(scale),
            wv: DenseTensor::randn(&[d, d], rng).scale(scale),
            wo: DenseTensor::randn(&[d, d], rng).scale(scale),
        }
    }
}

/// Parameters of one ST-DiT layer: full, spatial, and temporal attentions.
#[derive(Debug, Clone)]
pub struct StditLayerParams {
    pub heads: usize,
    pub full: AttnProj,
    pub spatial: AttnProj,
    pub temporal: AttnProj,
}

impl StditLayerParams {
    pub fn init(d: usize, heads: usize, rng: &mut SeededRng) -> Self {
        Self {
            heads,
            full: AttnProj::init(d, rng),
            spatial: AttnProj::init(d, rng),
            temporal: AttnProj::init(d, rng),
        }
    }
}

/// Parallelization mode for the spatial/temporal attentions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StditMode {
    /// CP ring for full attention, layout transitions + device-local
    /// compute for spatial and temporal: 3 all-to-alls per layer.
    Hybrid,
    /// Ulysses-style baseline: 4 all-to-alls per attention, 12 per layer.
    /// Functionally identical output; exists for cost accounting.
    Ulysses,
}

fn residual_attention(
    x: &DenseTensor,
    proj: &AttnProj,
    heads: usize,
) -> Result<DenseTensor, ParallelError> {
    let q = matmul(x, &proj.wq)?;
    let k = matmul(x, &proj.wk)?;
    let v = matmul(x, &proj.wv)?;
    let attn = multihead_attention(&q, &k, &v, heads)?;
    Ok(x.add(&matmul(&attn, &proj.wo)?)?)
}

/// Row-block attention applied device-locally: every `[rows, cols, d]`
/// shard attends within each row independently. No collectives.
fn local_rowwise_attention(
    part: &DenseTensor,
    proj: &AttnProj,
    heads: usize,
) -> Result<DenseTensor, ParallelError> {
    let (rows, cols, d) = (part.shape()[0], part.shape()[1], part.shape()[2]);
    let mut out_rows = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = slice_along(part, 0, r, r + 1)?.reshape(&[cols, d])?;
        out_rows.push(residual_attention(&row, proj, heads)?.reshape(&[1, cols, d])?);
    }
    concat_along(&out_rows, 0)
}

/// Single-device reference for one ST-DiT layer on the unsharded
/// `[b, seq, d]` tensor: full attention per batch element, then spatial
/// attention per frame, then temporal attention per pixel track, each with
/// a residual connection.
pub fn stdit_layer_oracle(
    x: &DenseTensor,
    dims: StditDims,
    params: &StditLayerParams,
) -> Result<DenseTensor, ParallelError> {
    let (b, seq, d) = (dims.b, dims.seq(), dims.d);
    if x.shape() != [b, seq, d] {
        return Err(ParallelError::Layout(format!(
            "oracle input {:?} != [{b}, {seq}, {d}]",
            x.shape()
        )));
    }
    // full attention over each batch element's whole sequence
    let mut full_parts = Vec::with_capacity(b);
    for bi in 0..b {
        let xb = slice_along(x, 0, bi, bi + 1)?.reshape(&[seq, d])?;
        full_parts.push(residual_attention(&xb, &params.full, params.heads)?.reshape(&[1, seq, d])?);
    }
    let after_full = concat_along(&full_parts, 0)?;

    // spatial: within each (b, t) frame
    let canonical = after_full.reshape(&[b, dims.t, dims.hw(), d])?;
    let frames = canonical.reshape(&[b * dims.t, dims.hw(), d])?;
    let after_spatial = local_rowwise_attention(&frames, &params.spatial, params.heads)?;

    // temporal: within each (b, h, w) track
    let spatial_layout =
        StditLayout::new(StditVariant::Spatial, dims, 1)?;
    let canon2 = global_to_canonical(&after_spatial, &spatial_layout)?;
    let temporal_layout = StditLayout::new(StditVariant::Temporal, dims, 1)?;
    let tracks = canonical_to_global(&canon2, &temporal_layout)?;
    let after_temporal = local_rowwise_attention(&tracks, &params.temporal, params.heads)?;

    let canon3 = global_to_canonical(&after_temporal, &temporal_layout)?;
    Ok(canon3.reshape(&[b, seq, d])?)
}

/// One ST-DiT layer on a FullSeq-sharded input, returning a
/// FullSeq-sharded output.
///
/// Hybrid mode: full attention runs as ring CP; the layout cycle then
/// routes spatial and temporal attention to device-local compute with
/// exactly three traced all-to-alls and no collective inside either
/// attention. Ulysses mode computes the same result but accounts four
/// all-to-alls per attention.
pub fn stdit_layer_forward(
    x: &StditSharded,
    params: &StditLayerParams,
    mode: StditMode,
    trace: &mut CollectiveTrace,
) -> Result<StditSharded, ParallelError> {
    if x.layout.variant != StditVariant::FullSeq {
        return Err(ParallelError::Layout("layer input must be FullSeq-sharded".into()));
    }
    let dims = x.layout.dims;
    let cp = x.layout.cp;
    match mode {
        StditMode::Hybrid => {
            // full attention via ring CP, batch elements in lockstep
            let after_full = hybrid_full_attention(x, params, trace)?;
            let spatial = stdit_transition(&after_full, StditVariant::Spatial, trace)?;
            let after_spatial = map_parts_local(&spatial, |part| {
                local_rowwise_attention(part, &params.spatial, params.heads)
            })?;
            let temporal = stdit_transition(&after_spatial, StditVariant::Temporal, trace)?;
            let after_temporal = map_parts_local(&temporal, |part| {
                local_rowwise_attention(part, &params.temporal, params.heads)
            })?;
            stdit_transition(&after_temporal, StditVariant::FullSeq, trace)
        }
        StditMode::Ulysses => {
            // the baseline keeps the FullSeq layout and pays 4 a2a per attention
            let bytes = (dims.tokens() * dims.d * 8) as u64;
            let log_attention_a2a = |trace: &mut CollectiveTrace| {
                if cp > 1 {
                    for _ in 0..4 {
                        trace.record(CollectiveKind::AllToAll, MeshAxis::Cp, bytes, cp);
                    }
                }
            };
            let mut canonical = x.to_canonical()?;
            let fullseq = canonical.reshape(&[dims.b, dims.seq(), dims.d])?;
            log_attention_a2a(trace);
            let mut full_parts = Vec::with_capacity(dims.b);
            for bi in 0..dims.b {
                let xb = slice_along(&fullseq, 0, bi, bi + 1)?.reshape(&[dims.seq(), dims.d])?;
                full_parts.push(
                    residual_attention(&xb, &params.full, params.heads)?
                        .reshape(&[1, dims.seq(), dims.d])?,
                );
            }
            canonical =
                concat_along(&full_parts, 0)?.reshape(&[dims.b, dims.t, dims.hw(), dims.d])?;

            log_attention_a2a(trace);
            let frames = canonical.reshape(&[dims.b * dims.t, dims.hw(), dims.d])?;
            let after_spatial = local_rowwise_attention(&frames, &params.spatial, params.heads)?;
            canonical = after_spatial.reshape(&[dims.b, dims.t, dims.hw(), dims.d])?;

            log_attention_a2a(trace);
            let temporal_layout = StditLayout::new(StditVariant::Temporal, dims, 1)?;
            let tracks = canonical_to_global(&canonical, &temporal_layout)?;
            let after_temporal =
                local_rowwise_attention(&tracks, &params.temporal, params.heads)?;
            canonical = global_to_canonical(&after_temporal, &temporal_layout)?;

            StditSharded::from_canonical(&canonical, x.layout)
        }
    }
}

/// Ring-CP full attention with local projections and residual add.
fn hybrid_full_attention(
    x: &StditSharded,
    params: &StditLayerParams,
    trace: &mut CollectiveTrace,
) -> Result<StditSharded, ParallelError> {
    let dims = x.layout.dims;
    let cp = x.layout.cp;
    let s_local = dims.seq() / cp;
    let d = dims.d;
    // per batch element: project locally, ring-attend, project out, residual
    let mut per_dev_rows: Vec<Vec<DenseTensor>> = vec![Vec::with_capacity(dims.b); cp];
    for bi in 0..dims.b {
        let mut q_parts = Vec::with_capacity(cp);
        let mut k_parts = Vec::with_capacity(cp);
        let mut v_parts = Vec::with_capacity(cp);
        let mut x_parts = Vec::with_capacity(cp);
        for dev in 0..cp {
            let xb = slice_along(x.data.part(dev), 0, bi, bi + 1)?.reshape(&[s_local, d])?;
            q_parts.push(matmul(&xb, &params.full.wq)?);
            k_parts.push(matmul(&xb, &params.full.wk)?);
            v_parts.push(matmul(&xb, &params.full.wv)?);
            x_parts.push(xb);
        }
        let qs = ShardedTensor::from_parts(q_parts, 0, MeshAxis::Cp)?;
        let ks = ShardedTensor::from_parts(k_parts, 0, MeshAxis::Cp)?;
        let vs = ShardedTensor::from_parts(v_parts, 0, MeshAxis::Cp)?;
        let attn = ring_attention_cp(&qs, &ks, &vs, params.heads, None, trace)?;
        for dev in 0..cp {
            let out = x_parts[dev].add(&matmul(attn.part(dev), &params.full.wo)?)?;
            per_dev_rows[dev].push(out.reshape(&[1, s_local, d])?);
        }
    }
    let parts: Vec<DenseTensor> = per_dev_rows
        .into_iter()
        .map(|rows| concat_along(&rows, 0))
        .collect::<Result<_, _>>()?;
    let data = ShardedTensor::from_parts(parts, 1, MeshAxis::Cp)?;
    Ok(StditSharded { layout: x.layout, data })
}

fn map_parts_local(
    x: &StditSharded,
    f: impl Fn(&DenseTensor) -> Result<DenseTensor, ParallelError>,
) -> Result<StditSharded, ParallelError> {
    let parts: Vec<DenseTensor> = x.data.parts().iter().map(&f).collect::<Result<_, _>>()?;
    let data = ShardedTensor::from_parts(parts, x.layout.sharded_dim(), MeshAxis::Cp)?;
    Ok(StditSharded { layout: x.layout, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims_small() -> StditDims {
        StditDims { b: 2, t: 4, h: 2, w: 2, d: 8 }
    }

    fn random_canonical(dims: StditDims, seed: u64) -> DenseTensor {
        let mut rng = SeededRng::new(seed);
        DenseTensor::randn(&[dims.b, dims.t, dims.hw(), dims.d], &mut rng)
    }

    #[test]
    fn local_shapes_match_paper_arithmetic() {
        // b=2, h=4, w=4, t=8, d=16, cp=4
        let dims = StditDims { b: 2, t: 8, h: 4, w: 4, d: 16 };
        let full = StditLayout::new(StditVariant::FullSeq, dims, 4).unwrap();
        assert_eq!(full.local_shape(), [2, 32, 16]);
        let spatial = StditLayout::new(StditVariant::Spatial, dims, 4).unwrap();
        assert_eq!(spatial.local_shape(), [4, 16, 16]);
        let temporal = StditLayout::new(StditVariant::Temporal, dims, 4).unwrap();
        assert_eq!(temporal.local_shape(), [8, 8, 16]);
    }

    #[test]
    fn transition_cp1_is_local_and_silent() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 1);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 1).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        let y = stdit_transition(&x, StditVariant::Spatial, &mut trace).unwrap();
        assert!(trace.is_empty());
        assert_eq!(y.to_canonical().unwrap(), canonical);
    }

    #[test]
    fn cycle_restores_sharding_bit_exactly() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 2);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 2).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        let s = stdit_transition(&x, StditVariant::Spatial, &mut trace).unwrap();
        let t = stdit_transition(&s, StditVariant::Temporal, &mut trace).unwrap();
        let f = stdit_transition(&t, StditVariant::FullSeq, &mut trace).unwrap();
        assert_eq!(trace.count(CollectiveKind::AllToAll), 3);
        for dev in 0..2 {
            assert_eq!(f.data.part(dev), x.data.part(dev), "device {dev}");
        }
    }

    #[test]
    fn non_adjacent_transition_rejected() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 3);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 1).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        assert!(stdit_transition(&x, StditVariant::Temporal, &mut trace).is_err());
    }

    #[test]
    fn hybrid_cp1_equals_oracle_exactly() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 4);
        let mut rng = SeededRng::new(5);
        let params = StditLayerParams::init(dims.d, 2, &mut rng);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 1).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        let y = stdit_layer_forward(&x, &params, StditMode::Hybrid, &mut trace).unwrap();
        assert_eq!(trace.total_bytes(), 0);
        let fullseq = canonical.reshape(&[dims.b, dims.seq(), dims.d]).unwrap();
        let oracle = stdit_layer_oracle(&fullseq, dims, &params).unwrap();
        assert_eq!(y.gather_fullseq().unwrap(), oracle);
    }

    #[test]
    fn hybrid_cp2_matches_oracle_with_three_a2a() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 6);
        let mut rng = SeededRng::new(7);
        let params = StditLayerParams::init(dims.d, 2, &mut rng);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 2).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        let y = stdit_layer_forward(&x, &params, StditMode::Hybrid, &mut trace).unwrap();
        assert_eq!(trace.count(CollectiveKind::AllToAll), 3, "one per transition");
        let fullseq = canonical.reshape(&[dims.b, dims.seq(), dims.d]).unwrap();
        let oracle = stdit_layer_oracle(&fullseq, dims, &params).unwrap();
        assert!(y.gather_fullseq().unwrap().max_abs_diff(&oracle).unwrap() < 1e-6);
    }

    #[test]
    fn ulysses_mode_counts_twelve_a2a() {
        let dims = dims_small();
        let canonical = random_canonical(dims, 8);
        let mut rng = SeededRng::new(9);
        let params = StditLayerParams::init(dims.d, 2, &mut rng);
        let layout = StditLayout::new(StditVariant::FullSeq, dims, 2).unwrap();
        let x = StditSharded::from_canonical(&canonical, layout).unwrap();
        let mut trace = CollectiveTrace::new();
        let y = stdit_layer_forward(&x, &params, StditMode::Ulysses, &mut trace).unwrap();
        assert_eq!(trace.count(CollectiveKind::AllToAll), 12, "4 per attention x 3");
        let fullseq = canonical.reshape(&[dims.b, dims.seq(), dims.d]).unwrap();
        let oracle = stdit_layer_oracle(&fullseq, dims, &params).unwrap();
        assert!(y.gather_fullseq().unwrap().max_abs_diff(&oracle).unwrap() < 1e-9);
    }
}
