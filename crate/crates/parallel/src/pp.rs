use crate::sharded::ParallelError;
use crate::trace::{CollectiveKind, CollectiveTrace};
use crate::MeshAxis;
use vdt_dit::{dit_block_forward_at, ConditioningSet, DitModel};
use vdt_numerics::DenseTensor;

/// How conditioning signals reach later pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondStrategy {
    /// Embeddings computed once at stage 0 and sent with the hidden states:
    /// every inter-stage message grows by the conditioning payload.
    CommunicateCond,
    /// Each stage recomputes the embeddings locally: no extra bytes, extra
    /// FLOPs logged per stage.
    RecomputeCond,
}

/// GPipe forward timeline. `slots[stage][time]` holds the microbatch index
/// a stage processes in that slot, or `None` when the stage idles (the
/// pipeline bubble).
#[derive(Debug, Clone)]
pub struct PpSchedule {
    pub stages: usize,
    pub microbatches: usize,
    pub slots: Vec<Vec<Option<usize>>>,
}

impl PpSchedule {
    fn gpipe(stages: usize, microbatches: usize) -> Self {
        let horizon = microbatches + stages - 1;
        let slots = (0..stages)
            .map(|s| {
                (0..horizon)
                    .map(|t| {
                        let mb = t as isize - s as isize;
                        (mb >= 0 && (mb as usize) < microbatches).then_some(mb as usize)
                    })
                    .collect()
            })
            .collect();
        Self { stages, microbatches, slots }
    }

    /// Idle slots before a stage's first microbatch.
    pub fn leading_bubble(&self, stage: usize) -> usize {
        self.slots[stage].iter().take_while(|s| s.is_none()).count()
    }

    /// Idle slots after a stage's last microbatch.
    pub fn trailing_bubble(&self, stage: usize) -> usize {
        self.slots[stage].iter().rev().take_while(|s| s.is_none()).count()
    }
}

#[derive(Debug)]
pub struct PpExecReport {
    /// Final-stage output per microbatch, in microbatch order.
    pub outputs: Vec<DenseTensor>,
    pub schedule: PpSchedule,
    /// Extra embedding-recompute FLOPs per stage (RecomputeCond only).
    pub recompute_flops: Vec<f64>,
}

/// Nominal cost of rebuilding the conditioning embeddings at one stage for
/// one microbatch: the timestep features plus every conditioning tensor,
/// two flops per element.
fn recompute_cost(cond: &ConditioningSet, hidden: usize) -> f64 {
    let cond_elems: usize =
        cond.text.numel() + cond.extras.iter().map(|(_, t)| t.numel()).sum::<usize>();
    2.0 * (hidden + cond_elems) as f64
}

/// GPipe execution of the block stack over `pp` stages.
///
/// Both conditioning strategies run identical math, so their outputs are
/// bit-identical; they differ only in the traced inter-stage payload
/// (CommunicateCond adds the conditioning bytes to every P2P message) and
/// in the recompute-FLOP ledger.
pub fn pp_execute(
    model: &DitModel,
    microbatches: &[DenseTensor],
    cond: &ConditioningSet,
    pp: usize,
    strategy: CondStrategy,
    trace: &mut CollectiveTrace,
) -> Result<PpExecReport, ParallelError> {
    let layers = model.blocks.len();
    if pp == 0 || layers % pp != 0 {
        return Err(ParallelError::Divisibility { dim: 0, extent: layers, parts: pp });
    }
    let per_stage = layers / pp;
    let cnoise = vdt_diffusion::c_noise(cond.sigma);
    let schedule = PpSchedule::gpipe(pp, microbatches.len());
    let mut recompute_flops = vec![0.0; pp];

    let mut outputs = Vec::with_capacity(microbatches.len());
    for mb in microbatches {
        let mut h = mb.clone();
        for stage in 0..pp {
            if stage > 0 {
                // hidden states cross the stage boundary; conditioning either
                // rides along or is rebuilt on arrival
                let hidden_bytes = (h.numel() * 8) as u64;
                let bytes = match strategy {
                    CondStrategy::CommunicateCond => {
                        hidden_bytes + cond.wire_bytes() + (model.config.hidden * 8) as u64
                    }
                    CondStrategy::RecomputeCond => {
                        recompute_flops[stage] += recompute_cost(cond, model.config.hidden);
                        hidden_bytes
                    }
                };
                trace.record(CollectiveKind::P2p, MeshAxis::Pp, bytes, 2);
            }
            for block in &model.blocks[stage * per_stage..(stage + 1) * per_stage] {
                h = dit_block_forward_at(&h, cnoise, cond, &model.config, block)?;
            }
        }
        outputs.push(h);
    }
    Ok(PpExecReport { outputs, schedule, recompute_flops })
}
