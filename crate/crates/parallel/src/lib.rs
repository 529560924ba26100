//! Deterministic in-process simulation of a device mesh executing tensor,
//! context (ring attention), and pipeline parallelism, plus the ST-DiT
//! hybrid layout cycle and context-parallel inference.
//!
//! Devices are simulated contexts stepped in a fixed order; communication
//! is buffer handoff plus an append to a [`CollectiveTrace`]. Every
//! parallel path is checked against the single-device kernels; time and
//! bandwidth live in the cost planner, not here.

mod collectives;
mod denoise;
mod grid;
mod pp;
mod ring;
mod sharded;
mod stdit;
mod tp;
mod trace;

pub use collectives::{all_gather, all_to_all, reduce_scatter};
pub use denoise::{cp_model_predict_eps, cp_parallel_denoise, CfgDenoiser};
pub use grid::{DeviceGrid, MeshAxis};
pub use pp::{pp_execute, CondStrategy, PpExecReport, PpSchedule};
pub use ring::ring_attention_cp;
pub use sharded::{concat_along, slice_along, ParallelError, Placement, ShardedTensor};
pub use stdit::{
    stdit_layer_forward, stdit_layer_oracle, stdit_transition, AttnProj, StditDims, StditLayout,
    StditLayerParams, StditMode, StditSharded, StditVariant,
};
pub use tp::{tp_linear_forward, TpActivation};
pub use trace::{CollectiveKind, CollectiveRecord, CollectiveTrace};
