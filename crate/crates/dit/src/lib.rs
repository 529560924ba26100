//! Toy diffusion transformer: 3D patchify, AdaLN / AdaLN-LoRA timestep
//! conditioning, cross-attention text conditioning, per-head QK
//! normalization, parameter and FLOP accounting, and a fixed-graph
//! reverse-mode pass for gradient checks.

mod adaln;
mod block;
mod config;
mod counts;
mod embed;
mod grad;
mod model;
mod patchify;

pub use adaln::{adaln_lora_modulate, adaln_modulate, Modulation};
pub use block::{
    dit_block_forward, dit_block_forward_at, gate_rows, gelu, layer_norm_noaffine,
    modulate_rows, multihead_attention, qk_normalize, AdalnParams, DitBlockParams, LN_EPS,
};
pub use config::{AdalnMode, ConditioningSet, DiTConfig, DitError, PatchSpec};
pub use counts::{
    adaln_params_per_layer, count_flops, count_flops_forward, count_params, ParamBreakdown,
};
pub use embed::{sinusoidal_features, timestep_embed};
pub use grad::loss_and_param_grads;
pub use model::{null_conditioning, DitModel, EdmDitDenoiser};
pub use patchify::{patchify3d, unpatchify3d};
