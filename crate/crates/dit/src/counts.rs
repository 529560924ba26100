use crate::config::{AdalnMode, DiTConfig};
use serde::Serialize;

/// Parameter-count breakdown; all closed-form from the config.
///
/// Per-layer formulas (d = hidden, f = mlp width, c = cross_dim, r = rank):
///   self_attn  = 4*d^2 + 2            (q/k/v/o projections, 2 QK scales)
///   cross_attn = 2*d^2 + 2*c*d        (q/o on hidden, k/v on text)
///   mlp        = 2*d*f
///   adaln      = 9*d^2 + 9*d  (full)  |  10*d*r + 9*d  (lora)
/// The toy model has no input/output embedding tables (patch token width
/// equals hidden), so `embeddings` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub self_attn: u64,
    pub cross_attn: u64,
    pub mlp: u64,
    pub adaln: u64,
    pub embeddings: u64,
    pub total: u64,
}

/// AdaLN parameter count per layer for a hidden size and mode.
pub fn adaln_params_per_layer(hidden: usize, mode: AdalnMode) -> u64 {
    let d = hidden as u64;
    match mode {
        AdalnMode::Full => d * 9 * d + 9 * d,
        AdalnMode::Lora { rank } => {
            let r = rank as u64;
            d * r + r * 9 * d + 9 * d
        }
    }
}

pub fn count_params(config: &DiTConfig) -> ParamBreakdown {
    let l = config.layers as u64;
    let d = config.hidden as u64;
    let f = config.mlp_width() as u64;
    let c = config.cross_dim as u64;
    let self_attn = l * (4 * d * d + 2);
    let cross_attn = l * (2 * d * d + 2 * c * d);
    let mlp = l * 2 * d * f;
    let adaln = l * adaln_params_per_layer(config.hidden, config.adaln_mode);
    let embeddings = 0;
    ParamBreakdown {
        self_attn,
        cross_attn,
        mlp,
        adaln,
        embeddings,
        total: self_attn + cross_attn + mlp + adaln + embeddings,
    }
}

/// Forward-pass FLOPs for one step, counting GEMM multiply-adds as
/// 2*M*N*K and the attention cores as 4*s^2*d (scores + weighted sum);
/// elementwise work (norms, activations, modulations) is excluded.
pub fn count_flops_forward(
    config: &DiTConfig,
    seq_len: usize,
    text_len: usize,
    batch: usize,
) -> f64 {
    let d = config.hidden as f64;
    let f = config.mlp_width() as f64;
    let c = config.cross_dim as f64;
    let s = seq_len as f64;
    let t = text_len as f64;
    let adaln = match config.adaln_mode {
        AdalnMode::Full => 2.0 * d * 9.0 * d,
        AdalnMode::Lora { rank } => 2.0 * d * rank as f64 + 2.0 * rank as f64 * 9.0 * d,
    };
    let self_attn_proj = 4.0 * 2.0 * s * d * d;
    let self_attn_core = 4.0 * s * s * d;
    let cross_proj = 2.0 * 2.0 * s * d * d + 2.0 * 2.0 * t * c * d;
    let cross_core = 4.0 * s * t * d;
    let mlp = 2.0 * 2.0 * s * d * f;
    let per_layer = adaln + self_attn_proj + self_attn_core + cross_proj + cross_core + mlp;
    batch as f64 * config.layers as f64 * per_layer
}

/// Total forward+backward FLOPs; backward is counted as 2x forward.
pub fn count_flops(config: &DiTConfig, seq_len: usize, text_len: usize, batch: usize) -> f64 {
    3.0 * count_flops_forward(config, seq_len, text_len, batch)
}
