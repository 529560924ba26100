use crate::adaln::{adaln_lora_modulate, adaln_modulate, Modulation};
use crate::config::{ConditioningSet, DiTConfig, DitError};
use crate::embed::sinusoidal_features;
use vdt_diffusion::c_noise;
use vdt_numerics::{
    layer_norm, matmul, per_head_l2_normalize, reference_attention, DenseTensor, SeededRng,
};

pub const LN_EPS: f64 = 1e-6;

/// Tanh-approximation GELU; the derivative is closed-form, which the
/// gradient tape relies on.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[derive(Debug, Clone)]
pub enum AdalnParams {
    Full { w: DenseTensor, bias: DenseTensor },
    Lora { a: DenseTensor, b: DenseTensor, bias: DenseTensor },
}

/// Weights of one transformer block.
///
/// QK normalization scales are stored as `[1]` tensors so every learnable
/// quantity is uniformly a `DenseTensor` for the optimizer and the tape.
#[derive(Debug, Clone)]
pub struct DitBlockParams {
    pub adaln: AdalnParams,
    pub wq: DenseTensor,
    pub wk: DenseTensor,
    pub wv: DenseTensor,
    pub wo: DenseTensor,
    pub q_scale: DenseTensor,
    pub k_scale: DenseTensor,
    pub wq_cross: DenseTensor,
    pub wk_cross: DenseTensor,
    pub wv_cross: DenseTensor,
    pub wo_cross: DenseTensor,
    pub w1: DenseTensor,
    pub w2: DenseTensor,
}

impl DitBlockParams {
    /// Gaussian init at 1/sqrt(fan_in) scale; QK scales start at 1.
    pub fn init(config: &DiTConfig, rng: &mut SeededRng) -> Self {
        let d = config.hidden;
        let f = config.mlp_width();
        let cd = config.cross_dim;
        let w = |rows: usize, cols: usize, r: &mut SeededRng| {
            DenseTensor::randn(&[rows, cols], r).scale(1.0 / (rows as f64).sqrt())
        };
        let adaln = match config.adaln_mode {
            AdalnModeLocal::Full => AdalnParams::Full {
                w: w(d, 9 * d, rng),
                bias: DenseTensor::zeros(&[9 * d]),
            },
            AdalnModeLocal::Lora { rank } => AdalnParams::Lora {
                a: w(d, rank, rng),
                b: w(rank, 9 * d, rng),
                bias: DenseTensor::zeros(&[9 * d]),
            },
        };
        Self {
            adaln,
            wq: w(d, d, rng),
            wk: w(d, d, rng),
            wv: w(d, d, rng),
            wo: w(d, d, rng),
            q_scale: DenseTensor::filled(&[1], 1.0),
            k_scale: DenseTensor::filled(&[1], 1.0),
            wq_cross: w(d, d, rng),
            wk_cross: w(cd, d, rng),
            wv_cross: w(cd, d, rng),
            wo_cross: w(d, d, rng),
            w1: w(d, f, rng),
            w2: w(f, d, rng),
        }
    }

    pub fn modulation(&self, t_emb: &DenseTensor) -> Result<Modulation, DitError> {
        match &self.adaln {
            AdalnParams::Full { w, bias } => adaln_modulate(t_emb, w, bias),
            AdalnParams::Lora { a, b, bias } => adaln_lora_modulate(t_emb, a, b, bias),
        }
    }
}

use crate::config::AdalnMode as AdalnModeLocal;

/// Non-affine LayerNorm (gamma = 1, beta = 0); AdaLN supplies the affine.
pub fn layer_norm_noaffine(x: &DenseTensor) -> DenseTensor {
    let d = *x.shape().last().unwrap();
    let gamma = DenseTensor::filled(&[d], 1.0);
    let beta = DenseTensor::zeros(&[d]);
    layer_norm(x, &gamma, &beta, LN_EPS).expect("affine widths match")
}

/// `x * (1 + scale) + shift` with `scale`/`shift` broadcast over rows.
pub fn modulate_rows(
    x: &DenseTensor,
    scale: &DenseTensor,
    shift: &DenseTensor,
) -> DenseTensor {
    let d = *x.shape().last().unwrap();
    let mut out = x.clone();
    let sc = scale.data();
    let sh = shift.data();
    for row in out.data_mut().chunks_mut(d) {
        for j in 0..d {
            row[j] = row[j] * (1.0 + sc[j]) + sh[j];
        }
    }
    out
}

/// `x + gate (.) branch` with `gate` broadcast over rows.
pub fn gate_rows(x: &DenseTensor, gate: &DenseTensor, branch: &DenseTensor) -> DenseTensor {
    let d = *x.shape().last().unwrap();
    let mut out = x.clone();
    let g = gate.data();
    let b = branch.data();
    for (i, row) in out.data_mut().chunks_mut(d).enumerate() {
        for j in 0..d {
            row[j] += g[j] * b[i * d + j];
        }
    }
    out
}

/// Multi-head attention over already-projected q/k/v of width `d = heads * dh`:
/// heads are contiguous column chunks attended independently and re-concatenated.
pub fn multihead_attention(
    q: &DenseTensor,
    k: &DenseTensor,
    v: &DenseTensor,
    heads: usize,
) -> Result<DenseTensor, DitError> {
    let d = q.shape()[1];
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice_cols(h * dh, (h + 1) * dh)?;
        let kh = k.slice_cols(h * dh, (h + 1) * dh)?;
        let vh = v.slice_cols(h * dh, (h + 1) * dh)?;
        outs.push(reference_attention(&qh, &kh, &vh, None)?);
    }
    Ok(DenseTensor::concat_cols(&outs)?)
}

/// Applies the per-head L2 QK normalization to a `[s, d]` projection.
pub fn qk_normalize(
    x: &DenseTensor,
    heads: usize,
    scale: &DenseTensor,
) -> Result<DenseTensor, DitError> {
    let (s, d) = (x.shape()[0], x.shape()[1]);
    let as3d = x.reshape(&[s, heads, d / heads])?;
    let normed = per_head_l2_normalize(&as3d, scale.data()[0])?;
    Ok(normed.reshape(&[s, d])?)
}

/// One DiT block: AdaLN-modulated self-attention with per-head QK norm,
/// AdaLN-modulated cross-attention over the text embedding, and an
/// AdaLN-modulated GELU MLP, each gated into the residual stream.
pub fn dit_block_forward(
    x: &DenseTensor,
    cond: &ConditioningSet,
    config: &DiTConfig,
    params: &DitBlockParams,
) -> Result<DenseTensor, DitError> {
    dit_block_forward_at(x, c_noise(cond.sigma), cond, config, params)
}

/// Block forward with the log-noise coordinate supplied directly; the EDM
/// preconditioner hands this value through so the timestep embedding does
/// not recompute it from sigma.
pub fn dit_block_forward_at(
    x: &DenseTensor,
    cnoise: f64,
    cond: &ConditioningSet,
    config: &DiTConfig,
    params: &DitBlockParams,
) -> Result<DenseTensor, DitError> {
    cond.validate(config.cross_dim)?;
    let d = config.hidden;
    if x.rank() != 2 || x.shape()[1] != d {
        return Err(DitError::Conditioning(format!(
            "block input must be [s, {d}], got {:?}",
            x.shape()
        )));
    }
    let t_emb = sinusoidal_features(cnoise, d)?;
    let m = params.modulation(&t_emb)?;

    // self-attention branch
    let xn = layer_norm_noaffine(x);
    let xm = modulate_rows(&xn, &m.scale_self, &m.shift_self);
    let q = qk_normalize(&matmul(&xm, &params.wq)?, config.heads, &params.q_scale)?;
    let k = qk_normalize(&matmul(&xm, &params.wk)?, config.heads, &params.k_scale)?;
    let v = matmul(&xm, &params.wv)?;
    let attn = multihead_attention(&q, &k, &v, config.heads)?;
    let x = gate_rows(x, &m.gate_self, &matmul(&attn, &params.wo)?);

    // cross-attention branch over text KV
    let yn = layer_norm_noaffine(&x);
    let ym = modulate_rows(&yn, &m.scale_cross, &m.shift_cross);
    let qc = matmul(&ym, &params.wq_cross)?;
    let kc = matmul(&cond.text, &params.wk_cross)?;
    let vc = matmul(&cond.text, &params.wv_cross)?;
    let cattn = multihead_attention(&qc, &kc, &vc, config.heads)?;
    let x = gate_rows(&x, &m.gate_cross, &matmul(&cattn, &params.wo_cross)?);

    // MLP branch
    let zn = layer_norm_noaffine(&x);
    let zm = modulate_rows(&zn, &m.scale_mlp, &m.shift_mlp);
    let hidden = matmul(&zm, &params.w1)?.map(gelu);
    let mlp = matmul(&hidden, &params.w2)?;
    let out = gate_rows(&x, &m.gate_mlp, &mlp);

    if !out.is_finite() {
        return Err(DitError::Conditioning("non-finite block output".into()));
    }
    Ok(out)
}
