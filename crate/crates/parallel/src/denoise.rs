use crate::collectives::all_gather;
use crate::ring::ring_attention_cp;
use crate::sharded::{ParallelError, ShardedTensor};
use crate::trace::CollectiveTrace;
use crate::MeshAxis;
use vdt_diffusion::{
    c_in, c_noise, c_out, c_skip, cfg_combine, heun_sample, sigma_schedule, Denoiser,
    DiffusionError, EDMParams,
};
use vdt_dit::{
    gate_rows, gelu, layer_norm_noaffine, modulate_rows, multihead_attention, null_conditioning,
    qk_normalize, sinusoidal_features, ConditioningSet, DitBlockParams, DitModel, EdmDitDenoiser,
};
use vdt_numerics::{matmul, DenseTensor};

/// Classifier-free-guided epsilon predictor: the serial reference for the
/// context-parallel sampler. Batch size 2 in spirit: every noise level
/// evaluates a conditional and an unconditional branch.
pub struct CfgDenoiser<'a> {
    pub model: &'a DitModel,
    pub edm: EDMParams,
    pub scale: f64,
}

impl Denoiser<ConditioningSet> for CfgDenoiser<'_> {
    fn predict_eps(
        &self,
        z: &DenseTensor,
        sigma: f64,
        cond: &ConditioningSet,
    ) -> Result<DenseTensor, DiffusionError> {
        let inner = EdmDitDenoiser { model: self.model, edm: self.edm };
        let eps_cond = inner.predict_eps(z, sigma, cond)?;
        let uncond = null_conditioning(sigma, self.model.config.cross_dim);
        let eps_uncond = inner.predict_eps(z, sigma, &uncond)?;
        cfg_combine(&eps_uncond, &eps_cond, self.scale)
    }
}

/// One DiT block in SPMD form over sequence shards: every token-wise op
/// runs device-locally on the shard; self-attention is the ring; cross
/// attention stays local with the text KV replicated (context parallelism
/// is disabled for cross-attention by design).
fn cp_block_forward(
    x: &ShardedTensor,
    cnoise: f64,
    cond: &ConditioningSet,
    model: &DitModel,
    block: &DitBlockParams,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let cfg = &model.config;
    let t_emb = sinusoidal_features(cnoise, cfg.hidden)?;
    let m = block.modulation(&t_emb)?;
    let cp = x.n_parts();

    // self-attention: local projections, ring attention, local residual
    let mut q_parts = Vec::with_capacity(cp);
    let mut k_parts = Vec::with_capacity(cp);
    let mut v_parts = Vec::with_capacity(cp);
    let mut xm_parts = Vec::with_capacity(cp);
    for dev in 0..cp {
        let xn = layer_norm_noaffine(x.part(dev));
        let xm = modulate_rows(&xn, &m.scale_self, &m.shift_self);
        q_parts.push(qk_normalize(&matmul(&xm, &block.wq)?, cfg.heads, &block.q_scale)?);
        k_parts.push(qk_normalize(&matmul(&xm, &block.wk)?, cfg.heads, &block.k_scale)?);
        v_parts.push(matmul(&xm, &block.wv)?);
        xm_parts.push(xm);
    }
    let qs = ShardedTensor::from_parts(q_parts, 0, MeshAxis::Cp)?;
    let ks = ShardedTensor::from_parts(k_parts, 0, MeshAxis::Cp)?;
    let vs = ShardedTensor::from_parts(v_parts, 0, MeshAxis::Cp)?;
    let attn = ring_attention_cp(&qs, &ks, &vs, cfg.heads, None, trace)?;

    let mut parts = Vec::with_capacity(cp);
    for dev in 0..cp {
        let x1 = gate_rows(x.part(dev), &m.gate_self, &matmul(attn.part(dev), &block.wo)?);

        // cross-attention: text KV replicated, no collective
        let yn = layer_norm_noaffine(&x1);
        let ym = modulate_rows(&yn, &m.scale_cross, &m.shift_cross);
        let qc = matmul(&ym, &block.wq_cross)?;
        let kc = matmul(&cond.text, &block.wk_cross)?;
        let vc = matmul(&cond.text, &block.wv_cross)?;
        let cattn = multihead_attention(&qc, &kc, &vc, cfg.heads)?;
        let x2 = gate_rows(&x1, &m.gate_cross, &matmul(&cattn, &block.wo_cross)?);

        // MLP
        let zn = layer_norm_noaffine(&x2);
        let zm = modulate_rows(&zn, &m.scale_mlp, &m.shift_mlp);
        let hidden = matmul(&zm, &block.w1)?.map(gelu);
        let mlp = matmul(&hidden, &block.w2)?;
        parts.push(gate_rows(&x2, &m.gate_mlp, &mlp));
    }
    ShardedTensor::from_parts(parts, 0, MeshAxis::Cp)
}

/// EDM-preconditioned epsilon prediction over sequence shards, mirroring
/// the serial wrapper's arithmetic shard-by-shard.
pub fn cp_model_predict_eps(
    model: &DitModel,
    edm: &EDMParams,
    z: &ShardedTensor,
    sigma: f64,
    cond: &ConditioningSet,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let sd = edm.sigma_data;
    let cin = c_in(sigma, sd);
    let cs = c_skip(sigma, sd);
    let co = c_out(sigma, sd);
    let cn = c_noise(sigma);
    let cp = z.n_parts();
    let scaled_parts: Vec<DenseTensor> = z.parts().iter().map(|p| p.scale(cin)).collect();
    let mut h = ShardedTensor::from_parts(scaled_parts, 0, MeshAxis::Cp)?;
    for block in &model.blocks {
        h = cp_block_forward(&h, cn, cond, model, block, trace)?;
    }
    let mut eps_parts = Vec::with_capacity(cp);
    for dev in 0..cp {
        let d = z.part(dev).scale(cs).add_scaled(h.part(dev), co)?;
        eps_parts.push(z.part(dev).sub(&d)?.scale(1.0 / sigma));
    }
    ShardedTensor::from_parts(eps_parts, 0, MeshAxis::Cp)
}

fn guided_eps(
    model: &DitModel,
    edm: &EDMParams,
    z: &ShardedTensor,
    sigma: f64,
    cond: &ConditioningSet,
    uncond: &ConditioningSet,
    scale: f64,
    trace: &mut CollectiveTrace,
) -> Result<ShardedTensor, ParallelError> {
    let eps_c = cp_model_predict_eps(model, edm, z, sigma, cond, trace)?;
    let eps_u = cp_model_predict_eps(model, edm, z, sigma, uncond, trace)?;
    let parts = eps_u
        .parts()
        .iter()
        .zip(eps_c.parts())
        .map(|(u, c)| cfg_combine(u, c, scale))
        .collect::<Result<Vec<_>, _>>()?;
    ShardedTensor::from_parts(parts, 0, MeshAxis::Cp)
}

/// Context-parallel Heun sampling with classifier-free guidance.
///
/// The noise latents are partitioned along the sequence dimension; every
/// denoising step runs the model in ring-CP mode on the shards and applies
/// the guidance combination shard-locally. After the last step the chunks
/// are gathered and concatenated. `cp = 1` takes the serial path and is
/// bit-identical to [`heun_sample`] with a [`CfgDenoiser`].
pub fn cp_parallel_denoise(
    model: &DitModel,
    edm: &EDMParams,
    noise: &DenseTensor,
    n_steps: usize,
    cond: &ConditioningSet,
    cfg_scale: f64,
    cp: usize,
    trace: &mut CollectiveTrace,
) -> Result<DenseTensor, ParallelError> {
    if cp == 1 {
        let serial = CfgDenoiser { model, edm: *edm, scale: cfg_scale };
        return Ok(heun_sample(&serial, noise, n_steps, cond, edm)?);
    }
    let tokens = noise.shape()[0];
    if tokens % cp != 0 {
        return Err(ParallelError::Divisibility { dim: 0, extent: tokens, parts: cp });
    }
    let uncond = null_conditioning(cond.sigma, model.config.cross_dim);
    let sigmas = sigma_schedule(n_steps, edm)?;
    let mut z = ShardedTensor::shard(noise, 0, cp, MeshAxis::Cp)?;
    for i in 0..n_steps {
        trace.begin_step(i as u64);
        let (s_cur, s_next) = (sigmas[i], sigmas[i + 1]);
        let h = s_next - s_cur;
        let d_cur = guided_eps(model, edm, &z, s_cur, cond, &uncond, cfg_scale, trace)?;
        let euler_parts: Vec<DenseTensor> = z
            .parts()
            .iter()
            .zip(d_cur.parts())
            .map(|(zp, dp)| zp.add_scaled(dp, h))
            .collect::<Result<_, _>>()?;
        let z_euler = ShardedTensor::from_parts(euler_parts, 0, MeshAxis::Cp)?;
        z = if s_next > 0.0 {
            let d_next =
                guided_eps(model, edm, &z_euler, s_next, cond, &uncond, cfg_scale, trace)?;
            let parts: Vec<DenseTensor> = z
                .parts()
                .iter()
                .zip(d_cur.parts().iter().zip(d_next.parts()))
                .map(|(zp, (dc, dn))| {
                    let avg = dc.add(dn)?.scale(0.5);
                    zp.add_scaled(&avg, h)
                })
                .collect::<Result<_, _>>()?;
            ShardedTensor::from_parts(parts, 0, MeshAxis::Cp)?
        } else {
            z_euler
        };
        for part in z.parts() {
            if !part.is_finite() {
                return Err(ParallelError::Layout(format!(
                    "non-finite latent at denoising step {i}"
                )));
            }
        }
    }
    // denoised chunks are gathered and concatenated into the full sequence
    let gathered = all_gather(&z, trace)?;
    Ok(gathered.gather()?)
}
