use crate::block::{dit_block_forward_at, DitBlockParams};
use crate::config::{ConditioningSet, DiTConfig, DitError};
use vdt_diffusion::{edm_precondition, Denoiser, DiffusionError, EDMParams, RawNet};
use vdt_numerics::{DenseTensor, SeededRng};

/// The toy diffusion transformer: a stack of blocks over `[s, hidden]`
/// token states. The raw network's output shape equals its input shape, so
/// patch sequences whose token width equals `hidden` feed it directly.
#[derive(Debug, Clone)]
pub struct DitModel {
    pub config: DiTConfig,
    pub blocks: Vec<DitBlockParams>,
}

impl DitModel {
    pub fn init(config: DiTConfig, rng: &mut SeededRng) -> Result<Self, DitError> {
        config.validate()?;
        let blocks = (0..config.layers)
            .map(|i| DitBlockParams::init(&config, &mut rng.split(i as u64)))
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn forward(
        &self,
        x: &DenseTensor,
        cnoise: f64,
        cond: &ConditioningSet,
    ) -> Result<DenseTensor, DitError> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = dit_block_forward_at(&h, cnoise, cond, &self.config, block)?;
        }
        Ok(h)
    }

    /// Every learnable tensor in a fixed canonical order (block-major).
    /// Gradient and optimizer state vectors align with this order.
    pub fn params_flat(&self) -> Vec<&DenseTensor> {
        self.blocks.iter().flat_map(block_params_flat).collect()
    }

    pub fn params_flat_mut(&mut self) -> Vec<&mut DenseTensor> {
        self.blocks.iter_mut().flat_map(block_params_flat_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params_flat().iter().map(|t| t.numel()).sum()
    }

    /// In-place SGD step over all parameters.
    pub fn sgd_step(&mut self, grads: &[DenseTensor], lr: f64) {
        let params = self.params_flat_mut();
        assert_eq!(params.len(), grads.len(), "gradient vector misaligned");
        for (p, g) in params.into_iter().zip(grads) {
            let updated = p.add_scaled(g, -lr).expect("shapes align");
            *p = updated;
        }
    }
}

pub(crate) fn block_params_flat(b: &DitBlockParams) -> Vec<&DenseTensor> {
    use crate::block::AdalnParams;
    let mut out: Vec<&DenseTensor> = match &b.adaln {
        AdalnParams::Full { w, bias } => vec![w, bias],
        AdalnParams::Lora { a, b: bb, bias } => vec![a, bb, bias],
    };
    out.extend([
        &b.wq, &b.wk, &b.wv, &b.wo, &b.q_scale, &b.k_scale, &b.wq_cross, &b.wk_cross,
        &b.wv_cross, &b.wo_cross, &b.w1, &b.w2,
    ]);
    out
}

fn block_params_flat_mut(b: &mut DitBlockParams) -> Vec<&mut DenseTensor> {
    use crate::block::AdalnParams;
    let mut out: Vec<&mut DenseTensor> = match &mut b.adaln {
        AdalnParams::Full { w, bias } => vec![w, bias],
        AdalnParams::Lora { a, b: bb, bias } => vec![a, bb, bias],
    };
    out.push(&mut b.wq);
    out.push(&mut b.wk);
    out.push(&mut b.wv);
    out.push(&mut b.wo);
    out.push(&mut b.q_scale);
    out.push(&mut b.k_scale);
    out.push(&mut b.wq_cross);
    out.push(&mut b.wk_cross);
    out.push(&mut b.wv_cross);
    out.push(&mut b.wo_cross);
    out.push(&mut b.w1);
    out.push(&mut b.w2);
    out
}

impl RawNet<ConditioningSet> for DitModel {
    fn forward(
        &self,
        x: &DenseTensor,
        c_noise: f64,
        cond: &ConditioningSet,
    ) -> Result<DenseTensor, DiffusionError> {
        DitModel::forward(self, x, c_noise, cond)
            .map_err(|e| DiffusionError::InvalidParams(e.to_string()))
    }
}

/// EDM-preconditioned view of the model as an epsilon predictor:
/// `eps_hat = (z - D(z, sigma)) / sigma`.
pub struct EdmDitDenoiser<'a> {
    pub model: &'a DitModel,
    pub edm: EDMParams,
}

impl Denoiser<ConditioningSet> for EdmDitDenoiser<'_> {
    fn predict_eps(
        &self,
        z: &DenseTensor,
        sigma: f64,
        cond: &ConditioningSet,
    ) -> Result<DenseTensor, DiffusionError> {
        let d = edm_precondition(self.model, z, sigma, self.edm.sigma_data, cond)?;
        Ok(z.sub(&d)?.scale(1.0 / sigma))
    }
}

/// Null text conditioning (a single zero token) used as the unconditional
/// branch for classifier-free guidance.
pub fn null_conditioning(sigma: f64, cross_dim: usize) -> ConditioningSet {
    ConditioningSet::new(sigma, DenseTensor::zeros(&[1, cross_dim]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AdalnMode;

    #[test]
    fn model_forward_preserves_shape() {
        let cfg = DiTConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            adaln_mode: AdalnMode::Lora { rank: 4 },
            cross_dim: 8,
            mlp_ratio: 2.0,
        };
        let mut rng = SeededRng::new(1);
        let model = DitModel::init(cfg, &mut rng).unwrap();
        let x = DenseTensor::randn(&[6, 16], &mut rng);
        let cond = ConditioningSet::new(0.5, DenseTensor::randn(&[2, 8], &mut rng));
        let y = model.forward(&x, -0.2, &cond).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn params_flat_mut_aligns_with_params_flat() {
        let cfg = DiTConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            adaln_mode: AdalnMode::Full,
            cross_dim: 4,
            mlp_ratio: 4.0,
        };
        let mut rng = SeededRng::new(2);
        let mut model = DitModel::init(cfg, &mut rng).unwrap();
        let shapes: Vec<Vec<usize>> =
            model.params_flat().iter().map(|t| t.shape().to_vec()).collect();
        let shapes_mut: Vec<Vec<usize>> =
            model.params_flat_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, shapes_mut);
    }
}
