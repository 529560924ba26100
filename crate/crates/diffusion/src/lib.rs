//! EDM-style diffusion: corruption, denoiser preconditioning, training
//! loss, the rho-warped sigma schedule, a deterministic second-order Heun
//! sampler for the probability-flow ODE, and classifier-free guidance.

mod edm;
mod sampler;

pub use edm::{
    c_in, c_noise, c_out, c_skip, corrupt, edm_precondition, loss, loss_terms, loss_weight,
    Denoiser, DiffusionError, EDMParams, LossTerms, NoisePoint, RawNet,
};
pub use sampler::{cfg_combine, heun_sample, sigma_schedule};
