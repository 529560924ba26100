use crate::edm::{Denoiser, DiffusionError, EDMParams};
use vdt_numerics::DenseTensor;

/// Rho-warped descending noise schedule with an appended terminal zero:
/// `sigma_i = (sigma_max^(1/rho) + i/(n-1) * (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho`.
///
/// Returns `n_steps + 1` values; the last is exactly 0.
pub fn sigma_schedule(n_steps: usize, params: &EDMParams) -> Result<Vec<f64>, DiffusionError> {
    if n_steps == 0 {
        return Err(DiffusionError::ZeroSteps);
    }
    params.validate()?;
    let mut sigmas = Vec::with_capacity(n_steps + 1);
    if n_steps == 1 {
        sigmas.push(params.sigma_max);
    } else {
        let inv_rho = 1.0 / params.rho;
        let hi = params.sigma_max.powf(inv_rho);
        let lo = params.sigma_min.powf(inv_rho);
        for i in 0..n_steps {
            let t = i as f64 / (n_steps - 1) as f64;
            sigmas.push((hi + t * (lo - hi)).powf(params.rho));
        }
        // pin the endpoints exactly against accumulated powf error
        sigmas[0] = params.sigma_max;
        sigmas[n_steps - 1] = params.sigma_min;
    }
    sigmas.push(0.0);
    Ok(sigmas)
}

/// Deterministic second-order Heun integration of the probability-flow ODE
/// `dz/dsigma = (z - D(z, sigma)) / sigma`, which in the epsilon view is
/// just `dz/dsigma = eps_hat(z, sigma)`.
///
/// The final step to sigma = 0 degenerates to Euler since the corrector
/// would need a derivative at sigma = 0.
pub fn heun_sample<C: ?Sized>(
    denoiser: &impl Denoiser<C>,
    noise: &DenseTensor,
    n_steps: usize,
    cond: &C,
    params: &EDMParams,
) -> Result<DenseTensor, DiffusionError> {
    let sigmas = sigma_schedule(n_steps, params)?;
    let mut z = noise.clone();
    for i in 0..n_steps {
        let (s_cur, s_next) = (sigmas[i], sigmas[i + 1]);
        let h = s_next - s_cur;
        let d_cur = denoiser.predict_eps(&z, s_cur, cond)?;
        let z_euler = z.add_scaled(&d_cur, h)?;
        z = if s_next > 0.0 {
            let d_next = denoiser.predict_eps(&z_euler, s_next, cond)?;
            let avg = d_cur.add(&d_next)?.scale(0.5);
            z.add_scaled(&avg, h)?
        } else {
            z_euler
        };
        if !z.is_finite() {
            return Err(DiffusionError::NonFiniteState { step: i });
        }
    }
    Ok(z)
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
pub fn cfg_combine(
    uncond: &DenseTensor,
    cond: &DenseTensor,
    scale: f64,
) -> Result<DenseTensor, DiffusionError> {
    Ok(uncond.add_scaled(&cond.sub(uncond)?, scale)?)
}
