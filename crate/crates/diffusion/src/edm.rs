use serde::{Deserialize, Serialize};
use thiserror::Error;
use vdt_numerics::{DenseTensor, NumericsError, SeededRng};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("sampler requires at least one step")]
    ZeroSteps,
    #[error("non-finite state at sampler step {step}")]
    NonFiniteState { step: usize },
}

/// Noise-level parameters: sigma range, schedule warp, data scale, and the
/// log-normal training-noise distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EDMParams {
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub p_mean: f64,
    pub p_std: f64,
}

impl Default for EDMParams {
    fn default() -> Self {
        Self {
            sigma_data: 0.5,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
            p_mean: -1.2,
            p_std: 1.2,
        }
    }
}

impl EDMParams {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.sigma_data <= 0.0 {
            return Err(DiffusionError::InvalidParams("sigma_data must be > 0".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(DiffusionError::InvalidParams(
                "require 0 < sigma_min < sigma_max".into(),
            ));
        }
        if self.rho <= 0.0 {
            return Err(DiffusionError::InvalidParams("rho must be > 0".into()));
        }
        Ok(())
    }
}

/// A point on the corruption path. `alpha` is 1 in the variance-exploding
/// convention used throughout; the field is kept for generality.
#[derive(Debug, Clone, Copy)]
pub struct NoisePoint {
    pub sigma: f64,
    pub alpha: f64,
}

impl NoisePoint {
    pub fn at_sigma(sigma: f64) -> Self {
        Self { sigma, alpha: 1.0 }
    }
}

/// Noise-prediction contract: maps a corrupted latent at noise level
/// `sigma`, plus conditioning, to an estimate of the noise that produced it.
/// Implementations must be safe for concurrent read-only invocation.
pub trait Denoiser<C: ?Sized> {
    fn predict_eps(
        &self,
        z: &DenseTensor,
        sigma: f64,
        cond: &C,
    ) -> Result<DenseTensor, DiffusionError>;
}

impl<C: ?Sized, F> Denoiser<C> for F
where
    F: Fn(&DenseTensor, f64, &C) -> Result<DenseTensor, DiffusionError>,
{
    fn predict_eps(
        &self,
        z: &DenseTensor,
        sigma: f64,
        cond: &C,
    ) -> Result<DenseTensor, DiffusionError> {
        self(z, sigma, cond)
    }
}

/// The raw network wrapped by EDM preconditioning: consumes the scaled
/// latent and the log-noise feature, produces an unscaled prediction of
/// the latent's shape.
pub trait RawNet<C: ?Sized> {
    fn forward(
        &self,
        x: &DenseTensor,
        c_noise: f64,
        cond: &C,
    ) -> Result<DenseTensor, DiffusionError>;
}

impl<C: ?Sized, F> RawNet<C> for F
where
    F: Fn(&DenseTensor, f64, &C) -> Result<DenseTensor, DiffusionError>,
{
    fn forward(
        &self,
        x: &DenseTensor,
        c_noise: f64,
        cond: &C,
    ) -> Result<DenseTensor, DiffusionError> {
        self(x, c_noise, cond)
    }
}

pub fn c_skip(sigma: f64, sigma_data: f64) -> f64 {
    sigma_data * sigma_data / (sigma * sigma + sigma_data * sigma_data)
}

pub fn c_out(sigma: f64, sigma_data: f64) -> f64 {
    sigma * sigma_data / (sigma * sigma + sigma_data * sigma_data).sqrt()
}

pub fn c_in(sigma: f64, sigma_data: f64) -> f64 {
    1.0 / (sigma * sigma + sigma_data * sigma_data).sqrt()
}

pub fn c_noise(sigma: f64) -> f64 {
    sigma.ln() / 4.0
}

/// `z = alpha * x0 + sigma * eps`, elementwise.
pub fn corrupt(
    x0: &DenseTensor,
    np: NoisePoint,
    eps: &DenseTensor,
) -> Result<DenseTensor, DiffusionError> {
    Ok(x0.scale(np.alpha).add_scaled(eps, np.sigma)?)
}

/// Wraps a raw network into the preconditioned denoised estimate
/// `D(z, sigma) = c_skip*z + c_out*net(c_in*z, c_noise)`.
///
/// As sigma -> 0, c_skip -> 1 and c_out -> 0, so D -> z.
pub fn edm_precondition<C: ?Sized>(
    raw: &impl RawNet<C>,
    z: &DenseTensor,
    sigma: f64,
    sigma_data: f64,
    cond: &C,
) -> Result<DenseTensor, DiffusionError> {
    if sigma <= 0.0 {
        return Err(DiffusionError::NonPositiveSigma(sigma));
    }
    let inner = raw.forward(&z.scale(c_in(sigma, sigma_data)), c_noise(sigma), cond)?;
    Ok(z
        .scale(c_skip(sigma, sigma_data))
        .add_scaled(&inner, c_out(sigma, sigma_data))?)
}

/// Loss weight in epsilon space: EDM's lambda(sigma) carried through the
/// identity |D - x0|^2 = sigma^2 |eps - eps_hat|^2, giving
/// `w(sigma) = (sigma^2 + sigma_data^2) / sigma_data^2`.
pub fn loss_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma_data * sigma_data)
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub sigma: f64,
    /// Unweighted mean-squared error in epsilon space.
    pub eps_mse: f64,
    pub weight: f64,
    pub weighted: f64,
}

/// Denoising loss at a fixed noise level with a fixed noise draw.
pub fn loss_terms<C: ?Sized>(
    net: &impl Denoiser<C>,
    x0: &DenseTensor,
    cond: &C,
    sigma: f64,
    eps: &DenseTensor,
    params: &EDMParams,
) -> Result<LossTerms, DiffusionError> {
    let z = corrupt(x0, NoisePoint::at_sigma(sigma), eps)?;
    let eps_hat = net.predict_eps(&z, sigma, cond)?;
    let diff = eps.sub(&eps_hat)?;
    let eps_mse = diff.data().iter().map(|v| v * v).sum::<f64>() / diff.numel() as f64;
    let weight = loss_weight(sigma, params.sigma_data);
    Ok(LossTerms { sigma, eps_mse, weight, weighted: weight * eps_mse })
}

/// Training loss: draws `ln sigma ~ Normal(p_mean, p_std)` and unit noise
/// from `rng`, then returns `w(sigma) * mse(eps, eps_hat)`.
pub fn loss<C: ?Sized>(
    net: &impl Denoiser<C>,
    x0: &DenseTensor,
    cond: &C,
    rng: &mut SeededRng,
    params: &EDMParams,
) -> Result<f64, DiffusionError> {
    let sigma = (params.p_mean + params.p_std * rng.normal()).exp();
    let eps = DenseTensor::randn(x0.shape(), rng);
    Ok(loss_terms(net, x0, cond, sigma, &eps, params)?.weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_eps_net() -> impl Denoiser<()> {
        |z: &DenseTensor, _sigma: f64, _c: &()| Ok(DenseTensor::zeros(z.shape()))
    }

    #[test]
    fn corrupt_zero_sigma_returns_x0() {
        let mut rng = SeededRng::new(1);
        let x0 = DenseTensor::randn(&[4], &mut rng);
        let eps = DenseTensor::randn(&[4], &mut rng);
        let z = corrupt(&x0, NoisePoint { sigma: 0.0, alpha: 1.0 }, &eps).unwrap();
        assert_eq!(z, x0);
    }

    #[test]
    fn corrupt_zero_signal_scales_noise() {
        let mut rng = SeededRng::new(2);
        let x0 = DenseTensor::zeros(&[4]);
        let eps = DenseTensor::randn(&[4], &mut rng);
        let z = corrupt(&x0, NoisePoint::at_sigma(3.0), &eps).unwrap();
        assert!(z.max_abs_diff(&eps.scale(3.0)).unwrap() < 1e-15);
    }

    #[test]
    fn corrupt_variance_scales_with_sigma() {
        // Var(z - x0) over many draws should be close to sigma^2.
        let mut rng = SeededRng::new(3);
        let n = 10_000;
        let x0 = DenseTensor::filled(&[n], 1.7);
        let eps = DenseTensor::randn(&[n], &mut rng);
        let z = corrupt(&x0, NoisePoint::at_sigma(2.0), &eps).unwrap();
        let resid = z.sub(&x0).unwrap();
        let var = resid.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var - 4.0).abs() < 4.0 * 0.05, "variance {var}");
    }

    #[test]
    fn corrupt_shape_mismatch_errors() {
        let x0 = DenseTensor::zeros(&[4]);
        let eps = DenseTensor::zeros(&[5]);
        assert!(corrupt(&x0, NoisePoint::at_sigma(1.0), &eps).is_err());
    }

    #[test]
    fn precondition_limits() {
        // c_skip(sigma_data) = 1/2 by the formula.
        assert!((c_skip(0.5, 0.5) - 0.5).abs() < 1e-15);
        // with a zero raw net, D -> z as sigma -> 0
        let raw = |x: &DenseTensor, _cn: f64, _c: &()| Ok(DenseTensor::zeros(x.shape()));
        let z = DenseTensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let sigma = 1e-6;
        let d = edm_precondition(&raw, &z, sigma, 0.5, &()).unwrap();
        let bound = c_out(sigma, 0.5) + (1.0 - c_skip(sigma, 0.5)) * 2.0;
        assert!(d.max_abs_diff(&z).unwrap() <= bound + 1e-12);
    }

    #[test]
    fn precondition_rejects_nonpositive_sigma() {
        let raw = |x: &DenseTensor, _cn: f64, _c: &()| Ok(x.clone());
        let z = DenseTensor::zeros(&[2]);
        assert!(edm_precondition(&raw, &z, 0.0, 0.5, &()).is_err());
    }

    #[test]
    fn eps_view_roundtrips_with_corrupt() {
        // eps_hat = (z - D(z)) / sigma must recover the eps that a
        // D-consistent raw net encodes, for random nets and latents.
        let mut rng = SeededRng::new(4);
        let w = DenseTensor::randn(&[3, 3], &mut rng);
        let raw = move |x: &DenseTensor, _cn: f64, _c: &()| {
            Ok(vdt_numerics::matmul(x, &w)?)
        };
        let x0 = DenseTensor::randn(&[1, 3], &mut rng);
        let eps = DenseTensor::randn(&[1, 3], &mut rng);
        let sigma = 0.8;
        let sigma_data = 0.5;
        let z = corrupt(&x0, NoisePoint::at_sigma(sigma), &eps).unwrap();
        let d = edm_precondition(&raw, &z, sigma, sigma_data, &()).unwrap();
        let eps_hat = z.sub(&d).unwrap().scale(1.0 / sigma);
        // reconstruct z from (D, eps_hat): z = D + sigma * eps_hat
        let z_back = d.add_scaled(&eps_hat, sigma).unwrap();
        assert!(z_back.max_abs_diff(&z).unwrap() < 1e-10);
    }

    #[test]
    fn loss_zero_for_perfect_denoiser() {
        // Oracle net returns the exact eps used by loss_terms.
        let mut rng = SeededRng::new(5);
        let x0 = DenseTensor::randn(&[8], &mut rng);
        let eps = DenseTensor::randn(&[8], &mut rng);
        let eps_for_net = eps.clone();
        let x0_for_net = x0.clone();
        let net = move |z: &DenseTensor, sigma: f64, _c: &()| {
            // recover eps exactly from z = x0 + sigma * eps
            let got = z.sub(&x0_for_net)?.scale(1.0 / sigma);
            let _ = &eps_for_net;
            Ok(got)
        };
        let t = loss_terms(&net, &x0, &(), 0.7, &eps, &EDMParams::default()).unwrap();
        assert!(t.weighted < 1e-24, "loss {}", t.weighted);
    }

    #[test]
    fn loss_zero_net_has_unit_eps_mse() {
        let mut rng = SeededRng::new(6);
        let n = 20_000;
        let x0 = DenseTensor::zeros(&[n]);
        let eps = DenseTensor::randn(&[n], &mut rng);
        let t =
            loss_terms(&zero_eps_net(), &x0, &(), 1.3, &eps, &EDMParams::default()).unwrap();
        assert!((t.eps_mse - 1.0).abs() < 0.05, "mse {}", t.eps_mse);
    }

    #[test]
    fn loss_nonnegative() {
        let mut rng = SeededRng::new(7);
        let x0 = DenseTensor::randn(&[16], &mut rng);
        for _ in 0..50 {
            let l = loss(&zero_eps_net(), &x0, &(), &mut rng, &EDMParams::default()).unwrap();
            assert!(l >= 0.0);
        }
    }

    #[test]
    fn optimal_gaussian_denoiser_attains_closed_form_loss() {
        // For x0 ~ N(0, s^2 I), the optimal denoiser D*(z, sigma) =
        // z * s^2 / (s^2 + sigma^2) attains E eps_mse = s^2 / (s^2 + sigma^2).
        let s = 1.5;
        let sigma = 0.9;
        let expected_mse = s * s / (s * s + sigma * sigma);
        let opt = move |z: &DenseTensor, sg: f64, _c: &()| {
            let d = z.scale(s * s / (s * s + sg * sg));
            Ok(z.sub(&d)?.scale(1.0 / sg))
        };
        let mut rng = SeededRng::new(8);
        let trials = 4000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let x0 = DenseTensor::randn(&[16], &mut rng).scale(s);
            let eps = DenseTensor::randn(&[16], &mut rng);
            let t = loss_terms(&opt, &x0, &(), sigma, &eps, &EDMParams::default()).unwrap();
            acc += t.eps_mse;
        }
        let mean = acc / trials as f64;
        assert!(
            (mean - expected_mse).abs() < 0.02 * expected_mse + 0.005,
            "mean {mean} vs expected {expected_mse}"
        );
    }
}
