use crate::config::DitError;
use vdt_diffusion::c_noise;
use vdt_numerics::DenseTensor;

/// Sinusoidal features of a scalar: interleaved `[sin(u*w_i), cos(u*w_i)]`
/// pairs with geometrically-spaced frequencies `w_i = 10000^(-2i/dim)`.
pub fn sinusoidal_features(u: f64, dim: usize) -> Result<DenseTensor, DitError> {
    if dim == 0 || dim % 2 != 0 {
        return Err(DitError::OddEmbedDim(dim));
    }
    let half = dim / 2;
    let mut data = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10000f64.powf(-(2.0 * i as f64) / dim as f64);
        data.push((u * freq).sin());
        data.push((u * freq).cos());
    }
    Ok(DenseTensor::new(vec![dim], data).expect("dim checked"))
}

/// Timestep embedding of a noise level: sinusoidal features of the EDM
/// log-noise coordinate `c_noise(sigma)`. Deterministic in `sigma`.
pub fn timestep_embed(sigma: f64, dim: usize) -> Result<DenseTensor, DitError> {
    sinusoidal_features(c_noise(sigma), dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_sigma() {
        let a = timestep_embed(0.7, 16).unwrap();
        let b = timestep_embed(0.7, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_sigmas_distinct_embeddings() {
        let a = timestep_embed(0.5, 8).unwrap();
        let b = timestep_embed(0.5000001, 8).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 0.0);
    }

    #[test]
    fn dim_two_is_sin_cos_of_cnoise() {
        let sigma = 2.3;
        let e = timestep_embed(sigma, 2).unwrap();
        let u = c_noise(sigma);
        assert_eq!(e.data(), &[u.sin(), u.cos()]);
    }

    #[test]
    fn odd_dim_errors() {
        assert!(timestep_embed(1.0, 3).is_err());
    }
}
