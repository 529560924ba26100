use crate::config::{DitError, PatchSpec};
use vdt_numerics::DenseTensor;

/// Flattens a `[t, h, w, c]` latent into a `[n_tokens, patch_volume * c]`
/// token sequence. Token order is t-major, then h, then w; within a token,
/// values iterate the patch offsets (dt, dh, dw) and then channels,
/// row-major. The ST-DiT layout math depends on this declared order.
pub fn patchify3d(latent: &DenseTensor, spec: &PatchSpec) -> Result<DenseTensor, DitError> {
    if latent.rank() != 4 {
        return Err(DitError::Conditioning(format!(
            "patchify3d expects [t, h, w, c], got {:?}",
            latent.shape()
        )));
    }
    let (t, h, w, c) = (
        latent.shape()[0],
        latent.shape()[1],
        latent.shape()[2],
        latent.shape()[3],
    );
    for (axis, extent, patch) in [("t", t, spec.pt), ("h", h, spec.ph), ("w", w, spec.pw)] {
        if patch == 0 || extent % patch != 0 {
            return Err(DitError::NonDivisiblePatch { axis, extent, patch });
        }
    }
    let (nt, nh, nw) = (t / spec.pt, h / spec.ph, w / spec.pw);
    let token_dim = spec.volume() * c;
    let mut out = DenseTensor::zeros(&[nt * nh * nw, token_dim]);
    let mut row = 0;
    for bt in 0..nt {
        for bh in 0..nh {
            for bw in 0..nw {
                let mut col = 0;
                for dt in 0..spec.pt {
                    for dh in 0..spec.ph {
                        for dw in 0..spec.pw {
                            for ch in 0..c {
                                let v = latent.get(&[
                                    bt * spec.pt + dt,
                                    bh * spec.ph + dh,
                                    bw * spec.pw + dw,
                                    ch,
                                ]);
                                out.set(&[row, col], v);
                                col += 1;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`patchify3d`] for the given original extents.
pub fn unpatchify3d(
    tokens: &DenseTensor,
    spec: &PatchSpec,
    extents: [usize; 4],
) -> Result<DenseTensor, DitError> {
    let [t, h, w, c] = extents;
    for (axis, extent, patch) in [("t", t, spec.pt), ("h", h, spec.ph), ("w", w, spec.pw)] {
        if patch == 0 || extent % patch != 0 {
            return Err(DitError::NonDivisiblePatch { axis, extent, patch });
        }
    }
    let (nt, nh, nw) = (t / spec.pt, h / spec.ph, w / spec.pw);
    let token_dim = spec.volume() * c;
    if tokens.rank() != 2
        || tokens.shape()[0] != nt * nh * nw
        || tokens.shape()[1] != token_dim
    {
        return Err(DitError::Conditioning(format!(
            "unpatchify3d expects [{}, {}], got {:?}",
            nt * nh * nw,
            token_dim,
            tokens.shape()
        )));
    }
    let mut out = DenseTensor::zeros(&[t, h, w, c]);
    let mut row = 0;
    for bt in 0..nt {
        for bh in 0..nh {
            for bw in 0..nw {
                let mut col = 0;
                for dt in 0..spec.pt {
                    for dh in 0..spec.ph {
                        for dw in 0..spec.pw {
                            for ch in 0..c {
                                out.set(
                                    &[
                                        bt * spec.pt + dt,
                                        bh * spec.ph + dh,
                                        bw * spec.pw + dw,
                                        ch,
                                    ],
                                    tokens.get(&[row, col]),
                                );
                                col += 1;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vdt_numerics::SeededRng;

    #[test]
    fn unit_patches_flatten_in_order() {
        let latent = DenseTensor::from_fn(&[2, 2, 2, 1], |idx| {
            (idx[0] * 4 + idx[1] * 2 + idx[2]) as f64
        });
        let spec = PatchSpec { pt: 1, ph: 1, pw: 1 };
        let tokens = patchify3d(&latent, &spec).unwrap();
        assert_eq!(tokens.shape(), &[8, 1]);
        // t-major, then h, then w
        let expected: Vec<f64> = (0..8).map(|v| v as f64).collect();
        assert_eq!(tokens.data(), expected.as_slice());
    }

    #[test]
    fn full_patch_collapses_to_one_token() {
        let latent = DenseTensor::from_fn(&[2, 2, 2, 1], |idx| {
            (idx[0] * 4 + idx[1] * 2 + idx[2]) as f64
        });
        let spec = PatchSpec { pt: 2, ph: 2, pw: 2 };
        let tokens = patchify3d(&latent, &spec).unwrap();
        assert_eq!(tokens.shape(), &[1, 8]);
        let expected: Vec<f64> = (0..8).map(|v| v as f64).collect();
        assert_eq!(tokens.data(), expected.as_slice());
    }

    #[test]
    fn roundtrip_random_latent() {
        let mut rng = SeededRng::new(1);
        let latent = DenseTensor::randn(&[4, 6, 2, 3], &mut rng);
        let spec = PatchSpec { pt: 2, ph: 3, pw: 1 };
        let tokens = patchify3d(&latent, &spec).unwrap();
        let back = unpatchify3d(&tokens, &spec, [4, 6, 2, 3]).unwrap();
        assert_eq!(back, latent);
    }

    #[test]
    fn non_divisible_extent_errors() {
        let latent = DenseTensor::zeros(&[3, 2, 2, 1]);
        let spec = PatchSpec { pt: 2, ph: 1, pw: 1 };
        assert!(matches!(
            patchify3d(&latent, &spec),
            Err(DitError::NonDivisiblePatch { axis: "t", .. })
        ));
    }
}
