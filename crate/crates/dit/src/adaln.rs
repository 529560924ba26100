use crate::config::DitError;
use vdt_numerics::{matmul, DenseTensor, NumericsError};

/// The nine per-block modulation vectors, each of width `hidden`:
/// (shift, scale, gate) for the self-attention, cross-attention and MLP
/// branches, in that order along the projection's output.
#[derive(Debug, Clone)]
pub struct Modulation {
    pub shift_self: DenseTensor,
    pub scale_self: DenseTensor,
    pub gate_self: DenseTensor,
    pub shift_cross: DenseTensor,
    pub scale_cross: DenseTensor,
    pub gate_cross: DenseTensor,
    pub shift_mlp: DenseTensor,
    pub scale_mlp: DenseTensor,
    pub gate_mlp: DenseTensor,
}

impl Modulation {
    fn from_row(row: &DenseTensor) -> Result<Self, NumericsError> {
        let d = row.shape()[1] / 9;
        let piece = |i: usize| row.slice_cols(i * d, (i + 1) * d);
        Ok(Self {
            shift_self: piece(0)?,
            scale_self: piece(1)?,
            gate_self: piece(2)?,
            shift_cross: piece(3)?,
            scale_cross: piece(4)?,
            gate_cross: piece(5)?,
            shift_mlp: piece(6)?,
            scale_mlp: piece(7)?,
            gate_mlp: piece(8)?,
        })
    }
}

fn check_proj(t_emb: &DenseTensor, d: usize, bias: &DenseTensor) -> Result<(), DitError> {
    if t_emb.numel() != d {
        return Err(DitError::Conditioning(format!(
            "timestep embedding width {} != hidden {d}",
            t_emb.numel()
        )));
    }
    if bias.numel() != 9 * d {
        return Err(DitError::Conditioning(format!(
            "adaln bias width {} != 9*hidden {}",
            bias.numel(),
            9 * d
        )));
    }
    Ok(())
}

/// Full AdaLN projection: one affine map `t_emb * w + bias` whose output
/// splits into the nine modulation vectors. `w` is `[d, 9d]`, the dominant
/// parameter block of a full-AdaLN model.
pub fn adaln_modulate(
    t_emb: &DenseTensor,
    w: &DenseTensor,
    bias: &DenseTensor,
) -> Result<Modulation, DitError> {
    let d = w.shape()[0];
    if w.rank() != 2 || w.shape()[1] != 9 * d {
        return Err(DitError::Conditioning(format!(
            "adaln weight must be [d, 9d], got {:?}",
            w.shape()
        )));
    }
    check_proj(t_emb, d, bias)?;
    let row = t_emb.reshape(&[1, d])?;
    let out = matmul(&row, w)?.add(&bias.reshape(&[1, 9 * d])?)?;
    Ok(Modulation::from_row(&out)?)
}

/// Low-rank AdaLN projection: `t_emb * a * b + bias` with `a: [d, r]` and
/// `b: [r, 9d]`, for a parameter count of `10*d*r + 9d` against the full
/// map's `9d^2 + 9d`.
pub fn adaln_lora_modulate(
    t_emb: &DenseTensor,
    a: &DenseTensor,
    b: &DenseTensor,
    bias: &DenseTensor,
) -> Result<Modulation, DitError> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(DitError::Conditioning(format!(
            "lora factors must be [d, r] x [r, 9d], got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let d = a.shape()[0];
    if b.shape()[1] != 9 * d {
        return Err(DitError::Conditioning(format!(
            "lora b must be [r, 9d], got {:?}",
            b.shape()
        )));
    }
    check_proj(t_emb, d, bias)?;
    let row = t_emb.reshape(&[1, d])?;
    let out = matmul(&matmul(&row, a)?, b)?.add(&bias.reshape(&[1, 9 * d])?)?;
    Ok(Modulation::from_row(&out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vdt_numerics::SeededRng;

    #[test]
    fn zero_weights_zero_modulations() {
        let d = 4;
        let t = DenseTensor::filled(&[d], 1.0);
        let w = DenseTensor::zeros(&[d, 9 * d]);
        let bias = DenseTensor::zeros(&[9 * d]);
        let m = adaln_modulate(&t, &w, &bias).unwrap();
        assert_eq!(m.gate_self, DenseTensor::zeros(&[1, d]));
        assert_eq!(m.shift_mlp, DenseTensor::zeros(&[1, d]));
    }

    #[test]
    fn matches_direct_matmul_oracle() {
        let d = 6;
        let mut rng = SeededRng::new(2);
        let t = DenseTensor::randn(&[d], &mut rng);
        let w = DenseTensor::randn(&[d, 9 * d], &mut rng);
        let bias = DenseTensor::randn(&[9 * d], &mut rng);
        let m = adaln_modulate(&t, &w, &bias).unwrap();
        // oracle: explicit dot products
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += t.data()[i] * w.get(&[i, j]);
            }
            acc += bias.data()[j];
            assert_eq!(m.shift_self.data()[j], acc);
        }
    }

    #[test]
    fn lora_zero_b_zero_modulations() {
        let (d, r) = (4, 2);
        let mut rng = SeededRng::new(3);
        let t = DenseTensor::randn(&[d], &mut rng);
        let a = DenseTensor::randn(&[d, r], &mut rng);
        let b = DenseTensor::zeros(&[r, 9 * d]);
        let bias = DenseTensor::zeros(&[9 * d]);
        let m = adaln_lora_modulate(&t, &a, &b, &bias).unwrap();
        assert_eq!(m.scale_cross, DenseTensor::zeros(&[1, d]));
    }

    #[test]
    fn lora_equals_materialized_product() {
        let (d, r) = (8, 3);
        let mut rng = SeededRng::new(4);
        let t = DenseTensor::randn(&[d], &mut rng);
        let a = DenseTensor::randn(&[d, r], &mut rng);
        let b = DenseTensor::randn(&[r, 9 * d], &mut rng);
        let bias = DenseTensor::randn(&[9 * d], &mut rng);
        let lora = adaln_lora_modulate(&t, &a, &b, &bias).unwrap();
        let full = adaln_modulate(&t, &matmul(&a, &b).unwrap(), &bias).unwrap();
        assert!(lora.gate_mlp.max_abs_diff(&full.gate_mlp).unwrap() < 1e-12);
        assert!(lora.shift_self.max_abs_diff(&full.shift_self).unwrap() < 1e-12);
        assert!(lora.scale_cross.max_abs_diff(&full.scale_cross).unwrap() < 1e-12);
    }
}
