use crate::sharded::ParallelError;
use crate::trace::{CollectiveKind, CollectiveTrace};
use crate::MeshAxis;
use vdt_numerics::{matmul, DenseTensor};

/// Elementwise nonlinearity between the two tensor-parallel GEMMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpActivation {
    Identity,
    Gelu,
}

impl TpActivation {
    fn apply(&self, x: DenseTensor) -> DenseTensor {
        match self {
            TpActivation::Identity => x,
            TpActivation::Gelu => x.map(vdt_dit::gelu),
        }
    }
}

/// Megatron-style paired GEMM: `w1` column-sharded, `w2` row-sharded, one
/// all-reduce on the output. Column independence of the activation makes
/// each device's partial `act(x w1_i) w2_i` exact, so the reduced result
/// equals the dense `act(x w1) w2` up to summation order (1e-6; exact at
/// tp = 1).
///
/// The traced all-reduce carries `rows * cols_out * 8` bytes.
pub fn tp_linear_forward(
    x: &DenseTensor,
    w1: &DenseTensor,
    w2: &DenseTensor,
    activation: TpActivation,
    tp: usize,
    trace: &mut CollectiveTrace,
) -> Result<DenseTensor, ParallelError> {
    let inner = w1.shape()[1];
    if w2.shape()[0] != inner {
        return Err(ParallelError::Layout(format!(
            "w1 {:?} and w2 {:?} disagree on the inner width",
            w1.shape(),
            w2.shape()
        )));
    }
    if tp == 0 || inner % tp != 0 {
        return Err(ParallelError::Divisibility { dim: 1, extent: inner, parts: tp });
    }
    let chunk = inner / tp;
    let mut total: Option<DenseTensor> = None;
    for dev in 0..tp {
        let w1_shard = w1.slice_cols(dev * chunk, (dev + 1) * chunk)?;
        let w2_shard = w2.slice_rows(dev * chunk, (dev + 1) * chunk)?;
        let partial = matmul(&activation.apply(matmul(x, &w1_shard)?), &w2_shard)?;
        total = Some(match total {
            None => partial,
            Some(acc) => acc.add(&partial)?, // fixed device order 0..tp
        });
    }
    let out = total.expect("tp >= 1");
    if tp > 1 {
        trace.record(CollectiveKind::AllReduce, MeshAxis::Tp, (out.numel() * 8) as u64, tp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vdt_numerics::SeededRng;

    fn dense(x: &DenseTensor, w1: &DenseTensor, w2: &DenseTensor, act: TpActivation) -> DenseTensor {
        matmul(&act.apply(matmul(x, w1).unwrap()), w2).unwrap()
    }

    #[test]
    fn tp1_is_exact() {
        let mut rng = SeededRng::new(1);
        let x = DenseTensor::randn(&[3, 4], &mut rng);
        let w1 = DenseTensor::randn(&[4, 8], &mut rng);
        let w2 = DenseTensor::randn(&[8, 4], &mut rng);
        let mut trace = CollectiveTrace::new();
        let out = tp_linear_forward(&x, &w1, &w2, TpActivation::Gelu, 1, &mut trace).unwrap();
        assert_eq!(out, dense(&x, &w1, &w2, TpActivation::Gelu));
        assert!(trace.is_empty());
    }

    #[test]
    fn tp2_matches_dense_mlp() {
        let mut rng = SeededRng::new(2);
        let x = DenseTensor::randn(&[5, 6], &mut rng);
        let w1 = DenseTensor::randn(&[6, 12], &mut rng);
        let w2 = DenseTensor::randn(&[12, 6], &mut rng);
        let mut trace = CollectiveTrace::new();
        let out = tp_linear_forward(&x, &w1, &w2, TpActivation::Gelu, 2, &mut trace).unwrap();
        let want = dense(&x, &w1, &w2, TpActivation::Gelu);
        assert!(out.max_abs_diff(&want).unwrap() < 1e-6);
    }

    #[test]
    fn all_reduce_bytes_match_output_size() {
        let mut rng = SeededRng::new(3);
        let (rows, d_out) = (4, 6);
        let x = DenseTensor::randn(&[rows, 6], &mut rng);
        let w1 = DenseTensor::randn(&[6, 12], &mut rng);
        let w2 = DenseTensor::randn(&[12, d_out], &mut rng);
        let mut trace = CollectiveTrace::new();
        tp_linear_forward(&x, &w1, &w2, TpActivation::Identity, 4, &mut trace).unwrap();
        assert_eq!(trace.count(CollectiveKind::AllReduce), 1);
        assert_eq!(trace.bytes(CollectiveKind::AllReduce), (rows * d_out * 8) as u64);
    }

    #[test]
    fn divisibility_enforced() {
        let x = DenseTensor::zeros(&[2, 4]);
        let w1 = DenseTensor::zeros(&[4, 6]);
        let w2 = DenseTensor::zeros(&[6, 4]);
        let mut trace = CollectiveTrace::new();
        assert!(tp_linear_forward(&x, &w1, &w2, TpActivation::Identity, 4, &mut trace).is_err());
    }
}
