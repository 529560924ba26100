//! Deterministic dense-tensor kernels used as the single-device oracle for
//! every parallel execution path in the workspace.
//!
//! Everything here is 64-bit floating point with a fixed, documented
//! accumulation order, so results are bit-identical across runs and
//! platforms. Parallel implementations are compared against these kernels
//! at 1e-6 (or exactly, where no reduction order changes).

mod mask;
mod ops;
mod rng;
mod tensor;

pub mod flops;

pub use mask::AttnMask;
pub use ops::{layer_norm, matmul, per_head_l2_normalize, reference_attention, softmax_lastdim};
pub use rng::SeededRng;
pub use tensor::{DenseTensor, NumericsError};
