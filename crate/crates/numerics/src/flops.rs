//! Thread-local multiply-add counter fed by the matmul and attention
//! kernels. Used to cross-check closed-form FLOP formulas against what a
//! forward pass actually executes.

use std::cell::Cell;

thread_local! {
    static FLOPS: Cell<u64> = const { Cell::new(0) };
}

pub fn reset() {
    FLOPS.with(|c| c.set(0));
}

pub fn total() -> u64 {
    FLOPS.with(|c| c.get())
}

pub(crate) fn record(n: u64) {
    FLOPS.with(|c| c.set(c.get().wrapping_add(n)));
}

#[cfg(test)]
mod tests {
    use crate::{matmul, DenseTensor};

    #[test]
    fn matmul_flops_counted() {
        let a = DenseTensor::zeros(&[3, 4]);
        let b = DenseTensor::zeros(&[4, 5]);
        super::reset();
        matmul(&a, &b).unwrap();
        assert_eq!(super::total(), 2 * 3 * 4 * 5);
    }
}
