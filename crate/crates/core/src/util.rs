//! Internal numeric helpers.

use crate::Real;

/// Neumaier compensated accumulator; order-stable sums for loss and metric
/// reductions.
#[derive(Debug, Clone, Copy)]
pub struct KahanSum<F> {
    sum: F,
    compensation: F,
}

impl<F: Real> KahanSum<F> {
    pub fn new() -> Self {
        Self {
            sum: F::zero(),
            compensation: F::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, x: F) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation = self.compensation + ((self.sum - t) + x);
        } else {
            self.compensation = self.compensation + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> F {
        self.sum + self.compensation
    }
}

impl<F: Real> Default for KahanSum<F> {
    fn default() -> Self {
        Self::new()
    }
}
