//! Scalar abstraction for the floating-point side of the crate.

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the analytic layer is generic over.
///
/// `f32` and `f64` both qualify; the exact combinatorial layer does not go
/// through this trait.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts into any Real")
    }
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum<T> + Debug + Display + Send + Sync + 'static
{
}

/// Neumaier compensated accumulator.
///
/// Norm integrals sum many same-sign cell contributions; the compensation
/// keeps them reproducible at the 1e-15 level independent of cell count.
#[derive(Clone, Copy, Debug)]
pub struct CompensatedSum<S: Real> {
    sum: S,
    comp: S,
}

impl<S: Real> Default for CompensatedSum<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> CompensatedSum<S> {
    pub fn new() -> Self {
        CompensatedSum {
            sum: S::zero(),
            comp: S::zero(),
        }
    }

    pub fn add(&mut self, v: S) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp = self.comp + ((self.sum - t) + v);
        } else {
            self.comp = self.comp + ((v - t) + self.sum);
        }
        self.sum = t;
    }

    pub fn value(&self) -> S {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn csum<S: Real, I: IntoIterator<Item = S>>(iter: I) -> S {
    let mut acc = CompensatedSum::new();
    for v in iter {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_on_small_terms() {
        let mut acc = CompensatedSum::<f64>::new();
        acc.add(1.0);
        for _ in 0..1_000_000 {
            acc.add(1e-17);
        }
        let compensated = acc.value();
        assert!((compensated - (1.0 + 1e-11)).abs() < 1e-13);
    }

    #[test]
    fn csum_f32_and_f64() {
        let v64: f64 = csum([0.1f64, 0.2, 0.3]);
        assert!((v64 - 0.6).abs() < 1e-15);
        let v32: f32 = csum([0.1f32, 0.2, 0.3]);
        assert!((v32 - 0.6).abs() < 1e-6);
    }
}
