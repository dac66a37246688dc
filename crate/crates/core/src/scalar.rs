//! Scalar abstraction: the whole library is generic over the real scalar
//! type, with `f64` as the reference precision used by the CLI and the
//! acceptance suite.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};
use std::iter::Sum;

/// Real scalar the library is generic over: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + Default + FromPrimitive + ToPrimitive + Sum + Serialize + DeserializeOwned
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand conversion from an `f64` literal into a generic scalar.
#[inline]
pub fn sc<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant representable in scalar type")
}

/// Compensated (Kahan) summation with a fixed traversal order, so that
/// totals reproduce bit-for-bit independently of thread count.
pub fn kahan_sum<S: Scalar, I: IntoIterator<Item = S>>(items: I) -> S {
    let mut sum = S::zero();
    let mut carry = S::zero();
    for x in items {
        let y = x - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_adversarial_input() {
        let items: Vec<f64> = std::iter::repeat(0.1f64).take(1_000_000).collect();
        let k = kahan_sum(items.iter().copied());
        assert!((k - 100_000.0).abs() < 1e-9);
    }

    #[test]
    fn sc_roundtrips_constants() {
        let x: f64 = sc(0.25);
        assert_eq!(x, 0.25);
        let y: f32 = sc(0.25);
        assert_eq!(y, 0.25f32);
    }
}
