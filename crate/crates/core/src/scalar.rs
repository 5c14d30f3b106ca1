//! Scalar abstraction shared by the numerical modules.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar used by the SHO model, fitting, trajectories and
/// image analysis. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal. Lossy for `f32`.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase<T: Scalar>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut y = x % two_pi;
    if y <= -T::PI() {
        y = y + two_pi;
    } else if y > T::PI() {
        y = y - two_pi;
    }
    y
}

/// `n` evenly spaced values from `a` to `b`, both endpoints included.
pub fn linspace<T: Scalar>(a: T, b: T, n: usize) -> Vec<T> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / T::of_usize(n - 1);
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + step * T::of_usize(i) })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_stays_in_half_open_interval() {
        let pi = std::f64::consts::PI;
        assert_eq!(wrap_phase(pi), pi);
        assert!((wrap_phase(-pi) - pi).abs() < 1e-15);
        assert!((wrap_phase(3.0 * pi) - pi).abs() < 1e-12);
        assert!((wrap_phase(0.5f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn linspace_hits_endpoints() {
        let v = linspace(1.0, 5.0, 5);
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(linspace(0.0f32, 1.0, 1), vec![0.0]);
    }
}
