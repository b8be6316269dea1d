//! Scalar abstraction for the cost model.
//!
//! The analytical cost model is written once over [`Scalar`] so it can be
//! evaluated in `f32` for quick sweeps or `f64` for the simulator. Exact
//! operation counts stay in `u128` and are only converted at the boundary.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point type usable by the roofline and budget code.
pub trait Scalar: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static {
    fn of_u128(v: u128) -> Self {
        Self::from_u128(v).expect("u128 is always representable as a float")
    }

    fn of_u64(v: u64) -> Self {
        Self::from_u64(v).expect("u64 is always representable as a float")
    }

    fn of_f64(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal out of range for scalar type")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Sum + Debug + Default + Send + Sync + 'static {}
