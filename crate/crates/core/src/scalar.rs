//! Numeric scalar abstraction for ratios, rates and scores.
//!
//! Pixel geometry is integral; everything derived from it (IoU, accuracy,
//! ROUGE, confusion-matrix rates) is a ratio of counts. Those functions are
//! generic over [`Scalar`] so callers pick `f64` for reporting or an exact
//! rational for oracle comparisons.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// A field-like scalar that can be built from counts and compared.
pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable in scalar")
    }

    /// `num / den`, or zero when `den == 0`.
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::from_count(num) / Self::from_count(den)
        }
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for Ratio<i64> {}
impl Scalar for Ratio<i128> {}
