//! Exact dyadic arithmetic for the few places where results must depend only
//! on the real value of a ratio (tone mapping scale invariance).

use std::cmp::Ordering;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};

/// `mant * 2^exp`, exact.
#[derive(Clone, Debug)]
pub(crate) struct Dyadic {
    mant: BigInt,
    exp: i64,
}

impl Dyadic {
    pub(crate) fn from_f64(v: f64) -> Self {
        debug_assert!(v.is_finite());
        if v == 0.0 {
            return Self { mant: BigInt::zero(), exp: 0 };
        }
        let bits = v.to_bits();
        let sign = if bits >> 63 == 0 { Sign::Plus } else { Sign::Minus };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if biased == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Self {
            mant: BigInt::from_biguint(sign, BigUint::from(m)),
            exp: e,
        }
    }

    /// Exact sum of `values`.
    pub(crate) fn sum(values: &[f64]) -> Self {
        values
            .iter()
            .map(|&v| Self::from_f64(v))
            .fold(Self { mant: BigInt::zero(), exp: 0 }, |acc, v| acc.add(&v))
    }

    pub(crate) fn add(&self, other: &Self) -> Self {
        if self.mant.is_zero() {
            return other.clone();
        }
        if other.mant.is_zero() {
            return self.clone();
        }
        let exp = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - exp) as usize;
        let b = &other.mant << (other.exp - exp) as usize;
        Self { mant: a + b, exp }
    }

    pub(crate) fn mul_small(&self, k: u32) -> Self {
        Self {
            mant: &self.mant * BigInt::from(k),
            exp: self.exp,
        }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    pub(crate) fn exact_cmp(&self, other: &Self) -> Ordering {
        let exp = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - exp) as usize;
        let b = &other.mant << (other.exp - exp) as usize;
        a.cmp(&b)
    }

    /// `self / den` rounded to nearest (ties to even). Both operands must be
    /// non-negative and `den` non-zero.
    pub(crate) fn ratio_f64(&self, den: &Self) -> f64 {
        debug_assert!(!den.mant.is_zero());
        if self.mant.is_zero() {
            return 0.0;
        }
        let a = self.mant.magnitude();
        let b = den.mant.magnitude();
        let shift = (b.bits() as i64 - a.bits() as i64 + 56).max(0) as usize;
        let scaled = a << shift;
        let q = &scaled / b;
        let inexact = !(&scaled % b).is_zero();
        let extra = q.bits() as usize - 53;
        let mut mant = &q >> extra;
        let rest = &q - (&mant << extra);
        let half = BigUint::one() << (extra - 1);
        let round_up = match rest.cmp(&half) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => inexact || mant.bit(0),
        };
        if round_up {
            mant += 1u32;
        }
        let exp2 = extra as i64 + self.exp - den.exp - shift as i64;
        let m = u64::try_from(&mant).expect("at most 54 bits") as f64;
        scale_pow2(m, exp2)
    }
}

fn scale_pow2(mut v: f64, mut e: i64) -> f64 {
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}
