//! Exact rational scalar used for potentials, offsets, and probabilities.

use alloc::string::String;
use core::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Arbitrary-precision rational. Every quantity the simulator computes with
/// (potentials, event offsets, firing probabilities) is one of these.
pub type Rational = BigRational;

/// Shorthand constructor for `num/den`. Panics if `den` is zero.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Shorthand constructor for an integer-valued rational.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `2^exp` as an exact rational; `exp` may be negative.
pub fn pow2(exp: i32) -> Rational {
    let num = BigInt::one() << exp.unsigned_abs() as usize;
    if exp >= 0 {
        Rational::from_integer(num)
    } else {
        Rational::new(BigInt::one(), num)
    }
}

/// True iff `k / 2^bits < p`, compared exactly.
///
/// This is the firing test: `k` is a uniform draw on `[0, 2^bits)` and `p`
/// a probability in `[0, 1]`.
pub fn dyadic_lt(k: u64, bits: u32, p: &Rational) -> bool {
    BigInt::from(k) * p.denom() < p.numer().clone() << bits as usize
}

/// Nearest `f64` to `x`; infinite for out-of-range magnitudes.
pub fn to_f64(x: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// If `x` is a non-negative integer that fits in a `u64`, return it.
pub fn as_u64(x: &Rational) -> Option<u64> {
    if !x.is_integer() || x.is_negative() {
        return None;
    }
    let (_, digits) = x.numer().to_u64_digits();
    match digits.len() {
        0 => Some(0),
        1 => Some(digits[0]),
        _ => None,
    }
}

/// Error produced by [`parse_rational`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseRationalError {
    text: String,
}

impl fmt::Display for ParseRationalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid rational literal {:?}", self.text)
    }
}

impl core::error::Error for ParseRationalError {}

/// Parses `"n"` or `"n/d"` with optional leading sign. The denominator must
/// be nonzero; the result is reduced.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError {
        text: String::from(s),
    };
    let t = s.trim();
    let (num_s, den_s) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (t, "1"),
    };
    let num: BigInt = num_s.parse().map_err(|_| err())?;
    let den: BigInt = den_s.parse().map_err(|_| err())?;
    if den.is_zero() {
        return Err(err());
    }
    Ok(Rational::new(num, den))
}

/// Formats a rational as `"n"` when integral, `"n/d"` otherwise. Inverse of
/// [`parse_rational`] on reduced values.
pub fn format_rational(x: &Rational) -> String {
    use alloc::string::ToString;
    if x.is_integer() {
        x.numer().to_string()
    } else {
        alloc::format!("{}/{}", x.numer(), x.denom())
    }
}
