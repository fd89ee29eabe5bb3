//! Exact rational helpers shared by every stage of the verifier.
//!
//! All user-facing numbers are exact rationals. This module parses the `p/q`
//! literal form, converts between rationals and binary64 with directed
//! rounding, and rounds rationals to dyadic grids.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::str::FromStr;

/// Exact rational number used throughout the crate.
pub type Rat = BigRational;

/// Builds `n/d` from machine integers.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Builds the integer `n` as a rational.
pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Parses an exact rational written as an integer or as `p/q`.
///
/// Decimal points and exponents are rejected so that every threshold the
/// verifier compares against is exactly the value the user typed.
pub fn parse_rational(text: &str) -> Result<Rat, String> {
    let t = text.trim();
    if t.contains(['.', 'e', 'E']) {
        return Err(format!(
            "`{t}` looks like a floating-point literal; write an exact rational such as 1/2"
        ));
    }
    let (num, den) = match t.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (t, "1"),
    };
    let n = BigInt::from_str(num).map_err(|_| format!("`{t}` is not a rational literal"))?;
    let d = BigInt::from_str(den).map_err(|_| format!("`{t}` is not a rational literal"))?;
    if d.is_zero() {
        return Err(format!("`{t}` has a zero denominator"));
    }
    Ok(Rat::new(n, d))
}

/// Formats a rational as `p` or `p/q`.
pub fn format_rational(r: &Rat) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Nearest binary64 approximation; used for display and heuristics only.
pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        if r.is_negative() {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    })
}

/// Exact value of a finite binary64 number.
pub fn from_f64(x: f64) -> Rat {
    Rat::from_float(x).expect("finite binary64 value")
}

/// Largest binary64 value that is `<= r`.
pub fn to_f64_down(r: &Rat) -> f64 {
    let x = to_f64(r);
    if x.is_infinite() {
        return if x > 0.0 { f64::MAX } else { x };
    }
    if &from_f64(x) > r {
        x.next_down()
    } else {
        x
    }
}

/// Smallest binary64 value that is `>= r`.
pub fn to_f64_up(r: &Rat) -> f64 {
    let x = to_f64(r);
    if x.is_infinite() {
        return if x < 0.0 { f64::MIN } else { x };
    }
    if &from_f64(x) < r {
        x.next_up()
    } else {
        x
    }
}

/// `2^e` as a rational, for any sign of `e`.
pub fn pow2(e: i64) -> Rat {
    let p = BigInt::one() << e.unsigned_abs();
    if e >= 0 {
        Rat::from_integer(p)
    } else {
        Rat::new(BigInt::one(), p)
    }
}

/// Rounds `r` down to the grid `2^-bits`.
pub fn round_down(r: &Rat, bits: u32) -> Rat {
    let scaled = r * pow2(bits as i64);
    Rat::new(scaled.floor().to_integer(), BigInt::one() << bits)
}

/// Rounds `r` up to the grid `2^-bits`.
pub fn round_up(r: &Rat, bits: u32) -> Rat {
    let scaled = r * pow2(bits as i64);
    Rat::new(scaled.ceil().to_integer(), BigInt::one() << bits)
}

/// Smallest `k` with `2^-k <= w`, for a positive width `w`.
pub fn bits_for_width(w: &Rat) -> u32 {
    assert!(w.is_positive(), "width must be positive");
    let mut k = 0u32;
    // Start from the magnitude estimate and correct by at most a few steps.
    let approx = -(w.numer().bits() as i64) + w.denom().bits() as i64 - 1;
    if approx > 0 {
        k = approx as u32;
    }
    while &pow2(-(k as i64)) > w {
        k += 1;
    }
    while k > 0 && &pow2(-(k as i64 - 1)) <= w {
        k -= 1;
    }
    k
}

/// Floor of the square root of a non-negative integer.
pub fn isqrt(n: &BigInt) -> BigInt {
    assert!(!n.is_negative(), "square root of a negative integer");
    n.sqrt()
}
