//! Certified enclosures of `exp`, `ln` and `sqrt` at exact rational
//! arguments, computed with dyadic rationals and directed rounding.

use super::Enclosure;
use crate::rational::{bits_for_width, isqrt, pow2, round_down, round_up, Rat};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

/// Encloses `e^x` with width at most `tol`.
pub fn exp_enclosure(x: &Rat, tol: &Rat) -> Enclosure {
    if x.is_zero() {
        return Enclosure::point(Rat::one());
    }
    let magnitude = x.abs();
    // Halve the argument until it is at most 1/2.
    let mut s = 0u32;
    let mut y = magnitude.clone();
    let half = Rat::new(BigInt::one(), BigInt::from(2));
    while y > half {
        y /= Rat::from_integer(BigInt::from(2));
        s += 1;
    }
    let growth = magnitude.ceil().to_integer().bits() as u32 * 2 + 2;
    let mut p = bits_for_width(tol) + s + growth + 16;
    loop {
        let e = exp_pos(&y, s, p);
        let e = if x.is_negative() { reciprocal(&e, p) } else { e };
        if &e.width() <= tol {
            return e;
        }
        p += p / 2 + 8;
    }
}

/// `e^(y * 2^s)` for `0 <= y <= 1/2`, working on a `2^-p` grid.
fn exp_pos(y: &Rat, s: u32, p: u32) -> Enclosure {
    let one = Rat::one();
    let mut lo_sum = one.clone();
    let mut hi_sum = one.clone();
    let mut t_lo = one.clone();
    let mut t_hi = one.clone();
    let eps = pow2(-(p as i64));
    let mut i = 1u32;
    loop {
        let k = Rat::from_integer(BigInt::from(i));
        t_lo = round_down(&(&t_lo * y / &k), p);
        t_hi = round_up(&(&t_hi * y / &k), p);
        lo_sum += &t_lo;
        hi_sum += &t_hi;
        i += 1;
        if t_hi <= eps {
            break;
        }
    }
    // Remaining terms are bounded by a geometric series with ratio <= 1/2.
    hi_sum += &t_hi * Rat::from_integer(BigInt::from(2));
    let mut lo = lo_sum;
    let mut hi = hi_sum;
    for _ in 0..s {
        lo = round_down(&(&lo * &lo), p);
        hi = round_up(&(&hi * &hi), p);
    }
    Enclosure::new(lo, hi)
}

fn reciprocal(e: &Enclosure, p: u32) -> Enclosure {
    let one = Rat::one();
    let lo = round_down(&(&one / &e.hi), p + 2);
    let hi = round_up(&(&one / &e.lo), p + 2);
    Enclosure::new(lo, hi)
}

/// `atanh(z)` for `0 <= z < 1` as an exact-rational enclosure of width
/// below `2^-bits`.
fn atanh_enclosure(z: &Rat, bits: u32) -> Enclosure {
    let target = pow2(-(bits as i64) - 2);
    let z2 = z * z;
    let mut power = z.clone();
    let mut sum = Rat::zero();
    let mut n = 0u64;
    loop {
        sum += &power / Rat::from_integer(BigInt::from(2 * n + 1));
        power *= &z2;
        n += 1;
        // Tail: sum_{k>=n} z^{2k+1}/(2k+1) <= z^{2n+1} / ((2n+1)(1 - z^2)).
        let tail = &power / (Rat::from_integer(BigInt::from(2 * n + 1)) * (Rat::one() - &z2));
        if tail < target {
            let lo = round_down(&sum, bits + 4);
            let hi = round_up(&(&sum + &tail), bits + 4);
            return Enclosure::new(lo, hi);
        }
    }
}

/// Encloses `ln(y)` for `y > 0` with width below about `2^-bits`.
pub fn ln_enclosure(y: &Rat, bits: u32) -> Enclosure {
    assert!(y.is_positive(), "logarithm of a non-positive number");
    if y < &Rat::one() {
        let e = ln_enclosure(&(Rat::one() / y), bits);
        return Enclosure::new(-e.hi, -e.lo);
    }
    let two = Rat::from_integer(BigInt::from(2));
    let mut k = 0i64;
    let mut m = y.clone();
    while m >= two {
        m /= &two;
        k += 1;
    }
    let work = bits + 8 + (64 - (k as u64).leading_zeros());
    let third = Rat::new(BigInt::one(), BigInt::from(3));
    let ln2 = atanh_enclosure(&third, work).scale_by(&two);
    let z = (&m - Rat::one()) / (&m + Rat::one());
    let lnm = atanh_enclosure(&z, work).scale_by(&two);
    let kk = Rat::from_integer(BigInt::from(k));
    Enclosure::new(&ln2.lo * &kk + &lnm.lo, &ln2.hi * &kk + &lnm.hi)
}

/// Encloses the square root of every point of a non-negative enclosure, on a
/// `2^-bits` grid.
pub fn sqrt_enclosure(e: &Enclosure, bits: u32) -> Enclosure {
    assert!(!e.lo.is_negative(), "square root of a negative enclosure");
    let scale = pow2(2 * bits as i64);
    let lo_int = (&e.lo * &scale).floor().to_integer();
    let hi_scaled = &e.hi * &scale;
    let hi_int = hi_scaled.ceil().to_integer();
    let lo_root = isqrt(&lo_int);
    let mut hi_root = isqrt(&hi_int);
    if &hi_root * &hi_root < hi_int {
        hi_root += 1;
    }
    let den = BigInt::one() << bits;
    Enclosure::new(Rat::new(lo_root, den.clone()), Rat::new(hi_root, den))
}
