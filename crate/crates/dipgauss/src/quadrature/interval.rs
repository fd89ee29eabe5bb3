//! Binary64 interval arithmetic with outward rounding.
//!
//! Every operation computes its endpoints in round-to-nearest and then steps
//! one unit in the last place outward, which encloses the exact result since
//! a correctly rounded value is within half an ulp of it. Elementary
//! functions (`exp`, `erf`) carry explicit truncation bounds so that their
//! enclosures are certified rather than estimated.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::LazyLock;

/// Closed interval `[lo, hi]` of binary64 numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Iv {
    pub lo: f64,
    pub hi: f64,
}

#[inline]
fn dn(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x.next_down()
    }
}

#[inline]
fn up(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x.next_up()
    }
}

/// Product that treats `0 * inf` as zero, as interval multiplication needs.
#[inline]
fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Iv {
    pub const ZERO: Iv = Iv { lo: 0.0, hi: 0.0 };
    pub const ONE: Iv = Iv { lo: 1.0, hi: 1.0 };
    pub const ENTIRE: Iv = Iv { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    #[inline]
    pub fn new(lo: f64, hi: f64) -> Iv {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Iv { lo, hi }
    }

    /// Degenerate interval holding one exactly representable value.
    #[inline]
    pub fn point(x: f64) -> Iv {
        Iv { lo: x, hi: x }
    }

    /// Encloses a constant given as its correctly rounded binary64 value.
    pub fn around(x: f64) -> Iv {
        Iv { lo: dn(x), hi: up(x) }
    }

    #[inline]
    pub fn width(self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(self) -> f64 {
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    #[inline]
    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn hull(self, o: Iv) -> Iv {
        Iv { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    /// Intersection, or `None` when the intervals are disjoint.
    pub fn intersect(self, o: Iv) -> Option<Iv> {
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        (lo <= hi).then_some(Iv { lo, hi })
    }

    /// Pointwise minimum over both intervals.
    pub fn min(self, o: Iv) -> Iv {
        Iv { lo: self.lo.min(o.lo), hi: self.hi.min(o.hi) }
    }

    /// Pointwise maximum over both intervals.
    pub fn max(self, o: Iv) -> Iv {
        Iv { lo: self.lo.max(o.lo), hi: self.hi.max(o.hi) }
    }

    /// `max(self, 0)` taken pointwise.
    pub fn clamp_nonneg(self) -> Iv {
        Iv { lo: self.lo.max(0.0), hi: self.hi.max(0.0) }
    }

    pub fn abs(self) -> Iv {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            -self
        } else {
            Iv { lo: 0.0, hi: (-self.lo).max(self.hi) }
        }
    }

    pub fn sqr(self) -> Iv {
        let a = self.abs();
        Iv { lo: dn(a.lo * a.lo).max(0.0), hi: up(a.hi * a.hi) }
    }

    pub fn sqrt(self) -> Iv {
        Iv { lo: dn(self.lo.max(0.0).sqrt()).max(0.0), hi: up(self.hi.max(0.0).sqrt()) }
    }

    /// Multiplication by an exact power of two is exact in binary64 unless it
    /// under- or overflows; the result is still widened to stay safe.
    pub fn scale(self, k: f64) -> Iv {
        self * Iv::point(k)
    }

    /// `e^self`, using monotonicity of the exponential.
    pub fn exp(self) -> Iv {
        Iv { lo: exp_point(self.lo).lo, hi: exp_point(self.hi).hi }
    }

    /// `erf(self)`, using monotonicity of the error function.
    pub fn erf(self) -> Iv {
        Iv { lo: erf_point(self.lo).lo, hi: erf_point(self.hi).hi }
    }
}

impl Add for Iv {
    type Output = Iv;
    #[inline]
    fn add(self, o: Iv) -> Iv {
        Iv { lo: dn(self.lo + o.lo), hi: up(self.hi + o.hi) }
    }
}

impl Sub for Iv {
    type Output = Iv;
    #[inline]
    fn sub(self, o: Iv) -> Iv {
        Iv { lo: dn(self.lo - o.hi), hi: up(self.hi - o.lo) }
    }
}

impl Neg for Iv {
    type Output = Iv;
    #[inline]
    fn neg(self) -> Iv {
        Iv { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Iv {
    type Output = Iv;
    #[inline]
    fn mul(self, o: Iv) -> Iv {
        if self.lo >= 0.0 && o.lo >= 0.0 {
            return Iv { lo: dn(mul0(self.lo, o.lo)).max(0.0), hi: up(mul0(self.hi, o.hi)) };
        }
        let p = [mul0(self.lo, o.lo), mul0(self.lo, o.hi), mul0(self.hi, o.lo), mul0(self.hi, o.hi)];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Iv { lo: dn(lo), hi: up(hi) }
    }
}

impl Div for Iv {
    type Output = Iv;
    fn div(self, o: Iv) -> Iv {
        if o.lo <= 0.0 && o.hi >= 0.0 {
            return Iv::ENTIRE;
        }
        let q = [self.lo / o.lo, self.lo / o.hi, self.hi / o.lo, self.hi / o.hi];
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Iv { lo: dn(lo), hi: up(hi) }
    }
}

impl Add<f64> for Iv {
    type Output = Iv;
    fn add(self, o: f64) -> Iv {
        self + Iv::point(o)
    }
}

impl Mul<f64> for Iv {
    type Output = Iv;
    fn mul(self, o: f64) -> Iv {
        self * Iv::point(o)
    }
}

/// Enclosures of common constants.
pub mod consts {
    use super::Iv;
    use std::sync::LazyLock;

    pub static SQRT_2: LazyLock<Iv> = LazyLock::new(|| Iv::around(std::f64::consts::SQRT_2));
    pub static PI: LazyLock<Iv> = LazyLock::new(|| Iv::around(std::f64::consts::PI));
    pub static SQRT_PI: LazyLock<Iv> = LazyLock::new(|| PI.sqrt());
    /// `sqrt(2*pi)`
    pub static SQRT_2PI: LazyLock<Iv> = LazyLock::new(|| (*PI * Iv::point(2.0)).sqrt());
    /// `2/sqrt(pi)`
    pub static TWO_OVER_SQRT_PI: LazyLock<Iv> = LazyLock::new(|| Iv::point(2.0) / *SQRT_PI);
}

/// `1/i!` for `i < 30`.
static INV_FACT: LazyLock<Vec<Iv>> = LazyLock::new(|| {
    let mut out = Vec::with_capacity(30);
    let mut f = Iv::ONE;
    out.push(f);
    for i in 1..30 {
        f = f / Iv::point(i as f64);
        out.push(f);
    }
    out
});

/// Taylor enclosure of `e^r` for `|r| <= 1`, summed to `terms` terms.
fn exp_taylor(r: Iv, terms: usize) -> Iv {
    let fact = &*INV_FACT;
    let mut acc = fact[terms - 1];
    for i in (0..terms - 1).rev() {
        acc = acc * r + fact[i];
    }
    // Lagrange remainder: |r|^terms / terms! * e^|r| <= 3 |r|^terms / terms!.
    let a = r.abs().hi;
    let rem = up(3.0 * up(a.powi(terms as i32)) * fact[terms].hi);
    acc + Iv { lo: -rem, hi: rem }
}

const EXP_MIN: i32 = -746;
const EXP_MAX: i32 = 710;

/// `e^n` for integers `n` in `[EXP_MIN, EXP_MAX]`, by binary powering.
static EXP_INT: LazyLock<Vec<Iv>> = LazyLock::new(|| {
    let e = exp_taylor(Iv::ONE, 28);
    let inv_e = Iv::ONE / e;
    (EXP_MIN..=EXP_MAX)
        .map(|n| {
            let base = if n < 0 { inv_e } else { e };
            let mut k = n.unsigned_abs();
            let mut acc = Iv::ONE;
            let mut b = base;
            while k > 0 {
                if k & 1 == 1 {
                    acc = acc * b;
                }
                b = b * b;
                k >>= 1;
            }
            acc
        })
        .collect()
});

/// `e^(j/16)` for `j` in `0..16`.
static EXP_SIXTEENTHS: LazyLock<Vec<Iv>> =
    LazyLock::new(|| (0..16).map(|j| exp_taylor(Iv::point(j as f64 / 16.0), 28)).collect());

/// Certified enclosure of `e^x` for a binary64 point.
pub fn exp_point(x: f64) -> Iv {
    if x == 0.0 {
        return Iv::ONE;
    }
    if x.is_nan() {
        return Iv::ENTIRE;
    }
    if x < EXP_MIN as f64 + 1.0 {
        return Iv { lo: 0.0, hi: f64::from_bits(1) };
    }
    if x > EXP_MAX as f64 - 1.0 {
        return Iv { lo: f64::MAX, hi: f64::INFINITY };
    }
    let n = x.floor();
    let j = ((x - n) * 16.0).floor().clamp(0.0, 15.0);
    // The reduced argument is enclosed rather than computed, since `x - n`
    // can round.
    let r = Iv::point(x) - Iv::point(n) - Iv::point(j / 16.0);
    let er = exp_taylor(r, 12);
    let en = EXP_INT[(n as i32 - EXP_MIN) as usize];
    let ej = EXP_SIXTEENTHS[j as usize];
    en * ej * er
}

/// Certified enclosure of `erf(x)` for a binary64 point.
pub fn erf_point(x: f64) -> Iv {
    if x == 0.0 {
        return Iv::ZERO;
    }
    if x < 0.0 {
        return -erf_point(-x);
    }
    if x.is_nan() {
        return Iv { lo: -1.0, hi: 1.0 };
    }
    if x.is_infinite() {
        return Iv::ONE;
    }
    if x < 1e-100 {
        // 2x/sqrt(pi) (1 - x^2/3) <= erf(x) <= 2x/sqrt(pi).
        let lin = *consts::TWO_OVER_SQRT_PI * Iv::point(x);
        return Iv { lo: dn(lin.lo * (1.0 - 1e-100)), hi: lin.hi };
    }
    let z = Iv::point(x);
    let z2 = z.sqr();
    let gauss = (-z2).exp();
    if x > 6.0 {
        // erfc(x) <= e^{-x^2} / (x sqrt(pi)) for x > 0.
        let tail = gauss / (z * *consts::SQRT_PI);
        return Iv { lo: dn(1.0 - tail.hi), hi: 1.0 };
    }
    // erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (2n+1)!!; all terms
    // are positive and the ratio of consecutive terms is 2x^2/(2n+3).
    let two_z2 = z2 * 2.0;
    let mut term = z;
    let mut sum = z;
    let mut n = 0usize;
    for _ in 0..1000 {
        let denom = (2 * n + 3) as f64;
        term = term * two_z2 / Iv::point(denom);
        sum = sum + term;
        n += 1;
        let ratio_bound = two_z2.hi / (2 * n + 3) as f64;
        if ratio_bound < 0.5 && term.hi < sum.lo * 1e-18 {
            let next = up(term.hi * up(ratio_bound));
            let rem = up(next / dn(1.0 - ratio_bound));
            sum = sum + Iv { lo: 0.0, hi: rem };
            let out = *consts::TWO_OVER_SQRT_PI * gauss * sum;
            return Iv { lo: out.lo.max(0.0), hi: out.hi.min(1.0) };
        }
    }
    Iv { lo: 0.0, hi: 1.0 }
}
