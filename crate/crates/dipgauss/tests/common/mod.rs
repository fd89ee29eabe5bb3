//! Independent high-precision oracles shared by the integration tests.
//!
//! Everything here is exact rational arithmetic on truncated series with
//! explicit remainder bounds, so it shares no code with the interval engine.

#![allow(dead_code)]

use dipgauss::benchmarks::{self, BenchmarkSpec, Family};
use dipgauss::dsl::Program;
use dipgauss::rational::{parse_rational, rat, rat_int, Rat};
use dipgauss::semantics::Valuation;
use num_traits::{One, Signed, Zero};

/// `1/sqrt(2 pi)` to 40 decimal places.
const INV_SQRT_2PI: &str = "3989422804014326779399460599343818684759/10000000000000000000000000000000000000000";

fn ten_pow_neg(k: u32) -> Rat {
    Rat::new(1.into(), num_bigint::BigInt::from(10u8).pow(k))
}

/// Lower and upper rational bounds on `e^x` for `|x| <= 4`.
pub fn exp_bounds(x: &Rat) -> (Rat, Rat) {
    assert!(x.abs() <= rat_int(4));
    let tiny = ten_pow_neg(40);
    let mut sum = Rat::zero();
    let mut term = Rat::one();
    let mut k = 0i64;
    // Past k > 2|x| the term ratio is below 1/2, so the tail is at most
    // twice the first omitted term.
    while term.abs() > tiny || rat_int(k) <= x.abs() * rat_int(2) {
        sum += &term;
        k += 1;
        term = term * x / rat_int(k);
    }
    let r = term.abs() * rat_int(2);
    (&sum - &r, sum + r)
}

/// Bounds on the standard normal distribution function at rational `z`
/// with `|z| <= 6`, from the alternating Taylor series of `erf`.
pub fn normal_cdf_bounds(z: &Rat) -> (Rat, Rat) {
    assert!(z.abs() <= rat_int(6));
    let c = parse_rational(INV_SQRT_2PI).unwrap();
    let (c_lo, c_hi) = (&c - ten_pow_neg(39), &c + ten_pow_neg(39));
    // Phi(z) = 1/2 + c * sum_n (-1)^n z^(2n+1) / (2^n n! (2n+1)); once
    // 2n > z^2 the terms decrease, so the error is below the first omitted
    // term.
    let z2 = z * z;
    let tiny = ten_pow_neg(45);
    let mut power = z.clone();
    let mut fact = Rat::one();
    let mut sum = Rat::zero();
    let mut n = 0i64;
    loop {
        let term = &power / (&fact * rat_int(2 * n + 1));
        if term.abs() < tiny && rat_int(2 * n) > z2 {
            break;
        }
        if n % 2 == 0 {
            sum += &term;
        } else {
            sum -= &term;
        }
        n += 1;
        power *= &z2;
        fact *= rat_int(2 * n);
    }
    let (s_lo, s_hi) = (&sum - &tiny, &sum + &tiny);
    let products = [&c_lo * &s_lo, &c_lo * &s_hi, &c_hi * &s_lo, &c_hi * &s_hi];
    let lo = products.iter().min().unwrap().clone();
    let hi = products.iter().max().unwrap().clone();
    (rat(1, 2) + lo, rat(1, 2) + hi)
}

/// Midpoint of a pair of bounds as `f64`.
pub fn mid(b: &(Rat, Rat)) -> f64 {
    dipgauss::rational::to_f64(&((&b.0 + &b.1) / rat_int(2)))
}

/// Builds a benchmark program.
pub fn bench(family: Family, n: usize) -> Program {
    benchmarks::program(&BenchmarkSpec::new(family, n)).expect("benchmark generates")
}

/// Valuation from `(name, value)` pairs.
pub fn val(items: &[(&str, i64)]) -> Valuation {
    items.iter().map(|(k, v)| (k.to_string(), rat_int(*v))).collect()
}

/// The all-zero input of a program and the input with only its last entry
/// set to one.
pub fn edge_inputs(p: &Program) -> [Valuation; 2] {
    let zero: Valuation = p.inputs.iter().map(|d| (d.name.clone(), Rat::zero())).collect();
    let mut last = zero.clone();
    let name = p.inputs.last().expect("program has inputs").name.clone();
    last.insert(name, Rat::one());
    [zero, last]
}
