//! Certified evaluation of integral plans.
//!
//! Results are [`Enclosure`]s: exact rational intervals guaranteed to contain
//! the true value. Internally the work is done in binary64 interval
//! arithmetic with outward rounding (see [`interval`]); the resulting
//! endpoints are exact dyadic rationals and are rounded outward to a
//! configurable number of fractional bits when reported.

pub mod exact;
pub mod interval;

mod engine;
mod taylor;

use crate::dsl::DistKind;
use crate::integrals::{IntegralPlan, PlanExpr};
use crate::rational::{from_f64, pow2, round_down, round_up, to_f64, to_f64_down, to_f64_up, Rat};
use crate::semantics::DistSpec;
use engine::{Budget, RatCon, Region, VarSpec};
use interval::{consts, Iv};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// Exact rational interval `[lo, hi]` certified to contain a real value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Enclosure {
    pub lo: Rat,
    pub hi: Rat,
}

impl Enclosure {
    pub fn new(lo: Rat, hi: Rat) -> Self {
        assert!(lo <= hi, "inverted enclosure");
        Enclosure { lo, hi }
    }

    pub fn point(x: Rat) -> Self {
        Enclosure { lo: x.clone(), hi: x }
    }

    pub fn zero() -> Self {
        Enclosure::point(Rat::zero())
    }

    /// Exact conversion of a binary64 interval.
    pub fn from_iv(iv: Iv) -> Self {
        Enclosure::new(from_f64(iv.lo), from_f64(iv.hi))
    }

    /// Outward binary64 interval around this enclosure.
    pub fn to_iv(&self) -> Iv {
        Iv::new(to_f64_down(&self.lo), to_f64_up(&self.hi))
    }

    pub fn width(&self) -> Rat {
        &self.hi - &self.lo
    }

    pub fn midpoint(&self) -> Rat {
        (&self.lo + &self.hi) / Rat::from_integer(2.into())
    }

    pub fn contains(&self, x: &Rat) -> bool {
        &self.lo <= x && x <= &self.hi
    }

    pub fn contains_f64(&self, x: f64) -> bool {
        self.contains(&from_f64(x))
    }

    pub fn intersects(&self, o: &Enclosure) -> bool {
        self.lo <= o.hi && o.lo <= self.hi
    }

    pub fn add(&self, o: &Enclosure) -> Enclosure {
        Enclosure::new(&self.lo + &o.lo, &self.hi + &o.hi)
    }

    /// Widens the upper endpoint by a non-negative amount.
    pub fn widen_up(&self, s: &Rat) -> Enclosure {
        Enclosure::new(self.lo.clone(), &self.hi + s)
    }

    /// Multiplies by a non-negative exact rational.
    pub fn scale_by(&self, k: &Rat) -> Enclosure {
        assert!(!k.is_negative(), "scale factor must be non-negative");
        Enclosure::new(&self.lo * k, &self.hi * k)
    }

    /// Rounds both endpoints outward to the grid `2^-bits`.
    pub fn round_outward(&self, bits: u32) -> Enclosure {
        Enclosure::new(round_down(&self.lo, bits), round_up(&self.hi, bits))
    }

    /// Clamps the enclosure of a probability to `[0, 1]`.
    pub fn clamp_probability(&self) -> Enclosure {
        let lo = if self.lo.is_negative() { Rat::zero() } else { self.lo.clone() };
        let hi = if self.hi > Rat::one() { Rat::one() } else { self.hi.clone() };
        if lo > hi {
            // Only reachable through rounding at the boundary.
            return Enclosure::new(lo.clone(), lo);
        }
        Enclosure::new(lo, hi)
    }
}

impl fmt::Display for Enclosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.12e}, {:.12e}]", to_f64(&self.lo), to_f64(&self.hi))
    }
}

/// Outward-rounded product of two enclosures, the second of which must be
/// non-negative.
pub fn scale(e: &Enclosure, f: &Enclosure) -> Enclosure {
    assert!(!f.lo.is_negative(), "scale factor enclosure must be non-negative");
    let cands = [&e.lo * &f.lo, &e.lo * &f.hi, &e.hi * &f.lo, &e.hi * &f.hi];
    let lo = cands.iter().min().expect("non-empty").clone();
    let hi = cands.iter().max().expect("non-empty").clone();
    Enclosure::new(lo, hi)
}

/// Encloses `e^x` to within `2^-64`.
pub fn enclose_exp(x: &Rat) -> Enclosure {
    exact::exp_enclosure(x, &pow2(-64))
}

/// Encloses `e^x` to within `tol`.
pub fn enclose_exp_within(x: &Rat, tol: &Rat) -> Enclosure {
    exact::exp_enclosure(x, tol)
}

/// Density of a sampled variable with its parameters enclosed in binary64.
#[derive(Debug, Clone, Copy)]
pub struct DensityKernel {
    pub kind: DistKind,
    pub mu: Iv,
    /// Scale parameter: standard deviation (Gaussian) or `b` (Laplace).
    pub s: Iv,
    inv_norm: Iv,
    inv_s: Iv,
    inv_s_sqrt2: Iv,
    /// Upper bound on the density.
    pub hmax: f64,
}

impl DensityKernel {
    pub fn new(dist: &DistSpec, eps: &Rat) -> Self {
        let mu = Enclosure::point(dist.mean.clone()).to_iv();
        let s = Enclosure::point(dist.scale(eps)).to_iv();
        let inv_norm = match dist.kind {
            DistKind::Gaussian => Iv::ONE / (s * *consts::SQRT_2PI),
            DistKind::Laplace => Iv::ONE / (s * 2.0),
        };
        DensityKernel {
            kind: dist.kind,
            mu,
            s,
            inv_norm,
            inv_s: Iv::ONE / s,
            inv_s_sqrt2: Iv::ONE / (s * *consts::SQRT_2),
            hmax: inv_norm.hi,
        }
    }

    /// Standard deviation.
    pub fn std_dev(&self) -> Iv {
        match self.kind {
            DistKind::Gaussian => self.s,
            DistKind::Laplace => self.s * *consts::SQRT_2,
        }
    }

    /// Range of the density over `x`.
    pub fn pdf(&self, x: Iv) -> Iv {
        let d = x - self.mu;
        let out = match self.kind {
            DistKind::Gaussian => {
                let z = d * self.inv_s_sqrt2;
                (-z.sqr()).exp() * self.inv_norm
            }
            DistKind::Laplace => (-(d.abs() * self.inv_s)).exp() * self.inv_norm,
        };
        Iv { lo: out.lo.max(0.0), hi: out.hi.min(self.hmax) }
    }

    /// Cumulative distribution function at a point.
    pub fn cdf_point(&self, x: f64) -> Iv {
        if x == f64::NEG_INFINITY {
            return Iv::ZERO;
        }
        if x == f64::INFINITY {
            return Iv::ONE;
        }
        let d = Iv::point(x) - self.mu;
        let out = match self.kind {
            DistKind::Gaussian => {
                let z = d * self.inv_s_sqrt2;
                Iv::point(0.5) + z.erf() * 0.5
            }
            DistKind::Laplace => {
                let below = || ((d * self.inv_s).min(Iv::ZERO)).exp() * 0.5;
                let above = || Iv::ONE - (-(d * self.inv_s).max(Iv::ZERO)).exp() * 0.5;
                if d.hi <= 0.0 {
                    below()
                } else if d.lo >= 0.0 {
                    above()
                } else {
                    below().hull(above())
                }
            }
        };
        Iv { lo: out.lo.max(0.0), hi: out.hi.min(1.0) }
    }

    /// Range of the cumulative distribution function over `x`.
    pub fn cdf(&self, x: Iv) -> Iv {
        if x.lo == x.hi {
            return self.cdf_point(x.lo);
        }
        let m = x.mid();
        let rad = (m - x.lo).max(x.hi - m);
        if m.is_finite() && rad * self.hmax < 1e-6 {
            // Lipschitz bound with the maximal density saves one evaluation.
            let c = self.cdf_point(m);
            let r = Iv::point(rad) * Iv::point(self.hmax);
            let out = c + Iv { lo: -r.hi, hi: r.hi };
            return Iv { lo: out.lo.max(0.0), hi: out.hi.min(1.0) };
        }
        Iv { lo: self.cdf_point(x.lo).lo, hi: self.cdf_point(x.hi).hi }
    }

    /// Mass of the interval between `a` and `b`, zero when `b <= a`.
    pub fn mass(&self, a: Iv, b: Iv) -> Iv {
        if b.hi <= a.lo {
            return Iv::ZERO;
        }
        (self.cdf(b) - self.cdf(a)).clamp_nonneg()
    }
}

/// Tuning knobs of the quadrature engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadConfig {
    /// Maximum number of cells refined per path.
    pub node_cap: usize,
    /// Fractional bits of reported enclosure endpoints.
    pub working_bits: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { node_cap: 1_000_000, working_bits: 64 }
    }
}

/// Result of evaluating a plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadResult {
    pub enclosure: Enclosure,
    /// False when the node cap stopped refinement before the target width
    /// was reached; the enclosure is still sound.
    pub conforming: bool,
    pub nodes: usize,
}

/// Evaluates a plan to an enclosure of width at most `target_width`.
///
/// The enclosure covers the plan's value; the tail slack is not added here.
pub fn eval_plan(plan: &IntegralPlan, target_width: &Rat, cfg: &QuadConfig) -> QuadResult {
    let budget = Budget::new(cfg.node_cap);
    // Leave room for the outward rounding to the reporting grid.
    let grid = pow2(-(cfg.working_bits as i64));
    let tol = to_f64(&(target_width - &grid * Rat::from_integer(2.into())).max(target_width / Rat::from_integer(2.into())));
    let iv = eval_expr(&plan.expr, &plan.eps, tol, &budget);
    let iv = Iv { lo: iv.lo.max(0.0), hi: iv.hi.min(1.0).max(iv.lo.max(0.0)) };
    let enclosure = Enclosure::from_iv(iv).round_outward(cfg.working_bits).clamp_probability();
    let conforming = !budget.exceeded() && &enclosure.width() <= target_width;
    QuadResult { enclosure, conforming, nodes: budget.used() }
}

fn eval_expr(e: &PlanExpr, eps: &Rat, tol: f64, budget: &Budget) -> Iv {
    match e {
        PlanExpr::Zero(_) => Iv::ZERO,
        PlanExpr::One => Iv::ONE,
        PlanExpr::Product(items) => {
            let share = tol / items.len().max(1) as f64;
            items.iter().fold(Iv::ONE, |acc, i| acc * eval_expr(i, eps, share, budget))
        }
        PlanExpr::Sum(items) => {
            let share = tol / items.len().max(1) as f64;
            items.iter().fold(Iv::ZERO, |acc, i| acc + eval_expr(i, eps, share, budget))
        }
        PlanExpr::Nest { .. } => {
            let region = region_of(e, eps);
            engine::integrate_region(&region, tol, budget)
        }
    }
}

/// Flattens a nest into variables with constant limits and linear
/// constraints `sum c_i x_i + d <= 0` between them.
fn region_of(e: &PlanExpr, eps: &Rat) -> Region {
    let layers = e.layers();
    let local: BTreeMap<usize, usize> = layers.iter().enumerate().map(|(i, l)| (l.var, i)).collect();
    let mut vars = Vec::with_capacity(layers.len());
    let mut cons = Vec::new();
    for (i, l) in layers.iter().enumerate() {
        let mut lo: Option<Rat> = None;
        let mut hi: Option<Rat> = None;
        for f in &l.lower.terms {
            if f.is_constant() {
                if lo.as_ref().is_none_or(|c| &f.constant > c) {
                    lo = Some(f.constant.clone());
                }
            } else {
                let mut coeffs: Vec<(usize, Rat)> =
                    f.coeffs.iter().map(|(v, c)| (local[v], c.clone())).collect();
                coeffs.push((i, -Rat::one()));
                cons.push(RatCon { coeffs, constant: f.constant.clone() });
            }
        }
        for f in &l.upper.terms {
            if f.is_constant() {
                if hi.as_ref().is_none_or(|c| &f.constant < c) {
                    hi = Some(f.constant.clone());
                }
            } else {
                let mut coeffs: Vec<(usize, Rat)> =
                    f.coeffs.iter().map(|(v, c)| (local[v], -c.clone())).collect();
                coeffs.push((i, Rat::one()));
                cons.push(RatCon { coeffs, constant: -f.constant.clone() });
            }
        }
        vars.push(VarSpec {
            kernel: DensityKernel::new(&l.dist, eps),
            mean: l.dist.mean.clone(),
            lo: lo.expect("every layer has a truncation box"),
            hi: hi.expect("every layer has a truncation box"),
            order: l.var,
        });
    }
    Region { vars, cons }
}
