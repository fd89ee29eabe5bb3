//! Truncated Taylor series in one or two variables with interval
//! coefficients.
//!
//! A series is stored as a flat vector of coefficients indexed by the
//! monomials of total degree at most `order`. When every variable is expanded
//! around a point, the coefficients enclose the Taylor coefficients of the
//! represented function there. When the expansion base is a box, each
//! coefficient encloses the corresponding Taylor coefficient at every point of
//! the box, which is what the Lagrange remainder needs.

use super::interval::Iv;
use super::DensityKernel;
use crate::dsl::DistKind;

/// Monomial layout and multiplication table for a fixed dimension and order.
#[derive(Debug, Clone)]
pub(crate) struct Space {
    pub dim: usize,
    pub order: usize,
    /// Exponents of each monomial.
    pub exps: Vec<[u8; 2]>,
    /// Triples `(i, j, k)` with `exps[i] + exps[j] == exps[k]`.
    mul: Vec<(u16, u16, u16)>,
}

pub(crate) type Series = Vec<Iv>;

impl Space {
    pub fn new(dim: usize, order: usize) -> Space {
        assert!((1..=2).contains(&dim), "only one or two variables are supported");
        let mut exps = Vec::new();
        for deg in 0..=order {
            if dim == 1 {
                exps.push([deg as u8, 0]);
            } else {
                for a in (0..=deg).rev() {
                    exps.push([a as u8, (deg - a) as u8]);
                }
            }
        }
        let index = |e: [u8; 2]| exps.iter().position(|x| *x == e);
        let mut mul = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                let e = [a[0] + b[0], a[1] + b[1]];
                if let Some(k) = index(e) {
                    mul.push((i as u16, j as u16, k as u16));
                }
            }
        }
        Space { dim, order, exps, mul }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        (self.exps[i][0] + self.exps[i][1]) as usize
    }

    pub fn constant(&self, c: Iv) -> Series {
        let mut out = vec![Iv::ZERO; self.len()];
        out[0] = c;
        out
    }

    pub fn sub(&self, a: &[Iv], b: &[Iv]) -> Series {
        a.iter().zip(b).map(|(x, y)| *x - *y).collect()
    }

    pub fn mul(&self, a: &[Iv], b: &[Iv]) -> Series {
        let mut out = vec![Iv::ZERO; self.len()];
        for &(i, j, k) in &self.mul {
            let (x, y) = (a[i as usize], b[j as usize]);
            if x == Iv::ZERO || y == Iv::ZERO {
                continue;
            }
            out[k as usize] = out[k as usize] + x * y;
        }
        out
    }

    /// Index of the monomial `s^a r^b`.
    pub fn index(&self, a: usize, b: usize) -> usize {
        let deg = a + b;
        if self.dim == 1 {
            deg
        } else {
            deg * (deg + 1) / 2 + b
        }
    }

    /// `g(z + a s + b r)` where `coeffs[k]` encloses `g^(k)(z)/k!`.
    pub fn compose_linear(&self, coeffs: &[Iv], a: Iv, b: Iv) -> Series {
        let mut out = vec![Iv::ZERO; self.len()];
        let mut pa = vec![Iv::ONE; self.order + 1];
        let mut pb = vec![Iv::ONE; self.order + 1];
        for k in 1..=self.order {
            pa[k] = pa[k - 1] * a;
            pb[k] = pb[k - 1] * b;
        }
        let mut binom = vec![1.0f64];
        for k in 0..=self.order {
            if k > 0 {
                let mut next = vec![1.0; k + 1];
                for j in 1..k {
                    next[j] = binom[j - 1] + binom[j];
                }
                binom = next;
            }
            if self.dim == 1 {
                out[k] = coeffs[k] * pa[k];
                continue;
            }
            for j in 0..=k {
                let m = pa[j] * pb[k - j];
                if m == Iv::ZERO {
                    continue;
                }
                out[self.index(j, k - j)] = coeffs[k] * m * binom[j];
            }
        }
        out
    }

    /// Integral over a cell of a function whose coefficients below the top
    /// order are `center` and whose top-order coefficients, enclosed over the
    /// whole cell, are `boxed`. `plain[i]` is the cell moment of monomial `i`
    /// and `absolute[i]` bounds the moment of its absolute value.
    pub fn integrate(&self, center: &[Iv], boxed: &[Iv], plain: &[Iv], absolute: &[Iv]) -> Iv {
        let mut sum = Iv::ZERO;
        for (i, e) in self.exps.iter().enumerate() {
            if self.degree(i) < self.order {
                sum = sum + center[i] * plain[i];
            } else if e.iter().all(|x| x % 2 == 0) {
                // The monomial is non-negative, so its weight is a measure.
                sum = sum + boxed[i] * plain[i];
            } else {
                let m = boxed[i].mid();
                let rad = (m - boxed[i].lo).max(boxed[i].hi - m);
                let spread = Iv::point(rad) * absolute[i];
                sum = sum + Iv::point(m) * plain[i] + Iv { lo: -spread.hi, hi: spread.hi };
            }
        }
        sum
    }
}

/// Smooth piece of a density used for a series expansion. Laplace densities
/// are expanded through the analytic formula of the side of the mean that a
/// cell lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Branch {
    Whole,
    Left,
    Right,
}

fn inv_factorials(n: usize) -> Vec<Iv> {
    let mut out = Vec::with_capacity(n + 1);
    let mut f = Iv::ONE;
    out.push(f);
    for i in 1..=n {
        f = f / Iv::point(i as f64);
        out.push(f);
    }
    out
}

/// Taylor coefficients of the density at `z`, up to `order`.
pub(crate) fn pdf_series(k: &DensityKernel, branch: Branch, z: Iv, order: usize) -> Series {
    let fact = inv_factorials(order);
    match (k.kind, branch) {
        (DistKind::Gaussian, _) => {
            let u = (z - k.mu) * k.inv_s;
            let h0 = k.pdf(z);
            let he = hermite(u, order);
            let mut pow = Iv::ONE;
            (0..=order)
                .map(|i| {
                    let c = h0 * he[i] * pow * fact[i];
                    pow = pow * (-k.inv_s);
                    c
                })
                .collect()
        }
        (DistKind::Laplace, b) => {
            let (t, rate) = laplace_branch(k, b, z);
            let h0 = t * k.inv_s;
            let mut pow = Iv::ONE;
            (0..=order)
                .map(|i| {
                    let c = h0 * pow * fact[i];
                    pow = pow * rate;
                    c
                })
                .collect()
        }
    }
}

/// Taylor coefficients of the distribution function at `z`, up to `order`.
pub(crate) fn cdf_series(k: &DensityKernel, branch: Branch, z: Iv, order: usize) -> Series {
    match (k.kind, branch) {
        (DistKind::Gaussian, _) => {
            let p = pdf_series(k, branch, z, order.saturating_sub(1));
            let mut out = Vec::with_capacity(order + 1);
            out.push(k.cdf(z));
            for i in 1..=order {
                out.push(p[i - 1] / Iv::point(i as f64));
            }
            out
        }
        (DistKind::Laplace, b) => {
            let fact = inv_factorials(order);
            let (t, rate) = laplace_branch(k, b, z);
            let left = b == Branch::Left;
            let mut out = Vec::with_capacity(order + 1);
            out.push(if left { t } else { Iv::ONE - t });
            let mut pow = rate;
            for f in fact.iter().skip(1) {
                let c = t * pow * *f;
                out.push(if left { c } else { -c });
                pow = pow * rate;
            }
            out
        }
    }
}

/// `(T, r)` with `T = e^{r (z - mu)} / 2` for the chosen Laplace branch.
fn laplace_branch(k: &DensityKernel, b: Branch, z: Iv) -> (Iv, Iv) {
    let rate = match b {
        Branch::Left => k.inv_s,
        Branch::Right => -k.inv_s,
        Branch::Whole => panic!("a Laplace expansion needs a side of the mean"),
    };
    (((z - k.mu) * rate).exp() * 0.5, rate)
}

/// Probabilists' Hermite polynomials `He_0..He_n` at `u`.
fn hermite(u: Iv, n: usize) -> Vec<Iv> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(Iv::ONE);
    if n >= 1 {
        out.push(u);
    }
    for i in 1..n {
        let next = u * out[i] - out[i - 1] * (i as f64);
        out.push(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::DistSpec;
    use num_rational::BigRational;

    fn gauss() -> DensityKernel {
        let d = DistSpec { kind: DistKind::Gaussian, mean: BigRational::from_integer(0.into()), a: BigRational::from_integer(1.into()) };
        DensityKernel::new(&d, &BigRational::from_integer(1.into()))
    }

    #[test]
    fn product_of_linear_series() {
        let sp = Space::new(2, 3);
        let mut x = sp.constant(Iv::point(1.0));
        x[sp.index(1, 0)] = Iv::ONE;
        let mut y = sp.constant(Iv::point(2.0));
        y[sp.index(0, 1)] = Iv::ONE;
        let p = sp.mul(&x, &y);
        // (1 + s)(2 + r) = 2 + 2s + r + s r
        assert!(p[0].contains(2.0));
        assert!(p[sp.index(1, 0)].contains(2.0));
        assert!(p[sp.index(0, 1)].contains(1.0));
        assert!(p[sp.index(1, 1)].contains(1.0));
    }

    #[test]
    fn cdf_series_matches_derivatives() {
        let k = gauss();
        let c = cdf_series(&k, Branch::Whole, Iv::point(0.5), 4);
        let phi = (-0.125f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((c[1].mid() - phi).abs() < 1e-14);
        assert!((c[2].mid() + 0.5 * phi / 2.0).abs() < 1e-14);
    }

    #[test]
    fn integral_of_polynomial() {
        let sp = Space::new(1, 2);
        let center = vec![Iv::ONE, Iv::ZERO, Iv::ZERO];
        let boxed = vec![Iv::ZERO, Iv::ZERO, Iv::ONE];
        // int_{-1}^{1} (1 + s^2) ds = 2 + 2/3
        let plain = [Iv::point(2.0), Iv::ZERO, Iv::point(2.0 / 3.0).hull(Iv::around(2.0 / 3.0))];
        let v = sp.integrate(&center, &boxed, &plain, &plain);
        assert!(v.contains(2.0 + 2.0 / 3.0));
    }
}
