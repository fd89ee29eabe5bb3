//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the lines always reach the
//! output; the process fails if any criterion fails.

mod common;

use common::{bench, edge_inputs, exp_bounds, normal_cdf_bounds, val};
use dipgauss::benchmarks::{adjacency, adjacency_for, svt_gauss_budget, AdjacencyKind, BenchmarkSpec, Family};
use dipgauss::dsl::{parse, DistKind, Program};
use dipgauss::integrals::ThresholdMode;
use dipgauss::oracle::mc_distribution;
use dipgauss::quadrature::interval::Iv;
use dipgauss::quadrature::{enclose_exp_within, DensityKernel, Enclosure, QuadConfig};
use dipgauss::rational::{from_f64, pow2, rat, rat_int, to_f64, Rat};
use dipgauss::semantics::{eval_const, exec, DistSpec, Valuation};
use dipgauss::verifier::{
    check_rephrasing, compute_detailed, program_depth_stats, verify_with_refinement, AdjacencyRelation,
    VerificationParams, Verdict,
};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn params(eps: Rat, eps_prv: Rat) -> VerificationParams {
    VerificationParams::new(eps, eps_prv, rat(1, 100))
}

fn run_verdict(label: &str, p: &Program, phi: &AdjacencyRelation, prm: &VerificationParams, want: Verdict) -> Outcome {
    let start = Instant::now();
    let report = verify_with_refinement(p, phi, prm).map_err(|e| format!("{label}: {e}"))?;
    let took = start.elapsed();
    if report.verdict != want {
        return Err(format!("{label}: got {} instead of {want}", report.verdict));
    }
    if took > Duration::from_secs(300) {
        return Err(format!("{label}: took {took:?}"));
    }
    if want == Verdict::NotDp {
        let cex = report.counterexample_pair().ok_or_else(|| format!("{label}: no counterexample"))?;
        if cex.delta_min <= prm.delta {
            return Err(format!("{label}: counterexample Delta_min does not exceed delta"));
        }
    }
    Ok(format!("{label} {} in {:.2}s", report.verdict, took.as_secs_f64()))
}

fn criterion_1() -> Outcome {
    use Family::*;
    let all = AdjacencyKind::All;
    let single = AdjacencyKind::Single;
    let half = rat(1, 2);
    let runs: Vec<(&str, Family, usize, &AdjacencyKind, Rat, Rat, Verdict)> = vec![
        ("svt-gauss N=2 all", SvtGauss, 2, &all, half.clone(), rat(31, 25), Verdict::Dp),
        ("svt-gauss N=5 single", SvtGauss, 5, &single, half.clone(), rat(31, 25), Verdict::Dp),
        ("leaky-1 N=5", SvtGaussLeaky1, 5, &all, rat_int(8), half.clone(), Verdict::NotDp),
        ("leaky-2 N=3", SvtGaussLeaky2, 3, &all, half.clone(), half.clone(), Verdict::NotDp),
        ("leaky-2 N=6", SvtGaussLeaky2, 6, &all, half.clone(), half.clone(), Verdict::NotDp),
        ("noisy-max N=2", NoisyMaxGauss, 2, &all, half.clone(), half.clone(), Verdict::Dp),
        ("noisy-max N=3", NoisyMaxGauss, 3, &all, half.clone(), half.clone(), Verdict::Dp),
        ("noisy-min N=2", NoisyMinGauss, 2, &all, half.clone(), half.clone(), Verdict::Dp),
        ("noisy-min N=3", NoisyMinGauss, 3, &all, half.clone(), half.clone(), Verdict::Dp),
        ("svt-laplace N=2 single", SvtLaplace, 2, &single, half.clone(), half.clone(), Verdict::Dp),
    ];
    let mut lines = Vec::new();
    for (label, family, n, adj, eps, eps_prv, want) in runs {
        let p = bench(family, n);
        let phi = adjacency(adj, n).map_err(|e| e.to_string())?;
        lines.push(run_verdict(label, &p, &phi, &params(eps, eps_prv), want)?);
    }
    Ok(lines.join("; "))
}

fn criterion_2() -> Outcome {
    let half = rat(1, 2);
    let mut opt = Vec::new();
    let mut plain = Vec::new();
    for n in 1..=5 {
        let p = bench(Family::SvtGauss, n);
        let inputs = p.input_space();
        opt.push(program_depth_stats(&p, &half, &inputs, true).map_err(|e| e.to_string())?.0);
        plain.push(program_depth_stats(&p, &half, &inputs, false).map_err(|e| e.to_string())?.0);
    }
    let p = bench(Family::NoisyMaxGauss, 3);
    let (_, avg) = program_depth_stats(&p, &half, &p.input_space(), true).map_err(|e| e.to_string())?;
    let detail = format!("optimized {opt:?}, unoptimized {plain:?}, noisy-max N=3 avg {avg}");
    if opt == [2, 3, 3, 3, 3] && plain == [2, 3, 4, 5, 6] && avg == 2.5 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn final_states(spec: BenchmarkSpec) -> usize {
    let p = dipgauss::benchmarks::program(&spec).expect("benchmark generates");
    let u: Valuation = p.inputs.iter().map(|d| (d.name.clone(), Rat::zero())).collect();
    exec(&p, &u).iter().filter(|fs| eval_const(fs)).count()
}

fn criterion_3() -> Outcome {
    let svt = final_states(BenchmarkSpec::new(Family::SvtGauss, 5));
    let range = final_states(BenchmarkSpec::new(Family::MRange, 1));
    let kmm = final_states(BenchmarkSpec::new(Family::KMinMaxGauss, 3));
    let detail = format!("svt-gauss N=5: {svt}, m-range N=1: {range}, k-min-max-gauss N=3: {kmm}");
    if (svt, range, kmm) == (6, 7, 16) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Every generated benchmark with `N <= 3`.
fn small_benchmarks() -> Vec<BenchmarkSpec> {
    let mut out = Vec::new();
    for family in Family::ALL {
        for n in 1..=3 {
            let spec = BenchmarkSpec::new(family, n);
            if dipgauss::benchmarks::emit(&spec).is_ok() {
                out.push(spec);
            }
        }
    }
    out
}

fn criterion_4() -> Outcome {
    const SAMPLES: u64 = 1_000_000;
    let start = Instant::now();
    let width_cap = pow2(-16);
    let cfg = QuadConfig::default();
    let mut checked = 0usize;
    let mut worst_z = 0.0f64;
    for (i, spec) in small_benchmarks().iter().enumerate() {
        let p = dipgauss::benchmarks::program(spec).map_err(|e| e.to_string())?;
        for eps in [rat(1, 2), rat_int(1)] {
            for (j, u) in edge_inputs(&p).iter().enumerate() {
                let label = format!("{} eps={} input #{j}", spec.label(), eps);
                let seed = 1000 * i as u64 + 10 * j as u64 + u64::from(eps.is_one());
                let hist = mc_distribution(&p, &eps, u, SAMPLES, seed).map_err(|e| format!("{label}: {e}"))?;
                let mut total = Enclosure::zero();
                for o in p.output_space() {
                    let r = compute_detailed(&p, &eps, u, &o, 16, &ThresholdMode::Adaptive, true, &cfg)
                        .map_err(|e| format!("{label}: {e}"))?;
                    if !r.conforming || r.enclosure.width() > width_cap {
                        return Err(format!("{label}: enclosure of {o:?} is wider than 2^-16"));
                    }
                    total = total.add(&r.enclosure);
                    let mc = *hist.get(&o).unwrap_or(&0) as f64 / SAMPLES as f64;
                    let z = mc_distance(mc, &r.enclosure, SAMPLES);
                    worst_z = worst_z.max(z);
                    if z > 4.0 {
                        return Err(format!("{label}: Monte Carlo {mc} is {z:.2} standard errors from {o:?}"));
                    }
                    checked += 1;
                }
                if !total.contains(&Rat::one()) {
                    return Err(format!("{label}: the output enclosures sum to {total:?}"));
                }
            }
        }
    }
    let took = start.elapsed();
    if took > Duration::from_secs(600) {
        return Err(format!("took {took:?}"));
    }
    Ok(format!("{checked} output probabilities, worst distance {worst_z:.2} se, {:.1}s", took.as_secs_f64()))
}

/// Distance from a Monte Carlo frequency to an enclosure in standard errors.
/// The standard error is the larger of the sample one and the one implied by
/// the enclosure, so that outputs never observed still get a scale.
fn mc_distance(mc: f64, e: &Enclosure, n: u64) -> f64 {
    let (lo, hi) = (to_f64(&e.lo), to_f64(&e.hi));
    let gap = if mc < lo { lo - mc } else if mc > hi { mc - hi } else { 0.0 };
    let p = 0.5 * (lo + hi);
    let se = (mc * (1.0 - mc) / n as f64).sqrt().max((p * (1.0 - p) / n as f64).sqrt());
    if gap == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        gap / se
    }
}

fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    for (label, family, eps_prv) in
        [("svt-gauss N=2", Family::SvtGauss, rat(31, 25)), ("leaky-2 N=2", Family::SvtGaussLeaky2, rat(1, 2))]
    {
        let p = bench(family, 2);
        let phi = adjacency_for(&AdjacencyKind::All, &p).map_err(|e| e.to_string())?;
        let r = check_rephrasing(&p, &phi, &params(rat(1, 2), eps_prv)).map_err(|e| e.to_string())?;
        let line = format!("{label}: per-output {}, subsets {} over {} sets", r.per_output, r.subsets, r.subset_count);
        if !r.agrees() || !r.per_output.is_decisive() || r.subset_count != 8 {
            return Err(line);
        }
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..10_000 {
        let a = random_iv(&mut rng);
        let b = random_iv(&mut rng);
        let x = rng.random_range(a.lo..=a.hi);
        let y = rng.random_range(b.lo..=b.hi);
        let (xr, yr) = (from_f64(x), from_f64(y));
        let exact = [(a + b, &xr + &yr), (a - b, &xr - &yr), (a * b, &xr * &yr)];
        for (iv, v) in exact {
            if !Enclosure::from_iv(iv).contains(&v) {
                violations += 1;
            }
        }
        if !b.contains(0.0) && !Enclosure::from_iv(a / b).contains(&(&xr / &yr)) {
            violations += 1;
        }
        let (xs, ys) = (Enclosure::point(xr.clone()), Enclosure::point(yr.clone()));
        if !xs.add(&ys).contains(&(&xr + &yr)) {
            violations += 1;
        }
        let small = from_f64(x.clamp(-4.0, 4.0));
        let (lo, hi) = exp_bounds(&small);
        let e = Enclosure::from_iv(Iv::point(to_f64(&small)).exp());
        if !(e.lo <= lo && hi <= e.hi) {
            violations += 1;
        }
    }
    if violations > 0 {
        return Err(format!("{violations} containment violations"));
    }
    let target = 0.682_689_492_137_085_9;
    let (c_lo, c_hi) = normal_cdf_bounds(&rat_int(1));
    let two_sided = (&c_lo * rat_int(2) - rat_int(1), &c_hi * rat_int(2) - rat_int(1));
    for sigma in [1i64, 2, 4] {
        let d = DistSpec { kind: DistKind::Gaussian, mean: Rat::zero(), a: rat_int(sigma) };
        let k = DensityKernel::new(&d, &Rat::one());
        let m = Enclosure::from_iv(k.mass(Iv::point(-sigma as f64), Iv::point(sigma as f64)));
        if !m.contains_f64(target) || !(m.lo <= two_sided.0 && two_sided.1 <= m.hi) {
            return Err(format!("mass of [-{sigma}, {sigma}] is {m:?}"));
        }
    }
    let x = rat(31, 25);
    let tol = rat(1, 1_000_000_000);
    let e = enclose_exp_within(&x, &tol);
    let (lo, hi) = exp_bounds(&x);
    if e.width() > tol || !(e.lo <= lo && hi <= e.hi) {
        return Err(format!("exp(1.24) enclosure {e:?}"));
    }
    Ok(format!("10000 random cases without violations; width of exp(1.24) {:.2e}", to_f64(&e.width())))
}

fn random_iv(rng: &mut ChaCha8Rng) -> Iv {
    let scale = 10f64.powi(rng.random_range(-3..=3));
    let a = rng.random_range(-1.0..1.0) * scale;
    let w = rng.random_range(0.0..1.0) * scale * if rng.random_bool(0.3) { 0.0 } else { 1.0 };
    Iv::new(a, a + w)
}

/// One Gaussian sample, thresholded at zero; the adjacent inputs shift its
/// mean by one. The privacy loss of the pair `(1, 0)` is
/// `Phi(1) - e^(1/2) / 2`. Decisive verdicts use adaptive thresholds, whose
/// tail slack shrinks with the precision; fixed thresholds keep a slack of
/// about `6.7e-4` and so cannot resolve a margin of `2^-10`.
const SYNTHETIC: &str = "input x in {0, 1};
output o in {0, 1};
r ~ gauss(x, 1/eps);
if (r >= 0) { o := 1; } else { o := 0; }
";

fn criterion_7() -> Outcome {
    let p = parse(SYNTHETIC).map_err(|e| e.to_string())?;
    let phi = AdjacencyRelation::new(vec![(val(&[("x", 1)]), val(&[("x", 0)]))]);
    let (phi_lo, phi_hi) = normal_cdf_bounds(&Rat::one());
    let (e_lo, e_hi) = exp_bounds(&rat(1, 2));
    let delta_lo = phi_lo - e_hi / rat_int(2);
    let delta_hi = phi_hi - e_lo / rat_int(2);
    let center = (&delta_lo + &delta_hi) / rat_int(2);
    let margin = pow2(-10);
    let mut lines = Vec::new();
    for (delta, want) in [(&center + &margin, Verdict::Dp), (&center - &margin, Verdict::NotDp)] {
        let mut prm = VerificationParams::new(Rat::one(), rat(1, 2), delta);
        prm.max_precision = 20;
        prm.threshold_mode = ThresholdMode::Adaptive;
        let r = verify_with_refinement(&p, &phi, &prm).map_err(|e| e.to_string())?;
        if r.verdict != want {
            return Err(format!("delta = Delta {} 2^-10 gave {}", if want == Verdict::Dp { "+" } else { "-" }, r.verdict));
        }
        lines.push(format!("{want} at {} bits", r.precision_used));
    }
    for (name, mode) in [("fixed", ThresholdMode::default()), ("adaptive", ThresholdMode::Adaptive)] {
        let mut prm = VerificationParams::new(Rat::one(), rat(1, 2), center.clone());
        prm.threshold_mode = mode;
        let r = verify_with_refinement(&p, &phi, &prm).map_err(|e| e.to_string())?;
        let pc = &r.pairs[0];
        if r.verdict != Verdict::Unknown || !(pc.delta_min <= center && center <= pc.delta_max) {
            return Err(format!("delta inside the enclosure gave {} with {name} thresholds", r.verdict));
        }
        lines.push(format!("Unknown at {} bits with {name} thresholds", r.precision_used));
    }
    Ok(format!("Delta = {:.6}: {}", to_f64(&center), lines.join(", ")))
}

fn criterion_8() -> Outcome {
    let b = svt_gauss_budget(&rat(1, 2), &rat(1, 100)).map_err(|e| e.to_string())?;
    let x = to_f64(&b);
    if (1.2380..=1.2392).contains(&x) {
        Ok(format!("{x:.6}"))
    } else {
        Err(format!("{x:.6}"))
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "verdicts", criterion_1),
        (2, "optimizer depths", criterion_2),
        (3, "final states", criterion_3),
        (4, "probability soundness", criterion_4),
        (5, "rephrasing equivalence", criterion_5),
        (6, "interval kernels", criterion_6),
        (7, "refinement", criterion_7),
        (8, "budget", criterion_8),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
