//! Plan construction, thresholds and the depth optimizer.

mod common;

use common::{bench, exp_bounds, normal_cdf_bounds, val};
use dipgauss::benchmarks::Family;
use dipgauss::dsl::{parse, DistKind};
use dipgauss::integrals::{
    base_integral, build_plan, AffineForm, Layer, choose_threshold_for, depth_stats, gen_expr, optimize, tail_bound, BoundKind,
    DependencyGraph, PathIntegral, PlanExpr, ThresholdMode, ZeroReason,
};
use dipgauss::quadrature::{eval_plan, Enclosure, QuadConfig};
use dipgauss::rational::{pow2, rat, rat_int, to_f64, Rat};
use dipgauss::semantics::{run, to_guard_system, GuardSystem};
use num_traits::{One, Zero};
use proptest::prelude::*;

fn guard_system(src: &str, u: &[(&str, i64)], o: &[(&str, i64)]) -> GuardSystem {
    let p = parse(src).unwrap();
    to_guard_system(&run(&val(u), &val(o), &p)[0])
}

fn svt_path() -> GuardSystem {
    let p = bench(Family::SvtGauss, 2);
    to_guard_system(&run(&val(&[("q_1", 0), ("q_2", 1)]), &val(&[("out_1", 0), ("out_2", 1)]), &p)[0])
}

#[test]
fn adaptive_threshold_for_one_gaussian() {
    let t = choose_threshold_for(&[DistKind::Gaussian], 16, &ThresholdMode::Adaptive);
    let closed_form = (2.0 * (2f64.powi(18)).ln()).sqrt();
    assert!((t.th[0] - closed_form).abs() < 1e-6, "{}", t.th[0]);
    assert!(t.tail_slack <= pow2(-17));
}

#[test]
fn laplace_tail_bound_at_eight() {
    // e^(-8 sqrt 2) = (e^(-sqrt 2))^8 with sqrt 2 in [1414213562, 1414213563] / 10^9
    let b = tail_bound(DistKind::Laplace, 8.0);
    let lo = exp_bounds(&(-rat(1_414_213_563, 1_000_000_000))).0.pow(8);
    let hi = exp_bounds(&(-rat(1_414_213_562, 1_000_000_000))).1.pow(8);
    assert!(b >= lo, "bound below the true tail");
    assert!(b <= hi * rat(1_000_001, 1_000_000));
    assert!((to_f64(&b) - 1.22e-5).abs() < 0.01e-5);
}

#[test]
fn gaussian_tail_bound_dominates_the_true_tail() {
    for th in [1i64, 2, 3, 4, 5] {
        let (phi_lo, _) = normal_cdf_bounds(&rat_int(th));
        let true_tail_upper = (Rat::one() - phi_lo) * rat_int(2);
        assert!(tail_bound(DistKind::Gaussian, th as f64) >= true_tail_upper, "th = {th}");
    }
}

#[test]
fn fixed_mode_slack_is_the_sum_of_bounds() {
    let mode = ThresholdMode::default();
    let t = choose_threshold_for(&[DistKind::Gaussian, DistKind::Laplace, DistKind::Gaussian], 16, &mode);
    assert_eq!(t.th, [4.0, 8.0, 4.0]);
    let sum = tail_bound(DistKind::Gaussian, 4.0) * rat_int(2) + tail_bound(DistKind::Laplace, 8.0);
    assert_eq!(t.tail_slack, sum);
}

fn near(f: &AffineForm, value: f64) -> bool {
    f.is_constant() && (to_f64(&f.constant) - value).abs() < 1e-9
}

fn layer<'a>(base: &'a PathIntegral, name: &str) -> &'a Layer {
    base.layers.iter().find(|l| l.name == name).expect("layer present")
}

#[test]
fn svt_path_attaches_each_guard_to_an_upper_limit() {
    // r_1 < rT bounds r_1 above by rT; rT <= r_2 bounds rT above by r_2.
    let gs = svt_path();
    let plan = build_plan(&gs, &rat(1, 2), &[4.0, 4.0, 4.0]);
    let base = base_integral(&plan).unwrap();
    let names: Vec<&str> = base.layers.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["r_2", "rT", "r_1"]);
    let r2 = layer(&base, "r_2");
    assert!(r2.lower.terms.iter().any(|f| near(f, -31.0)));
    assert!(r2.upper.terms.iter().any(|f| near(f, 33.0)));
    let rt = layer(&base, "rT");
    assert!(rt.lower.terms.iter().any(|f| near(f, -16.0)));
    assert_eq!(rt.upper.kind, BoundKind::Min);
    assert!(rt.upper.terms.iter().any(|f| f.coeffs.get(&2) == Some(&Rat::one()) && f.constant.is_zero()));
    assert!(rt.upper.terms.iter().any(|f| near(f, 16.0)));
    let r1 = layer(&base, "r_1");
    assert!(r1.lower.terms.iter().any(|f| near(f, -32.0)));
    assert!(r1.upper.terms.iter().any(|f| f.coeffs.get(&0) == Some(&Rat::one()) && f.constant.is_zero()));
    assert!(DependencyGraph::of(&base).is_acyclic());
    assert_eq!(optimize(&plan).unwrap().depth(), 3);
}

#[test]
fn star_graph_factors_below_the_shared_source() {
    let gs = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0;
         a ~ gauss(0, 1/eps); b ~ gauss(0, 1/eps); c ~ gauss(0, 1/eps);
         if (b < a) { if (c < a) { y := 1; } }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = build_plan(&gs, &Rat::one(), &[4.0; 3]);
    let base = base_integral(&plan).unwrap();
    let g = DependencyGraph::of(&base);
    assert_eq!(g.edges.len(), 2);
    let expr = gen_expr(&g, &base).unwrap();
    assert_eq!(expr.depth(), 2);
    match expr {
        PlanExpr::Nest { layers, inner } => {
            assert_eq!(layers.len(), 1);
            assert_eq!(layers[0].name, "a");
            assert!(matches!(*inner, PlanExpr::Product(ref items) if items.len() == 2));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn chain_keeps_its_depth_and_isolated_nodes_become_a_product() {
    let chain = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0;
         a ~ gauss(0, 1/eps); b ~ gauss(0, 1/eps); c ~ gauss(0, 1/eps);
         if (a < b) { if (b < c) { y := 1; } }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = optimize(&build_plan(&chain, &Rat::one(), &[4.0; 3])).unwrap();
    assert_eq!(plan.depth(), 3);

    let isolated = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0;
         a ~ gauss(0, 1/eps); b ~ gauss(0, 1/eps);
         if (a < 0) { if (b < 1) { y := 1; } }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = optimize(&build_plan(&isolated, &Rat::one(), &[4.0; 2])).unwrap();
    assert_eq!(plan.depth(), 1);
    assert!(matches!(plan.expr, PlanExpr::Product(ref items) if items.len() == 2));
}

#[test]
fn single_constraint_gives_one_layer() {
    let gs = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0; r ~ gauss(0, 2/eps); if (r >= 0) { y := 1; }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = build_plan(&gs, &Rat::one(), &[4.0]);
    assert_eq!(depth_stats(std::slice::from_ref(&plan)), (1, 1.0));
    let layer = &base_integral(&plan).unwrap().layers[0];
    assert!(layer.lower.terms.iter().any(|f| f.constant.is_zero()));
    assert!(layer.lower.terms.iter().any(|f| near(f, -8.0)));
    assert!(layer.upper.terms.iter().any(|f| near(f, 8.0)));
}

#[test]
fn false_constant_guard_and_equalities_give_zero_plans() {
    let gs = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0; r ~ gauss(0, 1/eps); s := r - r; if (s > 1) { y := 1; }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = build_plan(&gs, &Rat::one(), &[]);
    assert_eq!(plan.expr, PlanExpr::Zero(ZeroReason::InfeasibleConstantGuard));

    let gs = guard_system(
        "input x in {0}; output y in {0, 1}; y := 0; r ~ gauss(0, 1/eps); if (r == 1) { y := 1; }",
        &[("x", 0)],
        &[("y", 1)],
    );
    let plan = build_plan(&gs, &Rat::one(), &[4.0]);
    assert_eq!(plan.expr, PlanExpr::Zero(ZeroReason::ZeroMeasureEquality));
    let r = eval_plan(&plan, &pow2(-16), &QuadConfig::default());
    assert_eq!(r.enclosure, Enclosure::zero());
}

#[test]
fn svt_depths_with_and_without_factoring() {
    let eps = rat(1, 2);
    for (n, opt, plain) in [(1, 2, 2), (2, 3, 3), (3, 3, 4), (4, 3, 5), (5, 3, 6)] {
        let p = bench(Family::SvtGauss, n);
        let mut optimized = Vec::new();
        let mut unoptimized = Vec::new();
        for u in p.input_space() {
            for o in p.output_space() {
                for fs in run(&u, &o, &p) {
                    let gs = to_guard_system(&fs);
                    let plan = build_plan(&gs, &eps, &vec![4.0; gs.vars.len()]);
                    optimized.push(optimize(&plan).unwrap());
                    unoptimized.push(plan);
                }
            }
        }
        assert_eq!(depth_stats(&optimized).0, opt, "N = {n}");
        assert_eq!(depth_stats(&unoptimized).0, plain, "N = {n}");
    }
}

fn plans_of(family: Family, n: usize) -> Vec<dipgauss::integrals::IntegralPlan> {
    let p = bench(family, n);
    let eps = Rat::one();
    let mut out = Vec::new();
    for u in p.input_space().into_iter().take(2) {
        for o in p.output_space() {
            for fs in run(&u, &o, &p) {
                let gs = to_guard_system(&fs);
                out.push(build_plan(&gs, &eps, &vec![4.0; gs.vars.len()]));
            }
        }
    }
    out
}

#[test]
fn optimization_preserves_the_value() {
    let width = pow2(-20);
    let cfg = QuadConfig::default();
    for (family, n) in [(Family::SvtGauss, 3), (Family::NoisyMaxGauss, 3), (Family::SvtLaplace, 2), (Family::MRange, 1)] {
        for plan in plans_of(family, n) {
            let opt = optimize(&plan).unwrap();
            assert!(opt.depth() <= plan.depth());
            let a = eval_plan(&plan, &width, &cfg).enclosure;
            let b = eval_plan(&opt, &width, &cfg).enclosure;
            assert!(a.intersects(&b), "{family}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn every_dependency_graph_is_acyclic() {
    for family in Family::ALL {
        for n in 1..=3 {
            let Ok(p) = dipgauss::benchmarks::program(&dipgauss::benchmarks::BenchmarkSpec::new(family, n)) else {
                continue;
            };
            let u = p.input_space().remove(0);
            for o in p.output_space() {
                for fs in run(&u, &o, &p) {
                    let gs = to_guard_system(&fs);
                    let plan = build_plan(&gs, &Rat::one(), &vec![4.0; gs.vars.len()]);
                    if let Some(base) = base_integral(&plan) {
                        assert!(DependencyGraph::of(&base).is_acyclic(), "{family} N={n}");
                        assert_eq!(base_layers_sorted(&base), (0..gs.vars.len()).collect::<Vec<_>>());
                    }
                }
            }
        }
    }
}

fn base_layers_sorted(base: &PathIntegral) -> Vec<usize> {
    let mut v: Vec<usize> = base.layers.iter().map(|l| l.var).collect();
    v.sort();
    v
}

proptest! {
    #[test]
    fn adaptive_slack_fits_its_budget(precision in 1u32..40, gauss in 0usize..5, laplace in 0usize..5) {
        let mut kinds = vec![DistKind::Gaussian; gauss];
        kinds.extend(vec![DistKind::Laplace; laplace]);
        let t = choose_threshold_for(&kinds, precision, &ThresholdMode::Adaptive);
        prop_assert_eq!(t.th.len(), kinds.len());
        prop_assert!(t.tail_slack <= pow2(-(precision as i64) - 1));
    }

    #[test]
    fn tail_bounds_decrease_with_the_threshold(a in 0.5f64..12.0, d in 0.01f64..3.0) {
        for k in [DistKind::Gaussian, DistKind::Laplace] {
            prop_assert!(tail_bound(k, a + d) <= tail_bound(k, a));
        }
    }
}
