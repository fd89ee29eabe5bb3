//! Benchmark generation, adjacency relations and the SVT budget.

mod common;

use common::{bench, val};
use dipgauss::benchmarks::{
    adjacency, adjacency_for, emit, parse_pairs, program, svt_gauss_budget, AdjacencyKind, BenchmarkError,
    BenchmarkSpec, Family,
};
use dipgauss::rational::{rat, to_f64, Rat};
use num_traits::{One, Zero};
use proptest::prelude::*;

/// Plain binary64 form of the budget, used as an independent reference.
fn budget_f64(eps: f64, delta: f64) -> f64 {
    5.0 * eps * eps / 32.0 + 5f64.sqrt() / 2.0 * eps * (1.0 / delta).ln().sqrt()
}

#[test]
fn every_supported_family_emits_a_valid_program() {
    for family in Family::ALL {
        for n in 1..=3 {
            let spec = BenchmarkSpec::new(family, n);
            match program(&spec) {
                Ok(p) => {
                    assert!(!p.inputs.is_empty(), "{family}");
                    assert!(!p.outputs.is_empty(), "{family}");
                }
                Err(e) => {
                    let k_min_max = matches!(family, Family::KMinMaxGauss | Family::KMinMaxLaplace);
                    assert!(family == Family::SvtLaplaceLeaky3 || (k_min_max && n <= spec.k), "{family} N={n}: {e}");
                    assert!(matches!(e, BenchmarkError::UnsupportedSpec(_)));
                }
            }
        }
    }
}

#[test]
fn family_names_round_trip() {
    for family in Family::ALL {
        assert_eq!(family.name().parse::<Family>().unwrap(), family);
    }
    assert!(matches!("no-such".parse::<Family>(), Err(BenchmarkError::UnsupportedSpec(_))));
}

#[test]
fn svt_text_uses_the_documented_scales() {
    let text = emit(&BenchmarkSpec::new(Family::SvtGauss, 2)).unwrap();
    assert!(text.contains("rT ~ gauss(0, 2/eps);"), "{text}");
    assert!(text.contains("r_1 ~ gauss(q_1, 4/eps);"), "{text}");
    assert!(text.contains("r_1 >= rT"), "{text}");
    let ge = emit(&BenchmarkSpec::new(Family::SvtGaussGe, 2)).unwrap();
    assert!(ge.contains("r_1 <= rT"), "{ge}");
    let lap = emit(&BenchmarkSpec::new(Family::SvtLaplace, 2)).unwrap();
    assert!(lap.contains("lap("), "{lap}");
    assert!(!lap.contains("gauss("), "{lap}");
}

#[test]
fn m_range_uses_the_shifted_upper_mean() {
    let text = emit(&BenchmarkSpec::new(Family::MRange, 1)).unwrap();
    assert!(text.contains("gauss(1, 8/eps)") || text.contains("lap(1, 8/eps)"), "{text}");
    assert!(text.contains("4/eps"), "{text}");
}

#[test]
fn leaky_families_are_flagged() {
    assert!(Family::SvtGaussLeaky1.is_leaky());
    assert!(!Family::SvtGauss.is_leaky());
    assert!(!Family::NoisyMaxGauss.is_leaky());
}

#[test]
fn adjacency_relation_sizes() {
    assert_eq!(adjacency(&AdjacencyKind::All, 1).unwrap().len(), 2);
    assert_eq!(adjacency(&AdjacencyKind::All, 2).unwrap().len(), 12);
    let single = adjacency(&AdjacencyKind::Single, 2).unwrap();
    assert_eq!(single.len(), 2);
    assert_eq!(single.pairs[0], (val(&[("q_1", 0), ("q_2", 0)]), val(&[("q_1", 0), ("q_2", 1)])));
    assert_eq!(single.pairs[1].0, single.pairs[0].1);
    let p = bench(Family::MRange, 1);
    let all = adjacency_for(&AdjacencyKind::All, &p).unwrap();
    let n = p.input_space().len();
    assert_eq!(all.len(), n * (n - 1));
}

#[test]
fn adjacency_kinds_parse() {
    assert_eq!("all".parse::<AdjacencyKind>().unwrap(), AdjacencyKind::All);
    assert_eq!("single".parse::<AdjacencyKind>().unwrap(), AdjacencyKind::Single);
    assert_eq!("file:pairs.json".parse::<AdjacencyKind>().unwrap(), AdjacencyKind::File("pairs.json".into()));
    assert!(matches!("every".parse::<AdjacencyKind>(), Err(BenchmarkError::BadPairFile(_))));
}

#[test]
fn pair_files() {
    let phi = parse_pairs(r#"[{"u": {"q_1": 0, "q_2": "1/2"}, "u2": {"q_1": 1, "q_2": "1/2"}}]"#).unwrap();
    assert_eq!(phi.len(), 1);
    assert_eq!(phi.pairs[0].0["q_2"], rat(1, 2));
    assert_eq!(phi.pairs[0].1["q_1"], Rat::one());
    for bad in ["{}", "[]", r#"[{"u": {"q_1": 0}}]"#, r#"[{"u": {"q_1": 0.5}, "u2": {}}]"#, "not json"] {
        assert!(matches!(parse_pairs(bad), Err(BenchmarkError::BadPairFile(_))), "{bad}");
    }
    let missing = adjacency(&AdjacencyKind::File("/nonexistent/pairs.json".into()), 1);
    assert!(matches!(missing, Err(BenchmarkError::BadPairFile(_))));
}

#[test]
fn budget_matches_the_closed_form() {
    let b = svt_gauss_budget(&rat(1, 2), &rat(1, 100)).unwrap();
    let reference = budget_f64(0.5, 0.01);
    assert!(to_f64(&b) >= reference - 1e-12);
    assert!((to_f64(&b) - reference).abs() < 1e-12);
    assert!((to_f64(&b) - 1.238_694).abs() < 1e-6);
}

#[test]
fn budget_edge_cases() {
    let tiny = svt_gauss_budget(&rat(1, 1_000_000_000), &rat(1, 100)).unwrap();
    assert!(to_f64(&tiny) < 1e-8);
    let eps = rat(3, 4);
    let at_one = svt_gauss_budget(&eps, &Rat::one()).unwrap();
    let base = rat(5, 32) * &eps * &eps;
    assert!(at_one >= base && &at_one - &base < rat(1, 1_000_000_000_000));
    for delta in [Rat::zero(), rat(3, 2), rat(-1, 2)] {
        assert!(matches!(svt_gauss_budget(&eps, &delta), Err(BenchmarkError::DeltaOutOfRange(_))));
    }
    assert!(matches!(svt_gauss_budget(&Rat::zero(), &rat(1, 2)), Err(BenchmarkError::EpsOutOfRange(_))));
}

proptest! {
    #[test]
    fn budget_decreases_as_delta_grows(eps in 1i64..100, a in 1i64..1000, b in 1i64..1000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let eps = rat(eps, 20);
        let small = svt_gauss_budget(&eps, &rat(lo, 1000)).unwrap();
        let large = svt_gauss_budget(&eps, &rat(hi, 1000)).unwrap();
        prop_assert!(large <= small + rat(1, 1_000_000_000_000));
    }

    #[test]
    fn budget_is_an_upper_bound(eps in 1i64..100, d in 1i64..1000) {
        let b = svt_gauss_budget(&rat(eps, 20), &rat(d, 1000)).unwrap();
        let reference = budget_f64(eps as f64 / 20.0, d as f64 / 1000.0);
        prop_assert!(to_f64(&b) >= reference * (1.0 - 1e-12));
        prop_assert!(to_f64(&b) <= reference * (1.0 + 1e-9) + 1e-15);
    }
}
