//! Symbolic execution into final states and guard systems.

mod common;

use common::{bench, val};
use dipgauss::benchmarks::Family;
use dipgauss::dsl::parse;
use dipgauss::rational::{rat, rat_int, Rat};
use dipgauss::semantics::{eval_const, exec, run, to_guard_system, Rel, Valuation};
use num_traits::{One, Zero};
use std::collections::BTreeSet;

#[test]
fn svt_example_path_has_two_random_guards() {
    let p = bench(Family::SvtGauss, 2);
    let u = val(&[("q_1", 0), ("q_2", 1)]);
    let o = val(&[("out_1", 0), ("out_2", 1)]);
    let states = run(&u, &o, &p);
    assert_eq!(states.len(), 1);
    let fs = &states[0];
    assert_eq!(fs.g_const().count(), 0);
    let guards: Vec<String> = fs.g_rand().map(|g| g.written.to_string()).collect();
    assert_eq!(guards, ["r_1 < rT", "r_2 >= rT"]);

    let gs = to_guard_system(fs);
    let names: Vec<&str> = gs.vars.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["rT", "r_1", "r_2"]);
    assert_eq!(gs.vars[2].dist.mean, Rat::one());
    assert_eq!(gs.vars[1].dist.a, rat_int(4));
    // r_1 - rT < 0 and rT - r_2 <= 0
    let c0 = &gs.constraints[0];
    assert_eq!(c0.rel, Rel::Lt);
    assert_eq!(c0.coeffs[&1], Rat::one());
    assert_eq!(c0.coeffs[&0], -Rat::one());
    let c1 = &gs.constraints[1];
    assert_eq!(c1.rel, Rel::Le);
    assert_eq!(c1.coeffs[&0], Rat::one());
    assert_eq!(c1.coeffs[&2], -Rat::one());
}

#[test]
fn constant_program_has_one_state_per_reachable_output() {
    let p = parse("input x in {0, 1}; output y in {0, 1}; y := 0;").unwrap();
    let u = val(&[("x", 1)]);
    let states = run(&u, &val(&[("y", 0)]), &p);
    assert_eq!(states.len(), 1);
    assert!(states[0].guards.is_empty());
    assert!(run(&u, &val(&[("y", 1)]), &p).is_empty());
}

#[test]
fn constant_guards_are_folded() {
    let p = parse(
        "input x in {0, 1}; input z in {0, 1}; output y in {0, 1, 2};
         if (x <= z) { y := 1; } else { y := 0; }
         if (x == z) { y := 2; }",
    )
    .unwrap();
    let u = val(&[("x", 0), ("z", 1)]);
    let feasible: Vec<_> = exec(&p, &u).into_iter().filter(eval_const).collect();
    assert_eq!(feasible.len(), 1);
    assert_eq!(feasible[0].output_of(&p), val(&[("y", 1)]));
}

#[test]
fn guard_against_a_domain_variable_becomes_a_constant_bound() {
    let p = parse("input x in {0, 1}; output y in {0, 1}; y := 0; r ~ gauss(0, 1/eps); if (r >= x) { y := 1; }")
        .unwrap();
    let states = run(&val(&[("x", 0)]), &val(&[("y", 1)]), &p);
    let gs = to_guard_system(&states[0]);
    assert_eq!(gs.constraints.len(), 1);
    let c = &gs.constraints[0];
    // -r <= 0
    assert_eq!(c.coeffs[&0], -Rat::one());
    assert!(c.constant.is_zero());
}

#[test]
fn dependent_variables_are_substituted() {
    let p = parse(
        "input x in {0}; output y in {0, 1}; y := 0;
         r ~ gauss(0, 1/eps); s ~ gauss(0, 1/eps); t := r + 1;
         if (t < s) { y := 1; }",
    )
    .unwrap();
    let states = run(&val(&[("x", 0)]), &val(&[("y", 1)]), &p);
    let gs = to_guard_system(&states[0]);
    let c = &gs.constraints[0];
    assert_eq!(c.rel, Rel::Lt);
    assert_eq!(c.coeffs[&0], Rat::one());
    assert_eq!(c.coeffs[&1], -Rat::one());
    assert_eq!(c.constant, Rat::one());
}

#[test]
fn unconstrained_samples_are_left_out() {
    let p = parse(
        "input x in {0}; output y in {0, 1}; y := 0;
         r ~ gauss(0, 1/eps); s ~ lap(3, 1/eps);
         if (r >= 0) { y := 1; }",
    )
    .unwrap();
    let states = run(&val(&[("x", 0)]), &val(&[("y", 1)]), &p);
    let gs = to_guard_system(&states[0]);
    assert_eq!(gs.vars.len(), 1);
    assert_eq!(gs.vars[0].name, "r");
}

#[test]
fn disequalities_are_dropped_and_equalities_kept() {
    let p = parse(
        "input x in {0}; output y in {0, 1}; y := 0;
         r ~ gauss(0, 1/eps);
         if (r != 1/2) { y := 1; } else { y := 0; }",
    )
    .unwrap();
    let u = val(&[("x", 0)]);
    let ne = &run(&u, &val(&[("y", 1)]), &p)[0];
    assert!(to_guard_system(ne).constraints.is_empty());
    let eq = &run(&u, &val(&[("y", 0)]), &p)[0];
    let gs = to_guard_system(eq);
    assert_eq!(gs.constraints[0].rel, Rel::Eq);
    assert_eq!(gs.constraints[0].constant, rat(-1, 2));
}

#[test]
fn benchmark_state_counts() {
    let zero = |n: usize| -> Valuation { (1..=n).map(|i| (format!("q_{i}"), Rat::zero())).collect() };
    let count = |family, n, inputs| exec(&bench(family, n), &zero(inputs)).iter().filter(|s| eval_const(s)).count();
    assert_eq!(count(Family::SvtGauss, 5, 5), 6);
    assert_eq!(count(Family::NoisyMaxGauss, 2, 2), 2);
    assert_eq!(count(Family::MRange, 1, 2), 7);
    assert_eq!(count(Family::KMinMaxGauss, 3, 3), 16);
    for s in exec(&bench(Family::NoisyMaxGauss, 2), &zero(2)) {
        assert_eq!(s.g_rand().count(), 1);
    }
}

#[test]
fn final_states_cover_each_output_of_every_input() {
    for family in [Family::SvtGauss, Family::NoisyMinLaplace, Family::SvtMix1, Family::MRange] {
        let p = bench(family, 2);
        for u in p.input_space() {
            let states = exec(&p, &u);
            let outputs: BTreeSet<Valuation> = states.iter().map(|s| s.output_of(&p)).collect();
            let mut by_run = 0;
            for o in &outputs {
                by_run += run(&u, o, &p).len();
            }
            assert_eq!(by_run, states.len(), "{family}");
        }
    }
}
