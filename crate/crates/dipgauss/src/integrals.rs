//! Nested-integral plans for path probabilities.
//!
//! The probability of a guard system is the integral of the product of the
//! sampled variables' densities over the polyhedron cut out by its
//! constraints. Each variable is first truncated to a box of `th` standard
//! deviations around its mean; the mass lost outside the boxes is bounded by
//! the standard tail inequalities and carried as `tail_slack`. Every
//! constraint is then solved for one of its variables, producing max/min of
//! affine lower and upper limits, and the variables are ordered so that each
//! limit only mentions outer variables. Finally the dependency graph between
//! layers is used to factor independent parts of the integral into products,
//! which lowers the nesting depth.

use crate::dsl::DistKind;
use crate::quadrature::interval::{consts, Iv};
use crate::quadrature::DensityKernel;
use crate::rational::{format_rational, from_f64, Rat};
use crate::semantics::{DistSpec, GuardSystem, Rel};
use num_traits::{One, Signed, Zero};
use petgraph::graph::{DiGraph, NodeIndex};
use petgraph::unionfind::UnionFind;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use thiserror::Error;

/// Errors raised by plan construction.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("dependency graph has a cycle")]
    CycleDetected,
}

/// Affine expression over guard-system variables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct AffineForm {
    pub coeffs: BTreeMap<usize, Rat>,
    pub constant: Rat,
}

impl AffineForm {
    pub fn constant(c: Rat) -> Self {
        AffineForm { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    fn render(&self, names: &[String]) -> String {
        let expr = crate::dsl::RExpr {
            terms: self.coeffs.iter().map(|(v, c)| (names[*v].clone(), c.clone())).collect(),
            constant: self.constant.clone(),
        };
        expr.to_string()
    }
}

/// Whether a bound list is combined by `max` (lower limits) or `min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    Max,
    Min,
}

/// Max or min of a non-empty set of affine expressions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineBound {
    pub kind: BoundKind,
    pub terms: Vec<AffineForm>,
}

impl AffineBound {
    fn new(kind: BoundKind) -> Self {
        AffineBound { kind, terms: Vec::new() }
    }

    fn push(&mut self, f: AffineForm) {
        if !self.terms.contains(&f) {
            self.terms.push(f);
            self.terms.sort();
        }
    }

    /// Variables mentioned by any expression of the bound.
    pub fn vars(&self) -> BTreeSet<usize> {
        self.terms.iter().flat_map(|f| f.coeffs.keys().copied()).collect()
    }
}

/// One integration layer: a variable, its density and its limits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    /// Index into the guard system's variables.
    pub var: usize,
    pub name: String,
    pub dist: DistSpec,
    pub lower: AffineBound,
    pub upper: AffineBound,
}

/// A nested integral whose layers are listed from outermost to innermost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathIntegral {
    pub layers: Vec<Layer>,
}

/// Why a plan evaluates to zero without integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ZeroReason {
    /// A guard folded to a false constant comparison.
    InfeasibleConstantGuard,
    /// An equality over random quantities describes a null set.
    ZeroMeasureEquality,
}

/// Expression tree of integrals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanExpr {
    Zero(ZeroReason),
    One,
    /// Integrate `layers` (outermost first) around `inner`.
    Nest { layers: Vec<Layer>, inner: Box<PlanExpr> },
    Product(Vec<PlanExpr>),
    Sum(Vec<PlanExpr>),
}

impl PlanExpr {
    /// Nesting depth: the largest number of layers along any branch.
    pub fn depth(&self) -> usize {
        match self {
            PlanExpr::Zero(_) | PlanExpr::One => 0,
            PlanExpr::Nest { layers, inner } => layers.len() + inner.depth(),
            PlanExpr::Product(items) | PlanExpr::Sum(items) => {
                items.iter().map(PlanExpr::depth).max().unwrap_or(0)
            }
        }
    }

    /// Every layer in the tree, in no particular order.
    pub fn layers(&self) -> Vec<&Layer> {
        let mut out = Vec::new();
        self.collect_layers(&mut out);
        out
    }

    fn collect_layers<'a>(&'a self, out: &mut Vec<&'a Layer>) {
        match self {
            PlanExpr::Zero(_) | PlanExpr::One => {}
            PlanExpr::Nest { layers, inner } => {
                out.extend(layers.iter());
                inner.collect_layers(out);
            }
            PlanExpr::Product(items) | PlanExpr::Sum(items) => {
                items.iter().for_each(|i| i.collect_layers(out))
            }
        }
    }
}

/// An integral expression together with the privacy parameter it was built
/// for and the tail mass bound of its truncation boxes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralPlan {
    pub expr: PlanExpr,
    pub eps: Rat,
    /// Upper bound on the probability mass removed by truncation.
    pub tail_slack: Rat,
    /// Variable names by guard-system index, for display.
    pub names: Vec<String>,
}

impl IntegralPlan {
    pub fn depth(&self) -> usize {
        self.expr.depth()
    }

    /// JSON view listing layers, bounds and the tail slack.
    pub fn to_json(&self) -> serde_json::Value {
        fn expr_json(e: &PlanExpr, names: &[String]) -> serde_json::Value {
            let bound = |b: &AffineBound| {
                serde_json::json!({
                    "kind": b.kind,
                    "terms": b.terms.iter().map(|f| f.render(names)).collect::<Vec<_>>(),
                })
            };
            match e {
                PlanExpr::Zero(r) => serde_json::json!({ "zero": r }),
                PlanExpr::One => serde_json::json!("one"),
                PlanExpr::Nest { layers, inner } => serde_json::json!({
                    "nest": layers.iter().map(|l| serde_json::json!({
                        "var": l.name,
                        "density": l.dist.to_string(),
                        "lower": bound(&l.lower),
                        "upper": bound(&l.upper),
                    })).collect::<Vec<_>>(),
                    "inner": expr_json(inner, names),
                }),
                PlanExpr::Product(items) => serde_json::json!({
                    "product": items.iter().map(|i| expr_json(i, names)).collect::<Vec<_>>()
                }),
                PlanExpr::Sum(items) => serde_json::json!({
                    "sum": items.iter().map(|i| expr_json(i, names)).collect::<Vec<_>>()
                }),
            }
        }
        serde_json::json!({
            "depth": self.depth(),
            "tail_slack": crate::rational::to_f64(&self.tail_slack),
            "tail_slack_exact": format_rational(&self.tail_slack),
            "expr": expr_json(&self.expr, &self.names),
        })
    }
}

/// Directed graph over integration variables with an edge `a -> b` whenever
/// `a` occurs in a limit of `b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub nodes: Vec<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl DependencyGraph {
    /// The dependency graph of a path integral.
    pub fn of(base: &PathIntegral) -> Self {
        let mut edges = BTreeSet::new();
        for l in &base.layers {
            for v in l.lower.vars().union(&l.upper.vars()) {
                edges.insert((*v, l.var));
            }
        }
        DependencyGraph { nodes: base.layers.iter().map(|l| l.var).collect(), edges }
    }

    fn to_petgraph(&self) -> (DiGraph<usize, ()>, BTreeMap<usize, NodeIndex>) {
        let mut g = DiGraph::new();
        let idx: BTreeMap<usize, NodeIndex> = self.nodes.iter().map(|n| (*n, g.add_node(*n))).collect();
        for (a, b) in &self.edges {
            g.add_edge(idx[a], idx[b], ());
        }
        (g, idx)
    }

    pub fn is_acyclic(&self) -> bool {
        !petgraph::algo::is_cyclic_directed(&self.to_petgraph().0)
    }
}

/// How truncation thresholds are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Per-variable thresholds whose tail bounds sum to `2^-(precision+1)`.
    Adaptive,
    /// The same threshold for every Gaussian and every Laplace variable.
    Fixed { gauss: Rat, laplace: Rat },
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Fixed { gauss: Rat::from_integer(4.into()), laplace: Rat::from_integer(8.into()) }
    }
}

/// Truncation thresholds, in standard deviations, and their total tail bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub th: Vec<f64>,
    pub tail_slack: Rat,
}

/// Certified upper bound on the mass of a distribution of the given kind
/// farther than `th` standard deviations from its mean.
pub fn tail_bound(kind: DistKind, th: f64) -> Rat {
    let t = Iv::point(th);
    let bound = match kind {
        DistKind::Gaussian => (-(t.sqr() * 0.5)).exp() * 2.0,
        DistKind::Laplace => (-(t * *consts::SQRT_2)).exp(),
    };
    from_f64(bound.hi)
}

/// Chooses truncation thresholds for variables of the given kinds.
///
/// In adaptive mode every variable receives an equal share of the budget
/// `2^-(precision+1)` and the smallest threshold whose certified tail bound
/// fits that share. In fixed mode the given thresholds are used and the
/// slack is the sum of their tail bounds.
pub fn choose_threshold_for(kinds: &[DistKind], precision: u32, mode: &ThresholdMode) -> Thresholds {
    let mut th = Vec::with_capacity(kinds.len());
    let mut slack = Rat::zero();
    match mode {
        ThresholdMode::Fixed { gauss, laplace } => {
            for k in kinds {
                let t = crate::rational::to_f64_up(match k {
                    DistKind::Gaussian => gauss,
                    DistKind::Laplace => laplace,
                });
                slack += tail_bound(*k, t);
                th.push(t);
            }
        }
        ThresholdMode::Adaptive => {
            if kinds.is_empty() {
                return Thresholds { th, tail_slack: slack };
            }
            let share = crate::rational::pow2(-(precision as i64) - 1)
                / Rat::from_integer((kinds.len() as i64).into());
            let beta = crate::rational::to_f64(&share);
            for k in kinds {
                let mut t = match k {
                    DistKind::Gaussian => (2.0 * (2.0 / beta).ln()).sqrt(),
                    DistKind::Laplace => (1.0 / beta).ln() / std::f64::consts::SQRT_2,
                };
                let mut bound = tail_bound(*k, t);
                while bound > share {
                    t = t * (1.0 + 1e-9) + 1e-12;
                    bound = tail_bound(*k, t);
                }
                slack += bound;
                th.push(t);
            }
        }
    }
    Thresholds { th, tail_slack: slack }
}

/// Chooses thresholds for the variables of a guard system.
pub fn choose_threshold(gs: &GuardSystem, precision: u32, mode: &ThresholdMode) -> Thresholds {
    let kinds: Vec<DistKind> = gs.vars.iter().map(|v| v.dist.kind).collect();
    choose_threshold_for(&kinds, precision, mode)
}

/// Outward-rounded truncation box `mu +- th * sd` of a variable, as exact
/// binary64 endpoints.
pub fn truncation_box(dist: &DistSpec, eps: &Rat, th: f64) -> (f64, f64) {
    let k = DensityKernel::new(dist, eps);
    let half = k.std_dev() * Iv::point(th);
    let lo = k.mu - half;
    let hi = k.mu + half;
    (lo.lo, hi.hi)
}

fn solve_for(coeffs: &BTreeMap<usize, Rat>, constant: &Rat, v: usize) -> AffineForm {
    // sum c_i x_i + d rel 0  =>  x_v rel' -(sum_{i != v} c_i x_i + d) / c_v
    let cv = &coeffs[&v];
    let k = -(Rat::one() / cv);
    AffineForm {
        coeffs: coeffs.iter().filter(|(i, _)| **i != v).map(|(i, c)| (*i, c * &k)).collect(),
        constant: constant * &k,
    }
}

/// Attachment strategy for constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Attach {
    /// Latest variable with a positive coefficient as an upper limit, or
    /// failing that the latest variable as a lower limit.
    PreferUpper,
    /// Latest variable with a nonzero coefficient.
    Latest,
}

fn attach_target(coeffs: &BTreeMap<usize, Rat>, rule: Attach) -> usize {
    let latest = *coeffs.keys().next_back().expect("non-constant constraint");
    match rule {
        Attach::Latest => latest,
        Attach::PreferUpper => coeffs
            .iter()
            .rev()
            .find(|(_, c)| c.is_positive())
            .map(|(v, _)| *v)
            .unwrap_or(latest),
    }
}

/// Kahn's algorithm with ties broken by sampling order.
fn topo_order(n: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; n];
    for (_, b) in edges {
        indeg[*b] += 1;
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|v| indeg[*v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for (a, b) in edges.range((v, 0)..(v + 1, 0)) {
            debug_assert_eq!(*a, v);
            indeg[*b] -= 1;
            if indeg[*b] == 0 {
                ready.push(Reverse(*b));
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Builds the truncated nested integral of a guard system.
///
/// `th[i]` is the truncation threshold of variable `i`. Constant constraints
/// are folded; a false one, or any equality over random quantities, yields a
/// zero plan. Each remaining constraint is attached to the latest variable
/// with a positive coefficient as an upper limit (or else to its latest
/// variable as a lower limit) and the layers are ordered topologically with
/// ties broken by sampling order. Should that ordering be cyclic, every
/// constraint is attached to its latest variable instead, which follows
/// sampling order.
pub fn build_plan(gs: &GuardSystem, eps: &Rat, th: &[f64]) -> IntegralPlan {
    let names: Vec<String> = gs.vars.iter().map(|v| v.name.clone()).collect();
    let slack = gs
        .vars
        .iter()
        .zip(th)
        .fold(Rat::zero(), |acc, (v, t)| acc + tail_bound(v.dist.kind, *t));
    let zero = |reason| IntegralPlan {
        expr: PlanExpr::Zero(reason),
        eps: eps.clone(),
        tail_slack: slack.clone(),
        names: names.clone(),
    };
    let mut live = Vec::new();
    for c in &gs.constraints {
        if c.coeffs.is_empty() {
            let holds = match c.rel {
                Rel::Lt => c.constant.is_negative(),
                Rel::Le => !c.constant.is_positive(),
                Rel::Eq => c.constant.is_zero(),
            };
            if !holds {
                return zero(ZeroReason::InfeasibleConstantGuard);
            }
            continue;
        }
        if c.rel == Rel::Eq {
            return zero(ZeroReason::ZeroMeasureEquality);
        }
        live.push(c);
    }
    let n = gs.vars.len();
    let attempt = |rule: Attach| {
        let mut lower: Vec<AffineBound> = (0..n).map(|_| AffineBound::new(BoundKind::Max)).collect();
        let mut upper: Vec<AffineBound> = (0..n).map(|_| AffineBound::new(BoundKind::Min)).collect();
        for c in &live {
            let v = attach_target(&c.coeffs, rule);
            let form = solve_for(&c.coeffs, &c.constant, v);
            if c.coeffs[&v].is_positive() {
                upper[v].push(form);
            } else {
                lower[v].push(form);
            }
        }
        let mut edges = BTreeSet::new();
        for v in 0..n {
            for u in lower[v].vars().union(&upper[v].vars()) {
                edges.insert((*u, v));
            }
        }
        topo_order(n, &edges).map(|order| (order, lower, upper))
    };
    let (order, mut lower, mut upper) = attempt(Attach::PreferUpper)
        .or_else(|| attempt(Attach::Latest))
        .expect("sampling-order attachment is acyclic");
    for (v, var) in gs.vars.iter().enumerate() {
        let (lo, hi) = truncation_box(&var.dist, eps, th[v]);
        lower[v].push(AffineForm::constant(from_f64(lo)));
        upper[v].push(AffineForm::constant(from_f64(hi)));
    }
    let layers: Vec<Layer> = order
        .into_iter()
        .map(|v| Layer {
            var: v,
            name: names[v].clone(),
            dist: gs.vars[v].dist.clone(),
            lower: lower[v].clone(),
            upper: upper[v].clone(),
        })
        .collect();
    let expr = if layers.is_empty() {
        PlanExpr::One
    } else {
        PlanExpr::Nest { layers, inner: Box::new(PlanExpr::One) }
    };
    IntegralPlan { expr, eps: eps.clone(), tail_slack: slack, names }
}

/// The unfactored path integral of a plan built by [`build_plan`], or `None`
/// for constant plans.
pub fn base_integral(plan: &IntegralPlan) -> Option<PathIntegral> {
    match &plan.expr {
        PlanExpr::Nest { layers, inner } if **inner == PlanExpr::One => {
            Some(PathIntegral { layers: layers.clone() })
        }
        _ => None,
    }
}

/// Rewrites a path integral into a product-factored expression of lower
/// nesting depth.
///
/// Weakly connected components of the dependency graph become independent
/// factors; within a component, all source nodes are integrated outermost
/// and the rest is factored recursively.
pub fn gen_expr(g: &DependencyGraph, base: &PathIntegral) -> Result<PlanExpr, PlanError> {
    if !g.is_acyclic() {
        return Err(PlanError::CycleDetected);
    }
    let by_var: BTreeMap<usize, &Layer> = base.layers.iter().map(|l| (l.var, l)).collect();
    let position: BTreeMap<usize, usize> = base.layers.iter().enumerate().map(|(i, l)| (l.var, i)).collect();
    let mut nodes: Vec<usize> = g.nodes.clone();
    nodes.sort_by_key(|v| position[v]);
    Ok(gen_rec(&nodes, g, &by_var, &position))
}

fn gen_rec(
    nodes: &[usize],
    g: &DependencyGraph,
    by_var: &BTreeMap<usize, &Layer>,
    position: &BTreeMap<usize, usize>,
) -> PlanExpr {
    if nodes.is_empty() {
        return PlanExpr::One;
    }
    let set: BTreeSet<usize> = nodes.iter().copied().collect();
    let local: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let mut uf = UnionFind::<usize>::new(nodes.len());
    for (a, b) in &g.edges {
        if set.contains(a) && set.contains(b) {
            uf.union(local[a], local[b]);
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in nodes {
        comps.entry(uf.find(local[v])).or_default().push(*v);
    }
    if comps.len() > 1 {
        let mut parts: Vec<Vec<usize>> = comps.into_values().collect();
        parts.sort_by_key(|p| position[&p[0]]);
        return PlanExpr::Product(parts.iter().map(|p| gen_rec(p, g, by_var, position)).collect());
    }
    if nodes.len() == 1 {
        return PlanExpr::Nest { layers: vec![by_var[&nodes[0]].clone()], inner: Box::new(PlanExpr::One) };
    }
    let has_incoming: BTreeSet<usize> =
        g.edges.iter().filter(|(a, b)| set.contains(a) && set.contains(b)).map(|(_, b)| *b).collect();
    let sources: Vec<usize> = nodes.iter().copied().filter(|v| !has_incoming.contains(v)).collect();
    let rest: Vec<usize> = nodes.iter().copied().filter(|v| has_incoming.contains(v)).collect();
    PlanExpr::Nest {
        layers: sources.iter().map(|v| by_var[v].clone()).collect(),
        inner: Box::new(gen_rec(&rest, g, by_var, position)),
    }
}

/// Applies [`gen_expr`] to a plan produced by [`build_plan`].
pub fn optimize(plan: &IntegralPlan) -> Result<IntegralPlan, PlanError> {
    match base_integral(plan) {
        Some(base) => {
            let g = DependencyGraph::of(&base);
            Ok(IntegralPlan { expr: gen_expr(&g, &base)?, ..plan.clone() })
        }
        None => Ok(plan.clone()),
    }
}

/// Maximum and average nesting depth over a set of path plans.
pub fn depth_stats(plans: &[IntegralPlan]) -> (usize, f64) {
    if plans.is_empty() {
        return (0, 0.0);
    }
    let depths: Vec<usize> = plans.iter().map(IntegralPlan::depth).collect();
    let max = depths.iter().copied().max().unwrap_or(0);
    let avg = depths.iter().sum::<usize>() as f64 / depths.len() as f64;
    (max, avg)
}
