//! Decision procedure for `(eps_prv, delta)` differential privacy.
//!
//! Output probabilities are computed as certified enclosures ([`compute`],
//! [`compute_scale`]) and compared pair by pair ([`verify_pair`]). The
//! outcome for a whole adjacency relation is produced by [`verify_dp`], and
//! [`verify_with_refinement`] repeats it at higher precision until the
//! verdict is decisive or the precision cap is reached.

use crate::dsl::{DistKind, Program};
use crate::integrals::{build_plan, choose_threshold_for, depth_stats, optimize, IntegralPlan, PlanError, ThresholdMode};
use crate::quadrature::{enclose_exp_within, eval_plan, scale, Enclosure, QuadConfig};
use crate::rational::{format_rational, pow2, to_f64_down, to_f64_up, Rat};
use crate::semantics::{eval_const, exec, run, to_guard_system, Valuation};
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

/// Errors raised by the verifier.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("the quadrature budget ran out before reaching 2^-{precision} on input {input}, output {output}")]
    PrecisionUnachievable { input: String, output: String, precision: u32 },
    #[error("probability store has no entry for input {input}, output {output}")]
    MissingEntry { input: String, output: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input valuation: {0}")]
    InvalidInput(String),
    #[error("the program has {0} reachable outputs; subset enumeration supports at most 8")]
    TooManyOutputs(usize),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Outcome of a privacy check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Verdict {
    #[serde(rename = "DP")]
    Dp,
    /// Every pair satisfies the strict inequality `Delta_max < delta`.
    #[serde(rename = "Strict-DP")]
    StrictDp,
    #[serde(rename = "Not_DP")]
    NotDp,
    Unknown,
}

impl Verdict {
    pub fn is_decisive(self) -> bool {
        self != Verdict::Unknown
    }

    pub fn is_private(self) -> bool {
        matches!(self, Verdict::Dp | Verdict::StrictDp)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Dp => "DP",
            Verdict::StrictDp => "Strict-DP",
            Verdict::NotDp => "Not_DP",
            Verdict::Unknown => "Unknown",
        })
    }
}

/// Parameters of a verification run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationParams {
    /// Privacy parameter that scales the program's noise.
    pub eps: Rat,
    /// Privacy budget.
    pub eps_prv: Rat,
    /// Error parameter.
    pub delta: Rat,
    /// Initial precision in bits.
    pub precision: u32,
    /// Largest precision tried by [`verify_with_refinement`].
    pub max_precision: u32,
    pub threshold_mode: ThresholdMode,
    /// Apply the nesting-depth optimization to every path integral.
    pub optimize: bool,
    /// Decide strict privacy (`Delta_max < delta`) instead of `<=`.
    pub strict: bool,
    pub quad: QuadConfig,
}

impl VerificationParams {
    /// Parameters with the default precision policy: 16 bits refined up to
    /// 32, fixed thresholds of 4 and 8 standard deviations.
    pub fn new(eps: Rat, eps_prv: Rat, delta: Rat) -> Self {
        VerificationParams {
            eps,
            eps_prv,
            delta,
            precision: 16,
            max_precision: 32,
            threshold_mode: ThresholdMode::default(),
            optimize: true,
            strict: false,
            quad: QuadConfig::default(),
        }
    }

    /// Checks the invariants `eps > 0`, `eps_prv >= 0`, `0 <= delta <= 1`
    /// and `precision <= max_precision`.
    pub fn validate(&self) -> Result<(), VerifyError> {
        if !self.eps.is_positive() {
            return Err(VerifyError::InvalidParams("eps must be positive".into()));
        }
        if self.eps_prv.is_negative() {
            return Err(VerifyError::InvalidParams("eps-prv must be non-negative".into()));
        }
        if self.delta.is_negative() || self.delta > Rat::one() {
            return Err(VerifyError::InvalidParams("delta must lie in [0, 1]".into()));
        }
        if self.precision == 0 || self.precision > self.max_precision {
            return Err(VerifyError::InvalidParams("precision must be positive and at most the maximum precision".into()));
        }
        if self.max_precision > 52 {
            return Err(VerifyError::InvalidParams("precision above 52 bits is beyond the binary64 engine".into()));
        }
        Ok(())
    }
}

/// Ordered pairs `(u, u')` of input valuations.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdjacencyRelation {
    pub pairs: Vec<(Valuation, Valuation)>,
}

impl AdjacencyRelation {
    pub fn new(pairs: Vec<(Valuation, Valuation)>) -> Self {
        AdjacencyRelation { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Enclosure of one output probability with evaluation statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputProbability {
    /// Encloses `Pr[eps, u, o, P]`, tail slack included.
    pub enclosure: Enclosure,
    /// Tail slack added to the upper endpoint.
    pub tail_slack: Rat,
    /// Nesting depth of each path integral.
    pub depths: Vec<usize>,
    /// Quadrature cells refined over all paths.
    pub nodes: usize,
    /// False when some path hit the quadrature budget.
    pub conforming: bool,
}

/// Builds the integral plans of every final state reaching output `o` and
/// the tail slack that covers their truncation.
///
/// In adaptive mode the slack budget `2^-(precision+1)` is shared equally by
/// the distinct sampling sites constrained on any of these paths, so a site
/// shared by several paths is paid for once.
pub fn output_plans(
    p: &Program,
    eps: &Rat,
    u: &Valuation,
    o: &Valuation,
    precision: u32,
    mode: &ThresholdMode,
    optimized: bool,
) -> Result<(Vec<IntegralPlan>, Rat), VerifyError> {
    let systems: Vec<_> = run(u, o, p).into_iter().filter(eval_const).map(|fs| to_guard_system(&fs)).collect();
    let mut sites: BTreeMap<usize, DistKind> = BTreeMap::new();
    for gs in &systems {
        for v in &gs.vars {
            sites.insert(v.site, v.dist.kind);
        }
    }
    let kinds: Vec<DistKind> = sites.values().copied().collect();
    let th = choose_threshold_for(&kinds, precision, mode);
    let by_site: HashMap<usize, f64> = sites.keys().copied().zip(th.th.iter().copied()).collect();
    let mut plans = Vec::with_capacity(systems.len());
    for gs in &systems {
        let t: Vec<f64> = gs.vars.iter().map(|v| by_site[&v.site]).collect();
        let plan = build_plan(gs, eps, &t);
        plans.push(if optimized { optimize(&plan)? } else { plan });
    }
    Ok((plans, th.tail_slack))
}

/// Encloses `Pr[eps, u, o, P]` with all statistics.
///
/// Each path gets the quadrature budget `2^-precision / (2 * #paths)`; in
/// adaptive threshold mode the tail slack is at most `2^-(precision+1)`, so
/// the enclosure is at most `2^-precision` wide. Fixed thresholds give a
/// slack that does not depend on the precision.
#[allow(clippy::too_many_arguments)]
pub fn compute_detailed(
    p: &Program,
    eps: &Rat,
    u: &Valuation,
    o: &Valuation,
    precision: u32,
    mode: &ThresholdMode,
    optimized: bool,
    cfg: &QuadConfig,
) -> Result<OutputProbability, VerifyError> {
    let (plans, slack) = output_plans(p, eps, u, o, precision, mode, optimized)?;
    if plans.is_empty() {
        return Ok(OutputProbability {
            enclosure: Enclosure::zero(),
            tail_slack: Rat::zero(),
            depths: Vec::new(),
            nodes: 0,
            conforming: true,
        });
    }
    let per_path = pow2(-(precision as i64) - 1) / Rat::from_integer((plans.len() as i64).into());
    let mut total = Enclosure::zero();
    let mut nodes = 0;
    let mut conforming = true;
    for plan in &plans {
        let r = eval_plan(plan, &per_path, cfg);
        total = total.add(&r.enclosure);
        nodes += r.nodes;
        conforming &= r.conforming;
    }
    Ok(OutputProbability {
        enclosure: total.widen_up(&slack).clamp_probability(),
        tail_slack: slack,
        depths: plans.iter().map(IntegralPlan::depth).collect(),
        nodes,
        conforming,
    })
}

/// Encloses `Pr[eps, u, o, P]` to width `2^-precision` (plus the fixed-mode
/// tail slack).
pub fn compute(
    eps: &Rat,
    u: &Valuation,
    o: &Valuation,
    p: &Program,
    precision: u32,
    mode: &ThresholdMode,
) -> Result<Enclosure, VerifyError> {
    let r = compute_detailed(p, eps, u, o, precision, mode, true, &QuadConfig::default())?;
    if !r.conforming {
        return Err(VerifyError::PrecisionUnachievable {
            input: show_valuation(u),
            output: show_valuation(o),
            precision,
        });
    }
    Ok(r.enclosure)
}

/// Extra bits needed so that multiplying by `e^eps_prv` keeps a width
/// budget: `ceil(log2(e^eps_prv)) + 1`.
fn scale_bits(eps_prv: &Rat) -> u32 {
    let e = crate::rational::to_f64_up(eps_prv) * std::f64::consts::LOG2_E;
    e.ceil().max(0.0) as u32 + 1
}

/// Encloses `e^eps_prv * Pr[eps, u, o, P]`.
pub fn compute_scale(
    eps_prv: &Rat,
    eps: &Rat,
    u: &Valuation,
    o: &Valuation,
    p: &Program,
    precision: u32,
    mode: &ThresholdMode,
) -> Result<Enclosure, VerifyError> {
    let inner = compute(eps, u, o, p, precision + scale_bits(eps_prv), mode)?;
    let factor = enclose_exp_within(eps_prv, &pow2(-(precision as i64) - 8));
    Ok(scale(&inner, &factor))
}

/// Memo of output probabilities for one program and parameter set, holding
/// both the plain and the `e^eps_prv`-scaled enclosures.
#[derive(Debug, Default)]
pub struct ProbabilityStore {
    plain: Mutex<HashMap<(Valuation, Valuation), OutputProbability>>,
    scaled: Mutex<HashMap<(Valuation, Valuation), Enclosure>>,
}

impl ProbabilityStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an entry; an existing entry is never replaced.
    pub fn insert(&self, u: &Valuation, o: &Valuation, plain: OutputProbability, scaled: Enclosure) {
        let key = (u.clone(), o.clone());
        self.plain.lock().expect("store lock").entry(key.clone()).or_insert(plain);
        self.scaled.lock().expect("store lock").entry(key).or_insert(scaled);
    }

    pub fn plain(&self, u: &Valuation, o: &Valuation) -> Option<Enclosure> {
        self.plain.lock().expect("store lock").get(&(u.clone(), o.clone())).map(|e| e.enclosure.clone())
    }

    pub fn scaled(&self, u: &Valuation, o: &Valuation) -> Option<Enclosure> {
        self.scaled.lock().expect("store lock").get(&(u.clone(), o.clone())).cloned()
    }

    pub fn contains(&self, u: &Valuation, o: &Valuation) -> bool {
        self.plain.lock().expect("store lock").contains_key(&(u.clone(), o.clone()))
    }

    fn details(&self) -> Vec<OutputProbability> {
        self.plain.lock().expect("store lock").values().cloned().collect()
    }

    pub fn clear(&self) {
        self.plain.lock().expect("store lock").clear();
        self.scaled.lock().expect("store lock").clear();
    }
}

/// Result of checking one ordered pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCheck {
    pub u: Valuation,
    pub u2: Valuation,
    /// Lower bound on `Delta(u, u')`.
    pub delta_min: Rat,
    /// Upper bound on `Delta(u, u')`.
    pub delta_max: Rat,
    pub result: Verdict,
    /// Per-output contributions `max(L_1 - U_2, 0)` that are positive.
    pub contributions: Vec<(Valuation, Rat)>,
}

/// Accumulates the bounds on `Delta(u, u')` over all outputs and decides the
/// pair: private if `Delta_max <= delta` (`<` when `strict`), not private if
/// `Delta_min > delta`, undecided otherwise.
pub fn verify_pair(
    u: &Valuation,
    u2: &Valuation,
    delta: &Rat,
    outputs: &[Valuation],
    store: &ProbabilityStore,
    strict: bool,
) -> Result<PairCheck, VerifyError> {
    let mut dmin = Rat::zero();
    let mut dmax = Rat::zero();
    let mut contributions = Vec::new();
    for o in outputs {
        let missing = |v: &Valuation| VerifyError::MissingEntry { input: show_valuation(v), output: show_valuation(o) };
        let i1 = store.plain(u, o).ok_or_else(|| missing(u))?;
        let i2 = store.scaled(u2, o).ok_or_else(|| missing(u2))?;
        let (upper, lower) = pair_terms(&i1, &i2);
        if lower.is_positive() {
            contributions.push((o.clone(), lower.clone()));
        }
        dmax += upper;
        dmin += lower;
    }
    let result = decide(&dmin, &dmax, delta, strict);
    Ok(PairCheck { u: u.clone(), u2: u2.clone(), delta_min: dmin, delta_max: dmax, result, contributions })
}

/// `(max(U_1 - L_2, 0), max(L_1 - U_2, 0))`.
fn pair_terms(i1: &Enclosure, i2: &Enclosure) -> (Rat, Rat) {
    let zero = Rat::zero();
    let upper = (&i1.hi - &i2.lo).max(zero.clone());
    let lower = (&i1.lo - &i2.hi).max(zero);
    (upper, lower)
}

fn decide(dmin: &Rat, dmax: &Rat, delta: &Rat, strict: bool) -> Verdict {
    if strict && dmax < delta {
        Verdict::StrictDp
    } else if !strict && dmax <= delta {
        Verdict::Dp
    } else if dmin > delta {
        Verdict::NotDp
    } else {
        Verdict::Unknown
    }
}

/// Summary of a verification run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub verdict: Verdict,
    /// Checked pairs in relation order; checking stops after the first
    /// violating pair.
    pub pairs: Vec<PairCheck>,
    /// Index into `pairs` of the violating pair.
    pub counterexample: Option<usize>,
    pub precision_used: u32,
    /// Largest tail slack added to any output probability.
    pub tail_slack: Rat,
    pub max_depth: usize,
    pub avg_depth: f64,
    /// Number of path integrals evaluated.
    pub paths: usize,
    pub timings_ms: BTreeMap<String, f64>,
    /// Explanation attached to an undecided verdict.
    pub advisory: Option<String>,
}

impl Report {
    /// The violating pair, if any.
    pub fn counterexample_pair(&self) -> Option<&PairCheck> {
        self.counterexample.map(|i| &self.pairs[i])
    }

    /// JSON form of the report. Bounds are written as decimals rounded
    /// outward (down for `delta_min`, up for `delta_max`) and as exact
    /// rationals.
    pub fn to_json(&self) -> Value {
        let pairs: Vec<Value> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, pc)| {
                let mut v = json!({
                    "u": valuation_json(&pc.u),
                    "u'": valuation_json(&pc.u2),
                    "delta_min": to_f64_down(&pc.delta_min),
                    "delta_max": to_f64_up(&pc.delta_max),
                    "delta_min_exact": format_rational(&pc.delta_min),
                    "delta_max_exact": format_rational(&pc.delta_max),
                    "result": pc.result,
                });
                if self.counterexample == Some(i) {
                    v["counterexample_outputs"] = Value::Array(
                        pc.contributions
                            .iter()
                            .map(|(o, c)| json!({ "o": valuation_json(o), "contribution": to_f64_down(c) }))
                            .collect(),
                    );
                }
                v
            })
            .collect();
        let mut out = json!({
            "verdict": self.verdict,
            "precision_used": self.precision_used,
            "pairs": pairs,
            "tail_slack": to_f64_up(&self.tail_slack),
            "depth": { "max": self.max_depth, "avg": self.avg_depth },
            "paths": self.paths,
            "timings_ms": self.timings_ms,
        });
        if let Some(a) = &self.advisory {
            out["advisory"] = Value::String(a.clone());
        }
        out
    }
}

/// JSON object mapping variable names to rational strings.
pub fn valuation_json(v: &Valuation) -> Value {
    Value::Object(v.iter().map(|(k, x)| (k.clone(), Value::String(format_rational(x)))).collect())
}

/// Compact `{x=1, y=0}` rendering of a valuation.
pub fn show_valuation(v: &Valuation) -> String {
    let items: Vec<String> = v.iter().map(|(k, x)| format!("{k}={}", format_rational(x))).collect();
    format!("{{{}}}", items.join(", "))
}

fn check_input(p: &Program, u: &Valuation) -> Result<(), VerifyError> {
    for d in &p.inputs {
        match u.get(&d.name) {
            Some(x) if d.values.contains(x) => {}
            Some(x) => {
                return Err(VerifyError::InvalidInput(format!(
                    "{} = {} is outside its domain",
                    d.name,
                    format_rational(x)
                )))
            }
            None => return Err(VerifyError::InvalidInput(format!("no value for input `{}`", d.name))),
        }
    }
    if let Some(extra) = u.keys().find(|k| !p.inputs.iter().any(|d| &d.name == *k)) {
        return Err(VerifyError::InvalidInput(format!("`{extra}` is not an input of the program")));
    }
    Ok(())
}

/// Fills the store for every output on input `u`, computing the outputs in
/// parallel. The plain entry is computed with enough extra bits that the
/// scaled entry also meets the width budget.
fn fill_store(
    p: &Program,
    u: &Valuation,
    outputs: &[Valuation],
    params: &VerificationParams,
    precision: u32,
    store: &ProbabilityStore,
) -> Result<(), VerifyError> {
    let missing: Vec<&Valuation> = outputs.iter().filter(|o| !store.contains(u, o)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let internal = precision + scale_bits(&params.eps_prv);
    let factor = enclose_exp_within(&params.eps_prv, &pow2(-(internal as i64) - 8));
    let results: Vec<Result<(Valuation, OutputProbability), VerifyError>> = missing
        .par_iter()
        .map(|o| {
            compute_detailed(p, &params.eps, u, o, internal, &params.threshold_mode, params.optimize, &params.quad)
                .map(|r| ((*o).clone(), r))
        })
        .collect();
    for r in results {
        let (o, prob) = r?;
        let scaled = scale(&prob.enclosure, &factor);
        store.insert(u, &o, prob, scaled);
    }
    Ok(())
}

/// Checks every pair of the relation in order at a fixed precision.
///
/// Checking stops at the first pair found not private, which becomes the
/// counterexample. The verdict is private only if every pair is, and
/// undecided otherwise. A pair whose probabilities missed the quadrature
/// budget is undecided.
pub fn verify_dp(p: &Program, phi: &AdjacencyRelation, params: &VerificationParams) -> Result<Report, VerifyError> {
    verify_dp_at(p, phi, params, params.precision, &ProbabilityStore::new())
}

fn verify_dp_at(
    p: &Program,
    phi: &AdjacencyRelation,
    params: &VerificationParams,
    precision: u32,
    store: &ProbabilityStore,
) -> Result<Report, VerifyError> {
    params.validate()?;
    let start = Instant::now();
    let outputs = p.output_space();
    let mut pairs = Vec::new();
    let mut counterexample = None;
    let mut all_private = true;
    let mut compute_ms = 0.0;
    for (u, u2) in &phi.pairs {
        check_input(p, u)?;
        check_input(p, u2)?;
        let t = Instant::now();
        fill_store(p, u, &outputs, params, precision, store)?;
        fill_store(p, u2, &outputs, params, precision, store)?;
        compute_ms += t.elapsed().as_secs_f64() * 1e3;
        let mut check = verify_pair(u, u2, &params.delta, &outputs, store, params.strict)?;
        let conforming = |v: &Valuation| {
            let plain = store.plain.lock().expect("store lock");
            outputs.iter().all(|o| plain.get(&(v.clone(), o.clone())).is_some_and(|e| e.conforming))
        };
        if !(conforming(u) && conforming(u2)) {
            check.result = Verdict::Unknown;
        }
        let result = check.result;
        pairs.push(check);
        if result == Verdict::NotDp {
            counterexample = Some(pairs.len() - 1);
            break;
        }
        all_private &= result.is_private();
    }
    let verdict = if counterexample.is_some() {
        Verdict::NotDp
    } else if all_private {
        if params.strict {
            Verdict::StrictDp
        } else {
            Verdict::Dp
        }
    } else {
        Verdict::Unknown
    };
    let details = store.details();
    let depths: Vec<usize> = details.iter().flat_map(|d| d.depths.iter().copied()).collect();
    let max_depth = depths.iter().copied().max().unwrap_or(0);
    let avg_depth = if depths.is_empty() { 0.0 } else { depths.iter().sum::<usize>() as f64 / depths.len() as f64 };
    let tail_slack = details.iter().map(|d| d.tail_slack.clone()).max().unwrap_or_else(Rat::zero);
    let mut timings_ms = BTreeMap::new();
    timings_ms.insert("compute".to_string(), compute_ms);
    timings_ms.insert("total".to_string(), start.elapsed().as_secs_f64() * 1e3);
    Ok(Report {
        verdict,
        pairs,
        counterexample,
        precision_used: precision,
        tail_slack,
        max_depth,
        avg_depth,
        paths: depths.len(),
        timings_ms,
        advisory: None,
    })
}

/// Runs [`verify_dp`] at the initial precision and doubles the precision
/// (capped at the maximum) while the verdict is undecided. The store is
/// rebuilt at every precision.
pub fn verify_with_refinement(
    p: &Program,
    phi: &AdjacencyRelation,
    params: &VerificationParams,
) -> Result<Report, VerifyError> {
    params.validate()?;
    let start = Instant::now();
    let mut precision = params.precision;
    let mut rounds = 0u32;
    loop {
        let store = ProbabilityStore::new();
        let mut report = verify_dp_at(p, phi, params, precision, &store)?;
        rounds += 1;
        if report.verdict.is_decisive() || precision >= params.max_precision {
            report.timings_ms.insert("total".to_string(), start.elapsed().as_secs_f64() * 1e3);
            report.timings_ms.insert("rounds".to_string(), rounds as f64);
            if !report.verdict.is_decisive() {
                report.advisory = Some(format!(
                    "undecided at the maximum precision of {precision} bits; delta may be at or very close to a \
                     critical value where Delta(u, u') equals delta, or the tail slack of fixed thresholds may \
                     exceed the remaining margin"
                ));
            }
            return Ok(report);
        }
        precision = (precision * 2).min(params.max_precision);
    }
}

/// Outcome of comparing the per-output check with brute-force subset
/// enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RephrasingCheck {
    /// Verdict from the per-output sums of [`verify_pair`].
    pub per_output: Verdict,
    /// Verdict from checking `Pr[P(u) in F] <= e^eps_prv Pr[P(u') in F] + delta`
    /// for every set `F` of outputs.
    pub subsets: Verdict,
    /// Number of subsets enumerated per pair.
    pub subset_count: usize,
}

impl RephrasingCheck {
    /// True when both procedures agree or at least one is undecided.
    pub fn agrees(&self) -> bool {
        !(self.per_output.is_decisive() && self.subsets.is_decisive()) || self.per_output == self.subsets
    }
}

/// Decides the relation both through per-output sums and by enumerating
/// every set of reachable outputs, from the same enclosures. Outputs that no
/// feasible final state produces have probability zero on both sides and
/// are left out. Supports at most 8 reachable outputs.
pub fn check_rephrasing(
    p: &Program,
    phi: &AdjacencyRelation,
    params: &VerificationParams,
) -> Result<RephrasingCheck, VerifyError> {
    params.validate()?;
    let mut reachable = BTreeSet::new();
    for (u, u2) in &phi.pairs {
        check_input(p, u)?;
        check_input(p, u2)?;
        for v in [u, u2] {
            reachable.extend(exec(p, v).iter().filter(|fs| eval_const(fs)).map(|fs| fs.output_of(p)));
        }
    }
    let outputs: Vec<Valuation> = reachable.into_iter().collect();
    if outputs.len() > 8 {
        return Err(VerifyError::TooManyOutputs(outputs.len()));
    }
    let store = ProbabilityStore::new();
    let mut per_output = Vec::new();
    let mut subsets = Vec::new();
    for (u, u2) in &phi.pairs {
        check_input(p, u)?;
        check_input(p, u2)?;
        fill_store(p, u, &outputs, params, params.precision, &store)?;
        fill_store(p, u2, &outputs, params, params.precision, &store)?;
        per_output.push(verify_pair(u, u2, &params.delta, &outputs, &store, false)?.result);
        let mut violated = false;
        let mut all_ok = true;
        for mask in 0u32..(1 << outputs.len()) {
            let mut l1 = Rat::zero();
            let mut u1 = Rat::zero();
            let mut l2 = Rat::zero();
            let mut h2 = Rat::zero();
            for (i, o) in outputs.iter().enumerate() {
                if mask & (1 << i) == 0 {
                    continue;
                }
                let a = store.plain(u, o).expect("filled");
                let b = store.scaled(u2, o).expect("filled");
                l1 += &a.lo;
                u1 += &a.hi;
                l2 += &b.lo;
                h2 += &b.hi;
            }
            if &l1 - &h2 > params.delta {
                violated = true;
            }
            if &u1 - &l2 > params.delta {
                all_ok = false;
            }
        }
        subsets.push(if violated {
            Verdict::NotDp
        } else if all_ok {
            Verdict::Dp
        } else {
            Verdict::Unknown
        });
    }
    let combine = |v: &[Verdict]| {
        if v.contains(&Verdict::NotDp) {
            Verdict::NotDp
        } else if v.iter().all(|x| *x == Verdict::Dp) {
            Verdict::Dp
        } else {
            Verdict::Unknown
        }
    };
    Ok(RephrasingCheck {
        per_output: combine(&per_output),
        subsets: combine(&subsets),
        subset_count: 1 << outputs.len(),
    })
}

/// Depth statistics of the optimized (or unoptimized) path integrals over
/// every final state of the program on the given inputs.
pub fn program_depth_stats(
    p: &Program,
    eps: &Rat,
    inputs: &[Valuation],
    optimized: bool,
) -> Result<(usize, f64), VerifyError> {
    let mut plans = Vec::new();
    let mode = ThresholdMode::default();
    for u in inputs {
        for o in p.output_space() {
            plans.extend(output_plans(p, eps, u, &o, 16, &mode, optimized)?.0);
        }
    }
    Ok(depth_stats(&plans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn iv(lo: (i64, i64), hi: (i64, i64)) -> Enclosure {
        Enclosure::new(rat(lo.0, lo.1), rat(hi.0, hi.1))
    }

    fn single(i1: Enclosure, i2: Enclosure, delta: Rat) -> PairCheck {
        let u: Valuation = [("x".to_string(), rat(0, 1))].into();
        let u2: Valuation = [("x".to_string(), rat(1, 1))].into();
        let o: Valuation = [("y".to_string(), rat(0, 1))].into();
        let store = ProbabilityStore::new();
        let prob = |e: Enclosure| OutputProbability {
            enclosure: e,
            tail_slack: Rat::zero(),
            depths: vec![],
            nodes: 0,
            conforming: true,
        };
        store.insert(&u, &o, prob(i1), Enclosure::zero());
        store.insert(&u2, &o, prob(Enclosure::zero()), i2);
        verify_pair(&u, &u2, &delta, &[o], &store, false).unwrap()
    }

    #[test]
    fn pair_below_scaled_probability_is_private() {
        let c = single(iv((30, 100), (31, 100)), iv((32, 100), (33, 100)), rat(1, 100));
        assert_eq!(c.delta_max, Rat::zero());
        assert_eq!(c.result, Verdict::Dp);
    }

    #[test]
    fn pair_far_above_is_not_private() {
        let c = single(iv((50, 100), (51, 100)), iv((20, 100), (21, 100)), rat(1, 10));
        assert_eq!(c.delta_min, rat(29, 100));
        assert_eq!(c.result, Verdict::NotDp);
        assert_eq!(c.contributions.len(), 1);
    }

    #[test]
    fn overlapping_pair_is_undecided() {
        let c = single(iv((30, 100), (36, 100)), iv((31, 100), (37, 100)), rat(1, 100));
        assert_eq!(c.delta_max, rat(5, 100));
        assert_eq!(c.delta_min, Rat::zero());
        assert_eq!(c.result, Verdict::Unknown);
    }

    #[test]
    fn missing_entry_is_reported() {
        let store = ProbabilityStore::new();
        let u = Valuation::new();
        let err = verify_pair(&u, &u, &Rat::zero(), &[Valuation::new()], &store, false).unwrap_err();
        assert!(matches!(err, VerifyError::MissingEntry { .. }));
    }

    #[test]
    fn scale_bits_covers_the_factor() {
        assert_eq!(scale_bits(&Rat::zero()), 1);
        // e^{31/25} is about 3.46, below 2^2.
        assert_eq!(scale_bits(&rat(31, 25)), 3);
    }
}
