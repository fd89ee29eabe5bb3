//! Generators for the standard benchmark programs, adjacency relations and
//! the analytic privacy budget of the Gaussian sparse vector technique.
//!
//! Programs are emitted as DiPGauss source text with every loop unrolled.
//! An `exit` in the pseudocode is realised by emitting the rest of the
//! program only in the branches that continue. Symbolic outputs are encoded
//! as `top = 1`, `bottom = 0` and `cont = 2`.

use crate::dsl::{self, DistKind, Program};
use crate::quadrature::exact::{ln_enclosure, sqrt_enclosure};
use crate::quadrature::Enclosure;
use crate::rational::{format_rational, parse_rational, rat, rat_int, Rat};
use crate::semantics::Valuation;
use crate::verifier::AdjacencyRelation;
use num_traits::{One, Signed, Zero};
use serde_json::Value;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use thiserror::Error;

/// Errors raised by the generators.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BenchmarkError {
    #[error("unsupported benchmark: {0}")]
    UnsupportedSpec(String),
    #[error("delta must satisfy 0 < delta <= 1, got {0}")]
    DeltaOutOfRange(String),
    #[error("eps must be positive, got {0}")]
    EpsOutOfRange(String),
    #[error("bad adjacency file: {0}")]
    BadPairFile(String),
}

/// Benchmark program families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    SvtGauss,
    SvtGaussGe,
    SvtLaplace,
    SvtLaplaceGe,
    SvtMix1,
    SvtMix1Ge,
    SvtMix2,
    SvtMix2Ge,
    SvtGaussLeaky1,
    SvtGaussLeaky2,
    SvtGaussGeLeaky1,
    SvtGaussGeLeaky2,
    SvtLaplaceLeaky3,
    SvtLaplaceLeaky4,
    SvtLaplaceLeaky5,
    SvtLaplaceLeaky6,
    NoisyMaxGauss,
    NoisyMinGauss,
    NoisyMaxLaplace,
    NoisyMinLaplace,
    KMinMaxGauss,
    KMinMaxLaplace,
    MRange,
}

impl Family {
    /// Every family, in declaration order.
    pub const ALL: [Family; 23] = [
        Family::SvtGauss,
        Family::SvtGaussGe,
        Family::SvtLaplace,
        Family::SvtLaplaceGe,
        Family::SvtMix1,
        Family::SvtMix1Ge,
        Family::SvtMix2,
        Family::SvtMix2Ge,
        Family::SvtGaussLeaky1,
        Family::SvtGaussLeaky2,
        Family::SvtGaussGeLeaky1,
        Family::SvtGaussGeLeaky2,
        Family::SvtLaplaceLeaky3,
        Family::SvtLaplaceLeaky4,
        Family::SvtLaplaceLeaky5,
        Family::SvtLaplaceLeaky6,
        Family::NoisyMaxGauss,
        Family::NoisyMinGauss,
        Family::NoisyMaxLaplace,
        Family::NoisyMinLaplace,
        Family::KMinMaxGauss,
        Family::KMinMaxLaplace,
        Family::MRange,
    ];

    /// Command-line name of the family.
    pub fn name(self) -> &'static str {
        match self {
            Family::SvtGauss => "svt-gauss",
            Family::SvtGaussGe => "svt-gauss-ge",
            Family::SvtLaplace => "svt-laplace",
            Family::SvtLaplaceGe => "svt-laplace-ge",
            Family::SvtMix1 => "svt-mix1",
            Family::SvtMix1Ge => "svt-mix1-ge",
            Family::SvtMix2 => "svt-mix2",
            Family::SvtMix2Ge => "svt-mix2-ge",
            Family::SvtGaussLeaky1 => "svt-gauss-leaky-1",
            Family::SvtGaussLeaky2 => "svt-gauss-leaky-2",
            Family::SvtGaussGeLeaky1 => "svt-gauss-ge-leaky-1",
            Family::SvtGaussGeLeaky2 => "svt-gauss-ge-leaky-2",
            Family::SvtLaplaceLeaky3 => "svt-laplace-leaky-3",
            Family::SvtLaplaceLeaky4 => "svt-laplace-leaky-4",
            Family::SvtLaplaceLeaky5 => "svt-laplace-leaky-5",
            Family::SvtLaplaceLeaky6 => "svt-laplace-leaky-6",
            Family::NoisyMaxGauss => "noisy-max-gauss",
            Family::NoisyMinGauss => "noisy-min-gauss",
            Family::NoisyMaxLaplace => "noisy-max-laplace",
            Family::NoisyMinLaplace => "noisy-min-laplace",
            Family::KMinMaxGauss => "k-min-max-gauss",
            Family::KMinMaxLaplace => "k-min-max-laplace",
            Family::MRange => "m-range",
        }
    }

    /// Whether the program is expected to be private.
    pub fn is_leaky(self) -> bool {
        matches!(
            self,
            Family::SvtGaussLeaky1
                | Family::SvtGaussLeaky2
                | Family::SvtGaussGeLeaky1
                | Family::SvtGaussGeLeaky2
                | Family::SvtLaplaceLeaky3
                | Family::SvtLaplaceLeaky4
                | Family::SvtLaplaceLeaky5
                | Family::SvtLaplaceLeaky6
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == key)
            .ok_or_else(|| BenchmarkError::UnsupportedSpec(format!("unknown family `{s}`")))
    }
}

/// A benchmark instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkSpec {
    pub family: Family,
    /// Number of queries (for m-Range, the number of query blocks).
    pub n: usize,
    /// Number of leading queries that set the range of k-Min-Max.
    pub k: usize,
    /// Number of dimensions of m-Range.
    pub m: usize,
    /// Number of positive answers after which the count-based SVT variants
    /// stop.
    pub c: usize,
    /// Threshold; also the mean of the lower limits of m-Range.
    pub t: Rat,
    /// Query sensitivity.
    pub sensitivity: Rat,
}

impl BenchmarkSpec {
    /// Defaults `k = 2`, `m = 2`, `c = 1`, `T = 0`, sensitivity 1.
    pub fn new(family: Family, n: usize) -> Self {
        BenchmarkSpec { family, n, k: 2, m: 2, c: 1, t: Rat::zero(), sensitivity: Rat::one() }
    }

    /// File-name friendly label such as `svt-gauss_n2`.
    pub fn label(&self) -> String {
        format!("{}_n{}", self.family.name(), self.n)
    }
}

/// Noise of a sampled quantity: distribution and scale numerator.
#[derive(Debug, Clone)]
struct Noise {
    kind: DistKind,
    a: Rat,
}

impl Noise {
    fn new(kind: DistKind, a: Rat) -> Self {
        Noise { kind, a }
    }

    fn sample(&self, var: &str, mean: &str) -> String {
        let kw = match self.kind {
            DistKind::Gaussian => "gauss",
            DistKind::Laplace => "lap",
        };
        format!("{var} ~ {kw}({mean}, {}/eps);", scale_text(&self.a))
    }
}

fn scale_text(r: &Rat) -> String {
    if r.is_integer() {
        format_rational(r)
    } else {
        format!("({})", format_rational(r))
    }
}

fn const_text(r: &Rat) -> String {
    if r.is_integer() && !r.is_negative() {
        format_rational(r)
    } else {
        format!("({})", format_rational(r))
    }
}

/// Emitter of indented source lines.
struct Src {
    text: String,
}

impl Src {
    fn new() -> Self {
        Src { text: String::new() }
    }

    fn line(&mut self, depth: usize, s: &str) {
        let _ = writeln!(self.text, "{}{s}", "  ".repeat(depth));
    }
}

/// Comparison deciding a positive answer in the SVT loop.
#[derive(Debug, Clone, Copy)]
enum Above {
    /// `r >= rT`
    Ge,
    /// `r <= rT`
    Le,
}

struct SvtShape {
    threshold: Option<Noise>,
    query: Option<Noise>,
    above: Above,
    /// Stop after this many positive answers; `None` never stops.
    stop: Option<usize>,
}

/// Generates the DiPGauss source of a benchmark.
pub fn emit(spec: &BenchmarkSpec) -> Result<String, BenchmarkError> {
    if spec.n == 0 {
        return Err(BenchmarkError::UnsupportedSpec("N must be at least 1".into()));
    }
    if !spec.sensitivity.is_positive() {
        return Err(BenchmarkError::UnsupportedSpec("the sensitivity must be positive".into()));
    }
    use DistKind::{Gaussian as G, Laplace as L};
    let d = &spec.sensitivity;
    let two = || rat_int(2) * d;
    let four = || rat_int(4) * d;
    let svt = |t: Option<(DistKind, Rat)>, q: Option<(DistKind, Rat)>, above, stop| SvtShape {
        threshold: t.map(|(k, a)| Noise::new(k, a)),
        query: q.map(|(k, a)| Noise::new(k, a)),
        above,
        stop,
    };
    let c = Some(spec.c.max(1));
    let shape = match spec.family {
        Family::SvtGauss => svt(Some((G, two())), Some((G, four())), Above::Ge, Some(1)),
        Family::SvtGaussGe => svt(Some((G, two())), Some((G, four())), Above::Le, Some(1)),
        Family::SvtLaplace => svt(Some((L, two())), Some((L, four())), Above::Ge, Some(1)),
        Family::SvtLaplaceGe => svt(Some((L, two())), Some((L, four())), Above::Le, Some(1)),
        Family::SvtMix1 => svt(Some((L, two())), Some((G, four())), Above::Ge, c),
        Family::SvtMix1Ge => svt(Some((L, two())), Some((G, four())), Above::Le, c),
        Family::SvtMix2 => svt(Some((G, two())), Some((L, four())), Above::Ge, c),
        Family::SvtMix2Ge => svt(Some((G, two())), Some((L, four())), Above::Le, c),
        Family::SvtGaussLeaky1 => svt(None, Some((G, two())), Above::Ge, Some(1)),
        Family::SvtGaussLeaky2 => svt(Some((G, two())), None, Above::Ge, Some(1)),
        Family::SvtGaussGeLeaky1 => svt(None, Some((G, two())), Above::Le, Some(1)),
        Family::SvtGaussGeLeaky2 => svt(Some((G, two())), None, Above::Le, Some(1)),
        Family::SvtLaplaceLeaky3 => {
            return Err(BenchmarkError::UnsupportedSpec(
                "svt-laplace-leaky-3 has no defined program text".into(),
            ))
        }
        Family::SvtLaplaceLeaky4 => svt(Some((L, four())), Some((L, four() / rat_int(3))), Above::Ge, c),
        Family::SvtLaplaceLeaky5 => svt(Some((L, two())), None, Above::Ge, None),
        Family::SvtLaplaceLeaky6 => svt(Some((L, two())), Some((L, two())), Above::Ge, None),
        Family::NoisyMaxGauss => return Ok(noisy_arg(spec, Noise::new(G, four()), true)),
        Family::NoisyMinGauss => return Ok(noisy_arg(spec, Noise::new(G, four()), false)),
        Family::NoisyMaxLaplace => return Ok(noisy_arg(spec, Noise::new(L, two()), true)),
        Family::NoisyMinLaplace => return Ok(noisy_arg(spec, Noise::new(L, two()), false)),
        Family::KMinMaxGauss => return k_min_max(spec, G),
        Family::KMinMaxLaplace => return k_min_max(spec, L),
        Family::MRange => return m_range(spec),
    };
    Ok(emit_svt(spec, &shape))
}

/// Emits and parses a benchmark.
pub fn program(spec: &BenchmarkSpec) -> Result<Program, BenchmarkError> {
    let src = emit(spec)?;
    dsl::parse(&src).map_err(|e| BenchmarkError::UnsupportedSpec(format!("generated program does not parse: {e}")))
}

fn header(src: &mut Src, n_in: usize, outputs: &str) {
    src.line(0, &format!("input q[1..{n_in}] in {{0, 1}};"));
    src.line(0, outputs);
}

fn emit_svt(spec: &BenchmarkSpec, shape: &SvtShape) -> String {
    let n = spec.n;
    let mut src = Src::new();
    header(&mut src, n, &format!("output out[1..{n}] in {{0, 1}};"));
    for i in 1..=n {
        src.line(0, &format!("out_{i} := 0;"));
    }
    match &shape.threshold {
        Some(noise) => src.line(0, &noise.sample("rT", &const_text(&spec.t))),
        None => src.line(0, &format!("rT := {};", const_text(&spec.t))),
    }
    svt_step(&mut src, shape, 1, n, 0, 0);
    src.text
}

fn svt_step(src: &mut Src, shape: &SvtShape, i: usize, n: usize, count: usize, depth: usize) {
    if i > n {
        return;
    }
    match &shape.query {
        Some(noise) => src.line(depth, &noise.sample(&format!("r_{i}"), &format!("q_{i}"))),
        None => src.line(depth, &format!("r_{i} := q_{i};")),
    }
    let cmp = match shape.above {
        Above::Ge => ">=",
        Above::Le => "<=",
    };
    src.line(depth, &format!("if (r_{i} {cmp} rT) {{"));
    src.line(depth + 1, &format!("out_{i} := 1;"));
    let stops = shape.stop.is_some_and(|c| count + 1 >= c);
    if !stops {
        svt_step(src, shape, i + 1, n, count + 1, depth + 1);
    }
    src.line(depth, "} else {");
    src.line(depth + 1, &format!("out_{i} := 0;"));
    svt_step(src, shape, i + 1, n, count, depth + 1);
    src.line(depth, "}");
}

/// Arg-max (or arg-min) of noisy queries, unrolled as a running comparison
/// with ties resolved toward the smaller index.
fn noisy_arg(spec: &BenchmarkSpec, noise: Noise, max: bool) -> String {
    let n = spec.n;
    let mut src = Src::new();
    let values: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    header(&mut src, n, &format!("output out in {{{}}};", values.join(", ")));
    for i in 1..=n {
        src.line(0, &noise.sample(&format!("r_{i}"), &format!("q_{i}")));
    }
    arg_step(&mut src, 2, 1, n, max, 0);
    src.text
}

fn arg_step(src: &mut Src, i: usize, best: usize, n: usize, max: bool, depth: usize) {
    if i > n {
        src.line(depth, &format!("out := {best};"));
        return;
    }
    let cmp = if max { ">=" } else { "<=" };
    src.line(depth, &format!("if (r_{best} {cmp} r_{i}) {{"));
    arg_step(src, i + 1, best, n, max, depth + 1);
    src.line(depth, "} else {");
    arg_step(src, i + 1, i, n, max, depth + 1);
    src.line(depth, "}");
}

/// The k-Min-Max program: the first `k` noisy queries fix a noisy range and
/// each later query reports whether it falls inside, stopping at the first
/// query outside.
fn k_min_max(spec: &BenchmarkSpec, kind: DistKind) -> Result<String, BenchmarkError> {
    let (n, k) = (spec.n, spec.k);
    if k < 2 {
        return Err(BenchmarkError::UnsupportedSpec("k-Min-Max needs k >= 2".into()));
    }
    if n <= k {
        return Err(BenchmarkError::UnsupportedSpec("k-Min-Max needs N > k".into()));
    }
    let range_noise = Noise::new(kind, rat_int(4 * k as i64) * &spec.sensitivity);
    let query_noise = Noise::new(kind, rat_int(4) * &spec.sensitivity);
    let mut src = Src::new();
    header(&mut src, n, &format!("output out[{}..{n}] in {{0, 1, 2}};", k + 1));
    for i in k + 1..=n {
        src.line(0, &format!("out_{i} := 2;"));
    }
    src.line(0, &range_noise.sample("r_1", "q_1"));
    let ctx = MinMax { n, k, range_noise, query_noise };
    ctx.range_step(&mut src, 2, "r_1", "r_1", 0);
    Ok(src.text)
}

struct MinMax {
    n: usize,
    k: usize,
    range_noise: Noise,
    query_noise: Noise,
}

impl MinMax {
    fn range_step(&self, src: &mut Src, i: usize, mn: &str, mx: &str, depth: usize) {
        if i > self.k {
            self.check_step(src, i, mn, mx, depth);
            return;
        }
        let r = format!("r_{i}");
        src.line(depth, &self.range_noise.sample(&r, &format!("q_{i}")));
        src.line(depth, &format!("if ({r} > {mx}) {{"));
        src.line(depth + 1, &format!("if ({r} > {mn}) {{"));
        self.range_step(src, i + 1, mn, &r, depth + 2);
        src.line(depth + 1, "} else {");
        self.range_step(src, i + 1, mn, mx, depth + 2);
        src.line(depth + 1, "}");
        src.line(depth, "} else {");
        src.line(depth + 1, &format!("if ({r} < {mn}) {{"));
        self.range_step(src, i + 1, &r, mx, depth + 2);
        src.line(depth + 1, "} else {");
        self.range_step(src, i + 1, mn, mx, depth + 2);
        src.line(depth + 1, "}");
        src.line(depth, "}");
    }

    fn check_step(&self, src: &mut Src, i: usize, mn: &str, mx: &str, depth: usize) {
        if i > self.n {
            return;
        }
        let r = format!("r_{i}");
        src.line(depth, &self.query_noise.sample(&r, &format!("q_{i}")));
        src.line(depth, &format!("if ({r} >= {mn}) {{"));
        src.line(depth + 1, &format!("if ({r} < {mx}) {{"));
        src.line(depth + 2, &format!("out_{i} := 0;"));
        self.check_step(src, i + 1, mn, mx, depth + 2);
        src.line(depth + 1, "} else {");
        src.line(depth + 2, &format!("out_{i} := 1;"));
        src.line(depth + 1, "}");
        src.line(depth, "} else {");
        src.line(depth + 1, &format!("if ({r} < {mx}) {{"));
        src.line(depth + 2, &format!("out_{i} := 0;"));
        src.line(depth + 1, "} else {");
        src.line(depth + 2, "skip;");
        src.line(depth + 1, "}");
        src.line(depth, "}");
    }
}

/// The m-Range program: `2m` noisy limits and `N` blocks of `m` noisy
/// queries, each checked against the limits of its dimension; the first
/// query outside its range stops the program.
fn m_range(spec: &BenchmarkSpec) -> Result<String, BenchmarkError> {
    let (n, m) = (spec.n, spec.m);
    if m == 0 {
        return Err(BenchmarkError::UnsupportedSpec("m-Range needs m >= 1".into()));
    }
    let total = n * m;
    let limit = Noise::new(DistKind::Laplace, rat_int(4 * m as i64) * &spec.sensitivity);
    let query = Noise::new(DistKind::Laplace, rat_int(4) * &spec.sensitivity);
    let mut src = Src::new();
    header(&mut src, total, &format!("output out[1..{total}] in {{0, 1, 2}};"));
    for i in 1..=total {
        src.line(0, &format!("out_{i} := 2;"));
    }
    let high_mean = &spec.t + &spec.sensitivity;
    for j in 1..=m {
        src.line(0, &limit.sample(&format!("low_{j}"), &const_text(&spec.t)));
        src.line(0, &limit.sample(&format!("high_{j}"), &const_text(&high_mean)));
    }
    range_query(&mut src, &query, 1, m, total, 0);
    Ok(src.text)
}

fn range_query(src: &mut Src, noise: &Noise, idx: usize, m: usize, total: usize, depth: usize) {
    if idx > total {
        return;
    }
    let j = (idx - 1) % m + 1;
    let r = format!("r_{idx}");
    src.line(depth, &noise.sample(&r, &format!("q_{idx}")));
    src.line(depth, &format!("if ({r} >= low_{j}) {{"));
    src.line(depth + 1, &format!("if ({r} < high_{j}) {{"));
    src.line(depth + 2, &format!("out_{idx} := 2;"));
    range_query(src, noise, idx + 1, m, total, depth + 2);
    src.line(depth + 1, "} else {");
    src.line(depth + 2, &format!("out_{idx} := 1;"));
    src.line(depth + 1, "}");
    src.line(depth, "} else {");
    src.line(depth + 1, &format!("if ({r} < high_{j}) {{"));
    src.line(depth + 2, &format!("out_{idx} := 0;"));
    src.line(depth + 1, "} else {");
    src.line(depth + 2, "skip;");
    src.line(depth + 1, "}");
    src.line(depth, "}");
}

/// Certified upper bound on `5 eps^2 / 32 + (sqrt 5 / 2) eps sqrt(ln(1/delta))`,
/// the budget for which the Gaussian sparse vector technique is
/// `(eps_prv, delta)`-private. The logarithm is natural.
pub fn svt_gauss_budget(eps: &Rat, delta: &Rat) -> Result<Rat, BenchmarkError> {
    if !eps.is_positive() {
        return Err(BenchmarkError::EpsOutOfRange(format_rational(eps)));
    }
    if !delta.is_positive() || delta > &Rat::one() {
        return Err(BenchmarkError::DeltaOutOfRange(format_rational(delta)));
    }
    let first = rat(5, 32) * eps * eps;
    let ln = ln_enclosure(&(Rat::one() / delta), 80);
    // (sqrt 5 / 2) eps sqrt(l) = sqrt(5 eps^2 l / 4)
    let k = rat(5, 4) * eps * eps;
    let lo = if ln.lo.is_negative() { Rat::zero() } else { &ln.lo * &k };
    let arg = Enclosure::new(lo, &ln.hi * &k);
    let root = sqrt_enclosure(&arg, 80);
    Ok(first + root.hi)
}

/// How adjacent inputs are chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdjacencyKind {
    /// Every ordered pair of distinct inputs.
    All,
    /// The all-zero input and the input with only its last entry set, in
    /// both orders.
    Single,
    /// Pairs read from a JSON file.
    File(String),
}

impl FromStr for AdjacencyKind {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(AdjacencyKind::All),
            "single" => Ok(AdjacencyKind::Single),
            other => match other.strip_prefix("file:") {
                Some(path) => Ok(AdjacencyKind::File(path.to_string())),
                None => Err(BenchmarkError::BadPairFile(format!(
                    "unknown adjacency `{other}`; use all, single or file:<path>"
                ))),
            },
        }
    }
}

/// Adjacency relation over the inputs `q_1..q_N` with values in `{0, 1}`.
pub fn adjacency(kind: &AdjacencyKind, n: usize) -> Result<AdjacencyRelation, BenchmarkError> {
    let names: Vec<String> = (1..=n).map(|i| format!("q_{i}")).collect();
    let domains = vec![vec![Rat::zero(), Rat::one()]; n];
    adjacency_over(kind, &names, &domains)
}

/// Adjacency relation over the declared inputs of a program.
pub fn adjacency_for(kind: &AdjacencyKind, p: &Program) -> Result<AdjacencyRelation, BenchmarkError> {
    let names: Vec<String> = p.inputs.iter().map(|d| d.name.clone()).collect();
    let domains: Vec<Vec<Rat>> = p.inputs.iter().map(|d| d.values.clone()).collect();
    adjacency_over(kind, &names, &domains)
}

fn adjacency_over(kind: &AdjacencyKind, names: &[String], domains: &[Vec<Rat>]) -> Result<AdjacencyRelation, BenchmarkError> {
    match kind {
        AdjacencyKind::All => {
            let mut inputs = vec![Valuation::new()];
            for (name, values) in names.iter().zip(domains) {
                inputs = inputs
                    .into_iter()
                    .flat_map(|v| {
                        values.iter().map(move |x| {
                            let mut w = v.clone();
                            w.insert(name.clone(), x.clone());
                            w
                        })
                    })
                    .collect();
            }
            let mut pairs = Vec::new();
            for a in &inputs {
                for b in &inputs {
                    if a != b {
                        pairs.push((a.clone(), b.clone()));
                    }
                }
            }
            Ok(AdjacencyRelation::new(pairs))
        }
        AdjacencyKind::Single => {
            if names.is_empty() {
                return Err(BenchmarkError::UnsupportedSpec("single-pair adjacency needs an input".into()));
            }
            let zero: Valuation = names.iter().map(|n| (n.clone(), Rat::zero())).collect();
            let mut one = zero.clone();
            one.insert(names[names.len() - 1].clone(), Rat::one());
            Ok(AdjacencyRelation::new(vec![(zero.clone(), one.clone()), (one, zero)]))
        }
        AdjacencyKind::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| BenchmarkError::BadPairFile(format!("{path}: {e}")))?;
            parse_pairs(&text)
        }
    }
}

/// Parses a JSON array of `{"u": {var: value}, "u2": {var: value}}` pairs.
/// Values are integers or rational strings such as `"1/2"`.
pub fn parse_pairs(text: &str) -> Result<AdjacencyRelation, BenchmarkError> {
    let bad = |m: String| BenchmarkError::BadPairFile(m);
    let json: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let items = json.as_array().ok_or_else(|| bad("expected a JSON array of pairs".into()))?;
    let valuation = |v: &Value, what: &str| -> Result<Valuation, BenchmarkError> {
        let obj = v.as_object().ok_or_else(|| bad(format!("`{what}` must be an object")))?;
        obj.iter()
            .map(|(k, x)| {
                let r = match x {
                    Value::Number(n) if n.is_i64() => Ok(rat_int(n.as_i64().expect("checked"))),
                    Value::String(s) => parse_rational(s),
                    other => Err(format!("value {other} of `{k}` is not an integer or rational string")),
                };
                r.map(|r| (k.clone(), r)).map_err(bad)
            })
            .collect()
    };
    let mut pairs = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let u = item.get("u").ok_or_else(|| bad(format!("pair {i} has no `u`")))?;
        let u2 = item.get("u2").ok_or_else(|| bad(format!("pair {i} has no `u2`")))?;
        pairs.push((valuation(u, "u")?, valuation(u2, "u2")?));
    }
    if pairs.is_empty() {
        return Err(bad("the file lists no pairs".into()));
    }
    Ok(AdjacencyRelation::new(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
    }

    #[test]
    fn leaky_three_is_unsupported() {
        let err = emit(&BenchmarkSpec::new(Family::SvtLaplaceLeaky3, 2)).unwrap_err();
        assert!(matches!(err, BenchmarkError::UnsupportedSpec(_)));
    }

    #[test]
    fn budget_at_delta_one_is_the_quadratic_term() {
        assert_eq!(svt_gauss_budget(&rat(1, 2), &Rat::one()).unwrap(), rat(5, 128));
    }
}
