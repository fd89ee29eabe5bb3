//! Symbolic execution of DiPGauss programs.
//!
//! Executing a program from a fixed input valuation yields one final state per
//! control path. Each state records the finite-domain valuation, how every
//! real variable was produced (sampled from a distribution or assigned an
//! affine expression over sampled variables) and the guards collected along
//! the path. Guards over random quantities become linear constraints over the
//! sampled variables, whose joint probability the integral layer evaluates.

use crate::dsl::{BExpr, Cmp, DistKind, Program, RExpr, Stmt};
use crate::rational::{format_rational, Rat};
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Assignment of values to finite-domain variables.
pub type Valuation = BTreeMap<String, Rat>;

/// Distribution of a sampled variable; the scale is `a/eps` once the privacy
/// parameter is fixed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistSpec {
    pub kind: DistKind,
    pub mean: Rat,
    /// Scale numerator `a`.
    pub a: Rat,
}

impl DistSpec {
    /// The distribution's scale parameter `a/eps`: the standard deviation of
    /// a Gaussian, or the parameter `b` of a Laplace distribution.
    pub fn scale(&self, eps: &Rat) -> Rat {
        &self.a / eps
    }

    /// Whether the standard deviation carries an extra factor of `sqrt(2)`
    /// relative to [`DistSpec::scale`] (true for Laplace).
    pub fn sigma_has_sqrt2(&self) -> bool {
        self.kind == DistKind::Laplace
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            DistKind::Gaussian => "gauss",
            DistKind::Laplace => "lap",
        };
        write!(f, "{name}({}, {}/eps)", format_rational(&self.mean), format_rational(&self.a))
    }
}

/// Affine form over sampled variables, keyed by sampling site.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LinForm {
    pub coeffs: BTreeMap<usize, Rat>,
    pub constant: Rat,
}

impl LinForm {
    fn constant(c: Rat) -> Self {
        LinForm { coeffs: BTreeMap::new(), constant: c }
    }

    fn add_scaled(&mut self, other: &LinForm, k: &Rat) {
        for (s, c) in &other.coeffs {
            let e = self.coeffs.entry(*s).or_insert_with(Rat::zero);
            *e += c * k;
            if e.is_zero() {
                self.coeffs.remove(s);
            }
        }
        self.constant += &other.constant * k;
    }

    fn negated(&self) -> LinForm {
        let mut out = LinForm::default();
        out.add_scaled(self, &-Rat::one());
        out
    }
}

/// A sampled (independent) real variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sampled {
    /// Identity of the sampling statement that produced the variable.
    pub site: usize,
    pub name: String,
    pub dist: DistSpec,
}

/// How a real variable obtained its value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RealBinding {
    Sampled(usize),
    Expr(LinForm),
}

/// A guard collected on a path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    /// The guard as written in the program, with the branch polarity applied.
    pub written: BExpr,
    pub kind: GuardKind,
}

/// Classification of a guard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GuardKind {
    /// Comparison over finite-domain variables, evaluated at guard time.
    Const { lhs: Rat, cmp: Cmp, rhs: Rat },
    /// Comparison mentioning real variables: `form cmp 0` over sampled
    /// variables after substituting dependent variables.
    Rand { form: LinForm, cmp: Cmp },
}

/// Symbolic execution state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct State {
    pub alpha: Valuation,
    pub beta: BTreeMap<String, RealBinding>,
    /// Sampled variables in sampling order.
    pub sampled: Vec<Sampled>,
    pub guards: Vec<Guard>,
}

/// A state reached at the end of the program.
pub type FinalState = State;

impl State {
    /// Guards over finite-domain variables only.
    pub fn g_const(&self) -> impl Iterator<Item = &Guard> {
        self.guards.iter().filter(|g| matches!(g.kind, GuardKind::Const { .. }))
    }

    /// Guards that mention real variables.
    pub fn g_rand(&self) -> impl Iterator<Item = &Guard> {
        self.guards.iter().filter(|g| matches!(g.kind, GuardKind::Rand { .. }))
    }

    /// Output valuation of the state restricted to `outputs`.
    pub fn output_of(&self, p: &Program) -> Valuation {
        p.outputs
            .iter()
            .map(|d| (d.name.clone(), self.alpha.get(&d.name).cloned().unwrap_or_else(Rat::zero)))
            .collect()
    }
}

/// Relation of a canonical constraint `expr rel 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Rel {
    Lt,
    Le,
    Eq,
}

/// Canonical linear constraint `sum coeffs[i]*X_i + constant rel 0` over the
/// variables of a [`GuardSystem`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub coeffs: BTreeMap<usize, Rat>,
    pub constant: Rat,
    pub rel: Rel,
    /// Original guard text, kept for reports.
    pub source: String,
}

/// Linear constraints over independent sampled variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardSystem {
    /// Constrained sampled variables, in sampling order.
    pub vars: Vec<Sampled>,
    pub constraints: Vec<Constraint>,
}

/// Assigns a site number to every sampling statement, in program order.
fn sample_sites(s: &Stmt, out: &mut HashMap<*const Stmt, usize>) {
    match s {
        Stmt::Sample { .. } => {
            let n = out.len();
            out.insert(s as *const Stmt, n);
        }
        Stmt::If { then_branch, else_branch, .. } => {
            sample_sites(then_branch, out);
            sample_sites(else_branch, out);
        }
        Stmt::Seq(items) => items.iter().for_each(|i| sample_sites(i, out)),
        _ => {}
    }
}

struct Exec<'a> {
    program: &'a Program,
    sites: HashMap<*const Stmt, usize>,
}

impl Exec<'_> {
    /// Substitutes finite-domain values and real bindings into an expression.
    fn eval_r(&self, e: &RExpr, st: &State) -> LinForm {
        let mut out = LinForm::constant(e.constant.clone());
        for (name, c) in &e.terms {
            if self.program.domain_of(name).is_some() {
                let v = st.alpha.get(name).cloned().unwrap_or_else(Rat::zero);
                out.constant += c * v;
                continue;
            }
            match st.beta.get(name) {
                Some(RealBinding::Sampled(site)) => {
                    let mut f = LinForm::default();
                    f.coeffs.insert(*site, Rat::one());
                    out.add_scaled(&f, c);
                }
                Some(RealBinding::Expr(f)) => out.add_scaled(f, c),
                None => panic!("real variable `{name}` read before assignment; validate the program first"),
            }
        }
        out
    }

    fn mentions_real(&self, b: &BExpr) -> bool {
        b.lhs.vars().chain(b.rhs.vars()).any(|v| self.program.domain_of(v).is_none())
    }

    fn guard(&self, b: &BExpr, st: &State) -> Guard {
        let lhs = self.eval_r(&b.lhs, st);
        let rhs = self.eval_r(&b.rhs, st);
        let kind = if self.mentions_real(b) {
            let mut form = lhs;
            form.add_scaled(&rhs, &-Rat::one());
            GuardKind::Rand { form, cmp: b.cmp }
        } else {
            GuardKind::Const { lhs: lhs.constant, cmp: b.cmp, rhs: rhs.constant }
        };
        Guard { written: b.clone(), kind }
    }

    fn exec(&self, s: &Stmt, states: Vec<State>) -> Vec<State> {
        match s {
            Stmt::Skip => states,
            Stmt::DomAssign { var, value } => states
                .into_iter()
                .map(|mut st| {
                    st.alpha.insert(var.clone(), value.clone());
                    st
                })
                .collect(),
            Stmt::Sample { var, dist, mean, scale } => {
                let site = self.sites[&(s as *const Stmt)];
                states
                    .into_iter()
                    .map(|mut st| {
                        let mu = self.eval_r(mean, &st).constant;
                        let spec = DistSpec { kind: *dist, mean: mu, a: scale.clone() };
                        st.sampled.push(Sampled { site, name: var.clone(), dist: spec });
                        st.beta.insert(var.clone(), RealBinding::Sampled(site));
                        st
                    })
                    .collect()
            }
            Stmt::RealAssign { var, expr } => states
                .into_iter()
                .map(|mut st| {
                    let f = self.eval_r(expr, &st);
                    st.beta.insert(var.clone(), RealBinding::Expr(f));
                    st
                })
                .collect(),
            Stmt::If { cond, then_branch, else_branch } => {
                let neg = cond.negate();
                let mut then_in = Vec::with_capacity(states.len());
                let mut else_in = Vec::with_capacity(states.len());
                for st in states {
                    let mut t = st.clone();
                    t.guards.push(self.guard(cond, &st));
                    then_in.push(t);
                    let mut e = st;
                    let g = self.guard(&neg, &e);
                    e.guards.push(g);
                    else_in.push(e);
                }
                let mut out = self.exec(then_branch, then_in);
                out.extend(self.exec(else_branch, else_in));
                out
            }
            Stmt::Seq(items) => items.iter().fold(states, |acc, item| self.exec(item, acc)),
        }
    }
}

/// All final states of `p` started from input valuation `u`, in canonical
/// order (then-branches before else-branches).
pub fn exec(p: &Program, u: &Valuation) -> Vec<FinalState> {
    let mut sites = HashMap::new();
    sample_sites(&p.body, &mut sites);
    let ex = Exec { program: p, sites };
    let start = State { alpha: u.clone(), ..State::default() };
    ex.exec(&p.body, vec![start])
}

/// Final states of `p` on input `u` whose outputs equal `o`.
pub fn run(u: &Valuation, o: &Valuation, p: &Program) -> Vec<FinalState> {
    exec(p, u).into_iter().filter(|st| o.iter().all(|(k, v)| st.alpha.get(k) == Some(v))).collect()
}

/// Conjunction of the state's finite-domain guards.
pub fn eval_const(fs: &FinalState) -> bool {
    fs.g_const().all(|g| match &g.kind {
        GuardKind::Const { lhs, cmp, rhs } => cmp.holds(lhs, rhs),
        GuardKind::Rand { .. } => true,
    })
}

/// Turns the random guards of a final state into canonical linear
/// constraints over its sampled variables.
///
/// `>`/`>=` are negated into `<`/`<=`, equalities get a positive leading
/// coefficient, and disequalities are dropped since they exclude a null set.
/// Sampled variables that no constraint mentions integrate to one and are
/// omitted.
pub fn to_guard_system(fs: &FinalState) -> GuardSystem {
    let mut raw = Vec::new();
    for g in fs.g_rand() {
        let GuardKind::Rand { form, cmp } = &g.kind else { continue };
        let (form, rel) = match cmp {
            Cmp::Lt => (form.clone(), Rel::Lt),
            Cmp::Le => (form.clone(), Rel::Le),
            Cmp::Gt => (form.negated(), Rel::Lt),
            Cmp::Ge => (form.negated(), Rel::Le),
            Cmp::Eq => {
                let lead_negative = form.coeffs.values().next().is_some_and(|c| c.is_negative());
                (if lead_negative { form.negated() } else { form.clone() }, Rel::Eq)
            }
            Cmp::Ne => continue,
        };
        raw.push((form, rel, g.written.to_string()));
    }
    let used: Vec<&Sampled> = fs
        .sampled
        .iter()
        .filter(|s| raw.iter().any(|(f, _, _)| f.coeffs.contains_key(&s.site)))
        .collect();
    let index: HashMap<usize, usize> = used.iter().enumerate().map(|(i, s)| (s.site, i)).collect();
    let constraints = raw
        .into_iter()
        .map(|(form, rel, source)| Constraint {
            coeffs: form.coeffs.iter().map(|(s, c)| (index[s], c.clone())).collect(),
            constant: form.constant,
            rel,
            source,
        })
        .collect();
    GuardSystem { vars: used.into_iter().cloned().collect(), constraints }
}

/// JSON view of a final state for debugging dumps.
#[derive(Debug, Serialize)]
pub struct StateDump {
    pub alpha: BTreeMap<String, String>,
    pub sampled: Vec<(String, String)>,
    pub dependent: BTreeMap<String, String>,
    pub g_const: Vec<String>,
    pub g_rand: Vec<String>,
}

impl StateDump {
    pub fn new(fs: &FinalState) -> Self {
        let site_name: HashMap<usize, &str> =
            fs.sampled.iter().map(|s| (s.site, s.name.as_str())).collect();
        let show_form = |f: &LinForm| {
            let e = RExpr {
                terms: f.coeffs.iter().map(|(s, c)| (site_name[s].to_string(), c.clone())).collect(),
                constant: f.constant.clone(),
            };
            e.to_string()
        };
        StateDump {
            alpha: fs.alpha.iter().map(|(k, v)| (k.clone(), format_rational(v))).collect(),
            sampled: fs.sampled.iter().map(|s| (s.name.clone(), s.dist.to_string())).collect(),
            dependent: fs
                .beta
                .iter()
                .filter_map(|(k, b)| match b {
                    RealBinding::Expr(f) => Some((k.clone(), show_form(f))),
                    RealBinding::Sampled(_) => None,
                })
                .collect(),
            g_const: fs.g_const().map(|g| g.written.to_string()).collect(),
            g_rand: fs.g_rand().map(|g| g.written.to_string()).collect(),
        }
    }
}
