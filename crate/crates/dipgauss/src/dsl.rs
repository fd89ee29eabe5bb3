//! The DiPGauss surface language.
//!
//! A program declares finite-domain input and output variables, then runs a
//! loop-free body that samples Gaussian or Laplace noise into real variables,
//! combines them affinely and branches on linear comparisons:
//!
//! ```text
//! input q[1..2] in {0, 1};
//! output out[1..2] in {0, 1};
//! out_1 := 0;
//! out_2 := 0;
//! rT ~ gauss(0, 2/eps);
//! r_1 ~ gauss(q_1, 4/eps);
//! if (r_1 >= rT) { out_1 := 1; } else {
//!   r_2 ~ gauss(q_2, 4/eps);
//!   if (r_2 >= rT) { out_2 := 1; }
//! }
//! ```
//!
//! `for i = 1 to N { ... }` is unrolled at parse time. Inside a loop body
//! `q[i]` names `q_<value of i>`, the bare loop variable is an integer
//! constant, and every real variable assigned in the body without an explicit
//! index is renamed `name_<i>` so that each iteration gets fresh variables.

use crate::rational::{format_rational, Rat};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};
use thiserror::Error;

/// Errors raised while parsing or validating a program.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("scale error at {line}:{col}: the noise scale numerator must be positive")]
    Scale { line: usize, col: usize },
    #[error("`{var}` is read before it is assigned on path {path}")]
    UseBeforeAssign { var: String, path: String },
    #[error("real variable `{var}` is assigned twice on path {path}")]
    DoubleRealAssign { var: String, path: String },
    #[error("`{var}` is declared both as an input and as an output")]
    InOutOverlap { var: String },
}

/// A declared finite-domain variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainVar {
    pub name: String,
    /// Sorted, duplicate-free domain values.
    pub values: Vec<Rat>,
}

/// Noise distribution of a sampling statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum DistKind {
    Gaussian,
    Laplace,
}

impl DistKind {
    fn keyword(self) -> &'static str {
        match self {
            DistKind::Gaussian => "gauss",
            DistKind::Laplace => "lap",
        }
    }
}

/// Affine combination of variables with rational coefficients.
///
/// Coefficients are never zero. The same type serves real expressions and
/// comparisons over domain variables; which names are domain variables is
/// determined by the enclosing [`Program`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct RExpr {
    pub terms: BTreeMap<String, Rat>,
    pub constant: Rat,
}

impl RExpr {
    pub fn constant(c: Rat) -> Self {
        RExpr { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(name.to_string(), Rat::one());
        RExpr { terms, constant: Rat::zero() }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &RExpr) -> RExpr {
        let mut out = self.clone();
        for (v, c) in &other.terms {
            let e = out.terms.entry(v.clone()).or_insert_with(Rat::zero);
            *e += c;
            if e.is_zero() {
                out.terms.remove(v);
            }
        }
        out.constant += &other.constant;
        out
    }

    pub fn scale(&self, k: &Rat) -> RExpr {
        if k.is_zero() {
            return RExpr::constant(Rat::zero());
        }
        RExpr {
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
            constant: &self.constant * k,
        }
    }

    pub fn sub(&self, other: &RExpr) -> RExpr {
        self.add(&other.scale(&-Rat::one()))
    }

    /// Names referenced by the expression.
    pub fn vars(&self) -> impl Iterator<Item = &String> {
        self.terms.keys()
    }
}

impl fmt::Display for RExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, c) in &self.terms {
            let neg = c.is_negative();
            let mag = c.abs();
            if first {
                if neg {
                    f.write_str("-")?;
                }
            } else {
                f.write_str(if neg { " - " } else { " + " })?;
            }
            if mag.is_one() {
                f.write_str(v)?;
            } else {
                write!(f, "{}*{}", paren_rational(&mag), v)?;
            }
            first = false;
        }
        if first {
            if self.constant.is_negative() {
                write!(f, "-{}", format_rational(&self.constant.abs()))?;
            } else {
                f.write_str(&format_rational(&self.constant))?;
            }
        } else if !self.constant.is_zero() {
            let sep = if self.constant.is_negative() { " - " } else { " + " };
            write!(f, "{sep}{}", format_rational(&self.constant.abs()))?;
        }
        Ok(())
    }
}

fn paren_rational(r: &Rat) -> String {
    if r.is_integer() {
        format_rational(r)
    } else {
        format!("({})", format_rational(r))
    }
}

/// Comparison operator of a guard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    /// The complementary comparator used for the else branch.
    pub fn negate(self) -> Cmp {
        match self {
            Cmp::Eq => Cmp::Ne,
            Cmp::Ne => Cmp::Eq,
            Cmp::Lt => Cmp::Ge,
            Cmp::Le => Cmp::Gt,
            Cmp::Gt => Cmp::Le,
            Cmp::Ge => Cmp::Lt,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }

    /// Evaluates `a cmp b` on exact values.
    pub fn holds(self, a: &Rat, b: &Rat) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }

    /// Evaluates `a cmp b` on floating-point values.
    pub fn holds_f64(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Eq => a == b,
            Cmp::Ne => a != b,
            Cmp::Lt => a < b,
            Cmp::Le => a <= b,
            Cmp::Gt => a > b,
            Cmp::Ge => a >= b,
        }
    }
}

/// A comparison `lhs cmp rhs` between affine expressions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BExpr {
    pub lhs: RExpr,
    pub cmp: Cmp,
    pub rhs: RExpr,
}

impl BExpr {
    /// The guard of the else branch.
    pub fn negate(&self) -> BExpr {
        BExpr { lhs: self.lhs.clone(), cmp: self.cmp.negate(), rhs: self.rhs.clone() }
    }
}

impl fmt::Display for BExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.cmp.symbol(), self.rhs)
    }
}

/// Statements of the loop-free core language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    /// `x := d` for a domain variable.
    DomAssign { var: String, value: Rat },
    /// `r ~ gauss(mean, a/eps)` or `r ~ lap(mean, a/eps)`; `mean` ranges over
    /// domain variables and constants only.
    Sample { var: String, dist: DistKind, mean: RExpr, scale: Rat },
    /// `r := R` for a real variable.
    RealAssign { var: String, expr: RExpr },
    If { cond: BExpr, then_branch: Box<Stmt>, else_branch: Box<Stmt> },
    Skip,
    /// Sequential composition; always holds at least two statements, none of
    /// which is a `Seq` or a `Skip`.
    Seq(Vec<Stmt>),
}

impl Stmt {
    /// Flattens a statement list into the canonical sequence form, dropping
    /// `skip` statements.
    pub fn seq(items: Vec<Stmt>) -> Stmt {
        let mut flat = Vec::new();
        for s in items {
            match s {
                Stmt::Seq(inner) => flat.extend(inner),
                Stmt::Skip => {}
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Stmt::Skip,
            1 => flat.pop().expect("one element"),
            _ => Stmt::Seq(flat),
        }
    }
}

/// A parsed DiPGauss program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub inputs: Vec<DomainVar>,
    pub outputs: Vec<DomainVar>,
    /// Auxiliary finite-domain variables declared with `var`.
    pub locals: Vec<DomainVar>,
    pub body: Stmt,
}

impl Program {
    /// Names of every declared finite-domain variable.
    pub fn domain_names(&self) -> BTreeSet<String> {
        self.inputs
            .iter()
            .chain(&self.outputs)
            .chain(&self.locals)
            .map(|d| d.name.clone())
            .collect()
    }

    /// Looks up a declared domain variable.
    pub fn domain_of(&self, name: &str) -> Option<&DomainVar> {
        self.inputs.iter().chain(&self.outputs).chain(&self.locals).find(|d| d.name == name)
    }

    /// Every valuation of the declared inputs, in lexicographic order.
    pub fn input_space(&self) -> Vec<BTreeMap<String, Rat>> {
        cartesian(&self.inputs)
    }

    /// Every valuation of the declared outputs, in lexicographic order.
    pub fn output_space(&self) -> Vec<BTreeMap<String, Rat>> {
        cartesian(&self.outputs)
    }
}

fn cartesian(vars: &[DomainVar]) -> Vec<BTreeMap<String, Rat>> {
    let mut out = vec![BTreeMap::new()];
    for v in vars {
        let mut next = Vec::with_capacity(out.len() * v.values.len());
        for partial in &out {
            for val in &v.values {
                let mut m = partial.clone();
                m.insert(v.name.clone(), val.clone());
                next.push(m);
            }
        }
        out = next;
    }
    out
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(BigInt),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    ":=", "<=", ">=", "==", "!=", "..", "~", "(", ")", "{", "}", "[", "]", ",", ";", "+", "-",
    "*", "/", "<", ">", "=",
];

fn lex(src: &str) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| DslError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let is_float = (chars.get(i) == Some(&'.')
                && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
                || matches!(chars.get(i), Some('e') | Some('E'));
            if is_float {
                return Err(err(
                    tl,
                    tc,
                    "floating-point literals are not accepted; write an exact rational such as 3/2"
                        .into(),
                ));
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            toks.push(Token { tok: Tok::Int(text.parse().expect("digits")), line: tl, col: tc });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            toks.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                toks.push(Token { tok: Tok::Sym(s), line: tl, col: tc });
            }
            None => return Err(err(tl, tc, format!("unexpected character `{c}`"))),
        }
    }
    toks.push(Token { tok: Tok::Eof, line, col });
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

const KEYWORDS: &[&str] =
    &["input", "output", "var", "in", "if", "else", "for", "to", "skip", "gauss", "lap", "eps"];

struct LoopFrame {
    var: String,
    value: i64,
    /// Real variables assigned in the loop body without an explicit index.
    locals: HashSet<String>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    domains: BTreeMap<String, Vec<Rat>>,
    loops: Vec<LoopFrame>,
}

/// Parses DiPGauss source text into a [`Program`]; `for` loops are unrolled.
///
/// The result is not yet checked for well-formedness; see [`validate`].
pub fn parse(source: &str) -> Result<Program, DslError> {
    let mut p = Parser { toks: lex(source)?, pos: 0, domains: BTreeMap::new(), loops: Vec::new() };
    p.program()
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, DslError> {
        let (line, col) = self.here();
        Err(DslError::Syntax { line, col, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), DslError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.fail(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<(), DslError> {
        if self.is_kw(k) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected `{k}`, found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn raw_ident(&mut self) -> Result<String, DslError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail(format!("expected an identifier, found {}", self.describe())),
        }
    }

    fn int_literal(&mut self) -> Result<BigInt, DslError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.pos += 1;
                Ok(n)
            }
            _ => self.fail(format!("expected an integer literal, found {}", self.describe())),
        }
    }

    fn small_int(&mut self) -> Result<i64, DslError> {
        let neg = self.eat_sym("-");
        let n = self.int_literal()?;
        let v: i64 = n.try_into().or_else(|_| self.fail("integer literal out of range"))?;
        Ok(if neg { -v } else { v })
    }

    /// Resolves an identifier occurrence to its unrolled name, handling the
    /// `q[i]` index sugar and per-iteration renaming of loop-local reals.
    fn name(&mut self) -> Result<String, DslError> {
        let base = self.raw_ident()?;
        if self.eat_sym("[") {
            let idx = self.index_expr()?;
            self.expect_sym("]")?;
            return Ok(format!("{base}_{idx}"));
        }
        let mut name = base;
        for frame in self.loops.iter().rev() {
            if frame.locals.contains(&name) {
                name = format!("{name}_{}", frame.value);
            }
        }
        Ok(name)
    }

    fn loop_value(&self, name: &str) -> Option<i64> {
        self.loops.iter().rev().find(|f| f.var == name).map(|f| f.value)
    }

    /// Integer index expression built from literals and loop variables.
    fn index_expr(&mut self) -> Result<i64, DslError> {
        let mut total = self.index_term()?;
        loop {
            if self.eat_sym("+") {
                total += self.index_term()?;
            } else if self.eat_sym("-") {
                total -= self.index_term()?;
            } else {
                return Ok(total);
            }
        }
    }

    fn index_term(&mut self) -> Result<i64, DslError> {
        let mut v = self.index_atom()?;
        while self.eat_sym("*") {
            v *= self.index_atom()?;
        }
        Ok(v)
    }

    fn index_atom(&mut self) -> Result<i64, DslError> {
        if self.eat_sym("(") {
            let v = self.index_expr()?;
            self.expect_sym(")")?;
            return Ok(v);
        }
        if let Tok::Ident(s) = self.peek().clone() {
            return match self.loop_value(&s) {
                Some(v) => {
                    self.pos += 1;
                    Ok(v)
                }
                None => self.fail(format!("`{s}` is not a loop variable")),
            };
        }
        self.small_int()
    }

    fn program(&mut self) -> Result<Program, DslError> {
        let (mut inputs, mut outputs, mut locals) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            let target = if self.is_kw("input") {
                &mut inputs
            } else if self.is_kw("output") {
                &mut outputs
            } else if self.is_kw("var") {
                &mut locals
            } else {
                break;
            };
            self.pos += 1;
            let decls = self.declaration()?;
            for d in decls {
                if target.iter().any(|x: &DomainVar| x.name == d.name) {
                    return Err(DslError::Domain(format!("`{}` is declared twice", d.name)));
                }
                target.push(d);
            }
        }
        for d in inputs.iter().chain(&outputs).chain(&locals) {
            self.domains.insert(d.name.clone(), d.values.clone());
        }
        let mut items = Vec::new();
        while *self.peek() != Tok::Eof {
            items.push(self.statement()?);
        }
        Ok(Program { inputs, outputs, locals, body: Stmt::seq(items) })
    }

    /// `name in {v, ...};` or `name[lo..hi] in {v, ...};`
    fn declaration(&mut self) -> Result<Vec<DomainVar>, DslError> {
        let base = self.raw_ident()?;
        let names = if self.eat_sym("[") {
            let lo = self.small_int()?;
            self.expect_sym("..")?;
            let hi = self.small_int()?;
            self.expect_sym("]")?;
            if hi < lo {
                return Err(DslError::Domain(format!("empty index range for `{base}`")));
            }
            (lo..=hi).map(|i| format!("{base}_{i}")).collect()
        } else {
            vec![base]
        };
        self.expect_kw("in")?;
        self.expect_sym("{")?;
        let mut values = BTreeSet::new();
        if !self.is_sym("}") {
            loop {
                values.insert(self.rational_literal()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym("}")?;
        self.expect_sym(";")?;
        if values.is_empty() {
            return Err(DslError::Domain(format!("`{}` has an empty domain", names[0])));
        }
        let values: Vec<Rat> = values.into_iter().collect();
        Ok(names.into_iter().map(|name| DomainVar { name, values: values.clone() }).collect())
    }

    fn rational_literal(&mut self) -> Result<Rat, DslError> {
        let neg = self.eat_sym("-");
        let n = self.int_literal()?;
        let mut r = Rat::from_integer(n);
        if self.eat_sym("/") {
            let d = self.int_literal()?;
            if d.is_zero() {
                return self.fail("division by zero");
            }
            r /= Rat::from_integer(d);
        }
        Ok(if neg { -r } else { r })
    }

    fn block(&mut self) -> Result<Stmt, DslError> {
        self.expect_sym("{")?;
        let mut items = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.fail("unterminated block");
            }
            items.push(self.statement()?);
        }
        self.expect_sym("}")?;
        Ok(Stmt::seq(items))
    }

    fn statement(&mut self) -> Result<Stmt, DslError> {
        if self.eat_sym(";") {
            return Ok(Stmt::seq(Vec::new()));
        }
        if self.is_kw("skip") {
            self.pos += 1;
            self.expect_sym(";")?;
            return Ok(Stmt::Skip);
        }
        if self.is_kw("if") {
            return self.if_statement();
        }
        if self.is_kw("for") {
            return self.for_statement();
        }
        let (line, col) = self.here();
        let target = self.name()?;
        let is_domain = self.domains.contains_key(&target);
        if self.eat_sym("~") {
            if is_domain {
                return Err(DslError::Syntax {
                    line,
                    col,
                    msg: format!("cannot sample into finite-domain variable `{target}`"),
                });
            }
            let dist = if self.is_kw("gauss") {
                DistKind::Gaussian
            } else if self.is_kw("lap") {
                DistKind::Laplace
            } else {
                return self.fail("expected `gauss` or `lap`");
            };
            self.pos += 1;
            self.expect_sym("(")?;
            let (ml, mc) = self.here();
            let mean = self.expr()?;
            if let Some(v) = mean.vars().find(|v| !self.domains.contains_key(*v)) {
                return Err(DslError::Syntax {
                    line: ml,
                    col: mc,
                    msg: format!("sampling mean may only use finite-domain variables, found `{v}`"),
                });
            }
            self.expect_sym(",")?;
            let (sl, sc) = self.here();
            let scale = self.scale()?;
            if !scale.is_positive() {
                return Err(DslError::Scale { line: sl, col: sc });
            }
            self.expect_sym(")")?;
            self.expect_sym(";")?;
            return Ok(Stmt::Sample { var: target, dist, mean, scale });
        }
        if self.eat_sym(":=") {
            let (el, ec) = self.here();
            let expr = self.expr()?;
            self.expect_sym(";")?;
            if is_domain {
                if !expr.is_constant() {
                    return Err(DslError::Syntax {
                        line: el,
                        col: ec,
                        msg: format!("`{target}` is a finite-domain variable and needs a literal value"),
                    });
                }
                let dom = &self.domains[&target];
                if !dom.contains(&expr.constant) {
                    return Err(DslError::Domain(format!(
                        "value {} is outside the domain of `{target}` (line {line})",
                        format_rational(&expr.constant)
                    )));
                }
                return Ok(Stmt::DomAssign { var: target, value: expr.constant });
            }
            return Ok(Stmt::RealAssign { var: target, expr });
        }
        self.fail(format!("expected `:=` or `~`, found {}", self.describe()))
    }

    fn if_statement(&mut self) -> Result<Stmt, DslError> {
        self.expect_kw("if")?;
        self.expect_sym("(")?;
        let lhs = self.expr()?;
        let cmp = match self.peek() {
            Tok::Sym("<") => Cmp::Lt,
            Tok::Sym("<=") => Cmp::Le,
            Tok::Sym(">") => Cmp::Gt,
            Tok::Sym(">=") => Cmp::Ge,
            Tok::Sym("==") | Tok::Sym("=") => Cmp::Eq,
            Tok::Sym("!=") => Cmp::Ne,
            _ => return self.fail(format!("expected a comparison, found {}", self.describe())),
        };
        self.pos += 1;
        let rhs = self.expr()?;
        self.expect_sym(")")?;
        let then_branch = self.block()?;
        let else_branch = if self.is_kw("else") {
            self.pos += 1;
            if self.is_kw("if") {
                self.if_statement()?
            } else {
                self.block()?
            }
        } else {
            Stmt::Skip
        };
        Ok(Stmt::If {
            cond: BExpr { lhs, cmp, rhs },
            then_branch: Box::new(then_branch),
            else_branch: Box::new(else_branch),
        })
    }

    fn for_statement(&mut self) -> Result<Stmt, DslError> {
        self.expect_kw("for")?;
        let var = self.raw_ident()?;
        self.expect_sym("=")?;
        let lo = self.index_expr()?;
        self.expect_kw("to")?;
        let hi = self.index_expr()?;
        if !self.is_sym("{") {
            return self.fail("expected `{` after loop bounds");
        }
        let body_start = self.pos;
        let body_end = self.matching_brace(body_start)?;
        let locals = self.loop_locals(body_start, body_end, &var);
        let mut items = Vec::new();
        for value in lo..=hi {
            self.pos = body_start;
            self.loops.push(LoopFrame { var: var.clone(), value, locals: locals.clone() });
            let body = self.block();
            self.loops.pop();
            items.push(body?);
        }
        self.pos = body_end + 1;
        Ok(Stmt::seq(items))
    }

    fn matching_brace(&self, open: usize) -> Result<usize, DslError> {
        let mut depth = 0usize;
        for (k, t) in self.toks.iter().enumerate().skip(open) {
            match t.tok {
                Tok::Sym("{") => depth += 1,
                Tok::Sym("}") => {
                    depth -= 1;
                    if depth == 0 {
                        return Ok(k);
                    }
                }
                Tok::Eof => break,
                _ => {}
            }
        }
        self.fail("unterminated loop body")
    }

    /// Real variables assigned in a loop body by a bare (unindexed) name.
    fn loop_locals(&self, start: usize, end: usize, loop_var: &str) -> HashSet<String> {
        let mut out = HashSet::new();
        for k in start..end {
            if let Tok::Ident(name) = &self.toks[k].tok {
                let next = &self.toks[k + 1].tok;
                let prev_is_index = k > 0 && self.toks[k - 1].tok == Tok::Sym("[");
                let assigns = matches!(next, Tok::Sym("~") | Tok::Sym(":="));
                if assigns
                    && !prev_is_index
                    && name != loop_var
                    && !self.domains.contains_key(name)
                    && !KEYWORDS.contains(&name.as_str())
                {
                    out.insert(name.clone());
                }
            }
        }
        out
    }

    /// Noise scale of the form `C/eps` where `C` is a constant expression.
    fn scale(&mut self) -> Result<Rat, DslError> {
        let mut value = self.scale_factor()?;
        loop {
            if self.eat_sym("*") {
                value *= self.scale_factor()?;
            } else if self.eat_sym("/") {
                if self.is_kw("eps") {
                    self.pos += 1;
                    return Ok(value);
                }
                let d = self.scale_factor()?;
                if d.is_zero() {
                    return self.fail("division by zero");
                }
                value /= d;
            } else {
                return self.fail("noise scale must have the form `a/eps`");
            }
        }
    }

    fn scale_factor(&mut self) -> Result<Rat, DslError> {
        if self.eat_sym("(") {
            let e = self.expr()?;
            self.expect_sym(")")?;
            if !e.is_constant() {
                return self.fail("noise scale numerator must be constant");
            }
            return Ok(e.constant);
        }
        if self.eat_sym("-") {
            return Ok(-self.scale_factor()?);
        }
        if let Tok::Ident(s) = self.peek().clone() {
            if let Some(v) = self.loop_value(&s) {
                self.pos += 1;
                return Ok(Rat::from_integer(v.into()));
            }
        }
        Ok(Rat::from_integer(self.int_literal()?))
    }

    /// Affine expression: sums of products where at most one factor of each
    /// product is non-constant, and division is by constants only.
    fn expr(&mut self) -> Result<RExpr, DslError> {
        let mut acc = if self.eat_sym("-") { self.term()?.scale(&-Rat::one()) } else { self.term()? };
        loop {
            if self.eat_sym("+") {
                acc = acc.add(&self.term()?);
            } else if self.eat_sym("-") {
                acc = acc.sub(&self.term()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<RExpr, DslError> {
        let mut acc = self.factor()?;
        loop {
            if self.eat_sym("*") {
                let rhs = self.factor()?;
                acc = if acc.is_constant() {
                    rhs.scale(&acc.constant)
                } else if rhs.is_constant() {
                    acc.scale(&rhs.constant)
                } else {
                    return self.fail("product of two variables is not affine");
                };
            } else if self.is_sym("/") && !matches!(self.peek_at(1), Tok::Ident(s) if s == "eps") {
                self.pos += 1;
                let rhs = self.factor()?;
                if !rhs.is_constant() {
                    return self.fail("division by a variable is not affine");
                }
                if rhs.constant.is_zero() {
                    return self.fail("division by zero");
                }
                acc = acc.scale(&(Rat::one() / rhs.constant));
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self) -> Result<RExpr, DslError> {
        if self.eat_sym("(") {
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        if self.eat_sym("-") {
            return Ok(self.factor()?.scale(&-Rat::one()));
        }
        match self.peek().clone() {
            Tok::Int(n) => {
                self.pos += 1;
                Ok(RExpr::constant(Rat::from_integer(n)))
            }
            Tok::Ident(s) if s == "eps" => self.fail("`eps` may only appear as `a/eps` in a noise scale"),
            Tok::Ident(s) => {
                if let Some(v) = self.loop_value(&s) {
                    if self.peek_at(1) != &Tok::Sym("[") {
                        self.pos += 1;
                        return Ok(RExpr::constant(Rat::from_integer(v.into())));
                    }
                }
                let name = self.name()?;
                Ok(RExpr::var(&name))
            }
            _ => self.fail(format!("expected an expression, found {}", self.describe())),
        }
    }
}

// ---------------------------------------------------------------------------
// Pretty-printer

/// Renders a program in canonical concrete syntax; `parse` of the result
/// yields an identical AST.
pub fn pretty(p: &Program) -> String {
    let mut out = String::new();
    for (kw, vars) in [("input", &p.inputs), ("output", &p.outputs), ("var", &p.locals)] {
        for d in vars {
            let vals: Vec<String> = d.values.iter().map(format_rational).collect();
            let _ = writeln!(out, "{kw} {} in {{{}}};", d.name, vals.join(", "));
        }
    }
    print_stmt(&p.body, 0, &mut out);
    out
}

fn print_stmt(s: &Stmt, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match s {
        Stmt::Skip => {
            let _ = writeln!(out, "{pad}skip;");
        }
        Stmt::DomAssign { var, value } => {
            let _ = writeln!(out, "{pad}{var} := {};", RExpr::constant(value.clone()));
        }
        Stmt::RealAssign { var, expr } => {
            let _ = writeln!(out, "{pad}{var} := {expr};");
        }
        Stmt::Sample { var, dist, mean, scale } => {
            let _ = writeln!(
                out,
                "{pad}{var} ~ {}({mean}, {}/eps);",
                dist.keyword(),
                paren_rational(scale)
            );
        }
        Stmt::If { cond, then_branch, else_branch } => {
            let _ = writeln!(out, "{pad}if ({cond}) {{");
            print_stmt(then_branch, indent + 1, out);
            let _ = writeln!(out, "{pad}}} else {{");
            print_stmt(else_branch, indent + 1, out);
            let _ = writeln!(out, "{pad}}}");
        }
        Stmt::Seq(items) => {
            for item in items {
                print_stmt(item, indent, out);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Well-formedness

#[derive(Clone)]
struct FlowState {
    assigned: BTreeSet<String>,
    path: Vec<String>,
}

/// Checks the well-formedness invariants of a program.
///
/// Every non-input variable must be assigned before it is read on every
/// control path (outputs count as read at program end), every real variable
/// is assigned at most once per path, and no variable is both an input and an
/// output. The first violating path is reported.
pub fn validate(p: &Program) -> Result<(), DslError> {
    for i in &p.inputs {
        if p.outputs.iter().any(|o| o.name == i.name) {
            return Err(DslError::InOutOverlap { var: i.name.clone() });
        }
    }
    let domain = p.domain_names();
    let start = FlowState { assigned: p.inputs.iter().map(|d| d.name.clone()).collect(), path: Vec::new() };
    let finals = flow(&p.body, vec![start], &domain)?;
    for st in &finals {
        for o in &p.outputs {
            if !st.assigned.contains(&o.name) {
                return Err(DslError::UseBeforeAssign { var: o.name.clone(), path: show_path(&st.path) });
            }
        }
    }
    Ok(())
}

fn show_path(path: &[String]) -> String {
    if path.is_empty() {
        "<straight-line>".into()
    } else {
        path.join(" -> ")
    }
}

fn check_reads<'a>(
    names: impl Iterator<Item = &'a String>,
    st: &FlowState,
) -> Result<(), DslError> {
    for v in names {
        if !st.assigned.contains(v) {
            return Err(DslError::UseBeforeAssign { var: v.clone(), path: show_path(&st.path) });
        }
    }
    Ok(())
}

fn flow(s: &Stmt, states: Vec<FlowState>, domain: &BTreeSet<String>) -> Result<Vec<FlowState>, DslError> {
    match s {
        Stmt::Skip => Ok(states),
        Stmt::DomAssign { var, .. } => Ok(states
            .into_iter()
            .map(|mut st| {
                st.assigned.insert(var.clone());
                st
            })
            .collect()),
        Stmt::Sample { var, mean, .. } | Stmt::RealAssign { var, expr: mean } => {
            let mut out = Vec::with_capacity(states.len());
            for mut st in states {
                check_reads(mean.vars(), &st)?;
                if !domain.contains(var) && st.assigned.contains(var) {
                    return Err(DslError::DoubleRealAssign { var: var.clone(), path: show_path(&st.path) });
                }
                st.assigned.insert(var.clone());
                out.push(st);
            }
            Ok(out)
        }
        Stmt::If { cond, then_branch, else_branch } => {
            let mut then_in = Vec::new();
            let mut else_in = Vec::new();
            for st in states {
                check_reads(cond.lhs.vars().chain(cond.rhs.vars()), &st)?;
                let mut t = st.clone();
                t.path.push(format!("then[{cond}]"));
                then_in.push(t);
                let mut e = st;
                e.path.push(format!("else[{cond}]"));
                else_in.push(e);
            }
            let mut merged = flow(then_branch, then_in, domain)?;
            merged.extend(flow(else_branch, else_in, domain)?);
            let mut seen = HashSet::new();
            merged.retain(|st| seen.insert(st.assigned.clone()));
            Ok(merged)
        }
        Stmt::Seq(items) => {
            let mut cur = states;
            for item in items {
                cur = flow(item, cur, domain)?;
            }
            Ok(cur)
        }
    }
}
