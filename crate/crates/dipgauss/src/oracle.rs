//! Monte Carlo estimates of output probabilities by concrete execution.
//!
//! The oracle shares no code with the symbolic pipeline beyond the parsed
//! program: it samples the noise, runs the program on floating-point values
//! and counts outputs. Samples are drawn from ChaCha streams derived from a
//! single seed, so estimates are reproducible regardless of thread count.

use crate::dsl::{BExpr, Cmp, DistKind, Program, RExpr, Stmt};
use crate::rational::{to_f64, Rat};
use crate::semantics::Valuation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// Samples drawn per independent stream.
const BATCH: u64 = 1 << 16;

/// Errors raised by the oracle.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("input variable `{0}` has no value")]
    MissingInput(String),
    #[error("output variable `{0}` has no value in the requested output")]
    MissingOutput(String),
    #[error("eps must be positive")]
    BadEps,
    #[error("at least one sample is required")]
    NoSamples,
}

/// Estimate of a probability with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub sample_count: u64,
    pub seed: u64,
}

impl McEstimate {
    fn from_count(hits: u64, n: u64, seed: u64) -> Self {
        let mean = hits as f64 / n as f64;
        let standard_error = (mean * (1.0 - mean) / n as f64).sqrt();
        McEstimate { mean, standard_error, sample_count: n, seed }
    }

    /// Whether `x` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, x: f64, k: f64) -> bool {
        (x - self.mean).abs() <= k * self.standard_error
    }
}

/// Estimates `Pr[P(u) = o]` from `samples` runs.
pub fn mc_prob(p: &Program, eps: &Rat, u: &Valuation, o: &Valuation, samples: u64, seed: u64) -> Result<McEstimate, OracleError> {
    for d in &p.outputs {
        if !o.contains_key(&d.name) {
            return Err(OracleError::MissingOutput(d.name.clone()));
        }
    }
    let hist = mc_distribution(p, eps, u, samples, seed)?;
    let hits = hist.get(o).copied().unwrap_or(0);
    Ok(McEstimate::from_count(hits, samples, seed))
}

/// Histogram of outputs over `samples` runs on input `u`.
pub fn mc_distribution(p: &Program, eps: &Rat, u: &Valuation, samples: u64, seed: u64) -> Result<HashMap<Valuation, u64>, OracleError> {
    if samples == 0 {
        return Err(OracleError::NoSamples);
    }
    if *eps <= Rat::from_integer(0.into()) {
        return Err(OracleError::BadEps);
    }
    let compiled = Compiled::new(p, to_f64(eps));
    let mut init = vec![f64::NAN; compiled.slots.len()];
    for d in &p.inputs {
        let v = u.get(&d.name).ok_or_else(|| OracleError::MissingInput(d.name.clone()))?;
        init[compiled.slots[&d.name]] = to_f64(v);
    }
    let batches = samples.div_ceil(BATCH);
    let counts = (0..batches)
        .into_par_iter()
        .map(|b| {
            let n = BATCH.min(samples - b * BATCH);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut local: HashMap<Vec<u64>, u64> = HashMap::new();
            let mut env = init.clone();
            for _ in 0..n {
                env.copy_from_slice(&init);
                compiled.run(&compiled.body, &mut env, &mut rng);
                let key: Vec<u64> = compiled.outputs.iter().map(|&s| env[s].to_bits()).collect();
                *local.entry(key).or_default() += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut out = HashMap::new();
    for (key, count) in counts {
        let mut o = Valuation::new();
        for (d, bits) in p.outputs.iter().zip(key) {
            let x = f64::from_bits(bits);
            let value = d.values.iter().find(|v| to_f64(v) == x).cloned().unwrap_or_else(|| Rat::from_integer(0.into()));
            o.insert(d.name.clone(), value);
        }
        *out.entry(o).or_default() += count;
    }
    Ok(out)
}

/// Affine expression over slots.
#[derive(Debug, Clone)]
struct Lin {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

#[derive(Debug, Clone)]
enum Op {
    Set { slot: usize, value: f64 },
    Sample { slot: usize, kind: DistKind, mean: Lin, scale: f64 },
    Assign { slot: usize, expr: Lin },
    If { lhs: Lin, cmp: Cmp, rhs: Lin, then_branch: Vec<Op>, else_branch: Vec<Op> },
}

struct Compiled {
    slots: BTreeMap<String, usize>,
    outputs: Vec<usize>,
    body: Vec<Op>,
}

impl Compiled {
    fn new(p: &Program, eps: f64) -> Self {
        let mut c = Compiled { slots: BTreeMap::new(), outputs: Vec::new(), body: Vec::new() };
        for d in p.inputs.iter().chain(&p.outputs).chain(&p.locals) {
            c.slot(&d.name);
        }
        c.outputs = p.outputs.iter().map(|d| c.slots[&d.name]).collect();
        c.body = c.compile(&p.body, eps);
        c
    }

    fn slot(&mut self, name: &str) -> usize {
        let next = self.slots.len();
        *self.slots.entry(name.to_string()).or_insert(next)
    }

    fn lin(&mut self, e: &RExpr) -> Lin {
        Lin {
            terms: e.terms.iter().map(|(v, k)| (self.slot(v), to_f64(k))).collect(),
            constant: to_f64(&e.constant),
        }
    }

    fn compile(&mut self, s: &Stmt, eps: f64) -> Vec<Op> {
        match s {
            Stmt::DomAssign { var, value } => vec![Op::Set { slot: self.slot(var), value: to_f64(value) }],
            Stmt::Sample { var, dist, mean, scale } => {
                let mean = self.lin(mean);
                vec![Op::Sample { slot: self.slot(var), kind: *dist, mean, scale: to_f64(scale) / eps }]
            }
            Stmt::RealAssign { var, expr } => {
                let expr = self.lin(expr);
                vec![Op::Assign { slot: self.slot(var), expr }]
            }
            Stmt::If { cond, then_branch, else_branch } => {
                let BExpr { lhs, cmp, rhs } = cond;
                let (lhs, rhs) = (self.lin(lhs), self.lin(rhs));
                let then_branch = self.compile(then_branch, eps);
                let else_branch = self.compile(else_branch, eps);
                vec![Op::If { lhs, cmp: *cmp, rhs, then_branch, else_branch }]
            }
            Stmt::Skip => Vec::new(),
            Stmt::Seq(items) => items.iter().flat_map(|s| self.compile(s, eps)).collect(),
        }
    }

    fn run<R: Rng>(&self, ops: &[Op], env: &mut [f64], rng: &mut R) {
        for op in ops {
            match op {
                Op::Set { slot, value } => env[*slot] = *value,
                Op::Sample { slot, kind, mean, scale } => {
                    let noise = match kind {
                        DistKind::Gaussian => {
                            let z: f64 = StandardNormal.sample(rng);
                            z * scale
                        }
                        DistKind::Laplace => laplace(rng, *scale),
                    };
                    env[*slot] = eval(mean, env) + noise;
                }
                Op::Assign { slot, expr } => env[*slot] = eval(expr, env),
                Op::If { lhs, cmp, rhs, then_branch, else_branch } => {
                    if cmp.holds_f64(eval(lhs, env), eval(rhs, env)) {
                        self.run(then_branch, env, rng);
                    } else {
                        self.run(else_branch, env, rng);
                    }
                }
            }
        }
    }
}

fn eval(e: &Lin, env: &[f64]) -> f64 {
    e.terms.iter().fold(e.constant, |acc, (s, k)| acc + k * env[*s])
}

/// Laplace sample with scale `b` by inversion of the distribution function.
fn laplace<R: Rng>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}
