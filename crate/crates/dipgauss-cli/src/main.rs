//! Command-line front end of the dipgauss verifier.
//!
//! Exit codes: 0 for a private verdict or a successful non-verification
//! command, 1 for `Not_DP`, 2 for `Unknown`, 64 for usage errors and 65 for
//! errors in the supplied program, pairs or numbers.

use clap::{Args, Parser, Subcommand};
use dipgauss::benchmarks::{self, AdjacencyKind, BenchmarkSpec, Family};
use dipgauss::dsl::{self, Program};
use dipgauss::integrals::ThresholdMode;
use dipgauss::oracle;
use dipgauss::quadrature::QuadConfig;
use dipgauss::rational::{format_rational, parse_rational, to_f64, to_f64_down, to_f64_up, Rat};
use dipgauss::semantics::{exec, eval_const, StateDump, Valuation};
use dipgauss::verifier::{
    compute_detailed, output_plans, show_valuation, valuation_json, verify_with_refinement, VerificationParams, Verdict,
};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_NOT_DP: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INPUT: u8 = 65;

#[derive(Debug, Parser)]
#[command(name = "dipgauss", version, about = "Verify (eps, delta)-differential privacy of DiPGauss programs")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide privacy of a program over an adjacency relation.
    Verify(VerifyArgs),
    /// Enclose the probability of one output on one input.
    ComputeProb(ProbArgs),
    /// Write the source of a benchmark program.
    EmitBenchmark(EmitArgs),
    /// Print the privacy budget of the Gaussian sparse vector technique.
    Budget(BudgetArgs),
    /// Compare a Monte Carlo estimate with the certified enclosure.
    McCheck(McArgs),
    /// Print final states or integral plans as JSON.
    Dump(DumpArgs),
}

#[derive(Debug, Args)]
struct ProgramArgs {
    /// Path of a DiPGauss source file.
    #[arg(long)]
    program: PathBuf,
}

#[derive(Debug, Args)]
struct EngineArgs {
    /// Target precision in bits.
    #[arg(long, default_value_t = 16)]
    precision: u32,
    /// `fixed:G,L` (thresholds in standard deviations) or `adaptive`.
    #[arg(long, default_value = "fixed:4,8")]
    threshold_mode: String,
    /// Keep path integrals in sampling order.
    #[arg(long)]
    no_optimize: bool,
    /// Maximum quadrature cells per path integral.
    #[arg(long, default_value_t = 1_000_000)]
    node_cap: usize,
    /// Fractional bits of reported enclosure endpoints.
    #[arg(long, default_value_t = 64)]
    working_bits: u32,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    eps: String,
    #[arg(long)]
    eps_prv: String,
    #[arg(long)]
    delta: String,
    /// `all`, `single` or `file:<path>`.
    #[arg(long, default_value = "all")]
    adjacency: String,
    /// Largest precision tried while the verdict is undecided.
    #[arg(long, default_value_t = 32)]
    max_precision: u32,
    /// Require `Delta_max < delta`.
    #[arg(long)]
    strict: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct ProbArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    eps: String,
    /// Input valuation such as `q_1=0,q_2=1`.
    #[arg(long)]
    input: String,
    /// Output valuation such as `out_1=0,out_2=1`.
    #[arg(long)]
    output: String,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct EmitArgs {
    /// Benchmark family, such as `svt-gauss` or `noisy-max-laplace`.
    family: String,
    /// Number of queries.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    c: usize,
    /// Threshold.
    #[arg(long, default_value = "0")]
    t: String,
    /// Query sensitivity.
    #[arg(long, default_value = "1")]
    sensitivity: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[arg(long)]
    eps: String,
    #[arg(long)]
    delta: String,
}

#[derive(Debug, Args)]
struct McArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    eps: String,
    #[arg(long)]
    input: String,
    #[arg(long)]
    output: String,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long)]
    input: String,
    /// Restrict to one output valuation.
    #[arg(long)]
    output: Option<String>,
    /// Needed for `--dump-integrals`.
    #[arg(long, default_value = "1")]
    eps: String,
    /// Print the final states.
    #[arg(long)]
    dump_states: bool,
    /// Print the integral plan of every final state.
    #[arg(long)]
    dump_integrals: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn input_error(message: impl ToString) -> Failure {
    Failure { code: EXIT_INPUT, message: message.to_string() }
}

fn number(flag: &str, text: &str) -> Result<Rat, Failure> {
    parse_rational(text).map_err(|e| usage(format!("--{flag}: {e}")))
}

fn threshold_mode(text: &str) -> Result<ThresholdMode, Failure> {
    if text == "adaptive" {
        return Ok(ThresholdMode::Adaptive);
    }
    let bad = || usage(format!("--threshold-mode: expected `adaptive` or `fixed:G,L`, got `{text}`"));
    let rest = text.strip_prefix("fixed:").ok_or_else(bad)?;
    let (g, l) = rest.split_once(',').ok_or_else(bad)?;
    let gauss = number("threshold-mode", g)?;
    let laplace = number("threshold-mode", l)?;
    if gauss <= Rat::from_integer(0.into()) || laplace <= Rat::from_integer(0.into()) {
        return Err(usage("--threshold-mode: thresholds must be positive"));
    }
    Ok(ThresholdMode::Fixed { gauss, laplace })
}

fn quad_config(e: &EngineArgs) -> QuadConfig {
    QuadConfig { node_cap: e.node_cap, working_bits: e.working_bits }
}

fn load_program(args: &ProgramArgs) -> Result<Program, Failure> {
    let text = std::fs::read_to_string(&args.program)
        .map_err(|e| input_error(format!("{}: {e}", args.program.display())))?;
    let p = dsl::parse(&text).map_err(|e| input_error(format!("{}: {e}", args.program.display())))?;
    dsl::validate(&p).map_err(|e| input_error(format!("{}: {e}", args.program.display())))?;
    Ok(p)
}

/// Parses `name=value,name=value`.
fn valuation(flag: &str, text: &str) -> Result<Valuation, Failure> {
    let mut v = Valuation::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = item
            .split_once('=')
            .ok_or_else(|| usage(format!("--{flag}: expected name=value, got `{item}`")))?;
        v.insert(name.trim().to_string(), number(flag, value)?);
    }
    Ok(v)
}

fn check_domain(p: &Program, v: &Valuation, outputs: bool, flag: &str) -> Result<(), Failure> {
    let decls = if outputs { &p.outputs } else { &p.inputs };
    for d in decls {
        match v.get(&d.name) {
            Some(x) if d.values.contains(x) => {}
            Some(x) => return Err(input_error(format!("--{flag}: {} = {} is outside its domain", d.name, format_rational(x)))),
            None => return Err(input_error(format!("--{flag}: no value for `{}`", d.name))),
        }
    }
    if let Some(extra) = v.keys().find(|k| !decls.iter().any(|d| &d.name == *k)) {
        return Err(input_error(format!("--{flag}: `{extra}` is not declared by the program")));
    }
    Ok(())
}

fn emit_json(value: &Value, out: Option<&PathBuf>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| input_error(format!("{}: {e}", path.display()))),
        None => write_stdout(&(text + "\n")),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn write_stdout(text: &str) -> Result<(), Failure> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(input_error(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn verify(args: &VerifyArgs) -> Result<u8, Failure> {
    let p = load_program(&args.program)?;
    let mut params = VerificationParams::new(
        number("eps", &args.eps)?,
        number("eps-prv", &args.eps_prv)?,
        number("delta", &args.delta)?,
    );
    params.precision = args.engine.precision;
    params.max_precision = args.max_precision.max(args.engine.precision);
    params.threshold_mode = threshold_mode(&args.engine.threshold_mode)?;
    params.optimize = !args.engine.no_optimize;
    params.strict = args.strict;
    params.quad = quad_config(&args.engine);
    params.validate().map_err(|e| usage(e.to_string()))?;
    let kind: AdjacencyKind = args.adjacency.parse().map_err(|e: benchmarks::BenchmarkError| usage(e.to_string()))?;
    let phi = benchmarks::adjacency_for(&kind, &p).map_err(input_error)?;
    let report = verify_with_refinement(&p, &phi, &params).map_err(input_error)?;
    emit_json(&report.to_json(), args.out.as_ref())?;
    Ok(match report.verdict {
        Verdict::Dp | Verdict::StrictDp => 0,
        Verdict::NotDp => EXIT_NOT_DP,
        Verdict::Unknown => EXIT_UNKNOWN,
    })
}

fn enclosure_json(lo: &Rat, hi: &Rat) -> Value {
    json!({
        "lo": to_f64_down(lo),
        "hi": to_f64_up(hi),
        "lo_exact": format_rational(lo),
        "hi_exact": format_rational(hi),
    })
}

fn compute_prob(args: &ProbArgs) -> Result<u8, Failure> {
    let p = load_program(&args.program)?;
    let eps = number("eps", &args.eps)?;
    let u = valuation("input", &args.input)?;
    let o = valuation("output", &args.output)?;
    check_domain(&p, &u, false, "input")?;
    check_domain(&p, &o, true, "output")?;
    let mode = threshold_mode(&args.engine.threshold_mode)?;
    let r = compute_detailed(&p, &eps, &u, &o, args.engine.precision, &mode, !args.engine.no_optimize, &quad_config(&args.engine))
        .map_err(input_error)?;
    let out = json!({
        "input": valuation_json(&u),
        "output": valuation_json(&o),
        "enclosure": enclosure_json(&r.enclosure.lo, &r.enclosure.hi),
        "tail_slack": to_f64_up(&r.tail_slack),
        "paths": r.depths.len(),
        "depths": r.depths,
        "nodes": r.nodes,
        "conforming": r.conforming,
    });
    emit_json(&out, None)?;
    Ok(if r.conforming { 0 } else { EXIT_UNKNOWN })
}

fn emit_benchmark(args: &EmitArgs) -> Result<u8, Failure> {
    let family: Family = args.family.parse().map_err(|e: benchmarks::BenchmarkError| usage(e.to_string()))?;
    let mut spec = BenchmarkSpec::new(family, args.n);
    spec.k = args.k;
    spec.m = args.m;
    spec.c = args.c;
    spec.t = number("t", &args.t)?;
    spec.sensitivity = number("sensitivity", &args.sensitivity)?;
    let text = benchmarks::emit(&spec).map_err(input_error)?;
    match &args.out {
        Some(path) => std::fs::write(path, &text).map_err(|e| input_error(format!("{}: {e}", path.display())))?,
        None => write_stdout(&text)?,
    }
    Ok(0)
}

fn budget(args: &BudgetArgs) -> Result<u8, Failure> {
    let b = benchmarks::svt_gauss_budget(&number("eps", &args.eps)?, &number("delta", &args.delta)?).map_err(|e| usage(e.to_string()))?;
    write_stdout(&format!("{:.6}\n", to_f64_up(&b)))?;
    Ok(0)
}

fn mc_check(args: &McArgs) -> Result<u8, Failure> {
    let p = load_program(&args.program)?;
    let eps = number("eps", &args.eps)?;
    let u = valuation("input", &args.input)?;
    let o = valuation("output", &args.output)?;
    check_domain(&p, &u, false, "input")?;
    check_domain(&p, &o, true, "output")?;
    if args.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let est = oracle::mc_prob(&p, &eps, &u, &o, args.samples, args.seed).map_err(input_error)?;
    let mode = threshold_mode(&args.engine.threshold_mode)?;
    let r = compute_detailed(&p, &eps, &u, &o, args.engine.precision, &mode, !args.engine.no_optimize, &quad_config(&args.engine))
        .map_err(input_error)?;
    let mid = to_f64(&r.enclosure.midpoint());
    let z = if est.standard_error > 0.0 { (est.mean - mid).abs() / est.standard_error } else { 0.0 };
    let out = json!({
        "input": valuation_json(&u),
        "output": valuation_json(&o),
        "estimate": est,
        "ci95": [est.mean - 1.96 * est.standard_error, est.mean + 1.96 * est.standard_error],
        "enclosure": enclosure_json(&r.enclosure.lo, &r.enclosure.hi),
        "z_score": z,
    });
    emit_json(&out, None)?;
    Ok(0)
}

fn dump(args: &DumpArgs) -> Result<u8, Failure> {
    if !args.dump_states && !args.dump_integrals {
        return Err(usage("dump needs --dump-states, --dump-integrals or both"));
    }
    let p = load_program(&args.program)?;
    let u = valuation("input", &args.input)?;
    check_domain(&p, &u, false, "input")?;
    let eps = number("eps", &args.eps)?;
    let outputs = match &args.output {
        Some(text) => {
            let o = valuation("output", text)?;
            check_domain(&p, &o, true, "output")?;
            vec![o]
        }
        None => p.output_space(),
    };
    let mut out = json!({ "input": valuation_json(&u) });
    if args.dump_states {
        let states: Vec<Value> = exec(&p, &u)
            .iter()
            .filter(|fs| outputs.contains(&fs.output_of(&p)))
            .map(|fs| {
                json!({
                    "output": show_valuation(&fs.output_of(&p)),
                    "feasible": eval_const(fs),
                    "state": serde_json::to_value(StateDump::new(fs)).expect("states serialize"),
                })
            })
            .collect();
        out["states"] = Value::Array(states);
    }
    if args.dump_integrals {
        let mode = threshold_mode(&args.engine.threshold_mode)?;
        let mut plans = Vec::new();
        for o in &outputs {
            let (ps, slack) = output_plans(&p, &eps, &u, o, args.engine.precision, &mode, !args.engine.no_optimize)
                .map_err(input_error)?;
            plans.push(json!({
                "output": show_valuation(o),
                "tail_slack": to_f64_up(&slack),
                "plans": ps.iter().map(|pl| pl.to_json()).collect::<Vec<_>>(),
            }));
        }
        out["integrals"] = Value::Array(plans);
    }
    emit_json(&out, None)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot configure the worker pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Verify(a) => verify(a),
        Command::ComputeProb(a) => compute_prob(a),
        Command::EmitBenchmark(a) => emit_benchmark(a),
        Command::Budget(a) => budget(a),
        Command::McCheck(a) => mc_check(a),
        Command::Dump(a) => dump(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
