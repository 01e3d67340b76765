use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use trisemi_core::diagengine::{DiagEngine, DiagSolveConfig, DiagTarget};
use trisemi_core::layout::graded_word;
use trisemi_core::synth::{SynthConfig, SynthStats, Synthesizer};
use trisemi_core::{
    build_default_generators, eval_word, validate_generators, ApproxReport, Error, FieldTag,
    GeneratorSet, Matrix,
};

use crate::bench::{rows_to_json, run_bench, table};
use crate::formats::{self, FormatError, ReportMeta};
use crate::verify::{counts_to_json, run_suite, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

pub const THREADS_ENV: &str = "TRISEMI_THREADS";

#[derive(Parser, Debug)]
#[command(name = "trisemi", version, about = "Words over n+1 generators approximating lower-triangular matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the default generator set.
    Gen(GenArgs),
    /// Approximate a lower-triangular target.
    Approx(ApproxArgs),
    /// Approximate a diagonal target.
    Diag(DiagArgs),
    /// Run a property suite.
    Verify(VerifyArgs),
    /// Time the diag and approx workloads at n = 1, 2, 3.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FieldArg {
    Real,
    Complex,
}

impl From<FieldArg> for FieldTag {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::Real => FieldTag::Real,
            FieldArg::Complex => FieldTag::Complex,
        }
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "real")]
    field: FieldArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ApproxArgs {
    #[arg(long)]
    gens: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Evaluation budget of each diagonal solve.
    #[arg(long, default_value_t = 10_000_000)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiagArgs {
    #[command(flatten)]
    common: ApproxArgs,
    /// Exhaustive search over the box instead of the heuristic.
    #[arg(long)]
    oracle: bool,
    #[arg(long = "box", default_value_t = 60)]
    box_cap: u64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_parser = ["order", "lemma1", "lemma2", "triclass", "sigma", "factor", "eliminate", "all"])]
    suite: String,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
    /// Instances per row.
    #[arg(long, default_value_t = 2)]
    trials: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code; the message goes to stderr.
struct Fail(i32, String);

impl From<FormatError> for Fail {
    fn from(e: FormatError) -> Self {
        Fail(EXIT_INVALID, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EXIT_INVALID, msg.into())
}

/// Errors caused by the inputs rather than by the computation.
fn is_input_error(e: &Error) -> bool {
    matches!(
        e,
        Error::DimensionMismatch { .. }
            | Error::FieldMismatch { .. }
            | Error::InvalidDimension(_)
            | Error::NotLowerTriangular { .. }
            | Error::NotDiagonal { .. }
            | Error::ZeroTargetEntry { .. }
            | Error::InvalidGenerators(_)
            | Error::InvalidConfig(_)
            | Error::BudgetTooSmall { .. }
            | Error::IllConditioned { .. }
            | Error::NotIncreasing { .. }
    )
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(f) = init_threads() {
        eprintln!("error: {}", f.1);
        return f.0;
    }
    let res = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Approx(a) => cmd_approx(a),
        Command::Diag(a) => cmd_diag(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            eprintln!("error: {}", msg);
            code
        }
    }
}

/// Sizes the global worker pool from `TRISEMI_THREADS`; 0 or unset means
/// one worker per core.
fn init_threads() -> Result<(), Fail> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("{} must be a non-negative integer, got `{}`", THREADS_ENV, v)))?,
        Err(_) => 0,
    };
    // A second initialisation in the same process is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<i32, Fail> {
    if a.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let g = build_default_generators(a.n, a.field.into(), a.seed).map_err(|e| invalid(e.to_string()))?;
    let violations = validate_generators(&g);
    formats::write_atomic(&a.out, &formats::generators_to_json(&g))?;
    println!(
        "wrote {}: n={} field={} generators={} violations={}",
        a.out.display(),
        g.dim(),
        g.field(),
        g.len(),
        violations.len()
    );
    for v in &violations {
        println!("  {}", v);
    }
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_INTERNAL })
}

pub fn load_generators(path: &Path) -> Result<GeneratorSet, FormatError> {
    let g = formats::generators_from_json(&formats::read_file(path)?)?;
    let v = validate_generators(&g);
    if v.is_empty() {
        Ok(g)
    } else {
        Err(FormatError::Core(Error::InvalidGenerators(v)))
    }
}

fn load_inputs(a: &ApproxArgs) -> Result<(GeneratorSet, Matrix), Fail> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(invalid(format!("--eps must be positive, got {}", a.eps)));
    }
    if a.budget == 0 {
        return Err(invalid("--budget must be at least 1"));
    }
    let g = load_generators(&a.gens).map_err(|e| invalid(format!("{}: {}", a.gens.display(), e)))?;
    let t = formats::matrix_from_text(&formats::read_file(&a.target)?)
        .map_err(|e| invalid(format!("{}: {}", a.target.display(), e)))?;
    if t.dim() != g.dim() {
        return Err(invalid(format!("target is {}x{} but the generators are {}x{}", t.dim(), t.dim(), g.dim(), g.dim())));
    }
    if t.field() != g.field() {
        return Err(invalid(format!("target field {} differs from generator field {}", t.field(), g.field())));
    }
    if let Some((row, col)) = t.upper_violation() {
        return Err(invalid(format!("target is not lower triangular: entry ({},{}) is nonzero", row, col)));
    }
    Ok((g, t))
}

/// `achieved_error` must match a fresh evaluation of the word.
pub fn honest(g: &GeneratorSet, r: &ApproxReport) -> bool {
    let Ok(v) = eval_word(g, &r.word, g.dim()) else {
        return !r.converged && !r.achieved_error.is_finite();
    };
    let Some(d) = v.distance(&r.target) else {
        return false;
    };
    if !d.is_finite() || !r.achieved_error.is_finite() {
        return !r.converged && d.is_finite() == r.achieved_error.is_finite();
    }
    (d - r.achieved_error).abs() <= 1e-12 * d.max(1.0)
}

fn word_path(out: &Path) -> PathBuf {
    out.with_extension("word")
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn emit_report(g: &GeneratorSet, r: &ApproxReport, a: &ApproxArgs, mode: &str) -> Result<i32, Fail> {
    if !honest(g, r) {
        return Err(Fail(
            EXIT_INTERNAL,
            format!("reported error {:e} does not match a fresh evaluation of the word", r.achieved_error),
        ));
    }
    let wp = word_path(&a.out);
    let target_path = a.target.display().to_string();
    let word_file = file_name(&wp);
    let meta = ReportMeta {
        target_path: &target_path,
        word_file: &word_file,
        eps: a.eps,
        mode,
    };
    formats::write_atomic(&wp, &formats::word_to_text(&r.word))?;
    formats::write_atomic(&a.out, &formats::report_to_json(r, &meta))?;
    println!(
        "{}: converged={} error={:e} word_length={} nodes={}",
        a.out.display(),
        r.converged,
        r.achieved_error,
        r.stats.word_length,
        r.stats.nodes
    );
    Ok(if r.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

/// Computation failed after the inputs were accepted: a converged=false
/// report without a word.
fn emit_failure(a: &ApproxArgs, mode: &str, reason: &str) -> Result<i32, Fail> {
    let target_path = a.target.display().to_string();
    let meta = ReportMeta {
        target_path: &target_path,
        word_file: "",
        eps: a.eps,
        mode,
    };
    formats::write_atomic(&a.out, &formats::infeasible_report_json(&meta, reason))?;
    println!("{}: converged=false ({})", a.out.display(), reason);
    Ok(EXIT_NOT_CONVERGED)
}

fn synth_config(a: &ApproxArgs) -> SynthConfig {
    SynthConfig {
        budget: a.budget,
        seed: a.seed,
        ..SynthConfig::default()
    }
}

fn cmd_approx(a: ApproxArgs) -> Result<i32, Fail> {
    let (g, t) = load_inputs(&a)?;
    let mut s = Synthesizer::new(&g, synth_config(&a)).map_err(|e| invalid(e.to_string()))?;
    match s.approx(&t, a.eps) {
        Ok(r) => emit_report(&g, &r, &a, "approx"),
        Err(e) if is_input_error(&e) => Err(invalid(e.to_string())),
        Err(e) => emit_failure(&a, "approx", &e.to_string()),
    }
}

fn cmd_diag(d: DiagArgs) -> Result<i32, Fail> {
    let a = &d.common;
    let (g, t) = load_inputs(a)?;
    if let Some((row, col)) = (0..t.dim())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .find(|&(i, j)| !t[(i, j)].is_zero())
    {
        return Err(invalid(format!("target is not diagonal: entry ({},{}) is nonzero", row + 1, col + 1)));
    }
    if let Some(i) = (0..t.dim()).find(|&i| t[(i, i)].is_zero()) {
        return Err(invalid(format!("target diagonal entry ({},{}) is zero", i + 1, i + 1)));
    }
    if !d.oracle {
        let mut s = Synthesizer::new(&g, synth_config(a)).map_err(|e| invalid(e.to_string()))?;
        return match s.diag_closure(&t, a.eps) {
            Ok(r) => emit_report(&g, &r, a, "diag"),
            Err(e) if is_input_error(&e) => Err(invalid(e.to_string())),
            Err(e) => emit_failure(a, "diag", &e.to_string()),
        };
    }
    let engine = DiagEngine::for_generators(&g).map_err(|e| invalid(e.to_string()))?;
    let target = DiagTarget::from_values(g.field(), &t.diagonal()).map_err(|e| invalid(e.to_string()))?;
    let cfg = DiagSolveConfig::exhaustive(a.eps, a.budget, d.box_cap);
    let sol = match engine.exhaustive(&target, &cfg) {
        Ok(s) => s,
        Err(Error::Infeasible) => return emit_failure(a, "oracle", "infeasible"),
        Err(e) => return Err(invalid(e.to_string())),
    };
    if g.field() == FieldTag::Real && !sol.converged {
        let v = engine.values(sol.m.as_slice());
        let wrong_sign = (0..t.dim()).any(|i| (v[i].re < 0.0) != (t[(i, i)].re < 0.0));
        if wrong_sign {
            return emit_failure(a, "oracle", "sign-infeasible: no exponent vector in the box has the target's signs");
        }
    }
    let logs: Vec<Vec<f64>> = (0..engine.num_columns()).map(|c| engine.log_column(c).to_vec()).collect();
    let lay = graded_word(&logs, sol.m.as_slice(), Default::default());
    let v = eval_word(&g, &lay.word, g.dim()).map_err(|e| Fail(EXIT_INTERNAL, e.to_string()))?;
    let err = v.distance(&t).unwrap_or(f64::INFINITY);
    let r = ApproxReport {
        target: t,
        achieved_error: err,
        converged: err <= a.eps,
        stats: SynthStats {
            nodes: sol.evaluations,
            peak_solve: sol.evaluations,
            word_length: lay.word.len(),
            letters: lay.word.letters(),
            ..SynthStats::default()
        },
        word: lay.word,
    };
    emit_report(&g, &r, a, "oracle")
}

fn cmd_verify(a: VerifyArgs) -> Result<i32, Fail> {
    if a.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let cfg = VerifyConfig {
        n: a.n,
        trials: a.trials,
        seed: a.seed,
    };
    let counts = run_suite(&a.suite, &cfg).ok_or_else(|| invalid(format!("unknown suite `{}`", a.suite)))?;
    for c in &counts {
        println!("{}", c);
    }
    if a.suite == "order" || a.suite == "all" {
        println!("chain length {} = {}*{}/2", a.n * (a.n + 1) / 2, a.n, a.n + 1);
    }
    if let Some(out) = &a.out {
        formats::write_atomic(out, &counts_to_json(&cfg, &a.suite, &counts))?;
    }
    let ok = counts.iter().all(|c| c.ok());
    println!("{}", if ok { "all properties pass" } else { "FAILURES" });
    Ok(if ok { EXIT_OK } else { EXIT_INTERNAL })
}

fn cmd_bench(a: BenchArgs) -> Result<i32, Fail> {
    if a.budget == 0 {
        return Err(invalid("--budget must be at least 1"));
    }
    let rows = run_bench(a.seed, a.budget, a.trials).map_err(|e| Fail(EXIT_INTERNAL, e.to_string()))?;
    print!("{}", table(&rows));
    if let Some(out) = &a.out {
        formats::write_atomic(out, &rows_to_json(a.seed, &rows))?;
    }
    Ok(if rows.iter().all(|r| r.within_budget()) { EXIT_OK } else { EXIT_INTERNAL })
}
