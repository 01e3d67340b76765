//! Word synthesis: the elimination cascade that turns `A` into a word close to
//! `D0`, diagonal closure, and the recursive approximation of arbitrary
//! lower-triangular targets.
//!
//! The recursion peels the last row: a generic `B` factors as
//! `diag(R, x) * A * diag(S, 1)`, `R` is approximated one level down, and the
//! row that the sub-word leaves behind is fixed with two near-diagonal
//! sandwich factors. Every diagonal factor is a closure word: an exponent
//! vector from the diagonal engine, laid out so it can be evaluated.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::diagengine::{DiagEngine, DiagSolveConfig, DiagTarget};
use crate::error::{Error, Result};
use crate::genset::{ensure_valid, eval_word, GeneratorSet, Word};
use crate::layout::{graded_word, LayoutConfig};
use crate::matcore::{lambda_bound, mat_pow, mul_unchecked, Matrix};
use crate::ordering::{delta_successor, IndexPair};
use crate::scalar::{FieldTag, Scalar};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Below this `|x~|` the sandwich factor `Y` is too large to be useful.
const X_FLOOR: f64 = 1e-8;

fn rowmax(m: &Matrix, i: usize) -> f64 {
    (0..m.dim()).map(|j| m[(i, j)].abs()).fold(0.0, f64::max)
}

fn colmax(m: &Matrix, j: usize) -> f64 {
    (0..m.dim()).map(|i| m[(i, j)].abs()).fold(0.0, f64::max)
}

fn prod(ms: &[&Matrix], n: usize, field: FieldTag) -> Matrix {
    ms.iter()
        .fold(Matrix::identity(n, field), |acc, m| mul_unchecked(&acc, m))
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn check_target(g: &GeneratorSet, b: &Matrix) -> Result<()> {
    if b.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            left: g.dim(),
            right: b.dim(),
        });
    }
    if b.field() != g.field() {
        return Err(Error::FieldMismatch {
            left: g.field(),
            right: b.field(),
        });
    }
    if let Some((row, col)) = b.upper_violation() {
        return Err(Error::NotLowerTriangular { row, col });
    }
    if !b.is_finite() {
        return Err(Error::InvalidConfig("target has non-finite entries".into()));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("eps must be positive, got {}", eps)))
    }
}

// ---------------------------------------------------------------------------
// Elimination cascade

/// Progress of the cascade: `word_for_a` evaluates to `D0 + residual`, and
/// `residual` is negligible at every position before `anchor`. `anchor` is
/// `None` once the whole strictly lower part has been eliminated.
#[derive(Clone, Debug, PartialEq)]
pub struct EliminationState {
    pub anchor: Option<IndexPair>,
    pub word_for_a: Word,
    pub residual: Matrix,
}

impl EliminationState {
    /// Starts from the single letter `A`, whose residual is `T`.
    pub fn initial(g: &GeneratorSet) -> Self {
        let n = g.dim();
        EliminationState {
            anchor: if n >= 2 {
                Some(IndexPair::new(2, 1))
            } else {
                None
            },
            word_for_a: Word::single(0, 1),
            residual: g.t().clone(),
        }
    }
}

/// A word close to `B + eta(B)`, where `eta(B)` is `B_rr T_rs / (a_r - a_s)`
/// at the anchor and zero elsewhere in the class.
#[derive(Clone, Debug)]
pub struct EtaWord {
    pub word: Word,
    /// Power of the cascade word used as the tail.
    pub power: u64,
    pub converged: bool,
    pub evaluations: u64,
    pub value: Matrix,
    /// The ideal anchor entry `B_rr T_rs / (a_r - a_s)`.
    pub limit: Scalar,
    /// `|value_rs - limit|`.
    pub deviation: f64,
    /// A priori bound on `deviation` when the cascade word is exactly in the
    /// class with diagonal `D0` (true at the first anchor).
    pub deviation_bound: f64,
}

/// Near-diagonal prefix `P ~ B / diag(W)^k` followed by `W^k`.
///
/// `k` is the least power with `lambda |B| (|a_s|/|a_r|)^k <= delta`; the
/// prefix absorbs the diagonal growth of `W^k` so the exponent of `W` stays
/// small no matter how tight `delta` is.
pub fn eta_word(
    g: &GeneratorSet,
    state: &EliminationState,
    b: &Matrix,
    delta: f64,
    cfg: &DiagSolveConfig,
) -> Result<EtaWord> {
    let anchor = state
        .anchor
        .ok_or_else(|| Error::InvalidConfig("cascade already finished".into()))?;
    check_eps(delta)?;
    let n = g.dim();
    check_target(g, b)?;
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .find(|&(i, j)| !b[(i, j)].is_zero())
    {
        return Err(Error::NotDiagonal { row: i + 1, col: j + 1 });
    }
    let (r, s) = (anchor.r - 1, anchor.s - 1);
    let d0 = g.a();
    let ratio = d0[s].abs() / d0[r].abs();
    if !(ratio < 1.0) {
        return Err(Error::NotIncreasing { i: anchor.r });
    }
    let w = eval_word(g, &state.word_for_a, n)?;
    let lambda = lambda_bound(&w).or_else(|_| lambda_bound(g.gen0()))?;
    let bn = b.sup_norm();
    let need = libm::log(delta / (lambda * bn)) / libm::log(ratio);
    let k = (libm::ceil(need).max(1.0) as u64).max(cfg.min_m0);
    let wk = mat_pow(&w, k);
    let field = g.field();
    let p: Vec<Scalar> = (0..n).map(|i| b[(i, i)] / wk[(i, i)]).collect();
    let weights: Vec<f64> = (0..n).map(|i| rowmax(&wk, i).max(1e-300)).collect();

    let engine = DiagEngine::for_generators(g)?;
    let logs: Vec<Vec<f64>> = (0..engine.num_columns())
        .map(|c| engine.log_column(c).to_vec())
        .collect();
    let layout = LayoutConfig::default();
    let accept = |m: &[u64]| graded_word(&logs, m, layout).graded;
    let mut scfg = cfg.clone();
    scfg.tol = delta;
    scfg.weights = Some(weights);
    scfg.min_m0 = 0;
    let sol = engine.heuristic_with(&DiagTarget::from_values(field, &p)?, &scfg, Some(&accept))?;
    let lay = graded_word(&logs, &sol.m.0, layout);
    let prefix_val = eval_word(g, &lay.word, n)?;
    let mut word = lay.word.clone();
    word.append(&state.word_for_a.repeat(k));
    let value = mul_unchecked(&prefix_val, &wk);

    let limit = b[(r, r)] * w[(r, s)] / (d0[r] - d0[s]);
    let deviation = (value[(r, s)] - limit).abs();
    let stray: f64 = (0..n)
        .filter(|&l| l != r)
        .map(|l| prefix_val[(r, l)].abs() * wk[(l, s)].abs())
        .sum();
    let deviation_bound = lambda
        * ((value[(r, r)] - b[(r, r)]).abs() + bn * libm::pow(ratio, k as f64))
        + stray;
    Ok(EtaWord {
        word,
        power: k,
        converged: sol.converged && lay.graded,
        evaluations: sol.evaluations,
        value,
        limit,
        deviation,
        deviation_bound,
    })
}

#[derive(Clone, Debug)]
pub struct Elimination {
    pub state: EliminationState,
    pub converged: bool,
    pub evaluations: u64,
    /// Modulus of the new residual at the eliminated anchor.
    pub cancelled: f64,
}

/// One cascade step: with `B2 = diag(1,..,-1,..,1)` (the `-1` at row `r`) and
/// `B1 = B2 D0`, the eta words of `B1` and `B2` multiply to `D0` on the
/// diagonal and cancel at the anchor.
pub fn eliminate_entry(
    g: &GeneratorSet,
    state: &EliminationState,
    delta: f64,
    cfg: &DiagSolveConfig,
) -> Result<Elimination> {
    let anchor = state
        .anchor
        .ok_or_else(|| Error::InvalidConfig("cascade already finished".into()))?;
    let n = g.dim();
    let field = g.field();
    let mut d2 = vec![Scalar::ONE; n];
    d2[anchor.r - 1] = -Scalar::ONE;
    let d1: Vec<Scalar> = d2.iter().zip(g.a()).map(|(&x, &a)| x * a).collect();
    let e1 = eta_word(g, state, &Matrix::diag(field, &d1), delta, cfg)?;
    let e2 = eta_word(g, state, &Matrix::diag(field, &d2), delta, cfg)?;
    let word = Word::concat(&[&e1.word, &e2.word]);
    let value = mul_unchecked(&e1.value, &e2.value);
    let d0 = Matrix::diag(field, g.a());
    let residual = value.sub(&d0)?;
    let cancelled = residual[(anchor.r - 1, anchor.s - 1)].abs();
    let next = delta_successor(anchor, n);
    Ok(Elimination {
        state: EliminationState {
            anchor: next,
            word_for_a: word,
            residual,
        },
        converged: e1.converged && e2.converged,
        evaluations: e1.evaluations + e2.evaluations,
        cancelled,
    })
}

#[derive(Clone, Debug)]
pub struct CascadeStep {
    pub anchor: IndexPair,
    pub cancelled: f64,
    pub converged: bool,
    pub evaluations: u64,
}

#[derive(Clone, Debug)]
pub struct Cascade {
    pub state: EliminationState,
    pub steps: Vec<CascadeStep>,
    pub converged: bool,
}

impl Cascade {
    pub fn word(&self) -> &Word {
        &self.state.word_for_a
    }

    /// `|eval(word) - D0|`.
    pub fn deviation(&self) -> f64 {
        self.state.residual.sup_norm()
    }
}

/// Eliminates every strictly lower position in order, leaving a word that
/// evaluates to `D0` up to `O(delta)`.
pub fn run_cascade(g: &GeneratorSet, delta: f64, cfg: &DiagSolveConfig) -> Result<Cascade> {
    check_eps(delta)?;
    let mut state = EliminationState::initial(g);
    let mut steps = Vec::new();
    while let Some(anchor) = state.anchor {
        let e = eliminate_entry(g, &state, delta, cfg)?;
        steps.push(CascadeStep {
            anchor,
            cancelled: e.cancelled,
            converged: e.converged,
            evaluations: e.evaluations,
        });
        state = e.state;
    }
    let converged = steps.iter().all(|s| s.converged);
    Ok(Cascade {
        state,
        steps,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Factoring and genericity

#[derive(Clone, Debug, PartialEq)]
pub struct FactorParts {
    pub r: Matrix,
    pub x: Scalar,
    /// Diagonal, `(n-1) x (n-1)`.
    pub s: Matrix,
}

/// Solves `B = diag(R, x) * A * diag(S, 1)` for generic `B`.
pub fn factor_target(b: &Matrix, a: &Matrix) -> Result<FactorParts> {
    let n = b.dim();
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    if a.dim() != n {
        return Err(Error::DimensionMismatch {
            left: n,
            right: a.dim(),
        });
    }
    if a.field() != b.field() {
        return Err(Error::FieldMismatch {
            left: b.field(),
            right: a.field(),
        });
    }
    for m in [b, a] {
        if let Some((row, col)) = m.upper_violation() {
            return Err(Error::NotLowerTriangular { row, col });
        }
    }
    let last = n - 1;
    let an = a[(last, last)];
    if an.is_zero() {
        return Err(Error::DivisionByZero { r: n, s: n });
    }
    let x = b[(last, last)] / an;
    if x.is_zero() {
        return Err(Error::NotGeneric(format!("entry ({},{}) is zero", n, n)));
    }
    let mut s = Vec::with_capacity(last);
    for j in 0..last {
        let (w, v) = (b[(last, j)], a[(last, j)]);
        if w.is_zero() {
            return Err(Error::NotGeneric(format!("entry ({},{}) is zero", n, j + 1)));
        }
        if v.is_zero() {
            return Err(Error::NotGeneric(format!(
                "generator entry ({},{}) is zero",
                n,
                j + 1
            )));
        }
        s.push(w / (x * v));
    }
    let u = b.block(last);
    if let Some(i) = (0..last).find(|&i| u[(i, i)].is_zero()) {
        return Err(Error::NotGeneric(format!("entry ({},{}) is zero", i + 1, i + 1)));
    }
    let field = b.field();
    let a_inv = a.block(last).lower_inverse()?;
    let s_inv: Vec<Scalar> = s.iter().map(|v| v.recip()).collect();
    let r = mul_unchecked(&mul_unchecked(&u, &Matrix::diag(field, &s_inv)), &a_inv);
    Ok(FactorParts {
        r,
        x,
        s: Matrix::diag(field, &s),
    })
}

/// Moves every lower entry of modulus below `delta/2` out to modulus at least
/// `delta/4`, and separates equal diagonal moduli; no entry moves by more
/// than `delta`. Already generic targets come back unchanged.
pub fn perturb_generic(b: &Matrix, delta: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = b.dim();
    let complex = b.field() == FieldTag::Complex;
    let floor = delta / 2.0;
    let mut out = b.clone();
    for i in 0..n {
        for j in 0..=i {
            let u = 0.5 + 0.5 * unit(&mut rng);
            let flip = rng.next_u64() & 1 == 1;
            let theta = TWO_PI * unit(&mut rng);
            let v = out[(i, j)];
            if v.abs() >= floor {
                continue;
            }
            let dir = if !v.is_zero() {
                v.scale(1.0 / v.abs())
            } else if complex {
                Scalar::from_polar(1.0, theta)
            } else if flip {
                -Scalar::ONE
            } else {
                Scalar::ONE
            };
            out[(i, j)] = v + dir.scale(u * floor);
        }
    }
    for i in 1..n {
        let di = out[(i, i)];
        let clash = (0..i).any(|j| {
            let dj = out[(j, j)].abs();
            (di.abs() / dj - 1.0).abs() < 1e-9
        });
        if clash {
            out[(i, i)] = di.scale(1.0 + delta / (4.0 * di.abs().max(1.0)));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClosureMode {
    /// Exponents from `{diag(A), D_alpha}`, laid out by the graded layout.
    Graded,
    /// Literal `(prod D_alpha^m_alpha) u^m0` with `u` the cascade word.
    Cascade,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Evaluation budget of each diagonal solve.
    pub budget: u64,
    pub seed: u64,
    pub mode: ClosureMode,
    pub layout: LayoutConfig,
    /// Halving retries per recursion level.
    pub retries: u32,
    /// Log slack of coordinates outside the current block.
    pub ambient_slack: f64,
    /// Cascade accuracy in [`ClosureMode::Cascade`].
    pub cascade_delta: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            budget: 10_000_000,
            seed: 0,
            mode: ClosureMode::Graded,
            layout: LayoutConfig::default(),
            retries: 3,
            ambient_slack: 2.5,
            cascade_delta: 1e-2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthStats {
    /// Candidate evaluations across all diagonal solves.
    pub nodes: u64,
    /// Largest single diagonal solve; never above the configured budget.
    pub peak_solve: u64,
    pub retries: u32,
    /// Run-length factors in the word.
    pub word_length: usize,
    /// Sum of exponents.
    pub letters: u64,
    /// A posteriori error bound from the factor-by-factor accounting.
    pub bound: Option<f64>,
    /// Seconds; filled in by callers that have a clock.
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxReport {
    pub target: Matrix,
    pub word: Word,
    /// `|eval(word) - target|`, re-evaluated.
    pub achieved_error: f64,
    pub converged: bool,
    pub stats: SynthStats,
}

struct Closure {
    word: Word,
    converged: bool,
}

struct Node {
    word: Word,
    error: f64,
    bound: f64,
    converged: bool,
}

struct CascadeClosure {
    word: Word,
    engine: DiagEngine,
}

/// Owns the per-generator-set caches: the diagonal engine and, in cascade
/// mode, the cascade word.
pub struct Synthesizer<'g> {
    g: &'g GeneratorSet,
    cfg: SynthConfig,
    engine: DiagEngine,
    logs: Vec<Vec<f64>>,
    cascade: Option<CascadeClosure>,
    nodes: u64,
    peak_solve: u64,
    retries: u32,
}

impl<'g> Synthesizer<'g> {
    pub fn new(g: &'g GeneratorSet, cfg: SynthConfig) -> Result<Self> {
        ensure_valid(g)?;
        if cfg.budget == 0 {
            return Err(Error::InvalidConfig("budget must be at least 1".into()));
        }
        let engine = DiagEngine::for_generators(g)?;
        let logs = (0..engine.num_columns())
            .map(|c| engine.log_column(c).to_vec())
            .collect();
        Ok(Synthesizer {
            g,
            cfg,
            engine,
            logs,
            cascade: None,
            nodes: 0,
            peak_solve: 0,
            retries: 0,
        })
    }

    fn cascade_closure(&mut self) -> Result<&CascadeClosure> {
        if self.cascade.is_none() {
            let dcfg = DiagSolveConfig::heuristic(self.cfg.cascade_delta, self.cfg.budget);
            let c = run_cascade(self.g, self.cfg.cascade_delta, &dcfg)?;
            for st in &c.steps {
                self.nodes += st.evaluations;
            }
            let u = eval_word(self.g, c.word(), self.g.dim())?;
            let engine = DiagEngine::with_base(self.g, &u.diagonal())?;
            self.cascade = Some(CascadeClosure {
                word: c.state.word_for_a,
                engine,
            });
        }
        Ok(self.cascade.as_ref().unwrap())
    }

    /// Diagonal word whose first `level` coordinates approximate `values`
    /// in the weighted error; the remaining ones stay within the ambient
    /// slack of 1.
    fn closure(&mut self, level: usize, values: &[Scalar], weights: &[f64], tol: f64) -> Result<Closure> {
        let n = self.g.dim();
        let mut vals = values.to_vec();
        vals.resize(n, Scalar::ONE);
        let mut t = DiagTarget::from_values(self.g.field(), &vals)?;
        for i in level..n {
            t = t.loosen(i, self.cfg.ambient_slack);
        }
        let mut w: Vec<f64> = weights.iter().map(|x| x.max(1e-300)).collect();
        w.resize(n, 1.0);
        let mut dcfg = DiagSolveConfig::heuristic(tol, self.cfg.budget);
        dcfg.weights = Some(w);
        match self.cfg.mode {
            ClosureMode::Graded => {
                let (logs, layout) = (&self.logs, self.cfg.layout);
                let accept = |m: &[u64]| graded_word(logs, m, layout).graded;
                let sol = self.engine.heuristic_with(&t, &dcfg, Some(&accept))?;
                let lay = graded_word(logs, &sol.m.0, layout);
                self.nodes += sol.evaluations;
                self.peak_solve = self.peak_solve.max(sol.evaluations);
                Ok(Closure {
                    word: lay.word,
                    converged: sol.converged && lay.graded,
                })
            }
            ClosureMode::Cascade => {
                let bound = self.cfg.layout.hard_bound;
                let cc = self.cascade_closure()?;
                let eng = &cc.engine;
                let k = eng.num_columns();
                // Every prefix of the literal word must stay representable.
                let accept = |m: &[u64]| {
                    (0..n).all(|i| {
                        let mut x = 0.0f64;
                        for c in 1..k {
                            x += m[c] as f64 * eng.log_column(c)[i];
                            if x.abs() > bound {
                                return false;
                            }
                        }
                        (x + m[0] as f64 * eng.log_column(0)[i]).abs() <= bound
                    })
                };
                let sol = eng.heuristic_with(&t, &dcfg, Some(&accept))?;
                let mut word = Word::new();
                for c in 1..k {
                    word.push(c, sol.m.0[c]);
                }
                word.append(&cc.word.repeat(sol.m.0[0]));
                let ok = accept(&sol.m.0);
                self.nodes += sol.evaluations;
                self.peak_solve = self.peak_solve.max(sol.evaluations);
                Ok(Closure {
                    word,
                    converged: sol.converged && ok,
                })
            }
        }
    }

    fn report(&self, target: &Matrix, word: Word, eps: f64, bound: Option<f64>) -> Result<ApproxReport> {
        let v = eval_word(self.g, &word, self.g.dim())?;
        let achieved_error = v.distance(target).unwrap_or(f64::INFINITY);
        Ok(ApproxReport {
            target: target.clone(),
            achieved_error,
            converged: achieved_error <= eps,
            stats: SynthStats {
                nodes: self.nodes,
                peak_solve: self.peak_solve,
                retries: self.retries,
                word_length: word.len(),
                letters: word.letters(),
                bound,
                wall_time: None,
            },
            word,
        })
    }

    /// Word within `eps` of a diagonal target.
    pub fn diag_closure(&mut self, b: &Matrix, eps: f64) -> Result<ApproxReport> {
        check_target(self.g, b)?;
        check_eps(eps)?;
        let n = self.g.dim();
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .find(|&(i, j)| !b[(i, j)].is_zero())
        {
            return Err(Error::NotDiagonal { row: i + 1, col: j + 1 });
        }
        let c = self.closure(n, &b.diagonal(), &vec![1.0; n], eps * 0.999)?;
        self.report(b, c.word, eps, None)
    }

    /// Word within `eps` of a lower-triangular target.
    pub fn approx(&mut self, b: &Matrix, eps: f64) -> Result<ApproxReport> {
        check_target(self.g, b)?;
        check_eps(eps)?;
        let n = self.g.dim();
        for id in 0..self.g.len() {
            if &self.g.generator(id)? == b {
                return self.report(b, Word::single(id, 1), eps, Some(0.0));
            }
        }
        let node = self.synth(n, b, eps, self.cfg.seed)?;
        let _ = (node.error, node.converged);
        self.report(b, node.word, eps, Some(node.bound))
    }

    fn synth(&mut self, level: usize, b: &Matrix, eps: f64, seed: u64) -> Result<Node> {
        let field = self.g.field();
        if level == 1 {
            let c = self.closure(1, &[b[(0, 0)]], &[1.0], eps * 0.999)?;
            let v = eval_word(self.g, &c.word, 1)?;
            let error = (v[(0, 0)] - b[(0, 0)]).abs();
            return Ok(Node {
                word: c.word,
                error,
                bound: error,
                converged: c.converged && error <= eps,
            });
        }
        let m = level;
        let last = m - 1;
        let mf = m as f64;
        let a = self.g.gen0().block(m);
        let mut best: Option<Node> = None;
        let mut seed = seed;
        let mut halvings = 0u32;
        let mut attempts = 0u32;
        while halvings <= self.cfg.retries && attempts <= 2 * self.cfg.retries + 2 {
            attempts += 1;
            let bp = perturb_generic(b, eps / 4.0, seed);
            let pert = b.distance(&bp).unwrap_or(0.0);
            let fp = factor_target(&bp, &a)?;
            let share = (eps - pert) / 6.0 * libm::pow(0.5, halvings as f64);

            let mut zd = fp.s.diagonal();
            zd.push(Scalar::ONE);
            let z = Matrix::diag(field, &zd);
            let az = mul_unchecked(&a, &z);
            let rmax = (0..last).map(|i| rowmax(&az, i)).fold(0.0, f64::max);
            let eps_r = share / (last as f64 * rmax);

            let child = self.synth(last, &fp.r, eps_r, seed.wrapping_mul(0x9e37_79b9).wrapping_add(1))?;
            let l = eval_word(self.g, &child.word, m)?;
            let xt = l[(last, last)];
            if xt.abs() < X_FLOOR {
                self.retries += 1;
                seed = seed.wrapping_add(0x1000);
                continue;
            }
            let vnorm = (0..last).map(|j| l[(last, j)].abs()).fold(0.0, f64::max);
            let eps_v = share / (last as f64 * rmax);
            let sa = if vnorm <= eps_v { 1.0 } else { eps_v / (1.0 + vnorm) };
            let sa = Scalar::real(sa);
            let y = fp.x / (sa * xt);
            let mut xd = vec![Scalar::ONE; m];
            xd[last] = sa;
            let mut yd = vec![Scalar::ONE; m];
            yd[last] = y;
            let x_id = Matrix::diag(field, &xd);
            let y_id = Matrix::diag(field, &yd);

            // X: left neighbour is the identity.
            let (wx, xt_m, cx) = if sa == Scalar::ONE {
                (Word::new(), Matrix::identity(m, field), true)
            } else {
                let right = prod(&[&l, &y_id, &az], m, field);
                let w: Vec<f64> = (0..m).map(|i| mf * rowmax(&right, i)).collect();
                let c = self.closure(m, &xd, &w, share)?;
                let v = eval_word(self.g, &c.word, m)?;
                (c.word, v, c.converged)
            };
            // Y
            let left = mul_unchecked(&xt_m, &l);
            let w: Vec<f64> = (0..m).map(|i| mf * colmax(&left, i) * rowmax(&az, i)).collect();
            let cy = self.closure(m, &yd, &w, share)?;
            let yt_m = eval_word(self.g, &cy.word, m)?;
            // Z
            let left = prod(&[&xt_m, &l, &yt_m, &a], m, field);
            let w: Vec<f64> = (0..m).map(|i| mf * colmax(&left, i)).collect();
            let cz = self.closure(m, &zd, &w, share)?;
            let zt_m = eval_word(self.g, &cz.word, m)?;

            let word = Word::concat(&[&wx, &child.word, &cy.word, &Word::single(0, 1), &cz.word]);
            let e = eval_word(self.g, &word, m)?;
            let error = e.distance(b).unwrap_or(f64::INFINITY);

            // Telescoping bound: actual factors on the left, ideal ones on
            // the right of each difference.
            let mut l_id = l.clone();
            for i in 0..last {
                for j in 0..=i {
                    l_id[(i, j)] = fp.r[(i, j)];
                }
            }
            let ideal = [&x_id, &l_id, &y_id, &a, &z];
            let actual = [&xt_m, &l, &yt_m, &a, &zt_m];
            let mut bound = pert + prod(&ideal, m, field).distance(&bp).unwrap_or(f64::INFINITY);
            for k in 0..5 {
                let diff = actual[k].distance(ideal[k]).unwrap_or(f64::INFINITY);
                if diff == 0.0 {
                    continue;
                }
                let lp = prod(&actual[..k], m, field).sup_norm();
                let rp = prod(&ideal[k + 1..], m, field).sup_norm();
                bound += mf * mf * lp * diff * rp;
            }

            let converged = error <= eps && child.converged && cx && cy.converged && cz.converged;
            let node = Node {
                word,
                error,
                bound,
                converged,
            };
            let better = best.as_ref().map_or(true, |b| node.error < b.error);
            if better {
                best = Some(node);
            }
            if error <= eps {
                break;
            }
            self.retries += 1;
            halvings += 1;
        }
        best.ok_or_else(|| {
            Error::NotGeneric(format!(
                "level {}: sub-word left a vanishing corner entry on every attempt",
                m
            ))
        })
    }
}

/// Word within `eps` of a diagonal target, using the graded layout.
pub fn diag_closure_word(g: &GeneratorSet, b: &Matrix, eps: f64, budget: u64) -> Result<ApproxReport> {
    let cfg = SynthConfig {
        budget,
        ..SynthConfig::default()
    };
    Synthesizer::new(g, cfg)?.diag_closure(b, eps)
}

/// Word within `eps` of a lower-triangular target.
pub fn approx_triangular(g: &GeneratorSet, b: &Matrix, eps: f64, budget: u64) -> Result<ApproxReport> {
    let cfg = SynthConfig {
        budget,
        ..SynthConfig::default()
    };
    Synthesizer::new(g, cfg)?.approx(b, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genset::build_default_generators;

    fn r(x: f64) -> Scalar {
        Scalar::real(x)
    }

    pub(crate) fn synthetic() -> GeneratorSet {
        GeneratorSet::new(
            FieldTag::Real,
            vec![r(2.0), r(3.0)],
            Matrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            vec![
                vec![r(-libm::exp(-libm::sqrt(5.0))), r(1.0)],
                vec![r(1.0), r(-libm::exp(-libm::sqrt(7.0)))],
            ],
        )
        .unwrap()
    }

    #[test]
    fn factor_hand_example() {
        let a = Matrix::from_real_rows(&[&[2.0, 0.0], &[1.0, 3.0]]);
        let b = Matrix::from_real_rows(&[&[4.0, 0.0], &[6.0, 9.0]]);
        let f = factor_target(&b, &a).unwrap();
        assert_eq!(f.x, r(3.0));
        assert_eq!(f.s, Matrix::diag(FieldTag::Real, &[r(2.0)]));
        assert_eq!(f.r, Matrix::from_real_rows(&[&[1.0]]));
        let zero_row = Matrix::from_real_rows(&[&[4.0, 0.0], &[0.0, 9.0]]);
        assert!(matches!(factor_target(&zero_row, &a), Err(Error::NotGeneric(_))));
    }

    #[test]
    fn factor_reconstructs_three() {
        let g = build_default_generators(3, FieldTag::Real, 0).unwrap();
        let b = Matrix::from_real_rows(&[&[1.0, 0.0, 0.0], &[-0.5, 2.0, 0.0], &[0.3, 0.7, -1.5]]);
        let f = factor_target(&b, g.gen0()).unwrap();
        let mut left = Matrix::zeros(3, FieldTag::Real);
        for i in 0..2 {
            for j in 0..2 {
                left[(i, j)] = f.r[(i, j)];
            }
        }
        left[(2, 2)] = f.x;
        let mut zd = f.s.diagonal();
        zd.push(Scalar::ONE);
        let back = prod(&[&left, g.gen0(), &Matrix::diag(FieldTag::Real, &zd)], 3, FieldTag::Real);
        assert!(back.distance(&b).unwrap() < 1e-12);
    }

    #[test]
    fn perturb_keeps_generic_targets() {
        let b = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.5, 2.0]]);
        assert_eq!(perturb_generic(&b, 0.01, 7), b);
    }

    #[test]
    fn perturb_lifts_zeros() {
        let b = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let p = perturb_generic(&b, 0.01, 7);
        assert_eq!(p, perturb_generic(&b, 0.01, 7));
        assert!(p.distance(&b).unwrap() <= 0.01);
        assert!(p[(1, 0)].abs() >= 0.0025);
        assert!((p[(1, 1)].abs() / p[(0, 0)].abs() - 1.0).abs() > 1e-9);
        assert_eq!(p[(0, 1)], Scalar::ZERO);
    }

    #[test]
    fn eta_deviation_within_bound() {
        let g = synthetic();
        let st = EliminationState::initial(&g);
        let b = Matrix::diag(FieldTag::Real, &[r(1.0), r(-1.0)]);
        let cfg = DiagSolveConfig::heuristic(1e-2, 10_000_000);
        let e = eta_word(&g, &st, &b, 1e-2, &cfg).unwrap();
        assert!(e.converged);
        assert!((e.value[(0, 0)] - r(1.0)).abs() <= 1e-2);
        assert!((e.value[(1, 1)] - r(-1.0)).abs() <= 1e-2);
        // limit = B_22 T_21 / (a_2 - a_1) = -1
        assert!((e.limit - r(-1.0)).abs() < 1e-15);
        assert!(e.deviation <= e.deviation_bound, "{} > {}", e.deviation, e.deviation_bound);
        assert!(e.deviation <= 0.05);
        let direct = eval_word(&g, &e.word, 2).unwrap();
        assert!(direct.distance(&e.value).unwrap() < 1e-9);
    }

    #[test]
    fn cascade_reaches_d0() {
        let g = synthetic();
        let delta = 1e-2;
        let cfg = DiagSolveConfig::heuristic(delta, 10_000_000);
        let c = run_cascade(&g, delta, &cfg).unwrap();
        assert_eq!(c.steps.len(), 1);
        assert!(c.converged);
        assert!(c.steps[0].cancelled <= 10.0 * delta);
        assert!(c.deviation() <= 10.0 * delta, "{}", c.deviation());
        let v = eval_word(&g, c.word(), 2).unwrap();
        let d0 = Matrix::diag(FieldTag::Real, g.a());
        assert!(v.distance(&d0).unwrap() <= 10.0 * delta);
    }

    #[test]
    fn cascade_trivial_in_dimension_one() {
        let g = build_default_generators(1, FieldTag::Real, 0).unwrap();
        let c = run_cascade(&g, 1e-3, &DiagSolveConfig::heuristic(1e-3, 1000)).unwrap();
        assert!(c.steps.is_empty());
        assert_eq!(c.word().factors(), &[(0, 1)]);
    }

    #[test]
    fn closure_on_default_set() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let b = Matrix::diag(FieldTag::Real, &[r(0.5), r(-2.0)]);
        let rep = diag_closure_word(&g, &b, 1e-2, 10_000_000).unwrap();
        assert!(rep.converged, "{}", rep.achieved_error);
        let v = eval_word(&g, &rep.word, 2).unwrap();
        assert!(v[(1, 0)].abs() < 1e-9);
    }

    #[test]
    fn closure_rejects_off_diagonal() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let b = Matrix::from_real_rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert!(matches!(
            diag_closure_word(&g, &b, 1e-2, 1000),
            Err(Error::NotDiagonal { row: 2, col: 1 })
        ));
    }

    #[test]
    fn approx_short_circuits_generators() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let rep = approx_triangular(&g, g.gen0(), 1e-3, 1000).unwrap();
        assert_eq!(rep.word.factors(), &[(0, 1)]);
        assert_eq!(rep.achieved_error, 0.0);
    }

    #[test]
    fn tiny_budget_reports_honestly() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let b = Matrix::from_real_rows(&[&[1.0, 0.0], &[1.0, -1.0]]);
        let rep = approx_triangular(&g, &b, 1e-9, 5).unwrap();
        assert!(!rep.converged);
        assert!(rep.achieved_error > 1e-9);
        assert!(rep.stats.peak_solve <= 5);
        let v = eval_word(&g, &rep.word, 2).unwrap();
        assert_eq!(v.distance(&b).unwrap(), rep.achieved_error);
    }

    #[test]
    fn approx_two_by_two() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let b = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.5, 2.0]]);
        let rep = approx_triangular(&g, &b, 0.1, 10_000_000).unwrap();
        assert!(rep.converged, "{:?}", rep.achieved_error);
        let bound = rep.stats.bound.unwrap();
        assert!(rep.achieved_error <= bound * (1.0 + 1e-9) + 1e-12);
    }
}
