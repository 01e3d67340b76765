//! Diagonal targets as a log-lattice problem.
//!
//! A diagonal word `prod_alpha C_alpha^{m_alpha}` has coordinates
//! `exp(sum m_alpha log|c_alpha,i|)` times a phase, so hitting a target means
//! approximating its log-moduli by a nonnegative integer combination of the
//! columns' log-moduli while matching signs (real) or arguments (complex).
//!
//! The heuristic is a deterministic candidate stream: sweep `m0` upward,
//! round the relaxed remaining exponents inside each sign-parity class, then
//! dither and hill-climb around the best few. Every candidate depends only on
//! earlier results, so a larger budget only ever extends the stream.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::genset::GeneratorSet;
use crate::matcore::Matrix;
use crate::scalar::{FieldTag, Scalar};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Largest `|sum c_alpha v_alpha|` accepted for a drift vector.
pub const DRIFT_NORM: f64 = 0.1;
/// Largest `c_0` tried by the drift search.
pub const DRIFT_MAX_C0: u64 = 100_000;

const TOP_K: usize = 4;
const SWEEP_BLOCK: u64 = 1024;
const LOCAL_STEPS: usize = 8;
const MAX_PARITY_PARAMS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhaseSpec {
    /// Real sign; `true` for negative.
    Sign(bool),
    /// Complex argument in `[0, 2 pi)`.
    Arg(f64),
    /// Only the modulus matters.
    Free,
}

/// Target diagonal in log-polar coordinates.
///
/// Coordinates with a `slack` are loose: they only need
/// `|log|v_i| - logmag_i| <= slack` and are excluded from the error. They keep
/// coordinates outside the block of interest bounded.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagTarget {
    pub logmag: Vec<f64>,
    pub phase: Vec<PhaseSpec>,
    pub slack: Vec<Option<f64>>,
}

impl DiagTarget {
    pub fn from_values(field: FieldTag, values: &[Scalar]) -> Result<Self> {
        let mut logmag = Vec::with_capacity(values.len());
        let mut phase = Vec::with_capacity(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v.is_zero() || !v.is_finite() {
                return Err(Error::ZeroTargetEntry { i: i + 1 });
            }
            logmag.push(libm::log(v.abs()));
            phase.push(match field {
                FieldTag::Real => {
                    if !v.is_real() {
                        return Err(Error::InvalidConfig(format!(
                            "complex target entry {} in a real computation",
                            i + 1
                        )));
                    }
                    PhaseSpec::Sign(v.re < 0.0)
                }
                FieldTag::Complex => {
                    let mut a = v.arg();
                    if a < 0.0 {
                        a += TWO_PI;
                    }
                    PhaseSpec::Arg(a)
                }
            });
        }
        Ok(DiagTarget {
            slack: vec![None; logmag.len()],
            logmag,
            phase,
        })
    }

    pub fn dim(&self) -> usize {
        self.logmag.len()
    }

    /// Makes coordinate `i` loose with the given log slack.
    pub fn loosen(mut self, i: usize, slack: f64) -> Self {
        self.phase[i] = PhaseSpec::Free;
        self.slack[i] = Some(slack);
        self
    }

    pub fn value(&self, i: usize) -> Scalar {
        let r = libm::exp(self.logmag[i]);
        match self.phase[i] {
            PhaseSpec::Sign(true) => Scalar::real(-r),
            PhaseSpec::Sign(false) | PhaseSpec::Free => Scalar::real(r),
            PhaseSpec::Arg(a) => Scalar::from_polar(r, a),
        }
    }

    pub fn values(&self) -> Vec<Scalar> {
        (0..self.dim()).map(|i| self.value(i)).collect()
    }
}

pub fn diag_log_target(b: &Matrix) -> Result<DiagTarget> {
    let n = b.dim();
    for i in 0..n {
        for j in 0..n {
            if i != j && !b[(i, j)].is_zero() {
                return Err(Error::NotDiagonal {
                    row: i + 1,
                    col: j + 1,
                });
            }
        }
    }
    DiagTarget::from_values(b.field(), &b.diagonal())
}

/// `m[0]` is the exponent of generator 0, `m[alpha]` that of `D_alpha`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExponentVector(pub Vec<u64>);

impl ExponentVector {
    pub fn m0(&self) -> u64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    Exhaustive,
    Heuristic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagSolveConfig {
    pub tol: f64,
    pub budget: u64,
    pub box_cap: u64,
    pub min_m0: u64,
    pub mode: SolveMode,
    /// Per-coordinate error weights; the error is `max_i w_i |v_i - b_i|`.
    pub weights: Option<Vec<f64>>,
}

impl DiagSolveConfig {
    pub fn heuristic(tol: f64, budget: u64) -> Self {
        DiagSolveConfig {
            tol,
            budget,
            box_cap: 1 << 40,
            min_m0: 0,
            mode: SolveMode::Heuristic,
            weights: None,
        }
    }

    pub fn exhaustive(tol: f64, budget: u64, box_cap: u64) -> Self {
        DiagSolveConfig {
            tol,
            budget,
            box_cap,
            min_m0: 0,
            mode: SolveMode::Exhaustive,
            weights: None,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget must be at least 1".into()));
        }
        if self.box_cap == 0 {
            return Err(Error::InvalidConfig("box must be at least 1".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n || w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig(
                    "weights must be n positive finite numbers".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Extra admissibility test for candidates that meet the tolerance.
pub type Accept<'a> = dyn Fn(&[u64]) -> bool + Sync + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagSolution {
    pub m: ExponentVector,
    /// Weighted sup distance, re-evaluated from `m`.
    pub error: f64,
    pub converged: bool,
    /// Candidates evaluated.
    pub evaluations: u64,
}

/// Columns of diagonal values, one per generator, with cached logs, phases
/// and a drift vector.
#[derive(Clone, Debug)]
pub struct DiagEngine {
    field: FieldTag,
    n: usize,
    cols: Vec<Vec<Scalar>>,
    logs: Vec<Vec<f64>>,
    args: Vec<Vec<f64>>,
    neg: Vec<Vec<bool>>,
    active: Vec<bool>,
    drift: Result<Vec<u64>>,
}

impl DiagEngine {
    pub fn new(field: FieldTag, cols: Vec<Vec<Scalar>>) -> Result<Self> {
        let n = cols.first().map(|c| c.len()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        for (k, c) in cols.iter().enumerate() {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    left: n,
                    right: c.len(),
                });
            }
            if let Some(i) = c.iter().position(|x| x.is_zero() || !x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "generator {k} has a zero or non-finite diagonal entry at {}",
                    i + 1
                )));
            }
        }
        let logs = cols
            .iter()
            .map(|c| c.iter().map(|x| libm::log(x.abs())).collect())
            .collect();
        let args = cols
            .iter()
            .map(|c| c.iter().map(|x| x.arg()).collect())
            .collect();
        let neg = cols
            .iter()
            .map(|c| c.iter().map(|x| x.re < 0.0).collect())
            .collect();
        let active = cols
            .iter()
            .enumerate()
            .map(|(k, c)| k == 0 || c.iter().any(|&x| x != Scalar::ONE))
            .collect();
        let mut e = DiagEngine {
            field,
            n,
            cols,
            logs,
            args,
            neg,
            active,
            drift: Err(Error::SpanningFailure),
        };
        e.drift = e.compute_drift();
        Ok(e)
    }

    /// Generator 0 contributes its diagonal `D0`.
    pub fn for_generators(g: &GeneratorSet) -> Result<Self> {
        Self::with_base(g, g.a())
    }

    /// Like [`for_generators`](Self::for_generators) with column 0 replaced.
    pub fn with_base(g: &GeneratorSet, base: &[Scalar]) -> Result<Self> {
        let mut cols = vec![base.to_vec()];
        cols.extend(g.diagonals().iter().cloned());
        Self::new(g.field(), cols)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn num_columns(&self) -> usize {
        self.cols.len()
    }

    pub fn log_column(&self, k: usize) -> &[f64] {
        &self.logs[k]
    }

    pub fn drift(&self) -> Result<ExponentVector> {
        self.drift.clone().map(ExponentVector)
    }

    /// Coordinates of the diagonal word with exponents `m`.
    ///
    /// Uses repeated squaring when every partial product stays finite and
    /// nonzero, else the log-polar form.
    pub fn values(&self, m: &[u64]) -> Vec<Scalar> {
        let mut out = vec![Scalar::ONE; self.n];
        let mut fallback = false;
        for (i, o) in out.iter_mut().enumerate() {
            for (k, &e) in m.iter().enumerate() {
                if e > 0 {
                    *o *= self.cols[k][i].powu(e);
                }
            }
            if !o.is_finite() || o.is_zero() || o.abs() > 1e300 || o.abs() < 1e-300 {
                fallback = true;
            }
        }
        if fallback {
            self.log_values(m)
        } else {
            out
        }
    }

    pub fn log_values(&self, m: &[u64]) -> Vec<Scalar> {
        (0..self.n).map(|i| self.log_value(m, i)).collect()
    }

    #[inline]
    fn log_value(&self, m: &[u64], i: usize) -> Scalar {
        let mut s = 0.0;
        for (k, &e) in m.iter().enumerate() {
            if e > 0 {
                s += e as f64 * self.logs[k][i];
            }
        }
        let r = libm::exp(s);
        match self.field {
            FieldTag::Real => {
                let mut odd = false;
                for (k, &e) in m.iter().enumerate() {
                    if e & 1 == 1 && self.neg[k][i] {
                        odd = !odd;
                    }
                }
                Scalar::real(if odd { -r } else { r })
            }
            FieldTag::Complex => {
                let mut th = 0.0;
                for (k, &e) in m.iter().enumerate() {
                    if e > 0 {
                        th += libm::fmod(e as f64 * self.args[k][i], TWO_PI);
                    }
                }
                Scalar::from_polar(r, th)
            }
        }
    }

    /// Weighted distance from `t`, or infinity when a sign or a loose
    /// coordinate's slack is violated.
    pub fn error_of(&self, v: &[Scalar], t: &DiagTarget, w: &[f64]) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.n {
            if let Some(sl) = t.slack[i] {
                let lv = libm::log(v[i].abs());
                if !(libm::fabs(lv - t.logmag[i]) <= sl) {
                    return f64::INFINITY;
                }
                continue;
            }
            let e = match t.phase[i] {
                PhaseSpec::Sign(negative) => {
                    if v[i].is_zero() || (v[i].re < 0.0) != negative {
                        return f64::INFINITY;
                    }
                    (v[i] - t.value(i)).abs()
                }
                PhaseSpec::Arg(_) => (v[i] - t.value(i)).abs(),
                PhaseSpec::Free => libm::fabs(v[i].abs() - libm::exp(t.logmag[i])),
            };
            if !(e.is_finite()) {
                return f64::INFINITY;
            }
            err = err.max(w[i] * e);
        }
        err
    }

    /// The reported error of an exponent vector.
    pub fn exact_error(&self, m: &[u64], t: &DiagTarget, cfg: &DiagSolveConfig) -> f64 {
        let w = weights(cfg, self.n);
        self.error_of(&self.values(m), t, &w)
    }

    fn check(&self, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<()> {
        if t.dim() != self.n {
            return Err(Error::DimensionMismatch {
                left: self.n,
                right: t.dim(),
            });
        }
        cfg.validate(self.n)
    }

    pub fn solve(&self, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<DiagSolution> {
        match cfg.mode {
            SolveMode::Exhaustive => self.exhaustive(t, cfg),
            SolveMode::Heuristic => self.heuristic(t, cfg),
        }
    }

    /// Scans all of `[0, box]^(N+1)` with `m0 >= min_m0` and returns the
    /// minimum, lexicographically smallest on ties.
    pub fn exhaustive(&self, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<DiagSolution> {
        self.check(t, cfg)?;
        let k = self.cols.len() as u32;
        let side = cfg.box_cap as u128 + 1;
        let needed = side.checked_pow(k).unwrap_or(u128::MAX);
        if needed > cfg.budget as u128 {
            return Err(Error::BudgetTooSmall {
                needed,
                budget: cfg.budget,
            });
        }
        if cfg.min_m0 > cfg.box_cap {
            return Err(Error::Infeasible);
        }
        let w = weights(cfg, self.n);
        let rest = side.pow(k - 1) as u64;
        let m0_count = (cfg.box_cap - cfg.min_m0 + 1) as usize;
        let blocks = crate::map_blocks(m0_count, 1, |range| {
            let mut best: Option<(f64, Vec<u64>)> = None;
            let mut m = vec![0u64; k as usize];
            for j in range {
                m[0] = cfg.min_m0 + j as u64;
                for code in 0..rest {
                    let mut c = code;
                    for slot in m[1..].iter_mut().rev() {
                        *slot = c % (cfg.box_cap + 1);
                        c /= cfg.box_cap + 1;
                    }
                    if m.iter().all(|&x| x == 0) {
                        continue;
                    }
                    let e = self.error_of(&self.values(&m), t, &w);
                    if e.is_finite() && best.as_ref().map_or(true, |b| e < b.0) {
                        best = Some((e, m.clone()));
                    }
                }
            }
            best
        });
        let mut best: Option<(f64, Vec<u64>)> = None;
        for b in blocks.into_iter().flatten() {
            if best.as_ref().map_or(true, |x| b.0 < x.0) {
                best = Some(b);
            }
        }
        let (error, m) = best.ok_or(Error::Infeasible)?;
        Ok(DiagSolution {
            m: ExponentVector(m),
            error,
            converged: error <= cfg.tol,
            evaluations: m0_count as u64 * rest,
        })
    }

    pub fn heuristic(&self, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<DiagSolution> {
        self.heuristic_with(t, cfg, None)
    }

    /// Heuristic search where a candidate within tolerance only ends the
    /// search if `accept` agrees; rejected hits are dropped.
    pub fn heuristic_with(
        &self,
        t: &DiagTarget,
        cfg: &DiagSolveConfig,
        accept: Option<&Accept<'_>>,
    ) -> Result<DiagSolution> {
        self.check(t, cfg)?;
        let prep = self.prepare(t, cfg)?;
        let mut st = Stream::new(self, t, cfg, &prep, accept);
        st.run();
        let m = match &st.hit {
            Some(h) => h.1.clone(),
            None => {
                let ok = |m: &Vec<u64>| accept.map_or(true, |f| f(m));
                st.top
                    .iter()
                    .find(|s| ok(&s.1))
                    .or(st.top.first())
                    .ok_or(Error::Infeasible)?
                    .1
                    .clone()
            }
        };
        let error = self.error_of(&self.values(&m), t, &prep.w);
        if !error.is_finite() {
            return Err(Error::Infeasible);
        }
        Ok(DiagSolution {
            m: ExponentVector(m),
            error,
            converged: error <= cfg.tol,
            evaluations: st.evaluated,
        })
    }

    fn prepare(&self, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<Prepared> {
        let w = weights(cfg, self.n);
        let act: Vec<usize> = (1..self.cols.len()).filter(|&k| self.active[k]).collect();
        let omega: Vec<f64> = t
            .slack
            .iter()
            .map(|s| if s.is_some() { 0.01 } else { 1.0 })
            .collect();
        let pinv = pseudo_inverse(&self.logs, &act, &omega);
        let classes = [self.parity_classes(t, &act, false), self.parity_classes(t, &act, true)];
        if classes.iter().all(|c| c.is_none()) {
            return Err(Error::Infeasible);
        }
        let drift = self.drift.as_ref().ok().map(|c| {
            let odd_signed = c
                .iter()
                .enumerate()
                .any(|(k, &x)| x & 1 == 1 && self.neg[k].iter().any(|&b| b));
            if self.field == FieldTag::Real && odd_signed {
                c.iter().map(|x| 2 * x).collect()
            } else {
                c.clone()
            }
        });
        Ok(Prepared {
            w,
            act,
            pinv,
            classes,
            drift,
        })
    }

    /// Parity assignments over `act` (0, 1, or 2 for unconstrained) that make
    /// every exact real coordinate's sign right, given the parity of `m0`.
    fn parity_classes(&self, t: &DiagTarget, act: &[usize], m0_odd: bool) -> Option<Vec<Vec<u8>>> {
        if self.field == FieldTag::Complex {
            return Some(vec![vec![2; act.len()]]);
        }
        let mut rows: Vec<(u64, bool)> = Vec::new();
        for i in 0..self.n {
            if let (None, PhaseSpec::Sign(negative)) = (t.slack[i], t.phase[i]) {
                let mut mask = 0u64;
                for (b, &k) in act.iter().enumerate() {
                    if self.neg[k][i] {
                        mask |= 1 << b;
                    }
                }
                let rhs = negative ^ (m0_odd && self.neg[0][i]);
                rows.push((mask, rhs));
            }
        }
        let used: u64 = rows.iter().fold(0, |a, r| a | r.0);
        // Reduced row echelon form over GF(2).
        let mut pivots: Vec<usize> = Vec::new();
        let mut r = 0;
        for c in 0..act.len() {
            let Some(p) = (r..rows.len()).find(|&i| rows[i].0 >> c & 1 == 1) else {
                continue;
            };
            rows.swap(r, p);
            for i in 0..rows.len() {
                if i != r && rows[i].0 >> c & 1 == 1 {
                    rows[i].0 ^= rows[r].0;
                    rows[i].1 ^= rows[r].1;
                }
            }
            pivots.push(c);
            r += 1;
        }
        if rows[r..].iter().any(|row| row.1) {
            return None;
        }
        let params: Vec<usize> = (0..act.len())
            .filter(|c| used >> c & 1 == 1 && !pivots.contains(c))
            .collect();
        let count = 1usize << params.len().min(MAX_PARITY_PARAMS);
        let mut out = Vec::with_capacity(count);
        for k in 0..count {
            let gray = k ^ (k >> 1);
            let mut pv = vec![2u8; act.len()];
            let mut pmask = 0u64;
            for (b, &c) in params.iter().enumerate() {
                let bit = (gray >> b & 1) as u8;
                pv[c] = bit;
                if bit == 1 {
                    pmask |= 1 << c;
                }
            }
            for (row, &c) in rows.iter().zip(&pivots) {
                let rest = (row.0 & !(1u64 << c) & pmask).count_ones() & 1 == 1;
                pv[c] = (row.1 ^ rest) as u8;
            }
            out.push(pv);
        }
        Some(out)
    }

    fn compute_drift(&self) -> Result<Vec<u64>> {
        let k = self.cols.len();
        let zero_log = |c: usize| self.logs[c].iter().all(|&x| x == 0.0);
        if let Some(c) = (0..k).find(|&c| self.active[c] && zero_log(c)) {
            let mut v = vec![0; k];
            v[c] = 1;
            return Ok(v);
        }
        let act: Vec<usize> = (1..k).filter(|&c| self.active[c]).collect();
        let pinv = pseudo_inverse(&self.logs, &act, &vec![1.0; self.n]);
        let combos = if act.len() <= 4 { 1usize << act.len() } else { 1 };
        let mut m = vec![0u64; k];
        for c0 in 1..=DRIFT_MAX_C0 {
            let r: Vec<f64> = self.logs[0].iter().map(|x| -(c0 as f64) * x).collect();
            let y = apply(&pinv, &r);
            for mask in 0..combos {
                m.iter_mut().for_each(|x| *x = 0);
                m[0] = c0;
                for (b, (&c, &yb)) in act.iter().zip(&y).enumerate() {
                    let v = if combos == 1 {
                        libm::round(yb)
                    } else if mask >> b & 1 == 1 {
                        libm::ceil(yb)
                    } else {
                        libm::floor(yb)
                    };
                    m[c] = if v > 0.0 { v as u64 } else { 0 };
                }
                let norm = (0..self.n)
                    .map(|i| {
                        let s: f64 = (0..k).map(|c| m[c] as f64 * self.logs[c][i]).sum();
                        s * s
                    })
                    .sum::<f64>();
                if libm::sqrt(norm) <= DRIFT_NORM {
                    return Ok(m);
                }
            }
        }
        Err(Error::SpanningFailure)
    }
}

fn weights(cfg: &DiagSolveConfig, n: usize) -> Vec<f64> {
    cfg.weights.clone().unwrap_or_else(|| vec![1.0; n])
}

/// `(L^T W L + ridge)^-1 L^T W` restricted to columns `act`, as rows per column.
fn pseudo_inverse(logs: &[Vec<f64>], act: &[usize], omega: &[f64]) -> Vec<Vec<f64>> {
    let k = act.len();
    let n = omega.len();
    if k == 0 {
        return Vec::new();
    }
    let mut g = vec![vec![0.0; k]; k];
    let mut trace = 0.0;
    for a in 0..k {
        for b in 0..k {
            g[a][b] = (0..n)
                .map(|i| omega[i] * logs[act[a]][i] * logs[act[b]][i])
                .sum();
        }
        trace += g[a][a];
    }
    let ridge = 1e-12 * (trace / k as f64 + 1.0);
    for (a, row) in g.iter_mut().enumerate() {
        row[a] += ridge;
    }
    // rhs columns: L^T W, one per coordinate
    let mut rhs: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..n).map(|i| omega[i] * logs[act[a]][i]).collect())
        .collect();
    // Gauss-Jordan with partial pivoting.
    for c in 0..k {
        let p = (c..k)
            .max_by(|&x, &y| libm::fabs(g[x][c]).total_cmp(&libm::fabs(g[y][c])))
            .unwrap();
        g.swap(c, p);
        rhs.swap(c, p);
        let d = g[c][c];
        if d == 0.0 {
            continue;
        }
        for j in 0..k {
            g[c][j] /= d;
        }
        for j in 0..n {
            rhs[c][j] /= d;
        }
        for r in 0..k {
            if r != c && g[r][c] != 0.0 {
                let f = g[r][c];
                for j in 0..k {
                    g[r][j] -= f * g[c][j];
                }
                for j in 0..n {
                    rhs[r][j] -= f * rhs[c][j];
                }
            }
        }
    }
    rhs
}

fn apply(p: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    p.iter()
        .map(|row| row.iter().zip(r).map(|(a, b)| a * b).sum())
        .collect()
}

struct Prepared {
    w: Vec<f64>,
    act: Vec<usize>,
    pinv: Vec<Vec<f64>>,
    classes: [Option<Vec<Vec<u8>>>; 2],
    drift: Option<Vec<u64>>,
}

#[inline]
fn round_parity(y: f64, p: u8) -> f64 {
    if p == 2 {
        libm::round(y)
    } else {
        let p = p as f64;
        2.0 * libm::round((y - p) / 2.0) + p
    }
}

type Scored = (f64, Vec<u64>);

fn better(a: &Scored, b: &Scored) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Default)]
struct BatchOut {
    top: Vec<Scored>,
    /// Position inside the batch and the candidate of the first hit.
    hit: Option<(u64, Scored)>,
}

fn push_top(top: &mut Vec<Scored>, s: Scored) {
    if !s.0.is_finite() || top.iter().any(|x| x.1 == s.1) {
        return;
    }
    let pos = top.iter().position(|x| better(&s, x)).unwrap_or(top.len());
    if pos < TOP_K {
        top.insert(pos, s);
        top.truncate(TOP_K);
    }
}

struct Stream<'a> {
    eng: &'a DiagEngine,
    t: &'a DiagTarget,
    cfg: &'a DiagSolveConfig,
    prep: &'a Prepared,
    evaluated: u64,
    top: Vec<Scored>,
    hit: Option<Scored>,
    refined: BTreeSet<Vec<u64>>,
    explored: BTreeSet<Vec<u64>>,
    accept: Option<&'a Accept<'a>>,
}

impl<'a> Stream<'a> {
    fn new(
        eng: &'a DiagEngine,
        t: &'a DiagTarget,
        cfg: &'a DiagSolveConfig,
        prep: &'a Prepared,
        accept: Option<&'a Accept<'a>>,
    ) -> Self {
        Stream {
            eng,
            t,
            cfg,
            prep,
            evaluated: 0,
            top: Vec::new(),
            hit: None,
            refined: BTreeSet::new(),
            explored: BTreeSet::new(),
            accept,
        }
    }

    fn left(&self) -> u64 {
        self.cfg.budget.saturating_sub(self.evaluated)
    }

    fn done(&self) -> bool {
        self.hit.is_some() || self.left() == 0
    }

    /// Inside the box and not the empty word.
    fn in_box(&self, m: &[u64]) -> bool {
        m[0] >= self.cfg.min_m0
            && m.iter().all(|&x| x <= self.cfg.box_cap)
            && m.iter().any(|&x| x > 0)
    }

    fn score(&self, m: &[u64]) -> f64 {
        let v = self.eng.log_values(m);
        self.eng.error_of(&v, self.t, &self.prep.w)
    }

    /// Screens by the log-polar form, confirms hits with the reported error.
    fn judge(&self, m: &[u64], out: &mut BatchOut, pos: u64) -> bool {
        let e = self.score(m);
        if e <= self.cfg.tol {
            let exact = self.eng.exact_error(m, self.t, self.cfg);
            if exact <= self.cfg.tol {
                if self.accept.map_or(false, |f| !f(m)) {
                    return false;
                }
                out.hit = Some((pos, (exact, m.to_vec())));
                return true;
            }
        }
        push_top(&mut out.top, (e, m.to_vec()));
        false
    }

    fn merge(&mut self, outs: Vec<BatchOut>, sizes: &[u64]) {
        for (out, &size) in outs.into_iter().zip(sizes) {
            if let Some((pos, s)) = out.hit {
                self.evaluated += pos + 1;
                push_top(&mut self.top, s.clone());
                self.hit = Some(s);
                return;
            }
            self.evaluated += size;
            for s in out.top {
                push_top(&mut self.top, s);
            }
        }
    }

    fn eval_list(&mut self, mut list: Vec<Vec<u64>>) -> usize {
        list.retain(|m| self.in_box(m));
        list.truncate(self.left() as usize);
        let n = list.len();
        const B: usize = 64;
        let outs = crate::map_blocks(n, B, |range| {
            let mut out = BatchOut::default();
            for i in range.clone() {
                if self.judge(&list[i], &mut out, (i - range.start) as u64) {
                    break;
                }
            }
            out
        });
        let sizes: Vec<u64> = (0..n).step_by(B).map(|s| ((s + B).min(n) - s) as u64).collect();
        self.merge(outs, &sizes);
        n
    }

    fn sweep_candidate(&self, m0: u64, class: &[u8], m: &mut [u64]) -> bool {
        let eng = self.eng;
        let p = self.prep;
        let r: Vec<f64> = (0..eng.n)
            .map(|i| self.t.logmag[i] - m0 as f64 * eng.logs[0][i])
            .collect();
        m.iter_mut().for_each(|x| *x = 0);
        let mut signed = vec![0i64; m.len()];
        signed[0] = m0 as i64;
        for (b, &k) in p.act.iter().enumerate() {
            let y: f64 = p.pinv[b].iter().zip(&r).map(|(a, c)| a * c).sum();
            let v = round_parity(y, class[b]);
            if !(libm::fabs(v) < 1e15) {
                return false;
            }
            signed[k] = v as i64;
        }
        if signed.iter().any(|&x| x < 0) {
            let Some(c) = &p.drift else { return false };
            let mut steps = 0i64;
            for (k, &x) in signed.iter().enumerate() {
                if x < 0 {
                    if c[k] == 0 {
                        return false;
                    }
                    steps = steps.max((-x + c[k] as i64 - 1) / c[k] as i64);
                }
            }
            for (k, x) in signed.iter_mut().enumerate() {
                *x += steps * c[k] as i64;
            }
        }
        for (slot, &x) in m.iter_mut().zip(&signed) {
            *slot = x as u64;
        }
        self.in_box(m)
    }

    fn eval_sweep(&mut self, m0_start: u64, count: u64, classes: [&[Vec<u8>]; 2]) {
        // Candidate index -> (m0, class), classes depending on m0's parity.
        let mut index: Vec<(u64, usize)> = Vec::new();
        for m0 in m0_start..m0_start + count {
            for c in 0..classes[(m0 & 1) as usize].len() {
                index.push((m0, c));
            }
        }
        index.truncate(self.left() as usize);
        let n = index.len();
        const B: usize = 256;
        let k = self.eng.cols.len();
        let outs = crate::map_blocks(n, B, |range| {
            let mut out = BatchOut::default();
            let mut m = vec![0u64; k];
            for i in range.clone() {
                let (m0, c) = index[i];
                let class = &classes[(m0 & 1) as usize][c];
                if !self.sweep_candidate(m0, class, &mut m) {
                    continue;
                }
                if self.judge(&m, &mut out, (i - range.start) as u64) {
                    break;
                }
            }
            out
        });
        let sizes: Vec<u64> = (0..n).step_by(B).map(|s| ((s + B).min(n) - s) as u64).collect();
        self.merge(outs, &sizes);
    }

    fn neighbours(&self, m: &[u64], offsets: &[i64]) -> Vec<Vec<u64>> {
        let mut out = Vec::new();
        for k in 0..m.len() {
            if !self.eng.active[k] {
                continue;
            }
            for &d in offsets {
                let v = m[k] as i64 + d;
                if v < 0 {
                    continue;
                }
                let mut x = m.to_vec();
                x[k] = v as u64;
                out.push(x);
            }
        }
        out
    }

    fn run(&mut self) {
        let empty: Vec<Vec<u8>> = Vec::new();
        let classes = [
            self.prep.classes[0].as_deref().unwrap_or(&empty),
            self.prep.classes[1].as_deref().unwrap_or(&empty),
        ];
        let mut m0 = self.cfg.min_m0;
        loop {
            if self.done() {
                return;
            }
            let before = self.evaluated;
            if m0 <= self.cfg.box_cap {
                let count = SWEEP_BLOCK.min(self.cfg.box_cap - m0 + 1);
                self.eval_sweep(m0, count, classes);
                m0 += count;
            }
            // Dither the best few that have not been dithered yet.
            let fresh: Vec<Vec<u64>> = self
                .top
                .iter()
                .filter(|s| !self.refined.contains(&s.1))
                .map(|s| s.1.clone())
                .collect();
            for c in fresh {
                if self.done() {
                    return;
                }
                self.refined.insert(c.clone());
                let list = self.neighbours(&c, &[-3, -2, -1, 1, 2, 3]);
                self.eval_list(list);
            }
            // Hill-climb from the current best.
            for _ in 0..LOCAL_STEPS {
                if self.done() {
                    return;
                }
                let Some(best) = self.top.first().map(|s| s.1.clone()) else {
                    break;
                };
                if !self.explored.insert(best.clone()) {
                    break;
                }
                let list = self.neighbours(&best, &[-2, -1, 1, 2]);
                self.eval_list(list);
            }
            if self.evaluated == before && m0 > self.cfg.box_cap {
                return;
            }
        }
    }
}

/// Exhaustive oracle over the generator set's diagonals.
pub fn diag_solve_exhaustive(g: &GeneratorSet, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<DiagSolution> {
    DiagEngine::for_generators(g)?.exhaustive(t, cfg)
}

pub fn diag_solve_heuristic(g: &GeneratorSet, t: &DiagTarget, cfg: &DiagSolveConfig) -> Result<DiagSolution> {
    DiagEngine::for_generators(g)?.heuristic(t, cfg)
}

pub fn drift_vector(g: &GeneratorSet) -> Result<ExponentVector> {
    DiagEngine::for_generators(g)?.drift()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genset::build_default_generators;

    fn real(v: &[f64]) -> Vec<Scalar> {
        v.iter().map(|&x| Scalar::real(x)).collect()
    }

    #[test]
    fn log_targets() {
        let id = Matrix::identity(3, FieldTag::Real);
        let t = diag_log_target(&id).unwrap();
        assert_eq!(t.logmag, [0.0; 3]);
        assert!(t.phase.iter().all(|p| *p == PhaseSpec::Sign(false)));
        let e = core::f64::consts::E;
        let b = Matrix::diag(FieldTag::Real, &real(&[-e, e * e]));
        let t = diag_log_target(&b).unwrap();
        assert!((t.logmag[0] - 1.0).abs() < 1e-15 && (t.logmag[1] - 2.0).abs() < 1e-15);
        assert_eq!(t.phase, [PhaseSpec::Sign(true), PhaseSpec::Sign(false)]);
        let z = Matrix::diag(FieldTag::Real, &real(&[1.0, 0.0]));
        assert_eq!(diag_log_target(&z), Err(Error::ZeroTargetEntry { i: 2 }));
        let nd = Matrix::from_real_rows(&[&[1.0, 0.0], &[1.0, 1.0]]);
        assert!(matches!(diag_log_target(&nd), Err(Error::NotDiagonal { .. })));
    }

    #[test]
    fn drift_for_one_dimension() {
        let g = build_default_generators(1, FieldTag::Real, 0).unwrap();
        let c = drift_vector(&g).unwrap();
        assert_eq!(c.0, [11, 7]);
        let degenerate = DiagEngine::new(FieldTag::Real, vec![real(&[1.0, 1.0]), real(&[1.0, 1.0])]).unwrap();
        assert_eq!(degenerate.drift().unwrap().0, [1, 0]);
    }

    #[test]
    fn parity_classes_default() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let e = DiagEngine::for_generators(&g).unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[1.0, -1.0])).unwrap();
        let c = e.parity_classes(&t, &[1, 2], false).unwrap();
        assert_eq!(c, [vec![0, 1]]);
    }

    #[test]
    fn shared_sign_column_gives_two_classes() {
        // Two columns flipping the same coordinate: one free parameter.
        let e = DiagEngine::new(
            FieldTag::Real,
            vec![real(&[0.5]), real(&[-2.0]), real(&[-3.0])],
        )
        .unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[-1.0])).unwrap();
        let c = e.parity_classes(&t, &[1, 2], false).unwrap();
        assert_eq!(c.len(), 2);
        for pv in &c {
            assert_eq!((pv[0] + pv[1]) % 2, 1);
        }
    }

    #[test]
    fn exact_hits() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let d1 = g.diagonals()[0].clone();
        let t = DiagTarget::from_values(FieldTag::Real, &d1).unwrap();
        let cfg = DiagSolveConfig::exhaustive(1e-9, 1_000_000, 3);
        let s = diag_solve_exhaustive(&g, &t, &cfg).unwrap();
        assert_eq!(s.m.0, [0, 1, 0]);
        assert!(s.error <= 1e-15);

        let e = DiagEngine::for_generators(&g).unwrap();
        let v = e.values(&[0, 2, 1]);
        let t = DiagTarget::from_values(FieldTag::Real, &v).unwrap();
        let s = diag_solve_exhaustive(&g, &t, &cfg).unwrap();
        assert_eq!(s.m.0, [0, 2, 1]);
        let h = diag_solve_heuristic(&g, &t, &DiagSolveConfig::heuristic(1e-9, 10_000)).unwrap();
        assert!(h.converged);
        assert!(h.error <= s.error + 1e-12);
    }

    #[test]
    fn budget_and_infeasible() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[1.0, -1.0])).unwrap();
        let cfg = DiagSolveConfig::exhaustive(0.05, 100, 60);
        assert!(matches!(
            diag_solve_exhaustive(&g, &t, &cfg),
            Err(Error::BudgetTooSmall { .. })
        ));
        // min_m0 beyond the box leaves nothing to search.
        let mut cfg = DiagSolveConfig::exhaustive(0.05, 1000, 2);
        cfg.min_m0 = 3;
        assert_eq!(diag_solve_exhaustive(&g, &t, &cfg), Err(Error::Infeasible));
    }

    #[test]
    fn sign_infeasible_system() {
        // No generator can flip coordinate 1.
        let e = DiagEngine::new(FieldTag::Real, vec![real(&[0.5, 0.7]), real(&[2.0, -3.0])]).unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[-1.0, 1.0])).unwrap();
        assert_eq!(
            e.heuristic(&t, &DiagSolveConfig::heuristic(0.1, 1000)),
            Err(Error::Infeasible)
        );
        assert_eq!(
            e.exhaustive(&t, &DiagSolveConfig::exhaustive(0.1, 1000, 5)),
            Err(Error::Infeasible)
        );
    }

    #[test]
    fn heuristic_default_target() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[1.0, -1.0])).unwrap();
        let s = diag_solve_heuristic(&g, &t, &DiagSolveConfig::heuristic(0.05, 1_000_000)).unwrap();
        assert!(s.converged, "{s:?}");
        let v = DiagEngine::for_generators(&g).unwrap().values(&s.m.0);
        assert!(v[0].re > 0.0 && v[1].re < 0.0);
    }

    #[test]
    fn loose_coordinates_only_bound_the_modulus() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let t = DiagTarget::from_values(FieldTag::Real, &real(&[-2.0, 1.0]))
            .unwrap()
            .loosen(1, 2.0);
        let s = diag_solve_heuristic(&g, &t, &DiagSolveConfig::heuristic(0.01, 1_000_000)).unwrap();
        assert!(s.converged);
        let v = DiagEngine::for_generators(&g).unwrap().values(&s.m.0);
        assert!(libm::log(v[1].abs()).abs() <= 2.0);
    }
}
