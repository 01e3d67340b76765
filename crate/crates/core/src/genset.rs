//! The generator family `{A = D0 + T, D_1, ..., D_n}` and words over it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::matcore::{mat_pow, mul_unchecked, Matrix, MIN_SEPARATION_RATIO};
use crate::scalar::{FieldTag, Scalar};

/// Entry modulus above which word evaluation gives up.
pub const OVERFLOW_LIMIT: f64 = 1e300;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSet {
    field: FieldTag,
    a: Vec<Scalar>,
    t: Matrix,
    d: Vec<Vec<Scalar>>,
    gen0: Matrix,
}

impl GeneratorSet {
    /// Assembles a set from its parts, checking shapes only.
    ///
    /// `d` may hold more than `n` diagonals: truncated sets keep all of them.
    pub fn new(field: FieldTag, a: Vec<Scalar>, t: Matrix, d: Vec<Vec<Scalar>>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if t.dim() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: t.dim(),
            });
        }
        for dj in &d {
            if dj.len() != n {
                return Err(Error::DimensionMismatch {
                    left: n,
                    right: dj.len(),
                });
            }
        }
        let t = t.with_field(field);
        let mut gen0 = t.clone();
        for (i, &ai) in a.iter().enumerate() {
            gen0[(i, i)] += ai;
        }
        Ok(GeneratorSet {
            field,
            a,
            t,
            d,
            gen0,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn field(&self) -> FieldTag {
        self.field
    }

    pub fn a(&self) -> &[Scalar] {
        &self.a
    }

    pub fn t(&self) -> &Matrix {
        &self.t
    }

    pub fn diagonals(&self) -> &[Vec<Scalar>] {
        &self.d
    }

    /// Generator count including `A`.
    pub fn len(&self) -> usize {
        self.d.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `A = D0 + T`.
    pub fn gen0(&self) -> &Matrix {
        &self.gen0
    }

    pub fn generator(&self, id: usize) -> Result<Matrix> {
        if id == 0 {
            Ok(self.gen0.clone())
        } else if id <= self.d.len() {
            Ok(Matrix::diag(self.field, &self.d[id - 1]))
        } else {
            Err(Error::UnknownGenerator(id))
        }
    }

    /// Diagonal of generator `id` (for `A` this is `D0`).
    pub fn diag_of(&self, id: usize) -> Result<&[Scalar]> {
        if id == 0 {
            Ok(&self.a)
        } else if id <= self.d.len() {
            Ok(&self.d[id - 1])
        } else {
            Err(Error::UnknownGenerator(id))
        }
    }

    /// `log|.|` of the diagonal of generator `id`.
    pub fn log_moduli(&self, id: usize) -> Result<Vec<f64>> {
        Ok(self
            .diag_of(id)?
            .iter()
            .map(|x| libm::log(x.abs()))
            .collect())
    }
}

fn nth_prime(k: usize) -> u64 {
    let mut count = 0;
    let mut c = 1u64;
    loop {
        c += 1;
        if (2..).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            count += 1;
            if count == k {
                return c;
            }
        }
    }
}

/// Fractional part of `j * (sqrt 5 - 1) / 2`.
pub fn golden_phase(j: usize) -> f64 {
    let g = (libm::sqrt(5.0) - 1.0) / 2.0;
    let x = j as f64 * g;
    x - libm::floor(x)
}

/// Prime-square-root family: `a_i = exp(-sqrt p_{n+1-i})` over the first `n`
/// primes, `D_j` the identity except entry `j` with modulus `exp(sqrt q_j)`,
/// `q_j` the `(max(n,2)+j)`-th prime, and `T` all ones below the diagonal.
/// Real sets flip the sign of that entry, complex sets rotate it by
/// `exp(2 pi i phi_j)`. `_seed` is accepted for interface stability only.
pub fn build_default_generators(n: usize, field: FieldTag, _seed: u64) -> Result<GeneratorSet> {
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let a: Vec<Scalar> = (1..=n)
        .map(|i| Scalar::real(libm::exp(-libm::sqrt(nth_prime(n + 1 - i) as f64))))
        .collect();
    let t = Matrix::from_fn(n, field, |i, j| {
        if j < i {
            Scalar::ONE
        } else {
            Scalar::ZERO
        }
    });
    let base = n.max(2);
    let d = (1..=n)
        .map(|j| {
            let modulus = libm::exp(libm::sqrt(nth_prime(base + j) as f64));
            let entry = match field {
                FieldTag::Real => Scalar::real(-modulus),
                FieldTag::Complex => {
                    Scalar::from_polar(modulus, 2.0 * core::f64::consts::PI * golden_phase(j))
                }
            };
            let mut dj = vec![Scalar::ONE; n];
            dj[j - 1] = entry;
            dj
        })
        .collect();
    GeneratorSet::new(field, a, t, d)
}

/// One failed hypothesis of the generator family.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// `|a_i| <= |a_{i-1}|` or `a_i = 0`.
    IneqDiag { i: usize },
    /// Increase holds but `|a_i| / |a_{i-1}|` is below the floor.
    RatioFloor { i: usize, ratio: f64 },
    /// `T_rs = 0` strictly below the diagonal.
    CondTr { r: usize, s: usize },
    /// `T` nonzero on or above the diagonal.
    NotStrictlyLower { r: usize, s: usize },
    /// `D_gen` has a zero diagonal entry.
    ZeroDiagonal { gen: usize, i: usize },
    TooFewDiagonals { have: usize, need: usize },
    /// Complex value in a real set, or a non-finite entry.
    BadEntry { what: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IneqDiag { i } => write!(f, "ineqdiag at i={i}"),
            Violation::RatioFloor { i, ratio } => write!(
                f,
                "ineqdiag ratio at i={i}: {ratio:.6} < {MIN_SEPARATION_RATIO}"
            ),
            Violation::CondTr { r, s } => write!(f, "condtr at ({r},{s})"),
            Violation::NotStrictlyLower { r, s } => {
                write!(f, "condtr structural zero violated at ({r},{s})")
            }
            Violation::ZeroDiagonal { gen, i } => write!(f, "zero diagonal of D_{gen} at i={i}"),
            Violation::TooFewDiagonals { have, need } => {
                write!(f, "expected at least {need} diagonal generators, found {have}")
            }
            Violation::BadEntry { what } => write!(f, "bad entry: {what}"),
        }
    }
}

pub fn validate_generators(g: &GeneratorSet) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.dim();
    let real = g.field == FieldTag::Real;
    let check_entry = |what: &dyn Fn() -> String, x: Scalar, out: &mut Vec<Violation>| {
        if !x.is_finite() || (real && !x.is_real()) {
            out.push(Violation::BadEntry { what: what() });
        }
    };
    for (i, &x) in g.a.iter().enumerate() {
        check_entry(&|| format!("a_{}", i + 1), x, &mut out);
    }
    for i in 0..n {
        for j in 0..n {
            check_entry(&|| format!("T_({},{})", i + 1, j + 1), g.t[(i, j)], &mut out);
        }
    }
    for (k, dk) in g.d.iter().enumerate() {
        for (i, &x) in dk.iter().enumerate() {
            check_entry(&|| format!("D_{} at i={}", k + 1, i + 1), x, &mut out);
        }
    }

    for i in 0..n {
        let cur = g.a[i].abs();
        let prev = if i == 0 { 0.0 } else { g.a[i - 1].abs() };
        if !(cur > prev) {
            out.push(Violation::IneqDiag { i: i + 1 });
        } else if i > 0 && !(cur / prev >= MIN_SEPARATION_RATIO) {
            out.push(Violation::RatioFloor {
                i: i + 1,
                ratio: cur / prev,
            });
        }
    }
    for i in 0..n {
        for j in 0..n {
            let zero = g.t[(i, j)].is_zero();
            if j < i && zero {
                out.push(Violation::CondTr { r: i + 1, s: j + 1 });
            } else if j >= i && !zero {
                out.push(Violation::NotStrictlyLower { r: i + 1, s: j + 1 });
            }
        }
    }
    if g.d.len() < n {
        out.push(Violation::TooFewDiagonals {
            have: g.d.len(),
            need: n,
        });
    }
    for (k, dk) in g.d.iter().enumerate() {
        for (i, x) in dk.iter().enumerate() {
            if x.is_zero() {
                out.push(Violation::ZeroDiagonal { gen: k + 1, i: i + 1 });
            }
        }
    }
    out
}

/// Validation as a `Result`.
pub fn ensure_valid(g: &GeneratorSet) -> Result<()> {
    let v = validate_generators(g);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidGenerators(v))
    }
}

/// Truncates every generator to its upper-left `m x m` block.
///
/// All diagonal generators are kept, including those that become the identity.
pub fn sigma_reduce(g: &GeneratorSet, m: usize) -> Result<GeneratorSet> {
    if m == 0 || m > g.dim() {
        return Err(Error::InvalidDimension(m));
    }
    if m == g.dim() {
        return Ok(g.clone());
    }
    GeneratorSet::new(
        g.field,
        g.a[..m].to_vec(),
        g.t.block(m),
        g.d.iter().map(|dj| dj[..m].to_vec()).collect(),
    )
}

/// Finite product of generator powers, stored run-length: adjacent factors
/// with the same generator are merged on push.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Word {
    factors: Vec<(usize, u64)>,
}

impl Word {
    pub fn new() -> Self {
        Word::default()
    }

    pub fn single(gen: usize, exp: u64) -> Self {
        let mut w = Word::new();
        w.push(gen, exp);
        w
    }

    /// Builds from raw pairs without merging; zero exponents are dropped.
    pub fn from_factors(factors: Vec<(usize, u64)>) -> Self {
        Word {
            factors: factors.into_iter().filter(|f| f.1 > 0).collect(),
        }
    }

    pub fn push(&mut self, gen: usize, exp: u64) {
        if exp == 0 {
            return;
        }
        if let Some(last) = self.factors.last_mut() {
            if last.0 == gen {
                last.1 += exp;
                return;
            }
        }
        self.factors.push((gen, exp));
    }

    pub fn append(&mut self, other: &Word) {
        for &(g, e) in &other.factors {
            self.push(g, e);
        }
    }

    pub fn concat(parts: &[&Word]) -> Word {
        let mut w = Word::new();
        for p in parts {
            w.append(p);
        }
        w
    }

    /// `self` repeated `k` times.
    pub fn repeat(&self, k: u64) -> Word {
        let mut w = Word::new();
        for _ in 0..k {
            w.append(self);
        }
        w
    }

    pub fn factors(&self) -> &[(usize, u64)] {
        &self.factors
    }

    /// Number of stored `(generator, exponent)` factors.
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Total number of generator letters, i.e. the sum of exponents.
    pub fn letters(&self) -> u64 {
        self.factors.iter().map(|f| f.1).sum()
    }

    pub fn max_gen(&self) -> Option<usize> {
        self.factors.iter().map(|f| f.0).max()
    }
}

fn check_overflow(m: &Matrix, factor: usize) -> Result<()> {
    for x in m.entries() {
        let a = x.abs();
        if !(a <= OVERFLOW_LIMIT) {
            return Err(Error::Overflow { factor });
        }
    }
    Ok(())
}

/// Left-to-right product of the `m x m` truncated generator powers.
pub fn eval_word(g: &GeneratorSet, w: &Word, m: usize) -> Result<Matrix> {
    if w.is_empty() {
        return Err(Error::EmptyWord);
    }
    if m == 0 || m > g.dim() {
        return Err(Error::InvalidDimension(m));
    }
    let gens: Vec<Matrix> = (0..g.len())
        .map(|id| g.generator(id).map(|x| x.block(m)))
        .collect::<Result<_>>()?;
    let mut acc: Option<Matrix> = None;
    for (k, &(id, e)) in w.factors().iter().enumerate() {
        let gm = gens.get(id).ok_or(Error::UnknownGenerator(id))?;
        let p = mat_pow(gm, e);
        check_overflow(&p, k)?;
        acc = Some(match acc {
            None => p,
            Some(x) => {
                let y = mul_unchecked(&x, &p);
                check_overflow(&y, k)?;
                y
            }
        });
    }
    Ok(acc.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> GeneratorSet {
        GeneratorSet::new(
            FieldTag::Real,
            vec![Scalar::real(2.0), Scalar::real(3.0)],
            Matrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            vec![
                vec![Scalar::real(-0.5), Scalar::ONE],
                vec![Scalar::ONE, Scalar::real(-0.25)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn primes() {
        let p: Vec<u64> = (1..=6).map(nth_prime).collect();
        assert_eq!(p, [2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn default_two() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        assert_eq!(g.a()[0].re, libm::exp(-libm::sqrt(3.0)));
        assert!((g.a()[0].re - 0.176921).abs() < 1e-6);
        assert!((g.a()[1].re - 0.24312).abs() < 1e-5);
        assert_eq!(g.diagonals()[0][0].re, -libm::exp(libm::sqrt(5.0)));
        assert_eq!(g.diagonals()[0][1].re, 1.0);
        assert_eq!(g.diagonals()[1][1].re, -libm::exp(libm::sqrt(7.0)));
        assert_eq!(g.t()[(1, 0)].re, 1.0);
        assert_eq!(g.len(), 3);
        assert!(validate_generators(&g).is_empty());
    }

    #[test]
    fn default_one() {
        let g = build_default_generators(1, FieldTag::Real, 0).unwrap();
        assert_eq!(g.a()[0].re, libm::exp(-libm::sqrt(2.0)));
        assert_eq!(g.diagonals()[0][0].re, -libm::exp(libm::sqrt(5.0)));
        assert!(validate_generators(&g).is_empty());
        assert!(build_default_generators(0, FieldTag::Real, 0).is_err());
    }

    #[test]
    fn complex_default_has_unit_rotations() {
        let g = build_default_generators(3, FieldTag::Complex, 0).unwrap();
        for (j, dj) in g.diagonals().iter().enumerate() {
            let want = 2.0 * core::f64::consts::PI * golden_phase(j + 1);
            let mut arg = dj[j].arg();
            if arg < 0.0 {
                arg += 2.0 * core::f64::consts::PI;
            }
            assert!((arg - want).abs() < 1e-12);
        }
        assert!(validate_generators(&g).is_empty());
    }

    #[test]
    fn violations_are_named() {
        let bad = GeneratorSet::new(
            FieldTag::Real,
            vec![Scalar::real(3.0), Scalar::real(2.0)],
            Matrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            vec![vec![Scalar::ONE; 2]; 2],
        )
        .unwrap();
        let v = validate_generators(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(format!("{}", v[0]), "ineqdiag at i=2");

        let mut t = Matrix::from_fn(3, FieldTag::Real, |i, j| {
            if j < i {
                Scalar::ONE
            } else {
                Scalar::ZERO
            }
        });
        t[(2, 0)] = Scalar::ZERO;
        let g = GeneratorSet::new(
            FieldTag::Real,
            vec![Scalar::real(1.0), Scalar::real(2.0), Scalar::real(3.0)],
            t,
            vec![vec![Scalar::ONE; 3]; 3],
        )
        .unwrap();
        let v = validate_generators(&g);
        assert_eq!(v.len(), 1);
        assert_eq!(format!("{}", v[0]), "condtr at (3,1)");

        let close = GeneratorSet::new(
            FieldTag::Real,
            vec![Scalar::real(1.0), Scalar::real(1.01)],
            Matrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
            vec![vec![Scalar::ONE, Scalar::ZERO]; 2],
        )
        .unwrap();
        let v = validate_generators(&close);
        assert!(matches!(v[0], Violation::RatioFloor { i: 2, .. }));
        assert!(v.iter().any(|x| matches!(x, Violation::ZeroDiagonal { gen: 2, i: 2 })));
    }

    #[test]
    fn reduce_keeps_all_diagonals() {
        let g = build_default_generators(3, FieldTag::Real, 0).unwrap();
        let h = sigma_reduce(&g, 2).unwrap();
        assert_eq!(h.dim(), 2);
        assert_eq!(h.len(), 4);
        assert_eq!(h.a(), &g.a()[..2]);
        assert_eq!(h.diagonals()[2], vec![Scalar::ONE; 2]);
        assert!(validate_generators(&h).is_empty());
        assert_eq!(sigma_reduce(&g, 3).unwrap(), g);
        assert!(sigma_reduce(&g, 0).is_err());
        assert!(sigma_reduce(&g, 4).is_err());
    }

    #[test]
    fn word_merging() {
        let mut w = Word::new();
        w.push(1, 2);
        w.push(1, 3);
        w.push(0, 0);
        w.push(2, 1);
        assert_eq!(w.factors(), &[(1, 5), (2, 1)]);
        assert_eq!(w.letters(), 6);
        let v = Word::concat(&[&w, &Word::single(2, 4)]);
        assert_eq!(v.factors(), &[(1, 5), (2, 5)]);
    }

    #[test]
    fn eval_examples() {
        let g = synthetic();
        let a3 = eval_word(&g, &Word::single(0, 3), 2).unwrap();
        assert_eq!(a3, Matrix::from_real_rows(&[&[8.0, 0.0], &[19.0, 27.0]]));
        assert_eq!(
            eval_word(&g, &Word::single(1, 1), 2).unwrap(),
            g.generator(1).unwrap()
        );
        let x = eval_word(&g, &Word::from_factors(vec![(1, 2), (2, 1)]), 2).unwrap();
        let y = eval_word(&g, &Word::from_factors(vec![(2, 1), (1, 2)]), 2).unwrap();
        assert_eq!(x, y);
        assert_eq!(eval_word(&g, &Word::new(), 2), Err(Error::EmptyWord));
        assert_eq!(
            eval_word(&g, &Word::single(7, 1), 2),
            Err(Error::UnknownGenerator(7))
        );
        assert!(matches!(
            eval_word(&g, &Word::single(0, 1000), 2),
            Err(Error::Overflow { factor: 0 })
        ));
    }
}
