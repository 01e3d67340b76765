use alloc::string::String;
use alloc::vec::Vec;

use crate::genset::Violation;
use crate::ordering::IndexPair;
use crate::scalar::FieldTag;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("field mismatch: {left} vs {right}")]
    FieldMismatch { left: FieldTag, right: FieldTag },

    #[error("invalid dimension {0}")]
    InvalidDimension(usize),

    #[error("matrix is not lower triangular: nonzero entry at ({row},{col})")]
    NotLowerTriangular { row: usize, col: usize },

    #[error("matrix is not diagonal: nonzero entry at ({row},{col})")]
    NotDiagonal { row: usize, col: usize },

    #[error("diagonal moduli at {i} and {j} are too close (ratio {ratio:.6})")]
    IllConditioned { i: usize, j: usize, ratio: f64 },

    #[error("diagonal moduli must increase strictly along the diagonal (fails at {i})")]
    NotIncreasing { i: usize },

    #[error("division by zero: equal diagonal entries at {r} and {s}")]
    DivisionByZero { r: usize, s: usize },

    #[error("index pair {pair} lies outside the lower-triangular index set for n={n}")]
    OutsideDelta { pair: IndexPair, n: usize },

    #[error("matrix is not in the class anchored at {anchor}: entry {at} is nonzero")]
    NotInClass { anchor: IndexPair, at: IndexPair },

    #[error("closed form needs r > s, got {0}")]
    DiagonalAnchor(IndexPair),

    #[error("empty word")]
    EmptyWord,

    #[error("unknown generator id {0}")]
    UnknownGenerator(usize),

    #[error("overflow while evaluating factor {factor}: entry modulus exceeded 1e300")]
    Overflow { factor: usize },

    #[error("target diagonal entry {i} is zero")]
    ZeroTargetEntry { i: usize },

    #[error("no exponent vector inside the box satisfies the constraints")]
    Infeasible,

    #[error("exhaustive search needs {needed} evaluations but the budget is {budget}")]
    BudgetTooSmall { needed: u128, budget: u64 },

    #[error("generator log-moduli do not positively span: no drift combination found")]
    SpanningFailure,

    #[error("target is not generic: {0}")]
    NotGeneric(String),

    #[error("invalid generator set: {}", join_violations(.0))]
    InvalidGenerators(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn join_violations(v: &[Violation]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (k, x) in v.iter().enumerate() {
        if k > 0 {
            s.push_str("; ");
        }
        let _ = write!(s, "{x}");
    }
    s
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
