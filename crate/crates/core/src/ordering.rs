//! The total order on lower-triangular positions and the classes of
//! matrices vanishing below an anchor.
//!
//! Positions are 1-based. `(i,j) <= (r,s)` iff `i-j < r-s`, or the offsets
//! agree and `i <= r`: diagonals first, then each subdiagonal top to bottom.

use core::cmp::Ordering;
use core::fmt;

use crate::error::{Error, Result};
use crate::matcore::Matrix;

/// Absolute threshold below which an entry counts as a structural zero.
pub const CLASS_ZERO_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IndexPair {
    pub r: usize,
    pub s: usize,
}

impl IndexPair {
    pub const fn new(r: usize, s: usize) -> Self {
        IndexPair { r, s }
    }

    #[inline]
    pub fn offset(self) -> usize {
        self.r - self.s
    }

    pub fn in_delta(self, n: usize) -> bool {
        1 <= self.s && self.s <= self.r && self.r <= n
    }

    pub fn check(self, n: usize) -> Result<()> {
        if self.in_delta(n) {
            Ok(())
        } else {
            Err(Error::OutsideDelta { pair: self, n })
        }
    }
}

impl fmt::Display for IndexPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.r, self.s)
    }
}

/// Compares two positions of the same ambient dimension `n`.
pub fn delta_compare(p: IndexPair, q: IndexPair, n: usize) -> Result<Ordering> {
    p.check(n)?;
    q.check(n)?;
    Ok(cmp_unchecked(p, q))
}

#[inline]
fn cmp_unchecked(p: IndexPair, q: IndexPair) -> Ordering {
    p.offset().cmp(&q.offset()).then(p.r.cmp(&q.r))
}

/// Least position strictly above `p`, or `None` at the maximum `(n,1)`.
pub fn delta_successor(p: IndexPair, n: usize) -> Option<IndexPair> {
    if !p.in_delta(n) {
        return None;
    }
    if p.r < n {
        return Some(IndexPair::new(p.r + 1, p.s + 1));
    }
    let next_offset = p.offset() + 1;
    if next_offset >= n {
        return None;
    }
    Some(IndexPair::new(next_offset + 1, 1))
}

/// All of Delta in increasing order, starting at `(1,1)`.
pub fn delta_chain(n: usize) -> impl Iterator<Item = IndexPair> {
    let first = if n >= 1 {
        Some(IndexPair::new(1, 1))
    } else {
        None
    };
    core::iter::successors(first, move |&p| delta_successor(p, n))
}

/// Off-diagonal part of the chain: `(2,1), (3,2), ..., (n,1)`.
pub fn elimination_path(n: usize) -> impl Iterator<Item = IndexPair> {
    delta_chain(n).filter(|p| p.r > p.s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TriClassTag {
    pub anchor: IndexPair,
    pub dim: usize,
}

impl TriClassTag {
    pub const fn new(anchor: IndexPair, dim: usize) -> Self {
        TriClassTag { anchor, dim }
    }
}

/// First position strictly below `anchor` holding a non-negligible entry.
pub fn first_class_violation(t: &Matrix, anchor: IndexPair) -> Option<IndexPair> {
    let n = t.dim();
    let mut p = Some(IndexPair::new(1, 1));
    while let Some(q) = p {
        if cmp_unchecked(q, anchor) != Ordering::Less {
            break;
        }
        if t[(q.r - 1, q.s - 1)].abs() > CLASS_ZERO_TOL {
            return Some(q);
        }
        p = delta_successor(q, n);
    }
    None
}

pub fn tri_class_member(t: &Matrix, tag: TriClassTag) -> Result<bool> {
    if t.dim() != tag.dim {
        return Err(Error::DimensionMismatch {
            left: t.dim(),
            right: tag.dim,
        });
    }
    tag.anchor.check(tag.dim)?;
    if let Some((row, col)) = t.upper_violation() {
        return Err(Error::NotLowerTriangular { row, col });
    }
    Ok(first_class_violation(t, tag.anchor).is_none())
}
