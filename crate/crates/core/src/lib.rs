//! Dense subsemigroups of lower-triangular matrices: the generator family,
//! word evaluation, and synthesis of words approximating arbitrary targets.
//!
//! Everything here is `no_std` + `alloc`; the `std` feature only enables
//! thread-parallel search through `parallel`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod diagengine;
pub mod error;
pub mod genset;
pub mod layout;
pub mod matcore;
pub mod ordering;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use genset::{
    build_default_generators, eval_word, sigma_reduce, validate_generators, GeneratorSet,
    Violation, Word,
};
pub use matcore::{
    closed_form_akrs, lambda_bound, mat_mul, mat_pow, sup_norm, tri_eigendecompose, EigenFactors,
    Matrix,
};
pub use ordering::{delta_compare, delta_successor, tri_class_member, IndexPair, TriClassTag};
pub use scalar::{FieldTag, Scalar};
pub use synth::{
    approx_triangular, diag_closure_word, eliminate_entry, eta_word, factor_target, perturb_generic,
    run_cascade, ApproxReport, EliminationState,
};

/// Maps `f` over `0..n` in fixed-size blocks, in parallel when enabled.
/// Results come back in index order regardless of scheduling.
pub(crate) fn map_blocks<T: Send>(n: usize, block: usize, f: impl Fn(core::ops::Range<usize>) -> T + Sync + Send) -> alloc::vec::Vec<T> {
    let block = block.max(1);
    let starts = (0..n).step_by(block);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let starts: alloc::vec::Vec<usize> = starts.collect();
        starts
            .into_par_iter()
            .map(|s| f(s..(s + block).min(n)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        starts.map(|s| f(s..(s + block).min(n))).collect()
    }
}
