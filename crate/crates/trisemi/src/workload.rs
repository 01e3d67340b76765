//! Seeded random instances shared by `verify`, `bench` and the acceptance
//! runs. Instance `i` of seed `s` uses its own ChaCha stream, so adding or
//! skipping instances never shifts the others.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use trisemi_core::{FieldTag, GeneratorSet, Matrix, Scalar};

pub fn rng_for(seed: u64, instance: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance);
    rng
}

fn phased(rng: &mut ChaCha8Rng, field: FieldTag, modulus: f64) -> Scalar {
    match field {
        FieldTag::Real => Scalar::real(if rng.gen::<bool>() { -modulus } else { modulus }),
        FieldTag::Complex => Scalar::from_polar(modulus, rng.gen_range(0.0..std::f64::consts::TAU)),
    }
}

/// Entries of modulus at most 3, diagonal moduli in `[0.2, 3]`.
pub fn random_lower_target(rng: &mut ChaCha8Rng, n: usize, field: FieldTag) -> Matrix {
    Matrix::from_fn(n, field, |i, j| {
        if j > i {
            Scalar::ZERO
        } else if i == j {
            let m = rng.gen_range(0.2..=3.0);
            phased(rng, field, m)
        } else {
            match field {
                FieldTag::Real => Scalar::real(rng.gen_range(-3.0..=3.0)),
                FieldTag::Complex => {
                    let m = rng.gen_range(0.0..=3.0);
                    phased(rng, field, m)
                }
            }
        }
    })
}

/// Diagonal moduli in `[0.2, 5]` with random signs or arguments.
pub fn random_diag_target(rng: &mut ChaCha8Rng, n: usize, field: FieldTag) -> Matrix {
    let d: Vec<Scalar> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..=5.0);
            phased(rng, field, m)
        })
        .collect();
    Matrix::diag(field, &d)
}

/// `D0 = diag(2, 3)`, `T21 = 1`, with two diagonal generators that each flip
/// one sign and shrink one coordinate by an irrational factor.
pub fn synthetic_set() -> GeneratorSet {
    let r = Scalar::real;
    GeneratorSet::new(
        FieldTag::Real,
        vec![r(2.0), r(3.0)],
        Matrix::from_real_rows(&[&[0.0, 0.0], &[1.0, 0.0]]),
        vec![
            vec![r(-(-(5f64).sqrt()).exp()), r(1.0)],
            vec![r(1.0), r(-(-(7f64).sqrt()).exp())],
        ],
    )
    .expect("synthetic set is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_are_independent_and_reproducible() {
        let a = random_lower_target(&mut rng_for(3, 5), 3, FieldTag::Real);
        let b = random_lower_target(&mut rng_for(3, 5), 3, FieldTag::Real);
        let c = random_lower_target(&mut rng_for(3, 6), 3, FieldTag::Real);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn targets_respect_their_ranges() {
        for i in 0..200 {
            for f in [FieldTag::Real, FieldTag::Complex] {
                let t = random_lower_target(&mut rng_for(1, i), 3, f);
                assert!(t.is_lower_triangular());
                for k in 0..3 {
                    assert!((0.2..=3.0 + 1e-12).contains(&t[(k, k)].abs()));
                }
                let d = random_diag_target(&mut rng_for(1, i), 2, f);
                assert!(d.is_diagonal());
                assert!(d.diagonal().iter().all(|x| (0.2..=5.0 + 1e-12).contains(&x.abs())));
            }
        }
    }

    #[test]
    fn synthetic_set_validates() {
        assert!(trisemi_core::validate_generators(&synthetic_set()).is_empty());
    }
}
