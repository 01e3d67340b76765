//! Property suites run by `trisemi verify`. Each suite draws its instances
//! from the seeded workload streams and counts passes per property; a suite
//! never stops at the first failure.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};
use trisemi_core::ordering::{delta_chain, elimination_path, first_class_violation};
use trisemi_core::synth::run_cascade;
use trisemi_core::diagengine::DiagSolveConfig;
use trisemi_core::{
    build_default_generators, closed_form_akrs, delta_compare, delta_successor, eval_word,
    factor_target, lambda_bound, mat_mul, sigma_reduce, tri_class_member, FieldTag, IndexPair,
    Matrix, Scalar, TriClassTag, Word,
};

use crate::workload::{random_lower_target, rng_for, synthetic_set};

pub const SUITES: [&str; 7] = ["order", "lemma1", "lemma2", "triclass", "sigma", "factor", "eliminate"];

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyCount {
    pub suite: &'static str,
    pub property: &'static str,
    pub passed: u64,
    pub total: u64,
    /// First failure, for the log.
    pub first_failure: Option<String>,
}

impl PropertyCount {
    fn new(suite: &'static str, property: &'static str) -> Self {
        PropertyCount {
            suite,
            property,
            passed: 0,
            total: 0,
            first_failure: None,
        }
    }

    fn record(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.first_failure.is_none() {
            self.first_failure = Some(detail());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

impl fmt::Display for PropertyCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<32} {:>7}/{:<7} {}",
            self.suite,
            self.property,
            self.passed,
            self.total,
            if self.ok() { "pass" } else { "FAIL" }
        )?;
        if let Some(d) = &self.first_failure {
            write!(f, "  first failure: {}", d)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    pub n: usize,
    pub trials: u64,
    pub seed: u64,
}

pub fn run_suite(name: &str, cfg: &VerifyConfig) -> Option<Vec<PropertyCount>> {
    Some(match name {
        "order" => order(cfg.n),
        "lemma1" => lemma1(cfg),
        "lemma2" => lemma2(cfg),
        "triclass" => triclass(cfg),
        "sigma" => sigma(cfg),
        "factor" => factor(cfg),
        "eliminate" => eliminate(cfg),
        "all" => SUITES
            .iter()
            .flat_map(|s| run_suite(s, cfg).expect("known suite"))
            .collect(),
        _ => return None,
    })
}

pub fn counts_to_json(cfg: &VerifyConfig, suite: &str, counts: &[PropertyCount]) -> String {
    let props: Vec<Value> = counts
        .iter()
        .map(|c| {
            let mut m = Map::new();
            m.insert("suite".into(), Value::from(c.suite));
            m.insert("property".into(), Value::from(c.property));
            m.insert("passed".into(), Value::from(c.passed));
            m.insert("total".into(), Value::from(c.total));
            m.insert(
                "first_failure".into(),
                c.first_failure.clone().map_or(Value::Null, Value::from),
            );
            Value::Object(m)
        })
        .collect();
    let mut m = Map::new();
    m.insert("suite".into(), Value::from(suite));
    m.insert("n".into(), Value::from(cfg.n as u64));
    m.insert("trials".into(), Value::from(cfg.trials));
    m.insert("seed".into(), Value::from(cfg.seed));
    m.insert("passed".into(), Value::from(counts.iter().all(PropertyCount::ok)));
    m.insert("properties".into(), Value::Array(props));
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    s.push('\n');
    s
}

// Distinct streams per suite so suites do not share instances.
const STREAM_LEMMA1: u64 = 1 << 40;
const STREAM_LEMMA2: u64 = 2 << 40;
const STREAM_TRICLASS: u64 = 3 << 40;
const STREAM_SIGMA: u64 = 4 << 40;
const STREAM_FACTOR: u64 = 5 << 40;
const STREAM_ELIM: u64 = 6 << 40;

fn field_for(trial: u64) -> FieldTag {
    if trial % 2 == 0 {
        FieldTag::Real
    } else {
        FieldTag::Complex
    }
}

fn phased(rng: &mut ChaCha8Rng, field: FieldTag, m: f64) -> Scalar {
    match field {
        FieldTag::Real => Scalar::real(if rng.gen::<bool>() { -m } else { m }),
        FieldTag::Complex => Scalar::from_polar(m, rng.gen_range(0.0..std::f64::consts::TAU)),
    }
}

/// Diagonal with moduli increasing by factors in `[1.1, 2]`.
pub fn separated_diag(rng: &mut ChaCha8Rng, n: usize, field: FieldTag) -> Vec<Scalar> {
    let mut m = rng.gen_range(0.3..1.0);
    (0..n)
        .map(|_| {
            m *= rng.gen_range(1.1..2.0);
            phased(rng, field, m)
        })
        .collect()
}

fn random_entry(rng: &mut ChaCha8Rng, field: FieldTag) -> Scalar {
    match field {
        FieldTag::Real => Scalar::real(rng.gen_range(-1.0..1.0)),
        FieldTag::Complex => Scalar::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
    }
}

/// Random matrix vanishing at every position before `anchor`, with `diag`
/// on the diagonal at positions from `anchor` on.
pub fn random_in_class(
    rng: &mut ChaCha8Rng,
    n: usize,
    field: FieldTag,
    anchor: IndexPair,
    diag: Option<&[Scalar]>,
) -> Matrix {
    let mut t = Matrix::zeros(n, field);
    for p in delta_chain(n) {
        if delta_compare(p, anchor, n).unwrap() == Ordering::Less {
            continue;
        }
        t[(p.r - 1, p.s - 1)] = match diag {
            Some(d) if p.r == p.s => d[p.r - 1],
            _ => random_entry(rng, field),
        };
    }
    if let Some(d) = diag {
        for i in 0..n {
            t[(i, i)] = d[i];
        }
    }
    t
}

fn rel_close(a: &Matrix, b: &Matrix, rel: f64) -> bool {
    let scale = a.sup_norm().max(b.sup_norm()).max(1e-300);
    a.distance(b).is_some_and(|d| d <= rel * scale)
}

/// The elimination order built directly from its definition: each
/// subdiagonal top to bottom, nearest subdiagonal first.
pub fn induction_path(n: usize) -> Vec<IndexPair> {
    (1..n)
        .flat_map(|off| (off + 1..=n).map(move |r| IndexPair::new(r, r - off)))
        .collect()
}

pub fn order(n: usize) -> Vec<PropertyCount> {
    let all: Vec<IndexPair> = (1..=n)
        .flat_map(|r| (1..=r).map(move |s| IndexPair::new(r, s)))
        .collect();
    let mut total = PropertyCount::new("order", "totality+antisymmetry");
    let mut trans = PropertyCount::new("order", "transitivity");
    for &p in &all {
        for &q in &all {
            let pq = delta_compare(p, q, n).unwrap();
            let qp = delta_compare(q, p, n).unwrap();
            total.record(pq == qp.reverse() && (pq == Ordering::Equal) == (p == q), || {
                format!("{} vs {}", p, q)
            });
            if pq == Ordering::Greater {
                continue;
            }
            for &r in &all {
                if delta_compare(q, r, n).unwrap() != Ordering::Greater {
                    trans.record(delta_compare(p, r, n).unwrap() != Ordering::Greater, || {
                        format!("{} <= {} <= {}", p, q, r)
                    });
                }
            }
        }
    }
    let chain: Vec<IndexPair> = delta_chain(n).collect();
    let mut len = PropertyCount::new("order", "chain length n(n+1)/2");
    let increasing = chain
        .windows(2)
        .all(|w| delta_compare(w[0], w[1], n).unwrap() == Ordering::Less);
    len.record(chain.len() == n * (n + 1) / 2 && increasing, || {
        format!("chain of {} for n={}", chain.len(), n)
    });
    let mut path = PropertyCount::new("order", "successor walk = induction path");
    let walk: Vec<IndexPair> = if n >= 2 {
        std::iter::successors(Some(IndexPair::new(2, 1)), |&p| delta_successor(p, n)).collect()
    } else {
        Vec::new()
    };
    let expected = induction_path(n);
    path.record(
        walk == expected && elimination_path(n).eq(expected.iter().copied()),
        || format!("walk {:?}", walk),
    );
    vec![total, trans, len, path]
}

pub fn lemma1(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let mut hand = PropertyCount::new("lemma1", "hand instance lambda=2");
    let a = Matrix::from_real_rows(&[&[2.0, 0.0], &[1.0, 3.0]]);
    let l = lambda_bound(&a);
    hand.record(matches!(l, Ok(x) if (x - 2.0).abs() < 1e-15), || format!("{:?}", l));
    let mut bound = PropertyCount::new("lemma1", "|A^k|_ij <= lambda|a_i|^k");
    for trial in 0..cfg.trials {
        let mut rng = rng_for(cfg.seed, STREAM_LEMMA1 + trial);
        let f = field_for(trial);
        let d = separated_diag(&mut rng, cfg.n, f);
        let mut a = random_lower_target(&mut rng, cfg.n, f);
        for i in 0..cfg.n {
            a[(i, i)] = d[i];
        }
        bound.record(growth_holds(&a, 40), || format!("trial {}: {:?}", trial, a));
    }
    vec![hand, bound]
}

/// `|A^k|_ij <= lambda |a_i|^k` for `k = 1..=kmax`, slack `-1e-12` relative.
pub fn growth_holds(a: &Matrix, kmax: i32) -> bool {
    let n = a.dim();
    let Ok(lambda) = lambda_bound(a) else {
        return false;
    };
    let mut p = a.clone();
    for k in 1..=kmax {
        for i in 0..n {
            let cap = lambda * a[(i, i)].abs().powi(k);
            for j in 0..=i {
                if (cap - p[(i, j)].abs()) / cap.max(1e-300) < -1e-12 {
                    return false;
                }
            }
        }
        p = mat_mul(&p, a).unwrap();
    }
    true
}

pub fn lemma2(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let mut c = PropertyCount::new("lemma2", "closed form = direct power");
    let path = induction_path(cfg.n);
    for trial in 0..cfg.trials {
        if path.is_empty() {
            break;
        }
        let mut rng = rng_for(cfg.seed, STREAM_LEMMA2 + trial);
        let f = field_for(trial);
        let d = separated_diag(&mut rng, cfg.n, f);
        let anchor = path[rng.gen_range(0..path.len())];
        let k = rng.gen_range(1..=30u64);
        let (ok, detail) = closed_form_check(&mut rng, &d, anchor, k);
        c.record(ok, || format!("trial {}: {}", trial, detail));
    }
    vec![c]
}

/// Draws `T` in the class of `anchor`, compares the closed form against
/// repeated multiplication; relative tolerance `1e-9`.
pub fn closed_form_check(rng: &mut ChaCha8Rng, d: &[Scalar], anchor: IndexPair, k: u64) -> (bool, String) {
    let n = d.len();
    let f = if d.iter().all(|x| x.is_real()) { FieldTag::Real } else { FieldTag::Complex };
    let t = random_in_class(rng, n, f, anchor, None);
    let mut a = t.clone();
    for i in 0..n {
        a[(i, i)] = d[i];
    }
    let mut p = a.clone();
    for _ in 1..k {
        p = mat_mul(&p, &a).unwrap();
    }
    let direct = p[(anchor.r - 1, anchor.s - 1)];
    match closed_form_akrs(d, &t, anchor, k) {
        Ok(cf) => {
            let err = (cf - direct).abs() / direct.abs().max(1e-300);
            (err <= 1e-9, format!("anchor {} k={} rel err {:e}", anchor, k, err))
        }
        Err(e) => (false, e.to_string()),
    }
}

pub fn triclass(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let n = cfg.n;
    let mut closed = PropertyCount::new("triclass", "closed under products");
    let mut nested = PropertyCount::new("triclass", "nested along the order");
    let mut detect = PropertyCount::new("triclass", "violations detected");
    for (ai, anchor) in delta_chain(n).enumerate() {
        let below: Vec<IndexPair> = delta_chain(n).take(ai).collect();
        for trial in 0..cfg.trials {
            let mut rng = rng_for(cfg.seed, STREAM_TRICLASS + ((ai as u64) << 24) + trial);
            let f = field_for(trial);
            let u = random_in_class(&mut rng, n, f, anchor, None);
            let v = random_in_class(&mut rng, n, f, anchor, None);
            let uv = mat_mul(&u, &v).unwrap();
            let tag = TriClassTag::new(anchor, n);
            closed.record(
                tri_class_member(&u, tag).unwrap() && tri_class_member(&uv, tag).unwrap(),
                || format!("anchor {} trial {}: violation at {:?}", anchor, trial, first_class_violation(&uv, anchor)),
            );
            if !below.is_empty() {
                let lo = below[rng.gen_range(0..below.len())];
                nested.record(tri_class_member(&uv, TriClassTag::new(lo, n)).unwrap(), || {
                    format!("anchor {} not inside class of {}", anchor, lo)
                });
                let at = below[rng.gen_range(0..below.len())];
                let mut bad = u.clone();
                bad[(at.r - 1, at.s - 1)] = Scalar::real(1e-13);
                detect.record(first_class_violation(&bad, anchor) == Some(at), || {
                    format!("entry {} below anchor {} missed", at, anchor)
                });
            }
        }
    }
    vec![closed, nested, detect]
}

pub fn random_word(rng: &mut ChaCha8Rng, gens: usize) -> Word {
    let len = rng.gen_range(1..=12);
    Word::from_factors(
        (0..len)
            .map(|_| (rng.gen_range(0..gens), rng.gen_range(1..=6u64)))
            .collect(),
    )
}

pub fn sigma(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let n = cfg.n;
    let mut block = PropertyCount::new("sigma", "block of eval = eval of block");
    let mut reduced = PropertyCount::new("sigma", "reduced set evaluates alike");
    let mut hom = PropertyCount::new("sigma", "products map to products");
    let sets = [
        build_default_generators(n, FieldTag::Real, 0).unwrap(),
        build_default_generators(n, FieldTag::Complex, 0).unwrap(),
    ];
    for trial in 0..cfg.trials {
        let mut rng = rng_for(cfg.seed, STREAM_SIGMA + trial);
        let g = &sets[(trial % 2) as usize];
        let m = rng.gen_range(1..=n);
        let w1 = random_word(&mut rng, g.len());
        let w2 = random_word(&mut rng, g.len());
        let full = eval_word(g, &w1, n).unwrap();
        let small = eval_word(g, &w1, m).unwrap();
        block.record(rel_close(&small, &full.block(m), 1e-12), || format!("trial {} m={}", trial, m));
        let r = sigma_reduce(g, m).unwrap();
        reduced.record(eval_word(&r, &w1, m).unwrap() == small, || format!("trial {} m={}", trial, m));
        let both = eval_word(g, &Word::concat(&[&w1, &w2]), m).unwrap();
        let split = mat_mul(&small, &eval_word(g, &w2, m).unwrap()).unwrap();
        hom.record(rel_close(&both, &split, 1e-12), || format!("trial {} m={}", trial, m));
    }
    vec![block, reduced, hom]
}

/// Reassembles `diag(R, x) * A * diag(S, 1)`.
pub fn reassemble(r: &Matrix, x: Scalar, a: &Matrix, s: &Matrix) -> Matrix {
    let n = a.dim();
    let f = a.field();
    let mut left = Matrix::zeros(n, f);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            left[(i, j)] = r[(i, j)];
        }
    }
    left[(n - 1, n - 1)] = x;
    let mut right = s.diagonal();
    right.push(Scalar::ONE);
    mat_mul(&mat_mul(&left, a).unwrap(), &Matrix::diag(f, &right)).unwrap()
}

pub fn factor(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let mut hand = PropertyCount::new("factor", "hand instance x=3 S=2 R=1");
    let a = Matrix::from_real_rows(&[&[2.0, 0.0], &[1.0, 3.0]]);
    let b = Matrix::from_real_rows(&[&[4.0, 0.0], &[6.0, 9.0]]);
    let ok = factor_target(&b, &a).is_ok_and(|p| {
        p.x == Scalar::real(3.0)
            && p.s == Matrix::diag(FieldTag::Real, &[Scalar::real(2.0)])
            && p.r == Matrix::from_real_rows(&[&[1.0]])
    });
    hand.record(ok, || "hand instance".into());
    let mut c = PropertyCount::new("factor", "reassembly residual <= 1e-9");
    if cfg.n >= 2 {
        let sets = [
            build_default_generators(cfg.n, FieldTag::Real, 0).unwrap(),
            build_default_generators(cfg.n, FieldTag::Complex, 0).unwrap(),
        ];
        for trial in 0..cfg.trials {
            let mut rng = rng_for(cfg.seed, STREAM_FACTOR + trial);
            let g = &sets[(trial % 2) as usize];
            let b = random_lower_target(&mut rng, cfg.n, g.field());
            let (ok, detail) = match factor_target(&b, g.gen0()) {
                Ok(p) => {
                    let back = reassemble(&p.r, p.x, g.gen0(), &p.s);
                    let rel = back.distance(&b).unwrap() / b.sup_norm();
                    (rel <= 1e-9, format!("residual {:e}", rel))
                }
                Err(e) => (false, e.to_string()),
            };
            c.record(ok, || format!("trial {}: {}", trial, detail));
        }
    }
    vec![hand, c]
}

/// `B + eta(B)`: `B` with the anchor entry `B_rr T_rs / (a_r - a_s)` added.
pub fn ideal_eta(b: &[Scalar], d0: &[Scalar], t_rs: Scalar, anchor: IndexPair) -> Matrix {
    let (r, s) = (anchor.r - 1, anchor.s - 1);
    let f = if b.iter().chain(d0).all(|x| x.is_real()) && t_rs.is_real() {
        FieldTag::Real
    } else {
        FieldTag::Complex
    };
    let mut m = Matrix::diag(f, b);
    m[(r, s)] = b[r] * t_rs / (d0[r] - d0[s]);
    m
}

/// `M1 M2` for the ideal eta values of `B1 = B2 D0` and `B2`.
pub fn ideal_pair_product(d0: &[Scalar], t_rs: Scalar, anchor: IndexPair) -> Matrix {
    let mut b2 = vec![Scalar::ONE; d0.len()];
    b2[anchor.r - 1] = -Scalar::ONE;
    let b1: Vec<Scalar> = b2.iter().zip(d0).map(|(&x, &a)| x * a).collect();
    mat_mul(&ideal_eta(&b1, d0, t_rs, anchor), &ideal_eta(&b2, d0, t_rs, anchor)).unwrap()
}

pub fn eliminate(cfg: &VerifyConfig) -> Vec<PropertyCount> {
    let mut exact = PropertyCount::new("eliminate", "ideal pair = D0 (synthetic)");
    let g = synthetic_set();
    let t21 = g.t()[(1, 0)];
    let anchor = IndexPair::new(2, 1);
    let prod = ideal_pair_product(g.a(), t21, anchor);
    exact.record(prod == Matrix::diag(FieldTag::Real, g.a()), || format!("{:?}", prod));

    let mut random = PropertyCount::new("eliminate", "ideal pair cancels anchor");
    let path = induction_path(cfg.n);
    for trial in 0..cfg.trials {
        if path.is_empty() {
            break;
        }
        let mut rng = rng_for(cfg.seed, STREAM_ELIM + trial);
        let f = field_for(trial);
        let d0 = separated_diag(&mut rng, cfg.n, f);
        let anchor = path[rng.gen_range(0..path.len())];
        let t = random_entry(&mut rng, f);
        let p = ideal_pair_product(&d0, t, anchor);
        let want = Matrix::diag(p.field(), &d0);
        random.record(rel_close(&p, &want, 1e-12), || format!("trial {} anchor {}", trial, anchor));
    }

    let mut run = PropertyCount::new("eliminate", "finite cascade delta=1e-2");
    let delta = 1e-2;
    let outcome = run_cascade(&g, delta, &DiagSolveConfig::heuristic(delta, 10_000_000));
    let (ok, detail) = match outcome {
        Ok(c) => {
            let v = eval_word(&g, c.word(), 2).unwrap();
            let dev = v.distance(&Matrix::diag(FieldTag::Real, g.a())).unwrap();
            (v[(1, 0)].abs() <= 10.0 * delta && dev <= 10.0 * delta, format!("deviation {:e}", dev))
        }
        Err(e) => (false, e.to_string()),
    };
    run.record(ok, || detail);
    vec![exact, random, run]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, trials: u64) -> VerifyConfig {
        VerifyConfig { n, trials, seed: 7 }
    }

    #[test]
    fn order_suite_counts() {
        let c = order(10);
        assert!(c.iter().all(PropertyCount::ok));
        assert_eq!(c[0].total, 55 * 55);
        assert_eq!(induction_path(3), vec![IndexPair::new(2, 1), IndexPair::new(3, 2), IndexPair::new(3, 1)]);
    }

    #[test]
    fn cheap_suites_pass() {
        for n in 1..=4 {
            for s in ["order", "lemma1", "lemma2", "triclass", "sigma", "factor"] {
                for c in run_suite(s, &cfg(n, 40)).unwrap() {
                    assert!(c.ok(), "n={} {}", n, c);
                }
            }
        }
    }

    #[test]
    fn ideal_pair_synthetic_values() {
        let g = synthetic_set();
        let a = IndexPair::new(2, 1);
        let b1 = [Scalar::real(2.0), Scalar::real(-3.0)];
        assert_eq!(
            ideal_eta(&b1, g.a(), Scalar::ONE, a),
            Matrix::from_real_rows(&[&[2.0, 0.0], &[-3.0, -3.0]])
        );
        let b2 = [Scalar::ONE, -Scalar::ONE];
        assert_eq!(
            ideal_eta(&b2, g.a(), Scalar::ONE, a),
            Matrix::from_real_rows(&[&[1.0, 0.0], &[-1.0, -1.0]])
        );
    }

    #[test]
    fn failures_are_counted_not_hidden() {
        let mut c = PropertyCount::new("x", "y");
        c.record(true, String::new);
        c.record(false, || "first".into());
        c.record(false, || "second".into());
        assert_eq!((c.passed, c.total), (1, 3));
        assert_eq!(c.first_failure.as_deref(), Some("first"));
        assert!(!c.ok());
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", &cfg(2, 1)).is_none());
    }
}
