//! Turning an exponent vector into a near-diagonal word.
//!
//! `D^m A^{m0}` is useless in floating point once the exponents reach the
//! thousands: single powers over- or underflow long before the product is
//! balanced. Instead the word interleaves chunks of `A` with chunks of the
//! diagonal generators so that the running log-diagonal `x` stays bounded.
//!
//! Chunk `A^c` placed after partial product `P` and before suffix `Q`
//! contributes about `e^{x_i} |(A^c)_ij| e^{F_j - x_j}` to entry `(i,j)` of
//! the word, where `F` is the final log-diagonal. Each `A` chunk is only placed
//! once every such term is below `e^{-gap}` relative to the larger of the two
//! final diagonal entries (and 1), so the off-diagonal part of the whole word
//! is negligible and its diagonal is exactly the diagonal-word value.

use alloc::vec;
use alloc::vec::Vec;

use crate::genset::Word;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayoutConfig {
    /// Required log-suppression of every off-diagonal contribution.
    pub gap: f64,
    /// Bound on `|x_i|` after each `A` chunk.
    pub soft_bound: f64,
    /// Bound on `|x_i|` never to be exceeded by a diagonal chunk.
    pub hard_bound: f64,
    /// Largest log change of a single chunk.
    pub chunk_log: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            gap: 40.0,
            soft_bound: 300.0,
            hard_bound: 650.0,
            chunk_log: 150.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub word: Word,
    /// Every `A` chunk met the gap and bound conditions.
    pub graded: bool,
    /// Largest `|x_i|` reached.
    pub peak: f64,
}

struct State<'a> {
    logs: &'a [Vec<f64>],
    fin: Vec<f64>,
    x: Vec<f64>,
    cfg: LayoutConfig,
}

impl State<'_> {
    fn n(&self) -> usize {
        self.fin.len()
    }

    fn chunk_cap(&self, k: usize) -> u64 {
        let m = self.logs[k].iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if m == 0.0 {
            u64::MAX
        } else {
            ((self.cfg.chunk_log / m) as u64).max(1)
        }
    }

    /// Largest `A` chunk allowed from state `x`, capped at `want`.
    fn a_cap(&self, x: &[f64], want: u64) -> u64 {
        let l0 = &self.logs[0];
        let mut cap = want as f64;
        let n = self.n();
        for i in 0..n {
            for j in 0..i {
                let slope = l0[i].max(l0[j]) - l0[j];
                let reference = self.fin[i].max(self.fin[j]).max(0.0);
                let h0 = x[i] - x[j] + self.fin[j] - reference + self.cfg.gap;
                if slope <= 0.0 {
                    if h0 > 0.0 {
                        return 0;
                    }
                } else {
                    cap = cap.min(-h0 / slope);
                }
            }
            if l0[i] < 0.0 {
                cap = cap.min((x[i] + self.cfg.soft_bound) / -l0[i]);
            } else if l0[i] > 0.0 {
                cap = cap.min((self.cfg.soft_bound - x[i]) / l0[i]);
            }
        }
        if cap < 1.0 {
            0
        } else {
            cap as u64
        }
    }

    /// How far `x` is from admitting an `A` chunk of size `c`: the total of
    /// the least raises making every pair admissible, worked out from the
    /// last coordinate up, plus any excess over the soft bound. Summing pair
    /// violations instead stalls once three coordinates interact.
    fn deficit(&self, x: &[f64], c: u64) -> f64 {
        let l0 = &self.logs[0];
        let c = c as f64;
        let n = self.n();
        let mut raised = x.to_vec();
        for j in (0..n).rev() {
            for i in j + 1..n {
                let reference = self.fin[i].max(self.fin[j]).max(0.0);
                let need = c * (l0[i].max(l0[j]) - l0[j]) + self.fin[j] - reference + self.cfg.gap;
                raised[j] = raised[j].max(raised[i] + need);
            }
        }
        let mut d: f64 = raised.iter().zip(x).map(|(r, x)| r - x).sum();
        for i in 0..n {
            d += ((x[i] + c * l0[i]).abs() - self.cfg.soft_bound).max(0.0);
        }
        d
    }

    /// Diagonal chunk of generator `k`, shrunk to respect the hard bound.
    fn d_chunk(&self, k: usize, left: u64) -> u64 {
        let mut s = left.min(self.chunk_cap(k));
        while s > 0 {
            let ok = (0..self.n())
                .all(|i| (self.x[i] + s as f64 * self.logs[k][i]).abs() <= self.cfg.hard_bound);
            if ok {
                break;
            }
            s /= 2;
        }
        s
    }

    fn moved(&self, k: usize, s: u64) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.logs[k])
            .map(|(a, b)| a + s as f64 * b)
            .collect()
    }
}

/// Lays out `prod_alpha C_alpha^{m_alpha}` with generator 0 the only
/// non-diagonal one. `logs[alpha]` is the log-modulus diagonal of generator
/// `alpha`.
pub fn graded_word(logs: &[Vec<f64>], m: &[u64], cfg: LayoutConfig) -> Layout {
    let n = logs.first().map(|l| l.len()).unwrap_or(0);
    let fin: Vec<f64> = (0..n)
        .map(|i| (0..m.len()).map(|k| m[k] as f64 * logs[k][i]).sum())
        .collect();
    let mut st = State {
        logs,
        fin,
        x: vec![0.0; n],
        cfg,
    };
    let mut left = m.to_vec();
    let mut word = Word::new();
    let mut graded = true;
    let mut peak: f64 = 0.0;
    let a_full = st.chunk_cap(0);

    let mut emit = |st: &mut State, word: &mut Word, left: &mut Vec<u64>, k: usize, s: u64| {
        st.x = st.moved(k, s);
        left[k] -= s;
        word.push(k, s);
        peak = st.x.iter().fold(peak, |a, b| a.max(b.abs()));
    };

    while left[0] > 0 {
        let want = left[0].min(a_full);
        let cap = st.a_cap(&st.x, want);
        if cap >= want {
            emit(&mut st, &mut word, &mut left, 0, want);
            continue;
        }
        // Try one diagonal chunk that helps the next A chunk.
        let base_def = st.deficit(&st.x, want);
        let mut best: Option<(u64, f64, usize, u64)> = None;
        for k in 1..m.len() {
            if left[k] == 0 {
                continue;
            }
            // Full chunks can overshoot; smaller ones are tried too.
            let full = st.d_chunk(k, left[k]);
            let mut s = full;
            while s > 0 {
                let y = st.moved(k, s);
                let c = st.a_cap(&y, want);
                let d = st.deficit(&y, want);
                let improves = c > cap || d < base_def - 1e-9;
                let take = improves
                    && match best {
                        None => true,
                        Some((bc, bd, _, _)) => c > bc || (c == bc && d < bd),
                    };
                if take {
                    best = Some((c, d, k, s));
                }
                s /= 4;
            }
        }
        if let Some((_, _, k, s)) = best {
            emit(&mut st, &mut word, &mut left, k, s);
        } else if cap > 0 {
            emit(&mut st, &mut word, &mut left, 0, cap);
        } else {
            graded = false;
            emit(&mut st, &mut word, &mut left, 0, want);
        }
    }

    // Drain the diagonal generators, keeping |x| as small as possible.
    loop {
        let mut best: Option<(f64, usize, u64)> = None;
        for k in 1..m.len() {
            if left[k] == 0 {
                continue;
            }
            let s = st.d_chunk(k, left[k]).max(1).min(left[k]);
            let y = st.moved(k, s);
            let worst = y.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if best.map_or(true, |b| worst < b.0) {
                best = Some((worst, k, s));
            }
        }
        let Some((_, k, s)) = best else { break };
        emit(&mut st, &mut word, &mut left, k, s);
    }
    Layout {
        word,
        graded,
        peak,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genset::{build_default_generators, eval_word};
    use crate::scalar::FieldTag;

    #[test]
    fn large_exponents_stay_finite_and_diagonal() {
        let g = build_default_generators(2, FieldTag::Real, 0).unwrap();
        let logs: Vec<Vec<f64>> = (0..3).map(|k| g.log_moduli(k).unwrap()).collect();
        // m chosen so the final log-diagonal is small.
        let m0 = 20_000u64;
        let m1 = ((m0 as f64 * 3f64.sqrt()) / 5f64.sqrt()).round() as u64;
        let m2 = ((m0 as f64 * 2f64.sqrt()) / 7f64.sqrt()).round() as u64;
        let m = [m0, m1, m2];
        let lay = graded_word(&logs, &m, LayoutConfig::default());
        assert!(lay.graded);
        assert!(lay.peak <= 650.0);
        let counts: Vec<u64> = (0..3)
            .map(|k| lay.word.factors().iter().filter(|f| f.0 == k).map(|f| f.1).sum())
            .collect();
        assert_eq!(counts, m);
        let v = eval_word(&g, &lay.word, 2).unwrap();
        let fin: Vec<f64> = (0..2)
            .map(|i| (0..3).map(|k| m[k] as f64 * logs[k][i]).sum::<f64>())
            .collect();
        for i in 0..2 {
            let want = libm::exp(fin[i]);
            assert!((v[(i, i)].abs() - want).abs() <= 1e-9 * want.max(1.0));
        }
        assert!(v[(1, 0)].abs() < 1e-12, "{:?}", v);
    }

    #[test]
    fn three_coordinates_do_not_stall() {
        // Raising the middle coordinate alone helps one pair and hurts
        // another; the layout must still find a graded order.
        let g = build_default_generators(3, FieldTag::Real, 0).unwrap();
        let logs: Vec<Vec<f64>> = (0..4).map(|k| g.log_moduli(k).unwrap()).collect();
        let lay = graded_word(&logs, &[17453, 14753, 9114, 6845], LayoutConfig::default());
        assert!(lay.graded);
        let v = eval_word(&g, &lay.word, 3).unwrap();
        assert!(v.is_finite());
        for (i, j) in [(1, 0), (2, 0), (2, 1)] {
            let scale = v[(i, i)].abs().max(v[(j, j)].abs()).max(1.0);
            assert!(v[(i, j)].abs() < 1e-12 * scale, "{:?}", v);
        }
    }

    #[test]
    fn pure_diagonal_words() {
        let logs = vec![vec![-1.0, -0.5], vec![2.0, 0.0], vec![0.0, 3.0]];
        let lay = graded_word(&logs, &[0, 3, 4], LayoutConfig::default());
        assert_eq!(lay.word.factors(), &[(1, 3), (2, 4)]);
    }
}
