//! Timing and node-count table for the diagonal and full synthesis
//! workloads. Node counts are deterministic per seed; wall time is printed
//! but never written to files.

use std::time::Instant;

use serde_json::{Map, Value};
use trisemi_core::synth::{SynthConfig, Synthesizer};
use trisemi_core::{build_default_generators, FieldTag};

use crate::workload::{random_diag_target, random_lower_target, rng_for};

pub const DIAG_EPS: f64 = 0.05;

/// Tolerance of the approx workload; looser at `n = 3`, where words get long.
pub fn approx_eps(n: usize) -> f64 {
    if n >= 3 {
        0.5
    } else {
        0.1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub workload: &'static str,
    pub instances: u64,
    pub converged: u64,
    pub nodes: u64,
    /// Largest single diagonal solve over the row.
    pub peak_solve: u64,
    pub budget: u64,
    pub max_word_length: usize,
    pub seconds: f64,
}

impl BenchRow {
    pub fn within_budget(&self) -> bool {
        self.peak_solve <= self.budget
    }
}

pub fn run_bench(seed: u64, budget: u64, trials: u64) -> trisemi_core::Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for n in 1..=3 {
        let g = build_default_generators(n, FieldTag::Real, seed)?;
        for workload in ["diag", "approx"] {
            let start = Instant::now();
            let mut row = BenchRow {
                n,
                workload,
                instances: trials,
                converged: 0,
                nodes: 0,
                peak_solve: 0,
                budget,
                max_word_length: 0,
                seconds: 0.0,
            };
            for i in 0..trials {
                let mut rng = rng_for(seed, i);
                let cfg = SynthConfig {
                    budget,
                    seed: seed.wrapping_add(i),
                    ..SynthConfig::default()
                };
                let mut s = Synthesizer::new(&g, cfg)?;
                let rep = if workload == "diag" {
                    s.diag_closure(&random_diag_target(&mut rng, n, FieldTag::Real), DIAG_EPS)?
                } else {
                    s.approx(&random_lower_target(&mut rng, n, FieldTag::Real), approx_eps(n))?
                };
                row.converged += rep.converged as u64;
                row.nodes += rep.stats.nodes;
                row.peak_solve = row.peak_solve.max(rep.stats.peak_solve);
                row.max_word_length = row.max_word_length.max(rep.stats.word_length);
            }
            row.seconds = start.elapsed().as_secs_f64();
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn table(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:>2} {:<7} {:>9} {:>9} {:>12} {:>11} {:>11} {:>9} {:>9}\n",
        "n", "workload", "instances", "converged", "nodes", "peak_solve", "budget", "max_len", "seconds"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>2} {:<7} {:>9} {:>9} {:>12} {:>11} {:>11} {:>9} {:>9.3}\n",
            r.n, r.workload, r.instances, r.converged, r.nodes, r.peak_solve, r.budget, r.max_word_length, r.seconds
        ));
    }
    s
}

pub fn rows_to_json(seed: u64, rows: &[BenchRow]) -> String {
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("n".into(), Value::from(r.n as u64));
            m.insert("workload".into(), Value::from(r.workload));
            m.insert("instances".into(), Value::from(r.instances));
            m.insert("converged".into(), Value::from(r.converged));
            m.insert("nodes".into(), Value::from(r.nodes));
            m.insert("peak_solve".into(), Value::from(r.peak_solve));
            m.insert("budget".into(), Value::from(r.budget));
            m.insert("max_word_length".into(), Value::from(r.max_word_length as u64));
            Value::Object(m)
        })
        .collect();
    let mut m = Map::new();
    m.insert("seed".into(), Value::from(seed));
    m.insert("rows".into(), Value::Array(rows));
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    s.push('\n');
    s
}
