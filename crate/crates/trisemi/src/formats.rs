//! File formats: generator sets and reports as JSON, targets as whitespace
//! matrices, words as `gen exp` lines. Numbers are written with 17
//! significant digits so files round-trip exactly and are byte-stable.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Number, Value};
use trisemi_core::{FieldTag, GeneratorSet, Matrix, Scalar, Word};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("generator file: {0}")]
    Json(String),
    #[error(transparent)]
    Core(#[from] trisemi_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn parse_err(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_str(&fmt_f64(x)).expect("formatted float is valid JSON"))
    } else {
        Value::Null
    }
}

// Generator scalars are decimal strings so no JSON reader can round them.
fn scalar_json(field: FieldTag, s: Scalar) -> Value {
    let d = |x: f64| Value::String(fmt_f64(x));
    match field {
        FieldTag::Real => d(s.re),
        FieldTag::Complex => Value::Array(vec![d(s.re), d(s.im)]),
    }
}

fn real_from_json(v: &Value) -> Option<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    x.is_finite().then_some(x)
}

fn scalar_from_json(field: FieldTag, v: &Value, what: &str) -> Result<Scalar, FormatError> {
    let bad = || FormatError::Json(format!("{} is not a {} scalar", what, field));
    match (field, v) {
        (FieldTag::Complex, Value::Array(p)) if p.len() == 2 => {
            let re = real_from_json(&p[0]).ok_or_else(bad)?;
            let im = real_from_json(&p[1]).ok_or_else(bad)?;
            Ok(Scalar::new(re, im))
        }
        (_, v) => real_from_json(v).map(Scalar::real).ok_or_else(bad),
    }
}

fn scalar_list(field: FieldTag, v: &Value, what: &str) -> Result<Vec<Scalar>, FormatError> {
    v.as_array()
        .ok_or_else(|| FormatError::Json(format!("{} must be an array", what)))?
        .iter()
        .enumerate()
        .map(|(i, x)| scalar_from_json(field, x, &format!("{}[{}]", what, i)))
        .collect()
}

/// Keys: `n`, `field`, `a` (diagonal of `A`), `T` (row `i` holds its `i-1`
/// strictly lower entries), `D` (one diagonal per generator).
pub fn generators_to_json(g: &GeneratorSet) -> String {
    let f = g.field();
    let n = g.dim();
    let mut m = Map::new();
    m.insert("n".into(), Value::from(n as u64));
    m.insert("field".into(), Value::from(f.as_str()));
    m.insert(
        "a".into(),
        Value::Array(g.a().iter().map(|&s| scalar_json(f, s)).collect()),
    );
    let t = g.t();
    m.insert(
        "T".into(),
        Value::Array(
            (0..n)
                .map(|i| Value::Array((0..i).map(|j| scalar_json(f, t[(i, j)])).collect()))
                .collect(),
        ),
    );
    m.insert(
        "D".into(),
        Value::Array(
            g.diagonals()
                .iter()
                .map(|d| Value::Array(d.iter().map(|&s| scalar_json(f, s)).collect()))
                .collect(),
        ),
    );
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    s.push('\n');
    s
}

pub fn generators_from_json(text: &str) -> Result<GeneratorSet, FormatError> {
    let v: Value = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
    let get = |k: &str| {
        v.get(k)
            .ok_or_else(|| FormatError::Json(format!("missing key `{}`", k)))
    };
    let n = get("n")?
        .as_u64()
        .ok_or_else(|| FormatError::Json("`n` must be a positive integer".into()))? as usize;
    let field_name = get("field")?
        .as_str()
        .ok_or_else(|| FormatError::Json("`field` must be a string".into()))?;
    let field = FieldTag::parse(field_name)
        .ok_or_else(|| FormatError::Json(format!("unknown field `{}`", field_name)))?;
    let a = scalar_list(field, get("a")?, "a")?;
    if a.len() != n {
        return Err(FormatError::Json(format!("`a` has {} entries, expected {}", a.len(), n)));
    }
    let rows = get("T")?
        .as_array()
        .ok_or_else(|| FormatError::Json("`T` must be an array of rows".into()))?;
    if rows.len() != n {
        return Err(FormatError::Json(format!("`T` has {} rows, expected {}", rows.len(), n)));
    }
    let mut t = Matrix::zeros(n, field);
    for (i, row) in rows.iter().enumerate() {
        let vals = scalar_list(field, row, &format!("T[{}]", i))?;
        if vals.len() != i {
            return Err(FormatError::Json(format!(
                "`T` row {} has {} entries, expected {}",
                i + 1,
                vals.len(),
                i
            )));
        }
        for (j, s) in vals.into_iter().enumerate() {
            t[(i, j)] = s;
        }
    }
    let d = get("D")?
        .as_array()
        .ok_or_else(|| FormatError::Json("`D` must be an array of diagonals".into()))?
        .iter()
        .enumerate()
        .map(|(k, x)| scalar_list(field, x, &format!("D[{}]", k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GeneratorSet::new(field, a, t, d)?)
}

/// Header `matrix n=<d> field=<real|complex>`, then `n` rows; complex
/// entries are `re,im`.
pub fn matrix_to_text(m: &Matrix) -> String {
    let n = m.dim();
    let mut s = format!("matrix n={} field={}\n", n, m.field());
    for i in 0..n {
        let row: Vec<String> = (0..n)
            .map(|j| {
                let x = m[(i, j)];
                match m.field() {
                    FieldTag::Real => fmt_f64(x.re),
                    FieldTag::Complex => format!("{},{}", fmt_f64(x.re), fmt_f64(x.im)),
                }
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, FormatError> {
    let x: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("`{}` is not a number", tok)))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(parse_err(line, format!("`{}` is not finite", tok)))
    }
}

pub fn matrix_from_text(text: &str) -> Result<Matrix, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty matrix file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let (n, field) = match toks.as_slice() {
        ["matrix", n, f] => {
            let n: usize = n
                .strip_prefix("n=")
                .and_then(|x| x.parse().ok())
                .filter(|&x| x >= 1)
                .ok_or_else(|| parse_err(hl, format!("bad dimension `{}`", n)))?;
            let field = f
                .strip_prefix("field=")
                .and_then(FieldTag::parse)
                .ok_or_else(|| parse_err(hl, format!("bad field `{}`", f)))?;
            (n, field)
        }
        _ => return Err(parse_err(hl, "expected `matrix n=<dim> field=<real|complex>`")),
    };
    let mut m = Matrix::zeros(n, field);
    for i in 0..n {
        let (ln, row) = lines
            .next()
            .ok_or_else(|| parse_err(hl + i + 1, format!("expected {} rows", n)))?;
        let toks: Vec<&str> = row.split_whitespace().collect();
        if toks.len() != n {
            return Err(parse_err(ln, format!("expected {} entries, found {}", n, toks.len())));
        }
        for (j, tok) in toks.iter().enumerate() {
            m[(i, j)] = match (field, tok.split_once(',')) {
                (FieldTag::Complex, Some((re, im))) => {
                    Scalar::new(parse_f64(re, ln)?, parse_f64(im, ln)?)
                }
                (FieldTag::Real, Some(_)) => {
                    return Err(parse_err(ln, format!("complex entry `{}` in a real matrix", tok)))
                }
                (_, None) => Scalar::real(parse_f64(tok, ln)?),
            };
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content after the last row"));
    }
    Ok(m)
}

pub fn word_to_text(w: &Word) -> String {
    let mut s = String::new();
    for &(g, e) in w.factors() {
        s.push_str(&format!("{} {}\n", g, e));
    }
    s
}

pub fn word_from_text(text: &str) -> Result<Word, FormatError> {
    let mut factors = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        let [g, e] = toks.as_slice() else {
            return Err(parse_err(i + 1, "expected `gen exp`"));
        };
        let g: usize = g
            .parse()
            .map_err(|_| parse_err(i + 1, format!("bad generator id `{}`", g)))?;
        let e: u64 = e
            .parse()
            .ok()
            .filter(|&e| e > 0)
            .ok_or_else(|| parse_err(i + 1, format!("bad exponent `{}`", e)))?;
        factors.push((g, e));
    }
    Ok(Word::from_factors(factors))
}

/// Everything a report file holds besides what is in the core report.
pub struct ReportMeta<'a> {
    pub target_path: &'a str,
    pub word_file: &'a str,
    pub eps: f64,
    pub mode: &'a str,
}

pub fn report_to_json(r: &trisemi_core::ApproxReport, meta: &ReportMeta) -> String {
    let mut stats = Map::new();
    stats.insert("nodes".into(), Value::from(r.stats.nodes));
    stats.insert("peak_solve".into(), Value::from(r.stats.peak_solve));
    stats.insert("retries".into(), Value::from(r.stats.retries));
    stats.insert("letters".into(), Value::from(r.stats.letters));
    stats.insert("bound".into(), r.stats.bound.map_or(Value::Null, num));
    stats.insert("mode".into(), Value::from(meta.mode));
    let mut m = Map::new();
    m.insert("target_path".into(), Value::from(meta.target_path));
    m.insert("word_file".into(), Value::from(meta.word_file));
    m.insert("eps".into(), num(meta.eps));
    m.insert("converged".into(), Value::from(r.converged));
    m.insert("achieved_error".into(), num(r.achieved_error));
    m.insert("word_length".into(), Value::from(r.stats.word_length));
    m.insert("stats".into(), Value::Object(stats));
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    s.push('\n');
    s
}

/// Report for a search that found nothing at all.
pub fn infeasible_report_json(meta: &ReportMeta, reason: &str) -> String {
    let mut stats = Map::new();
    stats.insert("mode".into(), Value::from(meta.mode));
    stats.insert("status".into(), Value::from(reason));
    let mut m = Map::new();
    m.insert("target_path".into(), Value::from(meta.target_path));
    m.insert("eps".into(), num(meta.eps));
    m.insert("converged".into(), Value::from(false));
    m.insert("achieved_error".into(), Value::Null);
    m.insert("word_length".into(), Value::from(0u64));
    m.insert("stats".into(), Value::Object(stats));
    let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("serializable");
    s.push('\n');
    s
}

/// Writes through a temporary file in the same directory and renames it into
/// place, so a failed run never leaves a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FormatError> {
    let io = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use trisemi_core::{build_default_generators, validate_generators};

    #[test]
    fn generators_round_trip() {
        for f in [FieldTag::Real, FieldTag::Complex] {
            for n in 1..=4 {
                let g = build_default_generators(n, f, 0).unwrap();
                let text = generators_to_json(&g);
                let back = generators_from_json(&text).unwrap();
                assert_eq!(back, g);
                assert!(validate_generators(&back).is_empty());
                assert_eq!(generators_to_json(&back), text);
            }
        }
    }

    #[test]
    fn generator_file_shape() {
        let g = build_default_generators(2, FieldTag::Complex, 0).unwrap();
        let v: Value = serde_json::from_str(&generators_to_json(&g)).unwrap();
        assert_eq!(v["D"].as_array().unwrap().len(), 2);
        assert_eq!(v["T"][1].as_array().unwrap().len(), 1);
        assert_eq!(v["a"][0].as_array().unwrap().len(), 2);
        assert!(v["a"][0][0].is_string());
    }

    #[test]
    fn matrices_round_trip() {
        let m = Matrix::from_real_rows(&[&[1.0, 0.0], &[0.1, -1.0 / 3.0]]);
        assert_eq!(matrix_from_text(&matrix_to_text(&m)).unwrap(), m);
        let c = Matrix::diag(FieldTag::Complex, &[Scalar::new(1.0, -2.0), Scalar::new(0.5, 0.25)]);
        assert_eq!(matrix_from_text(&matrix_to_text(&c)).unwrap(), c);
    }

    #[test]
    fn matrix_errors_name_the_line() {
        let e = matrix_from_text("matrix n=2 field=real\n1 0\n1\n").unwrap_err();
        assert!(e.to_string().starts_with("line 3"), "{}", e);
        assert!(matrix_from_text("matrix n=1 field=real\n1,2\n").is_err());
        assert!(matrix_from_text("matrx n=1 field=real\n1\n").is_err());
        let c = matrix_from_text("matrix n=1 field=complex\n1,2\n").unwrap();
        assert_eq!(c[(0, 0)], Scalar::new(1.0, 2.0));
    }

    #[test]
    fn words_round_trip() {
        let w = Word::from_factors(vec![(0, 3), (2, 1), (0, 7)]);
        assert_eq!(word_from_text(&word_to_text(&w)).unwrap(), w);
        assert!(word_from_text("1 0\n").is_err());
        assert!(word_from_text("x 1\n").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
