//! Text serialization of bilinear problems.
//!
//! ```text
//! sarah-vi-problem 1
//! n 2
//! d 3
//! lambda 1.0000000000000000e0
//! ell ...
//! mu ...
//! seed 42            | seed none
//! target_ell ...     | target_ell none
//! spread ...         | spread none
//! component 0
//! matrix
//! <d rows of d values>
//! a <d values>
//! b <d values>
//! component 1
//! ...
//! solution <2d values> | solution none
//! end
//! ```
//!
//! Reals are written with 17 significant digits, so reading back reproduces
//! every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BilinearComponent, FiniteSumProblem, GeneratorSpec, Point, ProblemError, Result};
use crate::linalg::Matrix;
use crate::problems::FiniteSumOperator;

const MAGIC: &str = "sarah-vi-problem";
const VERSION: u32 = 1;

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_values<W: Write>(w: &mut W, label: &str, values: &[f64]) -> std::io::Result<()> {
    if !label.is_empty() {
        write!(w, "{label}")?;
        for v in values {
            write!(w, " {}", fmt_real(*v))?;
        }
    } else {
        let mut first = true;
        for v in values {
            if !first {
                write!(w, " ")?;
            }
            write!(w, "{}", fmt_real(*v))?;
            first = false;
        }
    }
    writeln!(w)
}

pub fn write_problem<W: Write>(problem: &FiniteSumProblem, w: &mut W) -> std::io::Result<()> {
    let spec = problem.spec();
    writeln!(w, "{MAGIC} {VERSION}")?;
    writeln!(w, "n {}", problem.n_components())?;
    writeln!(w, "d {}", problem.d())?;
    writeln!(w, "lambda {}", fmt_real(problem.lambda()))?;
    writeln!(w, "ell {}", fmt_real(problem.ell()))?;
    writeln!(w, "mu {}", fmt_real(problem.mu()))?;
    match spec {
        Some(s) => {
            writeln!(w, "seed {}", s.seed)?;
            writeln!(w, "target_ell {}", fmt_real(s.target_ell))?;
            writeln!(w, "spread {}", fmt_real(s.spread))?;
        }
        None => {
            writeln!(w, "seed none")?;
            writeln!(w, "target_ell none")?;
            writeln!(w, "spread none")?;
        }
    }
    for (i, c) in problem.components().iter().enumerate() {
        writeln!(w, "component {i}")?;
        writeln!(w, "matrix")?;
        for r in 0..c.d() {
            write_values(w, "", c.matrix().row(r))?;
        }
        write_values(w, "a", c.shift_x())?;
        write_values(w, "b", c.shift_y())?;
    }
    match problem.exact_solution() {
        Some(z) => write_values(w, "solution", z)?,
        None => writeln!(w, "solution none")?,
    }
    writeln!(w, "end")
}

pub fn write_problem_file(problem: &FiniteSumProblem, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_problem(problem, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Lines {
    inner: Vec<String>,
    pos: usize,
}

impl Lines {
    fn next(&mut self) -> Result<(usize, &str)> {
        let line = self.pos + 1;
        let text = self.inner.get(self.pos).ok_or(ProblemError::Parse {
            line,
            message: "unexpected end of file".into(),
        })?;
        self.pos += 1;
        Ok((line, text.trim()))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, String)> {
        let (line, text) = self.next()?;
        let mut parts = text.splitn(2, ' ');
        let k = parts.next().unwrap_or("");
        if k != key {
            return Err(err(line, format!("expected `{key}`, found `{k}`")));
        }
        Ok((line, parts.next().unwrap_or("").trim().to_string()))
    }
}

fn err(line: usize, message: String) -> ProblemError {
    ProblemError::Parse { line, message }
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| err(line, format!("cannot parse `{s}` as a number")))
}

fn parse_values(line: usize, s: &str, expected: usize) -> Result<Vec<f64>> {
    let v = s
        .split_whitespace()
        .map(|t| parse_num::<f64>(line, t))
        .collect::<Result<Vec<_>>>()?;
    if v.len() != expected {
        return Err(err(line, format!("expected {expected} values, found {}", v.len())));
    }
    Ok(v)
}

fn optional<T: std::str::FromStr>(line: usize, s: &str) -> Result<Option<T>> {
    if s == "none" {
        Ok(None)
    } else {
        parse_num(line, s).map(Some)
    }
}

pub fn read_problem<R: Read>(r: R) -> Result<FiniteSumProblem> {
    let inner = BufReader::new(r).lines().collect::<std::io::Result<Vec<_>>>()?;
    let mut lines = Lines { inner, pos: 0 };

    let (line, header) = lines.next()?;
    let header = header.to_string();
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| err(line, format!("missing `{MAGIC}` header")))?;
    if parse_num::<u32>(line, version)? != VERSION {
        return Err(err(line, format!("unsupported format version {version}")));
    }
    let (l, s) = lines.keyed("n")?;
    let n: usize = parse_num(l, &s)?;
    let (l, s) = lines.keyed("d")?;
    let d: usize = parse_num(l, &s)?;
    let (l, s) = lines.keyed("lambda")?;
    let lambda: f64 = parse_num(l, &s)?;
    let (l, s) = lines.keyed("ell")?;
    let ell: f64 = parse_num(l, &s)?;
    let (l, s) = lines.keyed("mu")?;
    let mu: f64 = parse_num(l, &s)?;
    let (l, s) = lines.keyed("seed")?;
    let seed: Option<u64> = optional(l, &s)?;
    let (l, s) = lines.keyed("target_ell")?;
    let target_ell: Option<f64> = optional(l, &s)?;
    let (l, s) = lines.keyed("spread")?;
    let spread: Option<f64> = optional(l, &s)?;

    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let (l, s) = lines.keyed("component")?;
        if parse_num::<usize>(l, &s)? != i {
            return Err(err(l, format!("expected component {i}")));
        }
        lines.keyed("matrix")?;
        let mut data = Vec::with_capacity(d * d);
        for _ in 0..d {
            let (l, s) = lines.next()?;
            data.extend(parse_values(l, s, d)?);
        }
        let (l, s) = lines.keyed("a")?;
        let a = parse_values(l, &s, d)?;
        let (l, s) = lines.keyed("b")?;
        let b = parse_values(l, &s, d)?;
        components.push(BilinearComponent::new(
            Matrix::from_row_major(d, d, data)?,
            a,
            b,
            lambda,
        )?);
    }
    let (l, s) = lines.keyed("solution")?;
    let solution = if s == "none" {
        None
    } else {
        Some(Point::new(parse_values(l, &s, 2 * d)?)?)
    };
    lines.keyed("end")?;

    let mut problem = FiniteSumProblem::new(components, ell, mu)?;
    if let Some(z) = solution {
        problem.set_exact_solution(z)?;
    }
    if let (Some(seed), Some(target_ell), Some(spread)) = (seed, target_ell, spread) {
        problem.set_spec(GeneratorSpec {
            n,
            d,
            lambda,
            target_ell,
            seed,
            spread,
        });
    }
    Ok(problem)
}

pub fn read_problem_file(path: &Path) -> Result<FiniteSumProblem> {
    read_problem(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{generate_bilinear, identity_problem};

    #[test]
    fn round_trip_is_exact() {
        let p = generate_bilinear(&GeneratorSpec::new(3, 4, 0.7, 20.0, 99)).unwrap();
        let mut buf = Vec::new();
        write_problem(&p, &mut buf).unwrap();
        let q = read_problem(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.hash(), q.hash());
    }

    #[test]
    fn round_trip_without_provenance() {
        let p = identity_problem(2).unwrap();
        let mut buf = Vec::new();
        write_problem(&p, &mut buf).unwrap();
        let q = read_problem(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "sarah-vi-problem 1\nn 1\nd x\n";
        match read_problem(text.as_bytes()) {
            Err(ProblemError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_problem("bogus 1\n".as_bytes()).is_err());
        assert!(read_problem("sarah-vi-problem 2\n".as_bytes()).is_err());
    }
}
