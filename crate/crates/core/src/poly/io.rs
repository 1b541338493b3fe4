//! Line-oriented text format for seeds.
//!
//! ```text
//! N=16
//! repr=real
//! 2.5000000000000000e-1 0:4:0
//! ```
//!
//! Each term line is a coefficient followed by `site:xe:ye` factors.
//! Complex coefficients are written `re,im`. Coefficients use 17
//! significant digits, so a write/read cycle is exact.

use std::fmt::Write as _;

use num_complex::Complex64;

use super::monomial::Monomial;
use super::seed::{ComplexSeed, RealSeed, Seed};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum AnySeed {
    Real(RealSeed),
    Complex(ComplexSeed),
}

fn header(out: &mut String, n: usize, repr: &str) {
    let _ = writeln!(out, "N={n}");
    let _ = writeln!(out, "repr={repr}");
}

fn write_monomial(out: &mut String, m: Monomial) {
    for f in m.factors() {
        let _ = write!(out, " {}:{}:{}", f.site, f.x_exp, f.y_exp);
    }
    out.push('\n');
}

pub fn write_real(f: &RealSeed) -> String {
    let mut out = String::new();
    header(&mut out, f.n(), "real");
    for &(m, c) in f.terms() {
        let _ = write!(out, "{c:.16e}");
        write_monomial(&mut out, m);
    }
    out
}

pub fn write_complex(f: &ComplexSeed) -> String {
    let mut out = String::new();
    header(&mut out, f.n(), "complex");
    for &(m, c) in f.terms() {
        let _ = write!(out, "{:.16e},{:.16e}", c.re, c.im);
        write_monomial(&mut out, m);
    }
    out
}

pub fn write_seed(f: &AnySeed) -> String {
    match f {
        AnySeed::Real(s) => write_real(s),
        AnySeed::Complex(s) => write_complex(s),
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|e| parse_err(line, format!("bad number {s:?}: {e}")))
}

pub fn read_seed(text: &str) -> Result<AnySeed> {
    let mut n: Option<usize> = None;
    let mut complex: Option<bool> = None;
    let mut real_terms = Vec::new();
    let mut complex_terms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(v) = line.strip_prefix("N=") {
            n = Some(v.parse().map_err(|_| parse_err(lineno, format!("bad N {v:?}")))?);
            continue;
        }
        if let Some(v) = line.strip_prefix("repr=") {
            complex = Some(match v {
                "real" => false,
                "complex" => true,
                _ => return Err(parse_err(lineno, format!("unknown repr {v:?}"))),
            });
            continue;
        }
        let Some(is_complex) = complex else {
            return Err(parse_err(lineno, "term before repr header"));
        };
        let Some(size) = n else {
            return Err(parse_err(lineno, "term before N header"));
        };
        let mut fields = line.split_whitespace();
        let coeff = fields.next().unwrap();
        let mut factors = Vec::new();
        for fld in fields {
            let parts: Vec<&str> = fld.split(':').collect();
            if parts.len() != 3 {
                return Err(parse_err(lineno, format!("bad factor {fld:?}")));
            }
            let site: usize = parts[0]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad site in {fld:?}")))?;
            if site >= size {
                return Err(parse_err(lineno, format!("site {site} outside N={size}")));
            }
            let xe: u32 = parts[1]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad exponent in {fld:?}")))?;
            let ye: u32 = parts[2]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad exponent in {fld:?}")))?;
            if xe + ye == 0 {
                return Err(parse_err(lineno, format!("empty factor {fld:?}")));
            }
            factors.push((site, xe, ye));
        }
        let m = Monomial::from_factors(&factors).map_err(|e| parse_err(lineno, e.to_string()))?;
        if is_complex {
            let (re, im) = coeff
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, format!("complex coefficient {coeff:?} needs re,im")))?;
            complex_terms.push((m, Complex64::new(parse_f64(re, lineno)?, parse_f64(im, lineno)?)));
        } else {
            real_terms.push((m, parse_f64(coeff, lineno)?));
        }
    }
    let n = n.ok_or_else(|| parse_err(0, "missing N header"))?;
    if !(4..=127).contains(&n) {
        return Err(Error::LatticeSize(n));
    }
    match complex {
        Some(true) => Ok(AnySeed::Complex(Seed::from_terms(n, complex_terms))),
        Some(false) => Ok(AnySeed::Real(Seed::from_terms(n, real_terms))),
        None => Err(parse_err(0, "missing repr header")),
    }
}

pub fn read_real(text: &str) -> Result<RealSeed> {
    match read_seed(text)? {
        AnySeed::Real(s) => Ok(s),
        AnySeed::Complex(_) => Err(Error::Representation("expected a real seed".into())),
    }
}
