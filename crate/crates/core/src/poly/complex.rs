//! Change to the complex variables that diagonalize the harmonic part:
//! `x = (xi + i eta)/sqrt(2)`, `y = (i xi + eta)/sqrt(2)`.
//!
//! The map is canonical (`{xi, eta} = 1`), so brackets keep their form and
//! `xi`, `eta` reuse the `q`, `p` slots of the monomial encoding.

use num_complex::Complex64;

use super::monomial::Monomial;
use super::seed::{Accumulator, ComplexSeed, RealSeed};
use crate::error::{Error, Result};

/// Reality tolerance of `from_complex`, relative to the input norm.
pub const REALITY_TOL: f64 = 1e-10;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Coefficients of `(u1 a + u2 b)^e1 (w1 a + w2 b)^e2` indexed by the
/// exponent of `a`; the exponent of `b` is `e1 + e2 - index`.
fn site_expansion(e1: u32, e2: u32, u: (Complex64, Complex64), w: (Complex64, Complex64)) -> Vec<Complex64> {
    let first: Vec<Complex64> = (0..=e1)
        .map(|k| u.0.powu(k) * u.1.powu(e1 - k) * binomial(e1, k))
        .collect();
    let second: Vec<Complex64> = (0..=e2)
        .map(|k| w.0.powu(k) * w.1.powu(e2 - k) * binomial(e2, k))
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); (e1 + e2 + 1) as usize];
    for (i, a) in first.iter().enumerate() {
        for (j, b) in second.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn substitute(
    n: usize,
    terms: impl Iterator<Item = (Monomial, Complex64)>,
    u: (Complex64, Complex64),
    w: (Complex64, Complex64),
) -> Result<ComplexSeed> {
    let mut acc = Accumulator::new();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for (m, c) in terms {
        let m = m.left_aligned(n).0;
        let factors = m.factors();
        let c = c * scale.powi(m.degree() as i32);
        let exps: Vec<Vec<Complex64>> = factors
            .iter()
            .map(|f| site_expansion(f.x_exp, f.y_exp, u, w))
            .collect();
        // Relabelling the slots can change which tied shift aligns best.
        let realign = m.has_tied_alignment(n);
        // Odometer over the per-site exponent of the first slot.
        let mut idx = vec![0usize; factors.len()];
        'outer: loop {
            let mut coef = c;
            let mut fs = Vec::with_capacity(factors.len());
            for (k, f) in factors.iter().enumerate() {
                coef *= exps[k][idx[k]];
                fs.push((f.site, idx[k] as u32, f.x_exp + f.y_exp - idx[k] as u32));
            }
            if coef.norm() != 0.0 {
                let out = Monomial::from_factors(&fs)?;
                acc.add(if realign { out.left_aligned(n).0 } else { out }, coef);
            }
            for k in 0..idx.len() {
                idx[k] += 1;
                if idx[k] < exps[k].len() {
                    continue 'outer;
                }
                idx[k] = 0;
            }
            break;
        }
    }
    Ok(acc.finish(n, 0.0))
}

/// Real `(x, y)` seed to its `(xi, eta)` image.
pub fn to_complex(f: &RealSeed) -> Result<ComplexSeed> {
    let one = Complex64::new(1.0, 0.0);
    // x -> (xi + i eta), y -> (i xi + eta), each over sqrt(2)
    substitute(
        f.n(),
        f.terms().iter().map(|&(m, c)| (m, Complex64::new(c, 0.0))),
        (one, I),
        (I, one),
    )
}

/// Back to `(x, y)`; fails if any coefficient keeps an imaginary part
/// above `REALITY_TOL * ||f||`.
pub fn from_complex(f: &ComplexSeed) -> Result<RealSeed> {
    let one = Complex64::new(1.0, 0.0);
    // xi -> (x - i y), eta -> (-i x + y), each over sqrt(2)
    let g = substitute(f.n(), f.terms().iter().copied(), (one, -I), (-I, one))?;
    let tol = REALITY_TOL * f.norm();
    let worst = g.terms().iter().map(|t| t.1.im.abs()).fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::Representation(format!(
            "imaginary residue {worst:e} exceeds {tol:e}"
        )));
    }
    Ok(g.map_coeffs(|c| c.re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::monomial::Slot;
    use crate::poly::seed::Seed;

    fn mono(f: &[(usize, u32, u32)]) -> Monomial {
        Monomial::from_factors(f).unwrap()
    }

    #[test]
    fn single_variable_images() {
        let n = 6;
        let x0 = Seed::monomial(n, Monomial::var(0, Slot::Q), 1.0);
        let c = to_complex(&x0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c.coeff(mono(&[(0, 1, 0)])) - Complex64::new(r, 0.0)).norm() < 1e-15);
        assert!((c.coeff(mono(&[(0, 0, 1)])) - Complex64::new(0.0, r)).norm() < 1e-15);
    }

    #[test]
    fn harmonic_oscillator_becomes_xi_eta() {
        let n = 6;
        let h = Seed::from_terms(n, [(mono(&[(0, 2, 0)]), 0.5), (mono(&[(0, 0, 2)]), 0.5)]);
        let c = to_complex(&h).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c.coeff(mono(&[(0, 1, 1)])) - I).norm() < 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let n = 7;
        let f = Seed::from_terms(
            n,
            [
                (mono(&[(0, 3, 1), (2, 0, 2)]), 0.8),
                (mono(&[(1, 1, 0), (4, 1, 1)]), -1.7),
                (mono(&[(0, 0, 4)]), 0.05),
            ],
        );
        let back = from_complex(&to_complex(&f).unwrap()).unwrap();
        assert!(back.sub(&f.left_align()).norm() < 1e-12 * f.norm());
    }

    #[test]
    fn images_stay_canonical_on_tied_supports() {
        // Both shifts of an antipodal pair have diameter N/2.
        let n = 8;
        let f = Seed::from_terms(n, [(mono(&[(0, 2, 0), (4, 1, 1)]), 1.0), (mono(&[(0, 1, 0), (4, 0, 2)]), 0.5)]);
        let c = to_complex(&f).unwrap();
        assert!(c.is_left_aligned());
        assert_eq!(c, c.left_align());
        let back = from_complex(&c).unwrap();
        assert!(back.sub(&f.left_align()).norm() < 1e-14);
    }

    #[test]
    fn rejects_non_real_images() {
        let n = 6;
        let g: ComplexSeed = Seed::monomial(n, mono(&[(0, 2, 0)]), Complex64::new(1.0, 0.0));
        assert!(matches!(from_complex(&g), Err(Error::Representation(_))));
    }
}
