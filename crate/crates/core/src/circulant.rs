//! Symmetric circulant matrices stored by the first half of their first row.
//!
//! A symmetric circulant `M` is diagonalized by the discrete Fourier basis;
//! eigenvalue `k` is the cosine transform of the first row. Every spectral
//! function `f(M)` is again symmetric circulant, which is how `A^{1/2}`,
//! `A^{1/4}`, `A^{-1/4}` and `B = ln(A)/4` are produced.

use std::f64::consts::PI;

use crate::chain_model::{ChainParams, PhaseState, MIN_SITES};
use crate::error::{Error, Result};

/// Smallest eigenvalue admitted under `ln` or negative powers.
const EIG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CirculantSymmetric {
    n: usize,
    half_row: Vec<f64>,
}

/// Eigenvalues indexed by Fourier mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub eigs: Vec<f64>,
}

impl CirculantSymmetric {
    /// `half_row` holds `M[0][0..=N/2]`.
    pub fn from_half_row(n: usize, half_row: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::LatticeSize(n));
        }
        if half_row.len() != n / 2 + 1 {
            return Err(Error::Dimension {
                expected: n / 2 + 1,
                got: half_row.len(),
            });
        }
        Ok(CirculantSymmetric { n, half_row })
    }

    pub fn identity(n: usize) -> Self {
        let mut half_row = vec![0.0; n / 2 + 1];
        half_row[0] = 1.0;
        CirculantSymmetric { n, half_row }
    }

    /// Rebuilds the matrix from eigenvalues indexed by Fourier mode.
    pub fn from_spectrum(spec: &Spectrum) -> Self {
        let n = spec.eigs.len();
        let half_row = (0..=n / 2)
            .map(|j| {
                spec.eigs
                    .iter()
                    .enumerate()
                    .map(|(k, e)| e * cos_mode(j, k, n))
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        CirculantSymmetric { n, half_row }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_row(&self) -> &[f64] {
        &self.half_row
    }

    /// `M[0][j]` for any `j` modulo `N`.
    pub fn row_entry(&self, j: usize) -> f64 {
        let j = j % self.n;
        self.half_row[j.min(self.n - j)]
    }

    /// `M[i][j]`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row_entry((j + self.n - i % self.n) % self.n)
    }

    pub fn first_row(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.row_entry(j)).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if v.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.len(),
            });
        }
        let row = self.first_row();
        Ok((0..n)
            .map(|i| {
                row.iter()
                    .enumerate()
                    .map(|(d, r)| r * v[(i + d) % n])
                    .sum()
            })
            .collect())
    }
}

fn cos_mode(j: usize, k: usize, n: usize) -> f64 {
    // Reduce before converting so the angle stays in [0, 2 pi).
    (2.0 * PI * ((j * k) % n) as f64 / n as f64).cos()
}

/// The matrix `A = omega^2 [I - mu (tau + tau^T)]` of the quadratic potential.
pub fn build_a_matrix(params: &ChainParams) -> Result<CirculantSymmetric> {
    let n = params.n;
    if n < MIN_SITES {
        return Err(Error::LatticeSize(n));
    }
    let mut half_row = vec![0.0; n / 2 + 1];
    half_row[0] = params.omega2;
    half_row[1] = -params.a;
    Ok(CirculantSymmetric { n, half_row })
}

pub fn spectrum(m: &CirculantSymmetric) -> Spectrum {
    let n = m.n;
    let row = m.first_row();
    let eigs = (0..n)
        .map(|k| {
            row.iter()
                .enumerate()
                .map(|(j, r)| r * cos_mode(j, k, n))
                .sum()
        })
        .collect();
    Spectrum { eigs }
}

/// `f(M)`, evaluated on the spectrum. Fails when `f` is not finite on some
/// eigenvalue.
pub fn spectral_function<F: Fn(f64) -> f64>(m: &CirculantSymmetric, f: F) -> Result<CirculantSymmetric> {
    let spec = spectrum(m);
    let mut eigs = Vec::with_capacity(spec.eigs.len());
    for &e in &spec.eigs {
        let v = f(e);
        if !v.is_finite() {
            return Err(Error::Domain(e));
        }
        eigs.push(v);
    }
    Ok(CirculantSymmetric::from_spectrum(&Spectrum { eigs }))
}

/// `M^p` for a positive definite `M`.
pub fn power(m: &CirculantSymmetric, p: f64) -> Result<CirculantSymmetric> {
    guard_positive(m)?;
    spectral_function(m, |e| e.powf(p))
}

/// `B = ln(M) / 4`, the quadratic generator of the normalizing map.
pub fn quarter_log(m: &CirculantSymmetric) -> Result<CirculantSymmetric> {
    guard_positive(m)?;
    spectral_function(m, |e| 0.25 * e.ln())
}

fn guard_positive(m: &CirculantSymmetric) -> Result<()> {
    let spec = spectrum(m);
    match spec.eigs.iter().copied().find(|&e| e <= EIG_FLOOR) {
        Some(e) => Err(Error::Domain(e)),
        None => Ok(()),
    }
}

/// The pair `A^{1/4}`, `A^{-1/4}` mapping `(x, y)` to normal coordinates.
#[derive(Clone, Debug)]
pub struct NormalCoordinateMap {
    pub a_quarter: CirculantSymmetric,
    pub a_minus_quarter: CirculantSymmetric,
}

impl NormalCoordinateMap {
    pub fn new(params: &ChainParams) -> Result<Self> {
        let a = build_a_matrix(params)?;
        Ok(NormalCoordinateMap {
            a_quarter: power(&a, 0.25)?,
            a_minus_quarter: power(&a, -0.25)?,
        })
    }

    /// `(q, p) = (A^{1/4} x, A^{-1/4} y)`.
    pub fn forward(&self, z: &PhaseState) -> Result<PhaseState> {
        Ok(PhaseState {
            x: self.a_quarter.apply(&z.x)?,
            y: self.a_minus_quarter.apply(&z.y)?,
        })
    }

    pub fn backward(&self, w: &PhaseState) -> Result<PhaseState> {
        Ok(PhaseState {
            x: self.a_minus_quarter.apply(&w.x)?,
            y: self.a_quarter.apply(&w.y)?,
        })
    }
}

pub fn to_normal_coords(params: &ChainParams, z: &PhaseState) -> Result<PhaseState> {
    NormalCoordinateMap::new(params)?.forward(z)
}

pub fn from_normal_coords(params: &ChainParams, w: &PhaseState) -> Result<PhaseState> {
    NormalCoordinateMap::new(params)?.backward(w)
}
