//! The periodic Klein-Gordon chain
//!
//! `H(x, y) = 1/2 sum_j [ y_j^2 + x_j^2 + a (x_j - x_{j-1})^2 + x_j^4 / 2 ]`
//!
//! with sites labelled `0..N` and `x_{-1} = x_{N-1}`.

use crate::circulant::{build_a_matrix, spectrum};
use crate::error::{Error, Result};

pub const MIN_SITES: usize = 4;
/// Sites are packed into a byte per variable in the monomial encoding.
pub const MAX_SITES: usize = 127;

/// Model parameters with every derived constant frozen at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    pub n: usize,
    pub a: f64,
    pub beta: f64,
    /// `1 + 2a`
    pub omega2: f64,
    pub omega: f64,
    /// `a / omega^2`, always below 1/2 for finite `a`.
    pub mu: f64,
    /// Mean of the square roots of the eigenvalues of `A`.
    pub big_omega: f64,
    /// `-ln(2 mu)`; infinite at `a = 0`.
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_star: f64,
}

impl ChainParams {
    pub fn new(n: usize, a: f64, beta: f64) -> Result<Self> {
        if !(MIN_SITES..=MAX_SITES).contains(&n) {
            return Err(Error::LatticeSize(n));
        }
        if !a.is_finite() || a < 0.0 {
            return Err(Error::Parameter(format!(
                "coupling a={a} must be finite and non-negative (mu < 1/2)"
            )));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Parameter(format!("beta={beta} must be positive")));
        }
        let omega2 = 1.0 + 2.0 * a;
        let mu = a / omega2;
        if mu >= 0.5 {
            return Err(Error::Parameter(format!("mu={mu} must be below 1/2")));
        }
        let sigma0 = -(2.0 * mu).ln();
        let mut params = ChainParams {
            n,
            a,
            beta,
            omega2,
            omega: omega2.sqrt(),
            mu,
            big_omega: 1.0,
            sigma0,
            sigma1: sigma0 / 2.0,
            sigma_star: sigma0 / 4.0,
        };
        let eigs = spectrum(&build_a_matrix(&params)?).eigs;
        params.big_omega = eigs.iter().map(|e| e.sqrt()).sum::<f64>() / n as f64;
        Ok(params)
    }

    /// Same lattice and coupling at another temperature.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        if !beta.is_finite() || beta <= 0.0 {
            return Err(Error::Parameter(format!("beta={beta} must be positive")));
        }
        Ok(ChainParams { beta, ..self.clone() })
    }
}

/// A point `(x, y)` of the `2N`-dimensional phase space.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("phase state has non-finite entries".into()));
        }
        Ok(PhaseState { x, y })
    }

    pub fn zeros(n: usize) -> Self {
        PhaseState {
            x: vec![0.0; n],
            y: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Cyclic shift `tau^s`: site `j` of the result holds site `j + s` of `self`.
    pub fn shifted(&self, s: usize) -> Self {
        let n = self.len();
        let idx = |j: usize| (j + s) % n;
        PhaseState {
            x: (0..n).map(|j| self.x[idx(j)]).collect(),
            y: (0..n).map(|j| self.y[idx(j)]).collect(),
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.x.len() != n || self.y.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.x.len().max(self.y.len()),
            });
        }
        Ok(())
    }
}

/// Quadratic and quartic parts `(H0, H1)`.
pub fn hamiltonian_parts(params: &ChainParams, z: &PhaseState) -> Result<(f64, f64)> {
    let n = params.n;
    z.check_len(n)?;
    let mut h0 = 0.0;
    let mut h1 = 0.0;
    for j in 0..n {
        let prev = z.x[(j + n - 1) % n];
        let x = z.x[j];
        let dx = x - prev;
        h0 += z.y[j] * z.y[j] + x * x + params.a * dx * dx;
        h1 += x * x * x * x;
    }
    Ok((0.5 * h0, 0.25 * h1))
}

pub fn hamiltonian(params: &ChainParams, z: &PhaseState) -> Result<f64> {
    let (h0, h1) = hamiltonian_parts(params, z)?;
    Ok(h0 + h1)
}

/// Low-temperature specific energy `1/beta`.
pub fn specific_energy_target(params: &ChainParams) -> f64 {
    1.0 / params.beta
}
