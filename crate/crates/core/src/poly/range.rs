//! Interaction-range decomposition and decay classes.

use super::coeff::Coeff;
use super::seed::{Accumulator, Seed};

/// `f = sum_m f^(m)` with every part left-aligned and part `m` free of
/// monomials whose interaction length exceeds `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeDecomposition<C> {
    n: usize,
    parts: Vec<Seed<C>>,
}

impl<C: Coeff> RangeDecomposition<C> {
    /// Parts must be left-aligned with `ell <= index`; checked in debug builds.
    pub fn from_parts(n: usize, parts: Vec<Seed<C>>) -> Self {
        debug_assert!(parts.iter().enumerate().all(|(m, p)| p.is_left_aligned() && p.max_interaction_length() <= m));
        let mut d = RangeDecomposition { n, parts };
        d.trim();
        d
    }

    fn trim(&mut self) {
        while self.parts.last().is_some_and(|p| p.is_empty()) {
            self.parts.pop();
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn parts(&self) -> &[Seed<C>] {
        &self.parts
    }

    /// Part `m`, empty beyond the stored range.
    pub fn part(&self, m: usize) -> Seed<C> {
        self.parts.get(m).cloned().unwrap_or_else(|| Seed::zero(self.n))
    }

    /// Largest index with a nonzero part.
    pub fn max_range(&self) -> Option<usize> {
        self.parts.iter().rposition(|p| !p.is_empty())
    }

    /// `||f^(m)||` for every stored `m`.
    pub fn profile(&self) -> Vec<f64> {
        self.parts.iter().map(|p| p.norm()).collect()
    }

    /// Sum of the parts as a single seed.
    pub fn total(&self) -> Seed<C> {
        let mut acc = Accumulator::new();
        for p in &self.parts {
            for &(m, c) in p.terms() {
                acc.add(m, c);
            }
        }
        acc.finish(self.n, 0.0)
    }
}

/// Splits a seed by actual interaction length after left alignment.
pub fn range_decompose<C: Coeff>(f: &Seed<C>) -> RangeDecomposition<C> {
    let n = f.n();
    let mut accs: Vec<Accumulator<C>> = Vec::new();
    for &(m, c) in f.terms() {
        let (aligned, ell) = m.left_aligned(n);
        if accs.len() <= ell {
            accs.resize_with(ell + 1, Accumulator::new);
        }
        accs[ell].add(aligned, c);
    }
    RangeDecomposition::from_parts(n, accs.into_iter().map(|a| a.finish(n, 0.0)).collect())
}

/// Smallest `C` with `||f^(m)|| <= C exp(-sigma m)` for every part.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub c: f64,
    pub sigma: f64,
    pub profile: Vec<f64>,
}

impl DecayFit {
    pub fn holds(&self) -> bool {
        self.profile
            .iter()
            .enumerate()
            .all(|(m, &v)| v <= self.c * (-self.sigma * m as f64).exp() * (1.0 + 1e-12) || v == 0.0)
    }
}

pub fn fit_decay<C: Coeff>(d: &RangeDecomposition<C>, sigma: f64) -> DecayFit {
    let profile = d.profile();
    let c = profile
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(m, &v)| if m == 0 { v } else { v * (sigma * m as f64).exp() })
        .fold(0.0, f64::max);
    DecayFit { c, sigma, profile }
}

/// Least-squares slope of `-ln ||f^(m)||` over the nonzero parts with
/// `m >= from`; the measured geometric decay rate per unit range.
pub fn measured_rate(profile: &[f64], from: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(_, &v)| v > 0.0)
        .map(|(m, &v)| (m as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}
