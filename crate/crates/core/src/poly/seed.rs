//! Seeds of cyclically symmetric polynomials.
//!
//! A seed `f` stands for the extensive function `f^+ = sum_s tau^s f`. Terms
//! are kept sorted by monomial with no stored zeros, so equal seeds compare
//! equal and every traversal order is deterministic.

use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use rustc_hash::FxHashMap;

use super::coeff::Coeff;
use super::monomial::Monomial;
use crate::chain_model::PhaseState;
use crate::error::Result;

/// Relative pruning level applied after algebraic operations, scaled by the
/// operation's norm bound.
pub const EPS_PRUNE: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Seed<C> {
    n: usize,
    terms: Vec<(Monomial, C)>,
}

pub type RealSeed = Seed<f64>;
pub type ComplexSeed = Seed<Complex64>;

/// Hash-map accumulator that produces a sorted seed.
pub struct Accumulator<C> {
    map: FxHashMap<Monomial, C>,
}

impl<C: Coeff> Default for Accumulator<C> {
    fn default() -> Self {
        Accumulator {
            map: FxHashMap::default(),
        }
    }
}

impl<C: Coeff> Accumulator<C> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, m: Monomial, c: C) {
        *self.map.entry(m).or_insert_with(C::zero) += c;
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Drops coefficients with modulus `<= threshold` (exact zeros always go).
    pub fn finish(self, n: usize, threshold: f64) -> Seed<C> {
        let mut terms: Vec<(Monomial, C)> = self
            .map
            .into_iter()
            .filter(|(_, c)| {
                let m = c.modulus();
                m > threshold && m > 0.0
            })
            .collect();
        terms.sort_unstable_by_key(|t| t.0);
        Seed { n, terms }
    }
}

impl<C: Coeff> Seed<C> {
    pub fn zero(n: usize) -> Self {
        Seed {
            n,
            terms: Vec::new(),
        }
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, C)>>(n: usize, terms: I) -> Self {
        let mut acc = Accumulator::new();
        for (m, c) in terms {
            acc.add(m, c);
        }
        acc.finish(n, 0.0)
    }

    pub fn monomial(n: usize, m: Monomial, c: C) -> Self {
        Self::from_terms(n, [(m, c)])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(Monomial, C)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: Monomial) -> C {
        self.terms
            .binary_search_by_key(&m, |t| t.0)
            .map(|i| self.terms[i].1)
            .unwrap_or_else(|_| C::zero())
    }

    /// `sum |c|`.
    pub fn norm(&self) -> f64 {
        self.terms.iter().fold(0.0, |acc, t| acc + t.1.modulus())
    }

    pub fn max_degree(&self) -> usize {
        self.terms.iter().map(|t| t.0.degree()).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> usize {
        self.terms.iter().map(|t| t.0.degree()).min().unwrap_or(0)
    }

    pub fn is_homogeneous(&self, degree: usize) -> bool {
        self.terms.iter().all(|t| t.0.degree() == degree)
    }

    pub fn map_coeffs<D: Coeff, F: Fn(C) -> D>(&self, f: F) -> Seed<D> {
        Seed::from_terms(self.n, self.terms.iter().map(|&(m, c)| (m, f(c))))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_coeffs(|c| c.scale(s))
    }

    pub fn mul_coeff(&self, s: C) -> Self {
        self.map_coeffs(|c| c * s)
    }

    /// Keeps the terms selected by `keep`.
    pub fn filter<F: Fn(Monomial, C) -> bool>(&self, keep: F) -> Self {
        Seed {
            n: self.n,
            terms: self.terms.iter().copied().filter(|&(m, c)| keep(m, c)).collect(),
        }
    }

    /// Drops every coefficient with modulus `<= threshold`.
    pub fn pruned(&self, threshold: f64) -> Self {
        self.filter(|_, c| c.modulus() > threshold)
    }

    pub fn translate(&self, s: usize) -> Self {
        Self::from_terms(self.n, self.terms.iter().map(|&(m, c)| (m.translate(s, self.n), c)))
    }

    /// Every monomial moved to its left-aligned representative; the
    /// extensive function is unchanged.
    pub fn left_align(&self) -> Self {
        Self::from_terms(
            self.n,
            self.terms.iter().map(|&(m, c)| (m.left_aligned(self.n).0, c)),
        )
    }

    pub fn is_left_aligned(&self) -> bool {
        self.terms.iter().all(|t| t.0.is_left_aligned(self.n))
    }

    pub fn max_interaction_length(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.0.interaction_length(self.n))
            .max()
            .unwrap_or(0)
    }

    fn merge_with<F: Fn(C, C) -> C>(&self, other: &Self, f: F) -> Self {
        assert_eq!(self.n, other.n, "seeds live on different lattices");
        let mut out = Vec::with_capacity(self.terms.len() + other.terms.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.terms, &other.terms);
        while i < a.len() || j < b.len() {
            let (m, c) = if j >= b.len() || (i < a.len() && a[i].0 < b[j].0) {
                i += 1;
                (a[i - 1].0, f(a[i - 1].1, C::zero()))
            } else if i >= a.len() || b[j].0 < a[i].0 {
                j += 1;
                (b[j - 1].0, f(C::zero(), b[j - 1].1))
            } else {
                i += 1;
                j += 1;
                (a[i - 1].0, f(a[i - 1].1, b[j - 1].1))
            };
            if c.modulus() > 0.0 {
                out.push((m, c));
            }
        }
        Seed { n: self.n, terms: out }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.merge_with(other, |x, y| x + y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.merge_with(other, |x, y| x - y)
    }

    /// `sum_i w_i f_i`.
    pub fn linear_combination(n: usize, parts: &[(f64, &Self)]) -> Self {
        let mut acc = Accumulator::new();
        for (w, f) in parts {
            for &(m, c) in f.terms() {
                acc.add(m, c.scale(*w));
            }
        }
        acc.finish(n, 0.0)
    }
}

impl<C: Coeff> Add for &Seed<C> {
    type Output = Seed<C>;
    fn add(self, rhs: Self) -> Seed<C> {
        Seed::add(self, rhs)
    }
}

impl<C: Coeff> Sub for &Seed<C> {
    type Output = Seed<C>;
    fn sub(self, rhs: Self) -> Seed<C> {
        Seed::sub(self, rhs)
    }
}

impl<C: Coeff> Neg for &Seed<C> {
    type Output = Seed<C>;
    fn neg(self) -> Seed<C> {
        self.scale(-1.0)
    }
}

impl Seed<f64> {
    /// Local value `f(q, p)` of the seed itself.
    pub fn eval_local(&self, z: &PhaseState) -> Result<f64> {
        z.check_len(self.n)?;
        Ok(self.terms.iter().map(|&(m, c)| c * m.eval_shifted(&z.x, &z.y, 0)).sum())
    }

    /// `f^+(z) = sum_s f(tau^s z)`.
    pub fn extensive_eval(&self, z: &PhaseState) -> Result<f64> {
        z.check_len(self.n)?;
        Ok(self.extensive_eval_unchecked(&z.x, &z.y))
    }

    pub(crate) fn extensive_eval_unchecked(&self, q: &[f64], p: &[f64]) -> f64 {
        let mut total = 0.0;
        for &(m, c) in &self.terms {
            let mut s = 0.0;
            for shift in 0..self.n {
                s += m.eval_shifted(q, p, shift);
            }
            total += c * s;
        }
        total
    }

    /// Gradient `(d f^+/dq, d f^+/dp)` at `(q, p)`.
    pub fn extensive_gradient(&self, z: &PhaseState) -> Result<(Vec<f64>, Vec<f64>)> {
        z.check_len(self.n)?;
        let n = self.n;
        let (q, p) = (&z.x, &z.y);
        let mut gq = vec![0.0; n];
        let mut gp = vec![0.0; n];
        let mut vals = [0.0; super::monomial::MAX_DEGREE];
        for &(m, c) in &self.terms {
            let codes = m.codes();
            let cs = codes.as_slice();
            for shift in 0..n {
                for (k, &b) in cs.iter().enumerate() {
                    let site = (super::monomial::site_of(b) + shift) % n;
                    vals[k] = if super::monomial::is_q(b) { q[site] } else { p[site] };
                }
                // d/dv of prod v_k: sum over positions holding v of the
                // product of the others.
                for (k, &b) in cs.iter().enumerate() {
                    let mut prod = c;
                    for (l, v) in vals[..cs.len()].iter().enumerate() {
                        if l != k {
                            prod *= v;
                        }
                    }
                    let site = (super::monomial::site_of(b) + shift) % n;
                    if super::monomial::is_q(b) {
                        gq[site] += prod;
                    } else {
                        gp[site] += prod;
                    }
                }
            }
        }
        Ok((gq, gp))
    }

    /// Parity of every monomial as `(q-degree odd, p-degree odd)`, if all
    /// monomials agree.
    pub fn parity(&self) -> Option<(bool, bool)> {
        let mut it = self
            .terms
            .iter()
            .map(|t| (t.0.q_degree() % 2 == 1, t.0.p_degree() % 2 == 1));
        let first = it.next()?;
        it.all(|p| p == first).then_some(first)
    }
}
