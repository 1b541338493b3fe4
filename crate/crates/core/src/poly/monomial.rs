//! Packed monomials over the lattice variables.
//!
//! A monomial of degree `d <= 16` is the sorted list of its variables with
//! multiplicity, one byte per variable, packed into a `u128`. The byte for
//! variable `x_j` (or `xi_j`) is `2j + 1`, for `y_j` (or `eta_j`) it is
//! `2j + 2`; zero marks unused slots. The same encoding serves the real
//! `(x, y)` and the complex `(xi, eta)` representations.

use std::fmt;

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 16;

/// Which canonical slot of a site a variable occupies.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    /// `x` or `xi`
    Q,
    /// `y` or `eta`
    P,
}

#[inline]
fn code(site: usize, slot: Slot) -> u8 {
    (2 * site + 1 + matches!(slot, Slot::P) as usize) as u8
}

#[inline]
pub(crate) fn site_of(code: u8) -> usize {
    ((code - 1) / 2) as usize
}

#[inline]
pub(crate) fn is_q(code: u8) -> bool {
    code % 2 == 1
}

#[inline]
pub(crate) fn conjugate(code: u8) -> u8 {
    if is_q(code) {
        code + 1
    } else {
        code - 1
    }
}

/// Variable bytes with their count; `bytes[..len]` is sorted ascending.
#[derive(Copy, Clone)]
pub(crate) struct Codes {
    pub bytes: [u8; MAX_DEGREE],
    pub len: usize,
}

impl Codes {
    #[inline]
    pub fn as_slice(&self) -> &[u8] {
        &self.bytes[..self.len]
    }

    /// Relabels site `j` as `j + s (mod n)` in place, keeping the bytes sorted.
    #[inline]
    pub fn translate(&mut self, s: usize, n: usize) {
        let s = s % n;
        if s == 0 || self.len == 0 {
            return;
        }
        // Bytes whose site wraps past n - 1 move to the front; each block
        // stays sorted, so a rotation restores order.
        let wrap = self.bytes[..self.len]
            .iter()
            .position(|&b| site_of(b) + s >= n)
            .unwrap_or(self.len);
        for b in &mut self.bytes[..self.len] {
            let site = site_of(*b);
            let shifted = if site + s >= n { site + s - n } else { site + s };
            *b = (2 * shifted + 1 + (!is_q(*b)) as usize) as u8;
        }
        self.bytes[..self.len].rotate_left(wrap);
    }

    /// Left-aligns in place and returns the interaction length. When several
    /// shifts reach the minimal diameter the smallest packed result wins, so
    /// every translate of a monomial aligns to the same representative.
    #[inline]
    pub fn left_align(&mut self, n: usize) -> usize {
        if self.len == 0 {
            return 0;
        }
        let mut sites = [0usize; MAX_DEGREE];
        let mut k = 0;
        for &b in self.as_slice() {
            let s = site_of(b);
            if k == 0 || sites[k - 1] != s {
                sites[k] = s;
                k += 1;
            }
        }
        let mut best_gap = 0;
        let mut shifts = [0usize; MAX_DEGREE];
        let mut n_best = 0;
        for i in 0..k {
            let here = sites[i];
            let (next, gap) = if i + 1 < k {
                (sites[i + 1], sites[i + 1] - here)
            } else {
                (sites[0], sites[0] + n - here)
            };
            let shift = (n - next) % n;
            if gap > best_gap {
                best_gap = gap;
                n_best = 0;
            }
            if gap == best_gap {
                shifts[n_best] = shift;
                n_best += 1;
            }
        }
        if n_best == 1 {
            self.translate(shifts[0], n);
        } else {
            let orig = *self;
            let mut best: Option<(Monomial, Codes)> = None;
            for &s in &shifts[..n_best] {
                let mut c = orig;
                c.translate(s, n);
                let key = c.pack();
                if best.as_ref().map_or(true, |b| key < b.0) {
                    best = Some((key, c));
                }
            }
            *self = best.unwrap().1;
        }
        n - best_gap
    }

    #[inline]
    pub fn pack(&self) -> Monomial {
        let mut b = [0u8; MAX_DEGREE];
        b[..self.len].copy_from_slice(&self.bytes[..self.len]);
        Monomial(u128::from_le_bytes(b))
    }
}

#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Monomial(u128);

/// One factor `x_site^x_exp y_site^y_exp` of a monomial.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Factor {
    pub site: usize,
    pub x_exp: u32,
    pub y_exp: u32,
}

impl Monomial {
    pub const ONE: Monomial = Monomial(0);

    /// Builds a monomial from `(site, x_exp, y_exp)` triples in any order;
    /// repeated sites multiply.
    pub fn from_factors(factors: &[(usize, u32, u32)]) -> Result<Self> {
        let mut codes = Codes {
            bytes: [0; MAX_DEGREE],
            len: 0,
        };
        for &(site, xe, ye) in factors {
            if site >= 127 {
                return Err(Error::LatticeSize(site + 1));
            }
            for (slot, e) in [(Slot::Q, xe), (Slot::P, ye)] {
                for _ in 0..e {
                    if codes.len == MAX_DEGREE {
                        return Err(Error::DegreeCap {
                            degree: MAX_DEGREE + 1,
                            cap: MAX_DEGREE,
                        });
                    }
                    codes.bytes[codes.len] = code(site, slot);
                    codes.len += 1;
                }
            }
        }
        codes.bytes[..codes.len].sort_unstable();
        Ok(codes.pack())
    }

    pub fn var(site: usize, slot: Slot) -> Self {
        let mut b = [0u8; MAX_DEGREE];
        b[0] = code(site, slot);
        Monomial(u128::from_le_bytes(b))
    }

    #[inline]
    pub(crate) fn codes(self) -> Codes {
        let bytes = self.0.to_le_bytes();
        let len = bytes.iter().position(|&b| b == 0).unwrap_or(MAX_DEGREE);
        Codes { bytes, len }
    }

    pub fn degree(self) -> usize {
        self.codes().len
    }

    pub fn q_degree(self) -> usize {
        self.codes().as_slice().iter().filter(|&&c| is_q(c)).count()
    }

    pub fn p_degree(self) -> usize {
        self.degree() - self.q_degree()
    }

    /// Canonical factor list, sites ascending.
    pub fn factors(self) -> Vec<Factor> {
        let mut out: Vec<Factor> = Vec::new();
        for &c in self.codes().as_slice() {
            let site = site_of(c);
            if out.last().map(|f| f.site) != Some(site) {
                out.push(Factor {
                    site,
                    x_exp: 0,
                    y_exp: 0,
                });
            }
            let f = out.last_mut().unwrap();
            if is_q(c) {
                f.x_exp += 1;
            } else {
                f.y_exp += 1;
            }
        }
        out
    }

    /// Distinct sites, ascending.
    pub fn sites(self) -> Vec<usize> {
        let mut s: Vec<usize> = self.codes().as_slice().iter().map(|&c| site_of(c)).collect();
        s.dedup();
        s
    }

    /// Bit `j` set when site `j` is in the support.
    #[inline]
    pub(crate) fn support_mask(self) -> u128 {
        self.codes()
            .as_slice()
            .iter()
            .fold(0u128, |m, &c| m | (1u128 << site_of(c)))
    }

    pub fn max_site(self) -> Option<usize> {
        let c = self.codes();
        c.as_slice().last().map(|&b| site_of(b))
    }

    /// Relabels site `j` as `j + s (mod n)`.
    pub fn translate(self, s: usize, n: usize) -> Self {
        let mut c = self.codes();
        c.translate(s, n);
        c.pack()
    }

    /// Interaction length and the smallest shift that left-aligns the
    /// support, using the minimal diameter over cyclic relabellings.
    pub fn alignment(self, n: usize) -> (usize, usize) {
        let mask = self.support_mask();
        alignment_of_mask(mask, n)
    }

    pub fn interaction_length(self, n: usize) -> usize {
        self.alignment(n).0
    }

    /// Translate so the support lies in `0..=ell`. Returns the aligned
    /// monomial and `ell`.
    pub fn left_aligned(self, n: usize) -> (Self, usize) {
        let mut c = self.codes();
        let ell = c.left_align(n);
        (c.pack(), ell)
    }

    /// True when more than one cyclic gap attains the maximum, so the
    /// aligned form depends on the variables and not only on the support.
    pub(crate) fn has_tied_alignment(self, n: usize) -> bool {
        let sites = self.sites();
        let k = sites.len();
        if k < 2 {
            return false;
        }
        let gap = |i: usize| if i + 1 < k { sites[i + 1] - sites[i] } else { sites[0] + n - sites[i] };
        let best = (0..k).map(gap).max().unwrap_or(0);
        (0..k).filter(|&i| gap(i) == best).count() > 1
    }

    pub fn is_left_aligned(self, n: usize) -> bool {
        let (ell, _) = self.alignment(n);
        self.max_site().map_or(true, |m| m <= ell)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        let a = self.codes();
        let b = other.codes();
        merge(a.as_slice(), b.as_slice()).map(|c| c.pack())
    }

    /// Exponent of a variable.
    pub fn exponent(self, site: usize, slot: Slot) -> u32 {
        let c = code(site, slot);
        self.codes().as_slice().iter().filter(|&&b| b == c).count() as u32
    }

    /// Product of the variables raised to their exponents, reading
    /// `q[site]` for the first slot and `p[site]` for the second, with the
    /// site relabelled by `+ shift (mod n)`.
    #[inline]
    pub fn eval_shifted(self, q: &[f64], p: &[f64], shift: usize) -> f64 {
        let n = q.len();
        let mut v = 1.0;
        for &c in self.codes().as_slice() {
            let site = (site_of(c) + shift) % n;
            v *= if is_q(c) { q[site] } else { p[site] };
        }
        v
    }
}

pub(crate) fn alignment_of_mask(mask: u128, n: usize) -> (usize, usize) {
    if mask == 0 {
        return (0, 0);
    }
    // Largest cyclic gap between consecutive support sites; the site after
    // the gap becomes the origin.
    let sites: Vec<usize> = (0..n).filter(|&j| mask >> j & 1 == 1).collect();
    let k = sites.len();
    let mut best_gap = 0;
    let mut best_shift = usize::MAX;
    for i in 0..k {
        let here = sites[i];
        let next = sites[(i + 1) % k];
        let gap = if i + 1 < k { next - here } else { next + n - here };
        let shift = (n - next) % n;
        if gap > best_gap || (gap == best_gap && shift < best_shift) {
            best_gap = gap;
            best_shift = shift;
        }
    }
    (n - best_gap, best_shift)
}

#[inline]
pub(crate) fn merge(a: &[u8], b: &[u8]) -> Result<Codes> {
    let len = a.len() + b.len();
    if len > MAX_DEGREE {
        return Err(Error::DegreeCap {
            degree: len,
            cap: MAX_DEGREE,
        });
    }
    let mut out = Codes {
        bytes: [0; MAX_DEGREE],
        len,
    };
    let (mut i, mut j) = (0, 0);
    for slot in out.bytes[..len].iter_mut() {
        if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            *slot = a[i];
            i += 1;
        } else {
            *slot = b[j];
            j += 1;
        }
    }
    Ok(out)
}

/// Terms of the canonical bracket `{m1, m2} = sum_l d m1/d q_l d m2/d p_l -
/// d m1/d p_l d m2/d q_l`, written to `sink` as `(coefficient, monomial)`.
#[inline]
pub(crate) fn bracket_monomials<F: FnMut(f64, Monomial)>(m1: Monomial, m2: Monomial, mut sink: F) -> Result<()> {
    let a = m1.codes();
    let b = m2.codes();
    let a = a.as_slice();
    let b = b.as_slice();
    let mut i = 0;
    while i < a.len() {
        let c = a[i];
        let mut e1 = 0;
        while i < a.len() && a[i] == c {
            e1 += 1;
            i += 1;
        }
        let cc = conjugate(c);
        let Some(pos) = b.iter().position(|&x| x == cc) else {
            continue;
        };
        let e2 = b[pos..].iter().take_while(|&&x| x == cc).count();
        let sign = if is_q(c) { 1.0 } else { -1.0 };
        let mut ra = [0u8; MAX_DEGREE];
        let mut la = 0;
        let mut removed = false;
        for &x in a {
            if x == c && !removed {
                removed = true;
                continue;
            }
            ra[la] = x;
            la += 1;
        }
        let mut rb = [0u8; MAX_DEGREE];
        let mut lb = 0;
        removed = false;
        for &x in b {
            if x == cc && !removed {
                removed = true;
                continue;
            }
            rb[lb] = x;
            lb += 1;
        }
        let m = merge(&ra[..la], &rb[..lb])?.pack();
        sink(sign * (e1 * e2) as f64, m);
    }
    Ok(())
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Monomial {
    /// `site:xe:ye` triples separated by spaces; `1` for the constant.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let factors = self.factors();
        if factors.is_empty() {
            return write!(f, "1");
        }
        for (i, fa) in factors.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}:{}:{}", fa.site, fa.x_exp, fa.y_exp)?;
        }
        Ok(())
    }
}
