//! Poisson brackets of extensive functions computed on seeds.
//!
//! With the canonical bracket `{f, g} = sum_l (df/dq_l dg/dp_l - df/dp_l
//! dg/dq_l)`, a seed of `{f^+, g^+}` is `{f, g^+}`. Only translates of `g`
//! whose support meets that of `f` contribute; each result is left-aligned.

use super::coeff::Coeff;
use super::monomial::{bracket_monomials, is_q, merge, site_of, Codes, MAX_DEGREE};
use super::range::{range_decompose, RangeDecomposition};
use super::seed::{Accumulator, Seed, EPS_PRUNE};
use crate::error::{Error, Result};

/// Guard against runaway fill-in.
pub const MAX_TERMS: usize = 10_000_000;

/// Norm bound `r s ||f|| ||g||` of the bracket, `r`, `s` the top degrees.
pub fn bracket_norm_bound<C: Coeff>(f: &Seed<C>, g: &Seed<C>) -> f64 {
    (f.max_degree() * g.max_degree()) as f64 * f.norm() * g.norm()
}

/// `d g^+ / d v_0` for the variable `v` in the given slot at site 0,
/// returned as an unaligned polynomial centred on site 0.
fn derivative_at_origin<C: Coeff>(g: &Seed<C>, q_slot: bool) -> Vec<(Codes, C)> {
    let n = g.n();
    let mut acc = Accumulator::new();
    for &(m, c) in g.terms() {
        let codes = m.codes();
        let s = codes.as_slice();
        let mut i = 0;
        while i < s.len() {
            let b = s[i];
            let mut e = 0;
            while i < s.len() && s[i] == b {
                e += 1;
                i += 1;
            }
            if is_q(b) != q_slot {
                continue;
            }
            let mut rest = Codes {
                bytes: [0; MAX_DEGREE],
                len: 0,
            };
            let mut removed = false;
            for &x in s {
                if x == b && !removed {
                    removed = true;
                    continue;
                }
                rest.bytes[rest.len] = x;
                rest.len += 1;
            }
            let site = site_of(b);
            rest.translate(n - site, n);
            acc.add(rest.pack(), c.scale(e as f64));
        }
    }
    let mut out: Vec<(Codes, C)> = acc
        .finish(n, 0.0)
        .terms()
        .iter()
        .map(|&(m, c)| (m.codes(), c))
        .collect();
    // Largest first, so the product loop can stop at the pruning level.
    out.sort_by(|a, b| b.1.modulus().total_cmp(&a.1.modulus()));
    out
}

/// Seed of `{f^+, g^+}`, left-aligned, pruned at `EPS_PRUNE` times the
/// norm bound.
pub fn poisson_seed<C: Coeff>(f: &Seed<C>, g: &Seed<C>) -> Result<Seed<C>> {
    Ok(poisson_seed_tracked(f, g, EPS_PRUNE)?.0)
}

pub fn poisson_seed_pruned<C: Coeff>(f: &Seed<C>, g: &Seed<C>, prune_rel: f64) -> Result<Seed<C>> {
    Ok(poisson_seed_tracked(f, g, prune_rel)?.0)
}

/// As [`poisson_seed_pruned`], also returning an upper bound on the `l1`
/// distance to the exact bracket: single products below the threshold are
/// skipped and accumulated terms below it are dropped, and both masses are
/// counted.
pub fn poisson_seed_tracked<C: Coeff>(f: &Seed<C>, g: &Seed<C>, prune_rel: f64) -> Result<(Seed<C>, f64)> {
    poisson_seed_thresholded(f, g, prune_rel * bracket_norm_bound(f, g))
}

/// As [`poisson_seed_tracked`] with an absolute pruning threshold.
pub fn poisson_seed_thresholded<C: Coeff>(f: &Seed<C>, g: &Seed<C>, threshold: f64) -> Result<(Seed<C>, f64)> {
    if f.n() != g.n() {
        return Err(Error::Dimension {
            expected: f.n(),
            got: g.n(),
        });
    }
    let n = f.n();
    if f.is_empty() || g.is_empty() {
        return Ok((Seed::zero(n), 0.0));
    }
    // dg+/dp_0 and dg+/dq_0; translating the f factor so that the
    // differentiated site sits at 0 leaves the aligned product unchanged.
    let dp = derivative_at_origin(g, false);
    let dq = derivative_at_origin(g, true);
    let mass = |d: &[(Codes, C)]| -> Vec<f64> {
        // suffix sums of moduli, for the mass of a skipped tail
        let mut v = vec![0.0; d.len() + 1];
        for i in (0..d.len()).rev() {
            v[i] = v[i + 1] + d[i].1.modulus();
        }
        v
    };
    let (tail_p, tail_q) = (mass(&dp), mass(&dq));
    let mut skipped = 0.0;
    let mut acc: Accumulator<C> = Accumulator::new();
    for &(m, c) in f.terms() {
        let codes = m.codes();
        let s = codes.as_slice();
        let mut i = 0;
        while i < s.len() {
            let b = s[i];
            let mut e = 0;
            while i < s.len() && s[i] == b {
                e += 1;
                i += 1;
            }
            let mut rest = Codes {
                bytes: [0; MAX_DEGREE],
                len: 0,
            };
            let mut removed = false;
            for &x in s {
                if x == b && !removed {
                    removed = true;
                    continue;
                }
                rest.bytes[rest.len] = x;
                rest.len += 1;
            }
            let site = site_of(b);
            rest.translate(n - site, n);
            let (partner, tail, sign) = if is_q(b) { (&dp, &tail_p, 1.0) } else { (&dq, &tail_q, -1.0) };
            let w = c.scale(sign * e as f64);
            let wm = w.modulus();
            for (k, (pc, pcoef)) in partner.iter().enumerate() {
                if wm * pcoef.modulus() < threshold {
                    skipped += wm * tail[k];
                    break;
                }
                let mut prod = merge(rest.as_slice(), pc.as_slice())?;
                prod.left_align(n);
                acc.add(prod.pack(), w * *pcoef);
            }
        }
        if acc.len() > MAX_TERMS {
            return Err(Error::TermCount {
                count: acc.len(),
                guard: MAX_TERMS,
            });
        }
    }
    let raw = acc.finish(n, 0.0);
    let kept = raw.pruned(threshold);
    let dropped = raw.norm() - kept.norm();
    Ok((kept, skipped + dropped))
}

/// Bracket with range bookkeeping: the contribution of part `m` of `f`
/// against part `m'` of `g` placed at relative offset `s'` is filed under
/// `nu = diam([0, m] U [s', s' + m'])`, capped at `N - 1`. Part `nu` never
/// holds a monomial longer than `nu`, and `nu <= m + m'`.
pub fn poisson_ranged<C: Coeff>(
    f: &RangeDecomposition<C>,
    g: &RangeDecomposition<C>,
) -> Result<RangeDecomposition<C>> {
    if f.n() != g.n() {
        return Err(Error::Dimension {
            expected: f.n(),
            got: g.n(),
        });
    }
    let n = f.n();
    let mut accs: Vec<Accumulator<C>> = (0..n).map(|_| Accumulator::new()).collect();
    let full = if n == 128 { u128::MAX } else { (1u128 << n) - 1 };
    let rotate = |mask: u128, s: usize| -> u128 {
        if s == 0 {
            mask
        } else {
            ((mask << s) | (mask >> (n - s))) & full
        }
    };
    for (mf, fp) in f.parts().iter().enumerate() {
        for (mg, gp) in g.parts().iter().enumerate() {
            for &(a, ca) in fp.terms() {
                let mask_a = a.support_mask();
                for &(b, cb) in gp.terms() {
                    let mask_b = b.support_mask();
                    for s in 0..n {
                        if rotate(mask_b, s) & mask_a == 0 {
                            continue;
                        }
                        let rel = if s <= mf { s as i64 } else { s as i64 - n as i64 };
                        let hi = (mf as i64).max(rel + mg as i64);
                        let lo = rel.min(0);
                        let nu = ((hi - lo) as usize).min(n - 1);
                        let bt = b.translate(s, n);
                        let mut err = None;
                        bracket_monomials(a, bt, |k, m| {
                            let (aligned, _) = m.left_aligned(n);
                            accs[nu].add(aligned, (ca * cb).scale(k));
                        })
                        .unwrap_or_else(|e| err = Some(e));
                        if let Some(e) = err {
                            return Err(e);
                        }
                    }
                }
            }
        }
    }
    let bound = bracket_norm_bound(&f.total(), &g.total());
    let parts = accs
        .into_iter()
        .map(|a| a.finish(n, EPS_PRUNE * bound))
        .collect();
    Ok(RangeDecomposition::from_parts(n, parts))
}

/// Convenience: ranged bracket of two plain seeds decomposed by actual
/// interaction length.
pub fn poisson_ranged_seeds<C: Coeff>(f: &Seed<C>, g: &Seed<C>) -> Result<RangeDecomposition<C>> {
    poisson_ranged(&range_decompose(f), &range_decompose(g))
}
