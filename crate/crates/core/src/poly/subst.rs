//! Circulant linear changes of variables applied to seeds.

use rustc_hash::FxHashMap;

use super::monomial::{merge, Codes, Monomial, Slot, MAX_DEGREE};
use super::seed::{Accumulator, RealSeed, EPS_PRUNE};
use crate::circulant::CirculantSymmetric;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Substitution {
    pub seed: RealSeed,
    /// `l1` mass of row coefficients dropped below `eps_trunc`, per row.
    pub discarded_row_mass: f64,
    /// `l1` mass of expanded terms removed by pruning.
    pub pruned_mass: f64,
}

/// Row `i` of `M` as the sparse list `(k, M[i][k])` of kept coefficients.
fn truncated_row(m: &CirculantSymmetric, eps_trunc: f64) -> (Vec<(usize, f64)>, f64) {
    let mut kept = Vec::new();
    let mut dropped = 0.0;
    for k in 0..m.n() {
        let c = m.row_entry(k);
        if c == 0.0 {
            continue;
        }
        if c.abs() < eps_trunc {
            dropped += c.abs();
        } else {
            kept.push((k, c));
        }
    }
    (kept, dropped)
}

/// Replaces `q_i -> sum_k Mq[i][k] q_k` and `p_i -> sum_k Mp[i][k] p_k`
/// (identity when `mp` is `None`) and returns the left-aligned seed of the
/// transformed extensive function.
pub fn linear_substitute(
    f: &RealSeed,
    mq: &CirculantSymmetric,
    mp: Option<&CirculantSymmetric>,
    eps_trunc: f64,
) -> Result<Substitution> {
    let n = f.n();
    if mq.n() != n || mp.is_some_and(|m| m.n() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: mq.n(),
        });
    }
    let (row_q, drop_q) = truncated_row(mq, eps_trunc);
    let identity = CirculantSymmetric::identity(n);
    let (row_p, drop_p) = truncated_row(mp.unwrap_or(&identity), eps_trunc);
    let row_norm = |r: &[(usize, f64)]| r.iter().map(|t| t.1.abs()).sum::<f64>();
    let (nq, np) = (row_norm(&row_q), row_norm(&row_p));

    let mut acc: Accumulator<f64> = Accumulator::new();
    let mut bound = 0.0;
    for &(m, c) in f.terms() {
        let mut partial: FxHashMap<Monomial, f64> = FxHashMap::default();
        partial.insert(Monomial::ONE, c);
        let mut term_bound = c.abs();
        for fa in m.factors() {
            for (slot, e, row, rn) in [
                (Slot::Q, fa.x_exp, &row_q, nq),
                (Slot::P, fa.y_exp, &row_p, np),
            ] {
                for _ in 0..e {
                    term_bound *= rn;
                    let mut next: FxHashMap<Monomial, f64> = FxHashMap::default();
                    for (pm, pc) in &partial {
                        let pcodes = pm.codes();
                        for &(k, rc) in row.iter() {
                            let v = Monomial::var((fa.site + k) % n, slot).codes();
                            let prod = merge(pcodes.as_slice(), v.as_slice())?;
                            *next.entry(prod.pack()).or_insert(0.0) += pc * rc;
                        }
                    }
                    partial = next;
                }
            }
        }
        bound += term_bound;
        for (pm, pc) in partial {
            let mut codes: Codes = pm.codes();
            debug_assert!(codes.len <= MAX_DEGREE);
            codes.left_align(n);
            acc.add(codes.pack(), pc);
        }
    }
    let full = acc.finish(n, 0.0);
    let seed = full.pruned(EPS_PRUNE * bound);
    let pruned_mass = full.norm() - seed.norm();
    Ok(Substitution {
        seed,
        discarded_row_mass: drop_q.max(drop_p),
        pruned_mass,
    })
}
