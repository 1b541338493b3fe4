//! Lie-transform normal form around the resonant quadratic part.
//!
//! In normal coordinates `q = A^{1/4} x`, `p = A^{-1/4} y` the Hamiltonian is
//! `H = H_Omega + Z_0 + H_1` with `H_Omega = Omega/2 sum (q^2 + p^2)` and
//! `{H_Omega, Z_0} = 0`. The generating sequence `chi_1..chi_r` solves
//!
//! `L_{H0} chi_s = Z_s + Psi_s`,  `Z_s = -Pi_N Psi_s`,
//!
//! where `L_F g = {F, g}` and `Psi_s` collects everything of order `s` in
//! `T_chi Z = H` that is already known. The invariant is
//! `Phi^(r) = sum_{s<=r} E_s H_Omega` and `d Phi^(r)/dt = {Phi_r, H_1}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::chain_model::{ChainParams, PhaseState};
use crate::circulant::{build_a_matrix, power, CirculantSymmetric, NormalCoordinateMap};
use crate::error::{Error, Result};
use crate::poly::io::{read_real, write_real};
use crate::poly::{
    bracket_norm_bound, fit_decay, from_complex, linear_substitute, poisson_seed_thresholded, poisson_seed_tracked, range_decompose, to_complex, ComplexSeed,
    DecayFit, Monomial, RealSeed, Seed, Slot, EPS_PRUNE,
};

#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormConfig {
    /// Row coefficients of `A^{-1/4}` below this are dropped before expanding `H_1`.
    pub eps_trunc: f64,
    /// Relative pruning level for brackets.
    pub prune_rel: f64,
    /// Pruning level inside the Neumann series, relative to its first term.
    pub neumann_prune_rel: f64,
    /// Neumann series stops once the residual falls below `tol * ||g||`.
    pub neumann_tol: f64,
    pub max_iter: usize,
    /// A posteriori bound on `||L_{H0} f - g|| / ||g||` after inversion.
    pub residual_tol: f64,
    /// Allowed kernel component, relative, when inverting `L_Omega`.
    pub projection_tol: f64,
    /// Expand `rho = {Phi_r, H_1}` as a seed. Without it the remainder is
    /// evaluated from gradients.
    pub compute_rho: bool,
    /// Recompute `E_s H_0` through an independent series for the
    /// order-by-order check of `T_chi Z = H`.
    pub structural_check: bool,
}

impl Default for NormalFormConfig {
    fn default() -> Self {
        NormalFormConfig {
            eps_trunc: 1e-15,
            prune_rel: EPS_PRUNE,
            neumann_prune_rel: 0.3 * EPS_PRUNE,
            neumann_tol: 1e-12,
            max_iter: 64,
            residual_tol: 1e-8,
            projection_tol: 1e-10,
            compute_rho: true,
            structural_check: true,
        }
    }
}

/// `H_0 = H_Omega + Z_0` and `H_1` as seeds in normal coordinates.
#[derive(Clone, Debug)]
pub struct QuadraticNormalForm {
    pub params: ChainParams,
    pub omega: f64,
    /// `A^{1/2} = Omega I + B'`.
    pub sqrt_a: CirculantSymmetric,
    pub coords: NormalCoordinateMap,
    pub h_omega_seed: RealSeed,
    pub zeta0_seed: RealSeed,
    pub decay_fit_zeta0: DecayFit,
    pub h1_seed_q: RealSeed,
    pub decay_fit_h1: DecayFit,
    /// Row mass of `A^{-1/4}` dropped before expanding `H_1`.
    pub h1_row_truncation: f64,
    /// `l1` mass pruned from the expanded `H_1`.
    pub h1_pruned_mass: f64,
}

fn quad(i: usize, j: usize, slot: Slot) -> Monomial {
    Monomial::var(i, slot).mul(Monomial::var(j, slot)).expect("degree 2")
}

pub fn build_quadratic_nf(params: &ChainParams, cfg: &NormalFormConfig) -> Result<QuadraticNormalForm> {
    if params.mu >= 0.5 {
        return Err(Error::Parameter(format!("mu={} must be below 1/2", params.mu)));
    }
    let n = params.n;
    let a = build_a_matrix(params)?;
    let sqrt_a = power(&a, 0.5)?;
    let omega = sqrt_a.row_entry(0);
    let coords = NormalCoordinateMap::new(params)?;

    let h_omega_seed = Seed::from_terms(
        n,
        [(quad(0, 0, Slot::Q), 0.5 * omega), (quad(0, 0, Slot::P), 0.5 * omega)],
    );
    // 1/2 q.A^{1/2}q pairs q_0 q_m with q_0 q_{N-m}; the antipodal site of an
    // even chain has no partner.
    let mut zeta = Vec::new();
    for m in 1..=n / 2 {
        let b = sqrt_a.row_entry(m);
        // cosine-sum rounding leaves dust where the exact entry vanishes
        if b.abs() <= EPS_PRUNE * omega {
            continue;
        }
        let c = if 2 * m == n { 0.5 * b } else { b };
        for slot in [Slot::Q, Slot::P] {
            zeta.push((quad(0, m, slot), c));
        }
    }
    let zeta0_seed = Seed::from_terms(n, zeta);
    let decay_fit_zeta0 = fit_decay(&range_decompose(&zeta0_seed), params.sigma0);

    let h1_x = Seed::monomial(n, Monomial::from_factors(&[(0, 4, 0)])?, 0.25);
    let sub = linear_substitute(&h1_x, &coords.a_minus_quarter, None, cfg.eps_trunc)?;
    let decay_fit_h1 = fit_decay(&range_decompose(&sub.seed), params.sigma1);
    Ok(QuadraticNormalForm {
        params: params.clone(),
        omega,
        sqrt_a,
        coords,
        h_omega_seed,
        zeta0_seed,
        decay_fit_zeta0,
        h1_seed_q: sub.seed,
        decay_fit_h1,
        h1_row_truncation: sub.discarded_row_mass,
        h1_pruned_mass: sub.pruned_mass,
    })
}

/// `|k| - |j|` of `xi^j eta^k`.
fn eta_excess(m: Monomial) -> i64 {
    m.p_degree() as i64 - m.q_degree() as i64
}

/// `L_Omega xi^j eta^k = i Omega (|k| - |j|) xi^j eta^k`.
pub fn lie_omega(f: &ComplexSeed, omega: f64) -> ComplexSeed {
    Seed::from_terms(
        f.n(),
        f.terms()
            .iter()
            .map(|&(m, c)| (m, c * Complex64::new(0.0, omega * eta_excess(m) as f64))),
    )
}

/// Resonant monomials, `|j| = |k|`.
pub fn project_kernel(f: &ComplexSeed) -> ComplexSeed {
    f.filter(|m, _| eta_excess(m) == 0)
}

pub fn project_range(f: &ComplexSeed) -> ComplexSeed {
    f.filter(|m, _| eta_excess(m) != 0)
}

/// `L_Omega^{-1} g`; fails if `g` carries a kernel component above
/// `tol * ||g||`.
pub fn invert_lie_omega(g: &ComplexSeed, omega: f64, tol: f64) -> Result<ComplexSeed> {
    let kernel = project_kernel(g).norm();
    if kernel > tol * g.norm() {
        return Err(Error::Projection {
            residual: kernel,
            tolerance: tol * g.norm(),
        });
    }
    Ok(Seed::from_terms(
        g.n(),
        g.terms().iter().filter(|t| eta_excess(t.0) != 0).map(|&(m, c)| {
            (m, c / Complex64::new(0.0, omega * eta_excess(m) as f64))
        }),
    ))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeumannReport {
    /// Number of `K` applications.
    pub iterations: usize,
    /// `||K^l f_0|| / ||K^{l-1} f_0||` for every iterate.
    pub ratios: Vec<f64>,
    /// `||L_{H0} f - g|| / ||g||`, recomputed afresh.
    pub residual: f64,
}

/// The operator `L_{H0} = L_Omega + L_{Z0}` in complex variables, with
/// bookkeeping of the mass dropped by pruning.
pub struct LieH0 {
    pub omega: f64,
    pub zeta0: ComplexSeed,
    prune_rel: f64,
    dropped: f64,
}

impl LieH0 {
    pub fn new(omega: f64, zeta0: ComplexSeed, prune_rel: f64) -> Self {
        LieH0 {
            omega,
            zeta0,
            prune_rel,
            dropped: 0.0,
        }
    }

    fn bracket(&mut self, f: &ComplexSeed, g: &ComplexSeed) -> Result<ComplexSeed> {
        self.bracket_at(f, g, self.prune_rel * bracket_norm_bound(f, g))
    }

    fn bracket_at(&mut self, f: &ComplexSeed, g: &ComplexSeed, threshold: f64) -> Result<ComplexSeed> {
        let (h, lost) = poisson_seed_thresholded(f, g, threshold)?;
        self.dropped += lost;
        Ok(h)
    }

    pub fn apply(&mut self, f: &ComplexSeed) -> Result<ComplexSeed> {
        let z = self.zeta0.clone();
        Ok(lie_omega(f, self.omega).add(&self.bracket(&z, f)?))
    }

    /// Solves `L_{H0} f = g` for `g` in the range by
    /// `f = sum_l (-K)^l L_Omega^{-1} g`, `K = L_Omega^{-1} L_{Z0}`.
    pub fn invert(&mut self, g: &ComplexSeed, cfg: &NormalFormConfig) -> Result<(ComplexSeed, NeumannReport)> {
        self.invert_with_image(g, cfg).map(|(f, report, _)| (f, report))
    }

    /// As [`invert`](Self::invert), also returning `L_{H0} f`.
    fn invert_with_image(
        &mut self,
        g: &ComplexSeed,
        cfg: &NormalFormConfig,
    ) -> Result<(ComplexSeed, NeumannReport, ComplexSeed)> {
        let gn = g.norm();
        let mut term = invert_lie_omega(g, self.omega, cfg.projection_tol)?;
        let mut sum = term.clone();
        let mut report = NeumannReport::default();
        if gn == 0.0 {
            return Ok((sum, report, Seed::zero(g.n())));
        }
        let z = self.zeta0.clone();
        // Later terms are pruned on the scale of the first one.
        let threshold = cfg.neumann_prune_rel * bracket_norm_bound(&z, &term);
        loop {
            // L_{H0} of the partial sum misses g by exactly +-{Z0, term}.
            let lz = self.bracket_at(&z, &term, threshold)?;
            if lz.norm() <= cfg.neumann_tol * gn {
                break;
            }
            if report.iterations >= cfg.max_iter {
                return Err(Error::Divergence {
                    order: 0,
                    ratio: report.ratios.last().copied().unwrap_or(f64::NAN),
                    iterations: report.iterations,
                });
            }
            let next = -&invert_lie_omega(&lz, self.omega, cfg.projection_tol)?;
            let ratio = next.norm() / term.norm();
            report.iterations += 1;
            report.ratios.push(ratio);
            if report.iterations == 1 && ratio >= 1.0 {
                return Err(Error::Divergence {
                    order: 0,
                    ratio,
                    iterations: 1,
                });
            }
            sum = sum.add(&next);
            term = next;
        }
        let image = self.apply(&sum)?;
        report.residual = image.sub(g).norm() / gn;
        if report.residual > cfg.residual_tol {
            return Err(Error::Residual {
                order: 0,
                residual: report.residual,
                tolerance: cfg.residual_tol,
            });
        }
        Ok((sum, report, image))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderDiagnostics {
    pub s: usize,
    pub psi_norm: f64,
    pub chi_norm: f64,
    pub z_norm: f64,
    pub phi_norm: f64,
    pub chi_terms: usize,
    pub z_terms: usize,
    pub phi_terms: usize,
    /// `||L_{H0} chi_s - Z_s - Psi_s|| / ||Psi_s||`.
    pub homological_residual: f64,
    /// Range component of the stored real `Z_s`, relative.
    pub z_kernel_residual: f64,
    /// Kernel component of `chi_s`, relative.
    pub chi_range_residual: f64,
    /// `||E_s H_0 + sum_{l<=s} E_{s-l} Z_l - H_s|| / ||H_1||`, when checked.
    pub structural_residual: Option<f64>,
    pub neumann: NeumannReport,
    pub sigma_s: f64,
    pub chi_fit: DecayFit,
    pub z_fit: DecayFit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormResult {
    pub params: ChainParams,
    pub omega: f64,
    pub r: usize,
    /// `chi_1..chi_r` in `(xi, eta)`; [`save`](Self::save) writes them in
    /// `(x, y)`.
    pub chi: Vec<ComplexSeed>,
    /// `Z_0..Z_r`, `Z_0 = zeta_0`.
    pub z: Vec<RealSeed>,
    /// `Phi_0..Phi_r`, `Phi_0 = H_Omega`.
    pub phi: Vec<RealSeed>,
    /// Seed of `{Phi_r, H_1} = d Phi^(r)/dt`, if expanded.
    pub rho: Option<RealSeed>,
    pub h1: RealSeed,
    pub orders: Vec<OrderDiagnostics>,
    /// Upper bound on the `l1` mass dropped by pruning over the whole build.
    pub dropped_mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Base {
    HOmega,
    Zeta0,
    Z(usize),
}

struct Scheme {
    op: LieH0,
    chi: Vec<ComplexSeed>,
    h_omega: ComplexSeed,
    zeta0: ComplexSeed,
    z: Vec<ComplexSeed>,
    /// `E_k H_0`, filled order by order from the pieces of `Psi_k`.
    e_h0: Vec<ComplexSeed>,
    memo: BTreeMap<(usize, Base), ComplexSeed>,
}

impl Scheme {
    fn base(&self, b: Base) -> ComplexSeed {
        match b {
            Base::HOmega => self.h_omega.clone(),
            Base::Zeta0 => self.zeta0.clone(),
            Base::Z(l) => self.z[l].clone(),
        }
    }

    /// `E_k F = sum_{j=1}^k (j/k) L_{chi_j} E_{k-j} F`, memoized.
    fn e(&mut self, k: usize, b: Base) -> Result<ComplexSeed> {
        if k == 0 {
            return Ok(self.base(b));
        }
        if let Some(v) = self.memo.get(&(k, b)) {
            return Ok(v.clone());
        }
        let n = self.h_omega.n();
        let mut total = Seed::zero(n);
        for j in 1..=k {
            let inner = self.e(k - j, b)?;
            let chi = self.chi[j - 1].clone();
            let br = self.op.bracket(&chi, &inner)?;
            total = total.add(&br.scale(j as f64 / k as f64));
        }
        self.memo.insert((k, b), total.clone());
        Ok(total)
    }
}

fn rel(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Runs the homological scheme up to order `r`.
pub fn build_normal_form(nf: &QuadraticNormalForm, r: usize, cfg: &NormalFormConfig) -> Result<NormalFormResult> {
    if r == 0 {
        return Err(Error::Parameter("order r must be at least 1".into()));
    }
    let cap = crate::poly::MAX_DEGREE;
    if 2 * r + 4 > cap {
        return Err(Error::DegreeCap {
            degree: 2 * r + 4,
            cap,
        });
    }
    let n = nf.params.n;
    let h1_c = to_complex(&nf.h1_seed_q)?;
    let zeta0_c = to_complex(&nf.zeta0_seed)?;
    let h_omega = to_complex(&nf.h_omega_seed)?;
    let mut sch = Scheme {
        op: LieH0::new(nf.omega, zeta0_c.clone(), cfg.prune_rel),
        chi: Vec::new(),
        e_h0: vec![h_omega.add(&zeta0_c)],
        h_omega,
        zeta0: zeta0_c.clone(),
        z: vec![zeta0_c],
        memo: BTreeMap::new(),
    };
    let mut psis = Vec::new();
    let mut reports = Vec::new();
    for s in 1..=r {
        // P_s = sum_{j<s} (j/s) L_{chi_j} E_{s-j} H_0, so that E_s H_0 = L_{chi_s} H_0 + P_s.
        let mut part = Seed::zero(n);
        for j in 1..s {
            let inner = sch.e_h0[s - j].clone();
            let chi = sch.chi[j - 1].clone();
            let br = sch.op.bracket(&chi, &inner)?;
            part = part.add(&br.scale(j as f64 / s as f64));
        }
        let mut psi = if s == 1 { -&h1_c } else { part.clone() };
        for l in 1..s {
            psi = psi.add(&sch.e(s - l, Base::Z(l))?);
        }
        let z_s = -&project_kernel(&psi);
        let (chi_s, mut report, lhs) = sch.op.invert_with_image(&project_range(&psi), cfg).map_err(|e| match e {
            Error::Divergence { ratio, iterations, .. } => Error::Divergence {
                order: s,
                ratio,
                iterations,
            },
            Error::Residual { residual, tolerance, .. } => Error::Residual {
                order: s,
                residual,
                tolerance,
            },
            other => other,
        })?;
        report.residual = rel(lhs.sub(&z_s).sub(&psi).norm(), psi.norm());
        sch.e_h0.push(part.sub(&lhs));
        sch.chi.push(chi_s);
        sch.z.push(z_s);
        psis.push(psi);
        reports.push(report);
    }

    let mut phi = vec![nf.h_omega_seed.clone()];
    let mut phi_c = vec![sch.h_omega.clone()];
    for s in 1..=r {
        let e = sch.e(s, Base::HOmega)?;
        phi.push(from_complex(&e)?);
        phi_c.push(e);
    }

    // Order-s part of T_chi Z - H with E_s H_0 rebuilt from the separate
    // H_Omega and Z_0 series.
    let h1n = h1_c.norm();
    let mut structural = Vec::new();
    for s in 1..=r {
        if !cfg.structural_check {
            structural.push(None);
            continue;
        }
        let mut total = phi_c[s].add(&sch.e(s, Base::Zeta0)?);
        for l in 1..=s {
            total = total.add(&sch.e(s - l, Base::Z(l))?);
        }
        if s == 1 {
            total = total.sub(&h1_c);
        }
        structural.push(Some(rel(total.norm(), h1n)));
    }
    drop(phi_c);

    let z: Vec<RealSeed> = std::iter::once(Ok(nf.zeta0_seed.clone()))
        .chain(sch.z[1..].iter().map(from_complex))
        .collect::<Result<_>>()?;
    let mut dropped_mass = sch.op.dropped;
    let rho = if cfg.compute_rho {
        let (rho, lost) = poisson_seed_tracked(&phi[r], &nf.h1_seed_q, cfg.prune_rel)?;
        dropped_mass += lost;
        Some(rho)
    } else {
        None
    };

    let p = &nf.params;
    let mut orders = Vec::new();
    for s in 1..=r {
        let sigma_s = (s as f64 * p.sigma_star + (r - s) as f64 * p.sigma1) / r as f64;
        let zc = to_complex(&z[s])?;
        let cc = &sch.chi[s - 1];
        orders.push(OrderDiagnostics {
            s,
            psi_norm: psis[s - 1].norm(),
            chi_norm: cc.norm(),
            z_norm: z[s].norm(),
            phi_norm: phi[s].norm(),
            chi_terms: cc.len(),
            z_terms: z[s].len(),
            phi_terms: phi[s].len(),
            homological_residual: reports[s - 1].residual,
            z_kernel_residual: rel(project_range(&zc).norm(), zc.norm()),
            chi_range_residual: rel(project_kernel(cc).norm(), cc.norm()),
            structural_residual: structural[s - 1],
            neumann: reports[s - 1].clone(),
            sigma_s,
            chi_fit: fit_decay(&range_decompose(cc), sigma_s),
            z_fit: fit_decay(&range_decompose(&z[s]), sigma_s),
        });
    }
    Ok(NormalFormResult {
        params: nf.params.clone(),
        omega: nf.omega,
        r,
        chi: sch.chi,
        z,
        phi,
        rho,
        h1: nf.h1_seed_q.clone(),
        orders,
        dropped_mass,
    })
}

/// `Phi^(r)` and its time derivative as functions of the original `(x, y)`.
#[derive(Clone, Debug)]
pub struct InvariantEvaluator {
    coords: NormalCoordinateMap,
    phi: RealSeed,
    phi_top: RealSeed,
    h1: RealSeed,
    rho: Option<RealSeed>,
}

impl InvariantEvaluator {
    pub fn new(result: &NormalFormResult) -> Result<Self> {
        Self::truncated(result, result.r)
    }

    /// Evaluator of `Phi^(k) = Phi_0 + .. + Phi_k` for `k <= r`; the
    /// remainder is still that of the full order.
    pub fn truncated(result: &NormalFormResult, k: usize) -> Result<Self> {
        if k > result.r {
            return Err(Error::Parameter(format!("order {k} above built order {}", result.r)));
        }
        let n = result.params.n;
        let mut phi = Seed::zero(n);
        for p in &result.phi[..=k] {
            phi = phi.add(p);
        }
        Ok(InvariantEvaluator {
            coords: NormalCoordinateMap::new(&result.params)?,
            phi,
            phi_top: result.phi[result.r].clone(),
            h1: result.h1.clone(),
            rho: result.rho.clone(),
        })
    }

    /// Drops monomials of `Phi^(k)` with `|c| < tol * ||Phi^(k)||` and
    /// returns the dropped `l1` mass.
    pub fn prune(&mut self, tol: f64) -> f64 {
        let cut = tol * self.phi.norm();
        let before = self.phi.norm();
        self.phi = self.phi.pruned(cut);
        before - self.phi.norm()
    }

    pub fn phi_seed(&self) -> &RealSeed {
        &self.phi
    }

    pub fn normal_coords(&self, z: &PhaseState) -> Result<PhaseState> {
        self.coords.forward(z)
    }

    pub fn phi(&self, z: &PhaseState) -> Result<f64> {
        self.phi.extensive_eval(&self.coords.forward(z)?)
    }

    /// `R(z) = {Phi_r, H_1}(z)`, from the expanded seed when there is one
    /// and from gradients otherwise.
    pub fn remainder(&self, z: &PhaseState) -> Result<f64> {
        let w = self.coords.forward(z)?;
        match &self.rho {
            Some(rho) => rho.extensive_eval(&w),
            None => gradient_bracket(&self.phi_top, &self.h1, &w),
        }
    }
}

impl InvariantEvaluator {
    /// `d Phi^(k)/dt` along the flow of the full Hamiltonian, from the
    /// gradient of `Phi^(k)` in normal coordinates.
    pub fn flow_derivative(&self, params: &ChainParams, z: &PhaseState) -> Result<f64> {
        let w = self.coords.forward(z)?;
        let (gq, gp) = self.phi.extensive_gradient(&w)?;
        let mut f = vec![0.0; z.len()];
        crate::dynamics::force(params, &z.x, &mut f);
        // q' = A^{1/4} y, p' = A^{-1/4} (-dV/dx)
        let qdot = self.coords.a_quarter.apply(&z.y)?;
        let pdot = self.coords.a_minus_quarter.apply(&f)?;
        Ok((0..z.len()).map(|i| gq[i] * qdot[i] + gp[i] * pdot[i]).sum())
    }
}

/// `{f, g}` of two extensive functions at a point in normal coordinates.
pub fn gradient_bracket(f: &RealSeed, g: &RealSeed, w: &PhaseState) -> Result<f64> {
    let (fq, fp) = f.extensive_gradient(w)?;
    let (gq, gp) = g.extensive_gradient(w)?;
    Ok((0..fq.len()).map(|i| fq[i] * gp[i] - fp[i] * gq[i]).sum())
}

impl NormalFormResult {
    /// Writes one seed file per object and a `key=value` manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let put = |name: String, s: &RealSeed| fs::write(dir.join(name), write_real(s));
        for (i, c) in self.chi.iter().enumerate() {
            put(format!("chi_{}.seed", i + 1), &from_complex(c)?)?;
        }
        for (i, z) in self.z.iter().enumerate() {
            put(format!("z_{i}.seed"), z)?;
        }
        for (i, p) in self.phi.iter().enumerate() {
            put(format!("phi_{i}.seed"), p)?;
        }
        if let Some(rho) = &self.rho {
            put("rho.seed".into(), rho)?;
        }
        put("h1.seed".into(), &self.h1)?;
        fs::write(dir.join("manifest.txt"), self.manifest())?;
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let p = &self.params;
        let mut lines = vec![
            format!("N={}", p.n),
            format!("a={:.17e}", p.a),
            format!("r={}", self.r),
            format!("Omega={:.17e}", self.omega),
            format!("dropped_mass={:.6e}", self.dropped_mass),
        ];
        if let Some(rho) = &self.rho {
            lines.push(format!("rho_terms={}", rho.len()));
            lines.push(format!("rho_norm={:.6e}", rho.norm()));
        }
        for o in &self.orders {
            let s = o.s;
            lines.push(format!("order{s}.homological_residual={:.6e}", o.homological_residual));
            if let Some(v) = o.structural_residual {
                lines.push(format!("order{s}.structural_residual={v:.6e}"));
            }
            lines.push(format!("order{s}.z_kernel_residual={:.6e}", o.z_kernel_residual));
            lines.push(format!("order{s}.chi_range_residual={:.6e}", o.chi_range_residual));
            lines.push(format!("order{s}.neumann_iterations={}", o.neumann.iterations));
            lines.push(format!(
                "order{s}.neumann_first_ratio={:.6e}",
                o.neumann.ratios.first().copied().unwrap_or(0.0)
            ));
            lines.push(format!("order{s}.chi_terms={}", o.chi_terms));
            lines.push(format!("order{s}.phi_terms={}", o.phi_terms));
            lines.push(format!("order{s}.sigma_s={:.6e}", o.sigma_s));
            lines.push(format!("order{s}.chi_fit_C={:.6e}", o.chi_fit.c));
            lines.push(format!("order{s}.z_fit_C={:.6e}", o.z_fit.c));
        }
        lines.join("\n") + "\n"
    }

    /// Reads back the seeds written by [`save`](Self::save). Diagnostics are
    /// not restored.
    pub fn load(dir: &Path, beta: f64) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut kv = BTreeMap::new();
        for (i, line) in manifest.lines().enumerate() {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            kv.get(k).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("manifest lacks {k}"),
            })
        };
        let bad = |k: &str| Error::Parse {
            line: 0,
            msg: format!("bad manifest value for {k}"),
        };
        let n: usize = get("N")?.parse().map_err(|_| bad("N"))?;
        let a: f64 = get("a")?.parse().map_err(|_| bad("a"))?;
        let r: usize = get("r")?.parse().map_err(|_| bad("r"))?;
        let omega: f64 = get("Omega")?.parse().map_err(|_| bad("Omega"))?;
        let params = ChainParams::new(n, a, beta)?;
        let read = |name: String| -> Result<RealSeed> {
            let s = read_real(&fs::read_to_string(dir.join(&name))?)?;
            if s.n() != n {
                return Err(Error::Dimension { expected: n, got: s.n() });
            }
            Ok(s)
        };
        Ok(NormalFormResult {
            omega,
            r,
            chi: (1..=r)
                .map(|i| to_complex(&read(format!("chi_{i}.seed"))?))
                .collect::<Result<_>>()?,
            z: (0..=r).map(|i| read(format!("z_{i}.seed"))).collect::<Result<_>>()?,
            phi: (0..=r).map(|i| read(format!("phi_{i}.seed"))).collect::<Result<_>>()?,
            rho: if dir.join("rho.seed").exists() {
                Some(read("rho.seed".into())?)
            } else {
                None
            },
            h1: read("h1.seed".into())?,
            orders: Vec::new(),
            dropped_mass: get("dropped_mass")?.parse().map_err(|_| bad("dropped_mass"))?,
            params,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Integrator, Scheme as Stepper};
    use crate::poly::{measured_rate, poisson_seed};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> PhaseState {
        let x = (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        PhaseState::new(x, y).unwrap()
    }

    fn build(n: usize, a: f64, r: usize) -> (QuadraticNormalForm, NormalFormResult) {
        let params = ChainParams::new(n, a, 40.0).unwrap();
        let cfg = NormalFormConfig::default();
        let nf = build_quadratic_nf(&params, &cfg).unwrap();
        let res = build_normal_form(&nf, r, &cfg).unwrap();
        (nf, res)
    }

    fn cmono(f: &[(usize, u32, u32)]) -> Monomial {
        Monomial::from_factors(f).unwrap()
    }

    #[test]
    fn omega_for_four_sites() {
        let params = ChainParams::new(4, 0.1, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
        let expected = (1.0 + 2.0 * 1.2f64.sqrt() + 1.4f64.sqrt()) / 4.0;
        assert!((nf.omega - expected).abs() < 1e-14);
        assert!((expected - 1.093534).abs() < 1e-5);
    }

    #[test]
    fn uncoupled_chain() {
        let params = ChainParams::new(8, 0.0, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
        assert_eq!(nf.omega, 1.0);
        assert!(nf.zeta0_seed.is_empty());
        assert_eq!(nf.h1_seed_q.len(), 1);
        assert!((nf.h1_seed_q.coeff(cmono(&[(0, 4, 0)])) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn quadratic_seeds_reproduce_the_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, a) in &[(8, 0.05), (9, 0.2), (16, 0.1)] {
            let params = ChainParams::new(n, a, 1.0).unwrap();
            let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
            for _ in 0..20 {
                let w = random_state(n, 1.0, &mut rng);
                let got = nf.h_omega_seed.extensive_eval(&w).unwrap() + nf.zeta0_seed.extensive_eval(&w).unwrap();
                let aq = nf.sqrt_a.apply(&w.x).unwrap();
                let ap = nf.sqrt_a.apply(&w.y).unwrap();
                let want: f64 = 0.5 * (0..n).map(|i| w.x[i] * aq[i] + w.y[i] * ap[i]).sum::<f64>();
                assert!((got - want).abs() <= 1e-10 * want.abs(), "N={n} a={a}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn harmonic_part_commutes_with_zeta0() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ChainParams::new(16, 0.2, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
        let br = poisson_seed(&nf.h_omega_seed, &nf.zeta0_seed).unwrap();
        let scale = nf.h_omega_seed.norm() * nf.zeta0_seed.norm();
        for _ in 0..20 {
            let w = random_state(16, 1.0, &mut rng);
            assert!(br.extensive_eval(&w).unwrap().abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn zeta0_and_h1_decay() {
        for &a in &[0.02, 0.05, 0.1] {
            let params = ChainParams::new(32, a, 1.0).unwrap();
            let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
            let two_mu = 2.0 * params.mu;
            for (m, v) in nf.decay_fit_zeta0.profile.iter().enumerate() {
                assert!(*v <= 8.0 * params.omega * two_mu.powi(m as i32), "a={a} m={m}");
            }
            assert!(nf.decay_fit_zeta0.c.is_finite() && nf.decay_fit_zeta0.holds());
            let rate = measured_rate(&nf.decay_fit_h1.profile, 1).unwrap();
            assert!(rate >= 0.9 * params.sigma1, "a={a}: rate {rate} vs sigma1 {}", params.sigma1);
        }
    }

    #[test]
    fn lie_omega_is_diagonal() {
        let omega = 1.3;
        let f = Seed::from_terms(
            6,
            [
                (cmono(&[(0, 1, 1)]), Complex64::new(1.0, 0.0)),
                (cmono(&[(0, 2, 0), (1, 0, 1)]), Complex64::new(2.0, 0.5)),
            ],
        );
        let g = lie_omega(&f, omega);
        assert_eq!(g.coeff(cmono(&[(0, 1, 1)])), Complex64::new(0.0, 0.0));
        let c = g.coeff(cmono(&[(0, 2, 0), (1, 0, 1)]));
        assert!((c - Complex64::new(0.0, -omega) * Complex64::new(2.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn projectors_partition_terms() {
        let f = Seed::from_terms(
            6,
            [
                (cmono(&[(0, 1, 1)]), Complex64::new(1.0, 0.0)),
                (cmono(&[(0, 4, 0)]), Complex64::new(0.0, 2.0)),
                (cmono(&[(0, 1, 0), (2, 2, 1)]), Complex64::new(-0.5, 0.5)),
            ],
        );
        let (k, r) = (project_kernel(&f), project_range(&f));
        assert_eq!(k.len(), 1);
        assert_eq!(k.coeff(cmono(&[(0, 1, 1)])), Complex64::new(1.0, 0.0));
        assert!(project_kernel(&Seed::monomial(6, cmono(&[(0, 4, 0)]), Complex64::new(1.0, 0.0))).is_empty());
        assert!((f.norm() - k.norm() - r.norm()).abs() < 1e-15);
        assert_eq!(k.add(&r), f);
    }

    #[test]
    fn inverse_of_lie_omega() {
        let omega = 1.1;
        let g = Seed::monomial(6, cmono(&[(0, 4, 0)]), Complex64::new(1.0, 0.0));
        let f = invert_lie_omega(&g, omega, 1e-10).unwrap();
        let want = Complex64::new(1.0, 0.0) / Complex64::new(0.0, -4.0 * omega);
        assert!((f.coeff(cmono(&[(0, 4, 0)])) - want).norm() < 1e-15);
        assert!(invert_lie_omega(&Seed::zero(6), omega, 1e-10).unwrap().is_empty());
        let bad = Seed::monomial(6, cmono(&[(0, 1, 1)]), Complex64::new(1.0, 0.0));
        assert!(matches!(invert_lie_omega(&bad, omega, 1e-10), Err(Error::Projection { .. })));

        // round trip and the 1/(2 Omega) contraction on even-degree inputs
        let params = ChainParams::new(12, 0.1, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &NormalFormConfig::default()).unwrap();
        let h = project_range(&to_complex(&nf.h1_seed_q).unwrap());
        let f = invert_lie_omega(&h, omega, 1e-10).unwrap();
        assert!(lie_omega(&f, omega).sub(&h).norm() <= 1e-12 * h.norm());
        assert!(f.norm() <= h.norm() / (2.0 * omega) * (1.0 + 1e-12));
    }

    #[test]
    fn neumann_inversion() {
        let cfg = NormalFormConfig::default();
        // no coupling: a single term
        let params = ChainParams::new(16, 0.0, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &cfg).unwrap();
        let g = project_range(&to_complex(&nf.h1_seed_q).unwrap());
        let mut op = LieH0::new(nf.omega, to_complex(&nf.zeta0_seed).unwrap(), cfg.prune_rel);
        let (f, rep) = op.invert(&g, &cfg).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(f.sub(&invert_lie_omega(&g, nf.omega, 1e-10).unwrap()).norm() < 1e-15);

        let params = ChainParams::new(16, 0.05, 1.0).unwrap();
        let nf = build_quadratic_nf(&params, &cfg).unwrap();
        let g = project_range(&to_complex(&nf.h1_seed_q).unwrap());
        let mut op = LieH0::new(nf.omega, to_complex(&nf.zeta0_seed).unwrap(), cfg.prune_rel);
        let (_, rep) = op.invert(&g, &cfg).unwrap();
        assert!(rep.residual <= 1e-8);
        let first = rep.ratios[0];
        assert!(first < 0.5);
        assert!(rep.ratios.iter().all(|&q| q <= first + 0.1), "{:?}", rep.ratios);
    }

    #[test]
    fn neumann_divergence_is_reported() {
        let params = ChainParams::new(8, 0.2, 1.0).unwrap();
        let cfg = NormalFormConfig::default();
        let nf = build_quadratic_nf(&params, &cfg).unwrap();
        let g = project_range(&to_complex(&nf.h1_seed_q).unwrap());
        // a strong enough Z_0 against a weak harmonic part
        let mut op = LieH0::new(0.05, to_complex(&nf.zeta0_seed).unwrap(), cfg.prune_rel);
        match op.invert(&g, &cfg) {
            Err(Error::Divergence { ratio, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert!(ratio >= 1.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn single_oscillator_first_order() {
        let (nf, res) = build(8, 0.0, 1);
        // Z_1 = 3/8 I^2 with I = (q^2 + p^2)/2
        let z1 = &res.z[1];
        assert_eq!(z1.len(), 3);
        for (f, c) in [([(0, 4, 0)], 3.0 / 32.0), ([(0, 2, 2)], 6.0 / 32.0), ([(0, 0, 4)], 3.0 / 32.0)] {
            assert!((z1.coeff(cmono(&f)) - c).abs() < 1e-15);
        }
        let h1 = to_complex(&nf.h1_seed_q).unwrap();
        let want = -&invert_lie_omega(&project_range(&h1), 1.0, 1e-10).unwrap();
        assert!(res.chi[0].sub(&want).norm() < 1e-15);
    }

    #[test]
    fn scheme_residuals_and_degrees() {
        let (_, res) = build(8, 0.1, 2);
        for o in &res.orders {
            assert!(o.homological_residual <= 1e-8, "s={} {}", o.s, o.homological_residual);
            assert!(o.z_kernel_residual <= 1e-10);
            assert!(o.chi_range_residual <= 1e-10);
            assert!(o.structural_residual.unwrap() <= 1e-8);
            assert!(o.chi_fit.c.is_finite() && o.z_fit.c.is_finite());
        }
        for s in 1..=2 {
            assert!(res.chi[s - 1].is_homogeneous(2 * s + 2));
            assert!(res.z[s].is_homogeneous(2 * s + 2));
            assert!(res.phi[s].is_homogeneous(2 * s + 2));
        }
        let rho = res.rho.as_ref().unwrap();
        assert!(rho.is_homogeneous(8));
        assert_eq!(rho.parity(), Some((true, true)));
    }

    #[test]
    fn remainder_is_the_time_derivative() {
        let (_, res) = build(8, 0.1, 2);
        let params = res.params.clone();
        let ev = InvariantEvaluator::new(&res).unwrap();
        let mut no_rho = res.clone();
        no_rho.rho = None;
        let ev_grad = InvariantEvaluator::new(&no_rho).unwrap();
        let rho_abs = res.rho.as_ref().unwrap().map_coeffs(f64::abs);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let z = random_state(8, 0.4, &mut rng);
            let w = ev.normal_coords(&z).unwrap();
            let w_abs = PhaseState::new(w.x.iter().map(|v| v.abs()).collect(), w.y.iter().map(|v| v.abs()).collect()).unwrap();
            let scale = rho_abs.extensive_eval(&w_abs).unwrap();
            let r = ev.remainder(&z).unwrap();
            let dphi = ev.flow_derivative(&params, &z).unwrap();
            assert!((dphi - r).abs() <= 1e-8 * scale, "{dphi} vs {r} (scale {scale})");
            assert!((ev_grad.remainder(&z).unwrap() - r).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn finite_differences_along_a_trajectory() {
        let (_, res) = build(8, 0.1, 2);
        let params = res.params.clone();
        let ev = InvariantEvaluator::new(&res).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut z = random_state(8, 0.3, &mut rng);
        let mut integ = Integrator::new(&params, Stepper::Yoshida4);
        integ.advance(&mut z, 1e-3, 500).unwrap();
        let delta = 1e-3;
        let mut ahead = z.clone();
        integ.advance(&mut ahead, delta / 20.0, 20).unwrap();
        let mut behind = z.clone();
        integ.advance(&mut behind, -delta / 20.0, 20).unwrap();
        let fd = (ev.phi(&ahead).unwrap() - ev.phi(&behind).unwrap()) / (2.0 * delta);
        let r = ev.remainder(&z).unwrap();
        assert!((fd - r).abs() <= 1e-6 * r.abs() + 1e-9, "{fd} vs {r}");
    }

    #[test]
    fn evaluator_basics() {
        let (_, res) = build(8, 0.0, 1);
        let ev0 = InvariantEvaluator::truncated(&res, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = random_state(8, 0.5, &mut rng);
        let want: f64 = 0.5 * (0..8).map(|i| z.x[i] * z.x[i] + z.y[i] * z.y[i]).sum::<f64>();
        assert!((ev0.phi(&z).unwrap() - want).abs() < 1e-14);
        assert!(InvariantEvaluator::truncated(&res, 2).is_err());

        let (_, res) = build(8, 0.1, 2);
        let ev = InvariantEvaluator::new(&res).unwrap();
        let v = ev.phi(&z).unwrap();
        for s in 1..8 {
            assert!((ev.phi(&z.shifted(s)).unwrap() - v).abs() <= 1e-13 * v.abs());
        }
        let mut pruned = ev.clone();
        let lost = pruned.prune(1e-8);
        assert!(lost >= 0.0 && lost <= 1e-8 * ev.phi_seed().norm() * ev.phi_seed().len() as f64);
    }

    #[test]
    fn order_and_degree_limits() {
        let params = ChainParams::new(8, 0.1, 1.0).unwrap();
        let cfg = NormalFormConfig::default();
        let nf = build_quadratic_nf(&params, &cfg).unwrap();
        assert!(matches!(build_normal_form(&nf, 0, &cfg), Err(Error::Parameter(_))));
        assert!(matches!(build_normal_form(&nf, 7, &cfg), Err(Error::DegreeCap { .. })));
    }

    #[test]
    fn save_and_load_round_trip() {
        let (_, res) = build(8, 0.1, 2);
        let dir = tempfile::tempdir().unwrap();
        res.save(dir.path()).unwrap();
        let back = NormalFormResult::load(dir.path(), 40.0).unwrap();
        assert_eq!(back.r, 2);
        assert_eq!(back.phi, res.phi);
        assert_eq!(back.z, res.z);
        assert_eq!(back.rho, res.rho);
        for (a, b) in back.chi.iter().zip(&res.chi) {
            assert!(a.sub(b).norm() <= 1e-14 * b.norm());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = random_state(8, 0.5, &mut rng);
        let (e1, e2) = (InvariantEvaluator::new(&res).unwrap(), InvariantEvaluator::new(&back).unwrap());
        assert_eq!(e1.phi(&z).unwrap(), e2.phi(&z).unwrap());
    }
}
