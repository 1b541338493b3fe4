//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Numeric arguments select a subset, e.g.
//! `cargo test --test acceptance -- 4 10`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use adiabatic_chain::circulant::{build_a_matrix, power, spectrum};
use adiabatic_chain::gibbs::{
    correlation_decay_scan, estimate, sample_values, single_site_moment, variance, CorrelationEstimator, SamplerConfig,
};
use adiabatic_chain::harness::{cmd_adiabatic, ExperimentConfig};
use adiabatic_chain::normal_form::{
    build_normal_form, build_quadratic_nf, InvariantEvaluator, NormalFormConfig,
};
use adiabatic_chain::poly::{bracket_norm_bound, measured_rate, poisson_seed, Monomial, RealSeed, Seed};
use adiabatic_chain::{hamiltonian, ChainParams, PhaseState};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, budget_s: f64, detail: String) -> Outcome {
    let t = elapsed.as_secs_f64();
    ensure(t < budget_s, format!("{detail}; {t:.1} s of {budget_s} s"))
}

fn random_state(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> PhaseState {
    PhaseState::new(
        (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
        (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn quadratic_commutation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for n in [8, 16, 32, 64] {
        for a in [0.02, 0.05, 0.1, 0.2] {
            let p = ChainParams::new(n, a, 1.0).map_err(err)?;
            let nf = build_quadratic_nf(&p, &NormalFormConfig::default()).map_err(err)?;
            let br = poisson_seed(&nf.h_omega_seed, &nf.zeta0_seed).map_err(err)?;
            let bound = nf.h_omega_seed.norm() * nf.zeta0_seed.norm();
            for _ in 0..100 {
                let v = br.extensive_eval(&random_state(n, 1.0, &mut rng)).map_err(err)?;
                worst = worst.max(v.abs() / bound);
            }
        }
    }
    let detail = format!("max |{{H_Omega, Z0}}| / (|h_Omega| |zeta0|) = {worst:.2e} (tol 1e-10)");
    ensure(worst <= 1e-10, detail.clone())?;
    within(start.elapsed(), 10.0, detail)
}

fn spectral_correctness() -> Outcome {
    let mut spec_err: f64 = 0.0;
    let mut decay_worst: f64 = 0.0;
    for n in [4, 5, 8, 13, 16, 32, 63, 64] {
        for a in [0.0, 0.02, 0.05, 0.1, 0.2, 1.0] {
            let p = ChainParams::new(n, a, 1.0).map_err(err)?;
            let m = build_a_matrix(&p).map_err(err)?;
            let dense = DMatrix::from_fn(n, n, |i, j| m.entry(i, j));
            let mut oracle: Vec<f64> = dense.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut ours = spectrum(&m).eigs.clone();
            oracle.sort_by(f64::total_cmp);
            ours.sort_by(f64::total_cmp);
            for (x, y) in oracle.iter().zip(&ours) {
                spec_err = spec_err.max((x - y).abs());
            }
            let q = power(&m, 0.25).map_err(err)?;
            for j in 1..=n / 2 {
                let bound = 2.0 * p.omega.sqrt() * (2.0 * p.mu).powi(j as i32 - 1);
                let e = q.row_entry(j).abs();
                if e > 1e-15 {
                    decay_worst = decay_worst.max(e / bound);
                }
            }
        }
    }
    ensure(
        spec_err <= 1e-12 && decay_worst <= 1.0,
        format!("eigenvalue error {spec_err:.2e} (tol 1e-12); max A^1/4 row entry / bound {decay_worst:.3}"),
    )
}

fn seed_strategy(n: usize) -> impl Strategy<Value = RealSeed> {
    // each factor adds one or two to the degree, at most three factors
    let kinds = [(1u32, 0u32), (0, 1), (1, 1), (2, 0), (0, 2)];
    let factor = (0..n.min(5), 0..kinds.len()).prop_map(move |(s, k)| (s, kinds[k].0, kinds[k].1));
    let term = (prop::collection::vec(factor, 1..=3), -1.0f64..1.0);
    prop::collection::vec(term, 1..6).prop_map(move |terms| {
        let terms = terms.into_iter().filter_map(|(f, c)| Monomial::from_factors(&f).ok().map(|m| (m, c)));
        Seed::from_terms(n, terms)
    })
}

fn seed_algebra() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(PtConfig {
        cases: 1200,
        failure_persistence: None,
        ..PtConfig::default()
    });
    let strategy = (4usize..=16)
        .prop_flat_map(|n| (seed_strategy(n), seed_strategy(n), seed_strategy(n), any::<u64>(), 1..n))
        .prop_filter("non-zero", |(f, g, h, _, _)| !f.is_empty() && !g.is_empty() && !h.is_empty());
    let stats = std::cell::Cell::new((0usize, 0.0f64, 0.0f64, 0.0f64));
    let result = runner.run(&strategy, |(f, g, h, seed, shift)| {
        let n = f.n();
        let fail = |m: String| TestCaseError::fail(m);
        prop_assert!(f.max_degree() <= 6 && g.max_degree() <= 6);
        let fg = poisson_seed(&f, &g).map_err(|e| fail(e.to_string()))?;
        let ratio = if bracket_norm_bound(&f, &g) > 0.0 {
            fg.norm() / bracket_norm_bound(&f, &g)
        } else {
            0.0
        };
        prop_assert!(ratio <= 1.0 + 1e-12, "bracket norm ratio {}", ratio);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_state(n, 1.0, &mut rng);
        let v = f.extensive_eval(&z).map_err(|e| fail(e.to_string()))?;
        let moved = f.extensive_eval(&z.shifted(shift)).map_err(|e| fail(e.to_string()))?;
        let translated = f.translate(shift).extensive_eval(&z).map_err(|e| fail(e.to_string()))?;
        let scale = f.map_coeffs(f64::abs).extensive_eval(&PhaseState::new(vec![1.0; n], vec![1.0; n]).unwrap()).unwrap();
        let t_err = (moved - v).abs().max((translated - v).abs()) / scale;
        prop_assert!(t_err <= 1e-12, "translation error {}", t_err);

        let br = |a: &RealSeed, b: &RealSeed| poisson_seed(a, b).map_err(|e| fail(e.to_string()));
        let jac = br(&f, &br(&g, &h)?)?.add(&br(&g, &br(&h, &f)?)?).add(&br(&h, &fg)?);
        let norm_product = f.norm() * g.norm() * h.norm();
        let j_err = jac.extensive_eval(&z).map_err(|e| fail(e.to_string()))?.abs() / norm_product;
        prop_assert!(j_err <= 1e-9, "Jacobi residual {}", j_err);
        let (k, r, t, j) = stats.get();
        stats.set((k + 1, r.max(ratio), t.max(t_err), j.max(j_err)));
        Ok(())
    });
    let (k, r, t, j) = stats.get();
    let detail = format!("{k} cases; max norm ratio {r:.3}, translation {t:.1e}, Jacobi {j:.1e} (tol 1e-9)");
    result.map_err(|e| format!("{detail}; {e}"))?;
    ensure(k >= 1000, detail.clone())?;
    within(start.elapsed(), 60.0, detail)
}

fn r3_config() -> NormalFormConfig {
    NormalFormConfig {
        compute_rho: false,
        ..NormalFormConfig::default()
    }
}

fn homological_residuals() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for a in [0.0, 0.05, 0.1] {
        let p = ChainParams::new(16, a, 1.0).map_err(err)?;
        let cfg = r3_config();
        let nf = build_quadratic_nf(&p, &cfg).map_err(err)?;
        let res = build_normal_form(&nf, 3, &cfg).map_err(err)?;
        let hom = res.orders.iter().map(|o| o.homological_residual).fold(0.0, f64::max);
        let ker = res.orders.iter().map(|o| o.z_kernel_residual).fold(0.0, f64::max);
        let ev = InvariantEvaluator::new(&res).map_err(err)?;
        let mut flow: f64 = 0.0;
        for _ in 0..20 {
            let z = random_state(16, 0.5, &mut rng);
            let r = ev.remainder(&z).map_err(err)?;
            let d = ev.flow_derivative(&p, &z).map_err(err)?;
            if r != 0.0 || d != 0.0 {
                flow = flow.max((d - r).abs() / r.abs());
            }
        }
        ok &= hom <= 1e-8 && ker <= 1e-10 && flow <= 1e-8;
        lines.push(format!("a={a}: homological {hom:.1e}, kernel {ker:.1e}, flow identity {flow:.1e}"));
    }
    let detail = lines.join("; ");
    ensure(ok, detail.clone())?;
    within(start.elapsed(), 300.0, detail)
}

fn decay_classes() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for a in [0.02, 0.05, 0.1] {
        let p = ChainParams::new(16, a, 1.0).map_err(err)?;
        let cfg = NormalFormConfig {
            compute_rho: false,
            ..NormalFormConfig::default()
        };
        let nf = build_quadratic_nf(&p, &cfg).map_err(err)?;
        let zeta = nf
            .decay_fit_zeta0
            .profile
            .iter()
            .enumerate()
            .map(|(m, v)| v / (8.0 * p.omega * (2.0 * p.mu).powi(m as i32)))
            .fold(0.0, f64::max);
        let rate = measured_rate(&nf.decay_fit_h1.profile, 1).unwrap_or(0.0);
        let res = build_normal_form(&nf, 2, &cfg).map_err(err)?;
        let fits_finite = res.orders.iter().all(|o| o.chi_fit.c.is_finite() && o.z_fit.c.is_finite());
        let fits: Vec<String> = res
            .orders
            .iter()
            .map(|o| format!("s={} sigma={:.2} C_chi={:.2e} C_Z={:.2e}", o.s, o.sigma_s, o.chi_fit.c, o.z_fit.c))
            .collect();
        ok &= zeta <= 1.0 && rate >= 0.9 * p.sigma1 && fits_finite;
        lines.push(format!(
            "a={a}: zeta0/bound {zeta:.3}, h1 rate {rate:.2} vs 0.9 sigma1 {:.2}, {}",
            0.9 * p.sigma1,
            fits.join(", ")
        ));
    }
    ensure(ok, lines.join("; "))
}

fn remainder_parity() -> Outcome {
    let mut total = 0;
    for (n, a, r) in [(8, 0.1, 1), (8, 0.1, 2), (16, 0.05, 2)] {
        let p = ChainParams::new(n, a, 1.0).map_err(err)?;
        let cfg = NormalFormConfig::default();
        let nf = build_quadratic_nf(&p, &cfg).map_err(err)?;
        let res = build_normal_form(&nf, r, &cfg).map_err(err)?;
        let rho = res.rho.as_ref().ok_or("remainder not expanded")?;
        let bad = rho.terms().iter().filter(|(m, _)| m.q_degree() % 2 == 0 || m.p_degree() % 2 == 0).count();
        if bad > 0 {
            return Err(format!("N={n} a={a} r={r}: {bad} of {} monomials with an even degree", rho.len()));
        }
        if rho.is_empty() {
            return Err(format!("N={n} a={a} r={r}: empty remainder"));
        }
        total += rho.len();
    }
    Ok(format!("{total} remainder monomials over three builds, all odd in x and odd in y"))
}

fn sampler(seed: u64, samples: usize) -> SamplerConfig {
    SamplerConfig {
        n_chains: 4,
        burn_in: 500,
        thinning: 5,
        samples_per_chain: samples,
        rng_seed: seed,
        n_batches: 32,
        ..SamplerConfig::default()
    }
}

fn sampler_calibration() -> Outcome {
    let start = Instant::now();
    let p = ChainParams::new(32, 0.1, 100.0).map_err(err)?;
    let set = sample_values(&p, &sampler(7, 2500), 2, |z, o| {
        o[0] = z.y.iter().map(|v| v * v).sum::<f64>() / 32.0;
        o[1] = hamiltonian(&p, z).unwrap() / 32.0;
    })
    .map_err(err)?;
    let y2 = estimate(&set.values[0], 32).map_err(err)?;
    let h = estimate(&set.values[1], 32).map_err(err)?;
    let y_dev = (y2.mean - 0.01).abs() / y2.std_error;
    let h_dev = (h.mean * 100.0 - 1.0).abs();
    let mut ok = y_dev <= 3.0 && h_dev <= 0.05;
    let mut lines = vec![format!("<y^2> off by {y_dev:.2} SE, <H>/N beta - 1 = {h_dev:.3}")];
    for beta in [1.0, 10.0, 100.0] {
        let p = ChainParams::new(16, 0.0, beta).map_err(err)?;
        let set = sample_values(&p, &sampler(8, 2500), 2, |z, o| {
            o[0] = z.x.iter().map(|v| v * v).sum::<f64>() / 16.0;
            o[1] = z.x.iter().map(|v| v.powi(4)).sum::<f64>() / 16.0;
        })
        .map_err(err)?;
        for (i, k) in [(0, 2), (1, 4)] {
            let e = estimate(&set.values[i], 32).map_err(err)?;
            let dev = (e.mean - single_site_moment(beta, k)).abs() / e.std_error;
            ok &= dev <= 3.0;
            lines.push(format!("beta={beta} <x^{k}> off by {dev:.2} SE"));
        }
    }
    let detail = lines.join(", ");
    ensure(ok, detail.clone())?;
    within(start.elapsed(), 120.0, detail)
}

fn correlation_decay() -> Outcome {
    let d: Vec<usize> = (1..=6).collect();
    let p = ChainParams::new(64, 0.2, 50.0).map_err(err)?;
    let scan = correlation_decay_scan(&p, &sampler(9, 250_000), &d, CorrelationEstimator::TranslationAveraged).map_err(err)?;
    let target = -(0.2f64).ln() - 1.0;
    let rate = scan.rate.ok_or_else(|| format!("fewer than two resolved distances: {:?}", scan.rows))?;
    let corr: Vec<String> = scan.rows.iter().map(|r| format!("{:.1e}", r.corr.mean)).collect();
    let p0 = ChainParams::new(64, 0.0, 50.0).map_err(err)?;
    let free = correlation_decay_scan(&p0, &sampler(10, 20_000), &d, CorrelationEstimator::TranslationAveraged).map_err(err)?;
    let z_max = free.rows.iter().map(|r| (r.corr.mean / r.corr.std_error).abs()).fold(0.0, f64::max);
    ensure(
        rate >= target && z_max <= 4.0,
        format!(
            "a=0.2: corr(d=1..6) [{}], rate {rate:.2} over d={:?} vs {target:.2}; a=0: max |corr|/SE {z_max:.2}",
            corr.join(", "),
            scan.fitted
        ),
    )
}

fn variance_lower_bound() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for a in [0.05, 0.1] {
        let base = ChainParams::new(32, a, 40.0).map_err(err)?;
        let cfg = NormalFormConfig {
            compute_rho: false,
            ..NormalFormConfig::default()
        };
        let nf = build_quadratic_nf(&base, &cfg).map_err(err)?;
        let res = build_normal_form(&nf, 2, &cfg).map_err(err)?;
        let evs: Vec<InvariantEvaluator> = (0..=2)
            .map(|r| {
                let mut e = InvariantEvaluator::truncated(&res, r)?;
                e.prune(1e-10);
                Ok(e)
            })
            .collect::<adiabatic_chain::Result<_>>()
            .map_err(err)?;
        let betas = [20.0, 40.0, 80.0];
        let mut vars = vec![Vec::new(); 3];
        for (bi, &beta) in betas.iter().enumerate() {
            let p = base.with_beta(beta).map_err(err)?;
            let set = sample_values(&p, &sampler(20 + bi as u64, 1000), 3, |z, o| {
                for (slot, e) in o.iter_mut().zip(&evs) {
                    *slot = e.phi(z).unwrap();
                }
            })
            .map_err(err)?;
            for r in 0..=2 {
                let v = variance(&set.values[r], 32).map_err(err)?.mean;
                let scaled = v * beta * beta / (32.0 * p.big_omega * p.big_omega);
                ok &= scaled >= 0.1;
                vars[r].push((beta.ln(), v.ln(), scaled));
            }
        }
        for (r, pts) in vars.iter().enumerate() {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
            let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
                / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
            ok &= (slope + 2.0).abs() <= 0.3;
            let min_scaled = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
            lines.push(format!("a={a} r={r}: slope {slope:.2}, min scaled variance {min_scaled:.2}"));
        }
    }
    ensure(ok, lines.join("; "))
}

fn experiment_config(out: &Path) -> ExperimentConfig {
    let text = format!(
        "model.n = 32\nmodel.a = 0.1\nexp.betas = 20, 40, 80\nexp.orders = 0, 1, 2\nexp.n_orbits = 300\n\
         exp.horizon_factor = 1\nexp.horizon_cap = 10000\nexp.seed = 2024\nnf.compute_rho = false\nexp.out = {}\n",
        out.display()
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn adiabatic_scaling(out: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = experiment_config(out);
    let s = cmd_adiabatic(&cfg, out).map_err(err)?;
    let mut ok = s.cells.iter().all(|c| c.n_orbits >= 300);
    let mut lines = Vec::new();
    for sc in &s.scaling {
        ok &= sc.strictly_decreasing;
        let cis: Vec<String> = s
            .cells
            .iter()
            .filter(|c| c.r == sc.r)
            .map(|c| format!("{:.1e} [{:.1e},{:.1e}]", c.median_ratio, c.median_ci[0], c.median_ci[1]))
            .collect();
        lines.push(format!("r={}: {}", sc.r, cis.join(" > ")));
    }
    let at40 = |r: usize| s.cells.iter().find(|c| c.r == r && c.beta == 40.0).map(|c| c.median_ratio);
    let (m0, m2) = (at40(0).ok_or("no r=0 cell")?, at40(2).ok_or("no r=2 cell")?);
    ok &= m2 <= m0 / 5.0;
    lines.push(format!("beta=40 r2/r0 = {:.1e}", m2 / m0));
    let detail = lines.join("; ");
    ensure(ok, detail.clone())?;
    within(start.elapsed(), 3600.0, detail)
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let mut cfg = experiment_config(second);
    cfg.threads = 2;
    cmd_adiabatic(&cfg, second).map_err(err)?;
    let mut same = Vec::new();
    for f in ["summary.json", "orbits.csv", "gibbs.json"] {
        let a = std::fs::read(first.join(f)).map_err(err)?;
        let b = std::fs::read(second.join(f)).map_err(err)?;
        if a != b {
            return Err(format!("{f} differs between runs"));
        }
        same.push(format!("{f} ({} bytes)", a.len()));
    }
    Ok(format!("identical on rerun with another thread count: {}", same.join(", ")))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |k: usize| selected.is_empty() || selected.contains(&k);
    let dir = tempfile::tempdir().expect("temporary directory");
    let (first, second) = (dir.path().join("run1"), dir.path().join("run2"));
    let names = [
        "quadratic normal form commutation",
        "spectral correctness",
        "seed-algebra laws",
        "homological residuals",
        "decay classes",
        "remainder parity",
        "sampler calibration",
        "correlation decay",
        "variance lower bound",
        "adiabatic-invariance scaling",
        "determinism",
    ];
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let k = i + 1;
        if !want(k) {
            continue;
        }
        let start = Instant::now();
        let outcome = match k {
            1 => quadratic_commutation(),
            2 => spectral_correctness(),
            3 => seed_algebra(),
            4 => homological_residuals(),
            5 => decay_classes(),
            6 => remainder_parity(),
            7 => sampler_calibration(),
            8 => correlation_decay(),
            9 => variance_lower_bound(),
            10 => adiabatic_scaling(&first),
            _ => {
                if first.join("summary.json").exists() {
                    determinism(&first, &second)
                } else {
                    adiabatic_scaling(&first).and_then(|_| determinism(&first, &second))
                }
            }
        };
        let t = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {k:>2} {name} ({t:.1} s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {k:>2} {name} ({t:.1} s): {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
