//! Command orchestration: configuration, normal-form builds, the invariant
//! suite and the adiabatic-invariance experiment.
//!
//! Configuration is a flat `key = value` file. Keys carry a section prefix
//! (`model.`, `nf.`, `gibbs.`, `dyn.`, `exp.`); lists are comma separated and
//! `#` starts a comment. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chain_model::{hamiltonian, ChainParams, PhaseState};
use crate::circulant::{build_a_matrix, power, spectrum};
use crate::dynamics::{integrate, IntegratorConfig, Integrator, Scheme};
use crate::error::{Error, Result};
use crate::gibbs::{estimate, sample, sample_values, variance, EstimateRecord, SamplerConfig};
use crate::normal_form::{build_normal_form, build_quadratic_nf, InvariantEvaluator, NormalFormConfig, NormalFormResult};
use crate::poly::{bracket_norm_bound, measured_rate, poisson_seed, Monomial, RealSeed, Seed};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    pub a: f64,
    /// Temperature used by `build` and `check`.
    pub beta: f64,
    /// Order built by `build` and `check`.
    pub r: usize,
    pub nf: NormalFormConfig,
    /// `Phi` monomials below this fraction of `||Phi||` are dropped before
    /// evaluating along orbits.
    pub eval_prune: f64,
    pub sampler: SamplerConfig,
    /// Burn-in sweeps of each independent chain that draws one initial condition.
    pub orbit_burn_in: usize,
    pub scheme: Scheme,
    /// Time step; `None` uses `0.01 / omega`.
    pub dt: Option<f64>,
    /// Longest time between recorded samples of `Phi` along an orbit.
    pub sample_interval: f64,
    /// Fewest samples per orbit; shortens the interval on short horizons.
    pub min_samples: usize,
    pub betas: Vec<f64>,
    pub orders: Vec<usize>,
    pub n_orbits: usize,
    /// Horizon is `min(horizon_factor * beta^{r/2}, horizon_cap)`.
    pub horizon_factor: f64,
    pub horizon_cap: f64,
    /// Upper bound on recorded samples per orbit.
    pub max_samples: usize,
    /// Thresholds for the fraction of orbits with ratio `>= delta`; `None`
    /// uses `{1, 1/sqrt(beta), 0.1}`.
    pub deltas: Option<Vec<f64>>,
    pub bootstrap: usize,
    /// Multiplies every tolerance of the `check` suite.
    pub tolerance_scale: f64,
    /// Seeds to load and verify in `check` instead of a fresh round trip.
    pub seed_dir: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 32,
            a: 0.1,
            beta: 40.0,
            r: 2,
            nf: NormalFormConfig::default(),
            eval_prune: 1e-10,
            sampler: SamplerConfig {
                n_chains: 4,
                burn_in: 500,
                thinning: 5,
                samples_per_chain: 1000,
                ..SamplerConfig::default()
            },
            orbit_burn_in: 300,
            scheme: Scheme::Yoshida4,
            dt: None,
            sample_interval: 0.2,
            min_samples: 100,
            betas: vec![20.0, 40.0, 80.0],
            orders: vec![0, 1, 2],
            n_orbits: 100,
            horizon_factor: 1.0,
            horizon_cap: 1e4,
            max_samples: 1_000_000,
            deltas: None,
            bootstrap: 1000,
            tolerance_scale: 1.0,
            seed_dir: None,
            seed: 1,
            threads: 1,
            out: PathBuf::from("out"),
        }
    }
}

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config(format!("line {line}: {}", msg.into()))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(line, format!("bad value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(line, key, s.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(line, format!("bad value {v:?} for {key}"))),
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected key = value, got {body:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "model.n" => c.n = parse_num(line, k, v)?,
                "model.a" => c.a = parse_num(line, k, v)?,
                "model.beta" => c.beta = parse_num(line, k, v)?,
                "nf.r" => c.r = parse_num(line, k, v)?,
                "nf.eps_trunc" => c.nf.eps_trunc = parse_num(line, k, v)?,
                "nf.prune_rel" => c.nf.prune_rel = parse_num(line, k, v)?,
                "nf.neumann_prune_rel" => c.nf.neumann_prune_rel = parse_num(line, k, v)?,
                "nf.neumann_tol" => c.nf.neumann_tol = parse_num(line, k, v)?,
                "nf.max_iter" => c.nf.max_iter = parse_num(line, k, v)?,
                "nf.residual_tol" => c.nf.residual_tol = parse_num(line, k, v)?,
                "nf.projection_tol" => c.nf.projection_tol = parse_num(line, k, v)?,
                "nf.compute_rho" => c.nf.compute_rho = parse_bool(line, k, v)?,
                "nf.structural_check" => c.nf.structural_check = parse_bool(line, k, v)?,
                "nf.eval_prune" => c.eval_prune = parse_num(line, k, v)?,
                "gibbs.n_chains" => c.sampler.n_chains = parse_num(line, k, v)?,
                "gibbs.burn_in" => c.sampler.burn_in = parse_num(line, k, v)?,
                "gibbs.thinning" => c.sampler.thinning = parse_num(line, k, v)?,
                "gibbs.samples_per_chain" => c.sampler.samples_per_chain = parse_num(line, k, v)?,
                "gibbs.proposal_std" => c.sampler.proposal_std = Some(parse_num(line, k, v)?),
                "gibbs.n_batches" => c.sampler.n_batches = parse_num(line, k, v)?,
                "gibbs.orbit_burn_in" => c.orbit_burn_in = parse_num(line, k, v)?,
                "dyn.scheme" => c.scheme = v.parse().map_err(|e: Error| cfg_err(line, e.to_string()))?,
                "dyn.dt" => c.dt = Some(parse_num(line, k, v)?),
                "dyn.sample_interval" => c.sample_interval = parse_num(line, k, v)?,
                "dyn.min_samples" => c.min_samples = parse_num(line, k, v)?,
                "exp.betas" => c.betas = parse_list(line, k, v)?,
                "exp.orders" => c.orders = parse_list(line, k, v)?,
                "exp.n_orbits" => c.n_orbits = parse_num(line, k, v)?,
                "exp.horizon_factor" => c.horizon_factor = parse_num(line, k, v)?,
                "exp.horizon_cap" => c.horizon_cap = parse_num(line, k, v)?,
                "exp.max_samples" => c.max_samples = parse_num(line, k, v)?,
                "exp.deltas" => c.deltas = Some(parse_list(line, k, v)?),
                "exp.bootstrap" => c.bootstrap = parse_num(line, k, v)?,
                "exp.tolerance_scale" => c.tolerance_scale = parse_num(line, k, v)?,
                "exp.seed_dir" => c.seed_dir = Some(PathBuf::from(v)),
                "exp.seed" => c.seed = parse_num(line, k, v)?,
                "exp.threads" => c.threads = parse_num(line, k, v)?,
                "exp.out" => c.out = PathBuf::from(v),
                _ => return Err(cfg_err(line, format!("unknown key {k:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        ChainParams::new(self.n, self.a, self.beta).map_err(|e| Error::Config(e.to_string()))?;
        if self.r == 0 {
            return bad("nf.r must be at least 1".into());
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad(format!("exp.betas {:?} must be positive", self.betas));
        }
        if self.orders.is_empty() {
            return bad("exp.orders is empty".into());
        }
        if self.n_orbits < 2 {
            return bad("exp.n_orbits must be at least 2".into());
        }
        if !(self.horizon_factor > 0.0 && self.horizon_cap > 0.0) {
            return bad("horizon factor and cap must be positive".into());
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return bad(format!("dyn.sample_interval={} must be positive", self.sample_interval));
        }
        if self.min_samples < 2 {
            return bad("dyn.min_samples must be at least 2".into());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return bad(format!("dyn.dt={dt} must be positive"));
            }
        }
        if !(self.eval_prune >= 0.0 && self.eval_prune < 1.0) {
            return bad(format!("nf.eval_prune={} outside [0, 1)", self.eval_prune));
        }
        if !(self.tolerance_scale > 0.0) {
            return bad("exp.tolerance_scale must be positive".into());
        }
        if self.bootstrap < 10 {
            return bad("exp.bootstrap needs at least 10 resamples".into());
        }
        if let Some(d) = &self.deltas {
            if d.is_empty() || d.iter().any(|v| !(*v > 0.0)) {
                return bad("exp.deltas must be positive".into());
            }
        }
        self.sampler.validate()
    }

    pub fn params(&self) -> Result<ChainParams> {
        ChainParams::new(self.n, self.a, self.beta)
    }

    fn sampler_for(&self, tag: u64) -> SamplerConfig {
        SamplerConfig {
            rng_seed: derive_seed(self.seed, tag),
            threads: self.threads,
            ..self.sampler.clone()
        }
    }

    fn integrator_for(&self, params: &ChainParams, t_end: f64) -> Result<IntegratorConfig> {
        let mut ic = IntegratorConfig::default_for(params, t_end);
        ic.scheme = self.scheme;
        if let Some(dt) = self.dt {
            ic.dt = dt;
        }
        let interval = self.sample_interval.min(t_end / self.min_samples.max(1) as f64);
        ic.sample_stride = ((interval / ic.dt).floor() as usize).max(1);
        ic.validate()?;
        let (steps, _) = ic.grid();
        let samples = steps / ic.sample_stride + 1;
        if samples > self.max_samples {
            return Err(Error::Config(format!(
                "horizon {t_end} needs {samples} samples per orbit, above exp.max_samples={}",
                self.max_samples
            )));
        }
        Ok(ic)
    }

    fn horizon(&self, beta: f64, r: usize) -> f64 {
        (self.horizon_factor * beta.powf(r as f64 / 2.0)).min(self.horizon_cap)
    }
}

/// Independent stream for each use of the master seed.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Process exit code for an error: 2 for invalid input, 3 for numerical
/// failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. }
        | Error::Residual { .. }
        | Error::Projection { .. }
        | Error::TermCount { .. }
        | Error::BlowUp { .. }
        | Error::Representation(_) => 3,
        _ => 2,
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub n: usize,
    pub a: f64,
    pub omega: f64,
    pub big_omega: f64,
    pub mu: f64,
}

impl ModelSummary {
    fn new(p: &ChainParams) -> Self {
        ModelSummary {
            n: p.n,
            a: p.a,
            omega: p.omega,
            big_omega: p.big_omega,
            mu: p.mu,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderSummary {
    pub s: usize,
    pub homological_residual: f64,
    pub structural_residual: Option<f64>,
    pub z_kernel_residual: f64,
    pub chi_range_residual: f64,
    pub neumann_iterations: usize,
    pub neumann_first_ratio: f64,
    pub chi_terms: usize,
    pub phi_terms: usize,
    pub sigma_s: f64,
    pub chi_fit_c: f64,
    pub z_fit_c: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BuildSummary {
    pub model: ModelSummary,
    pub r: usize,
    pub dropped_mass: f64,
    pub rho_terms: Option<usize>,
    pub orders: Vec<OrderSummary>,
}

impl BuildSummary {
    fn new(res: &NormalFormResult) -> Self {
        BuildSummary {
            model: ModelSummary::new(&res.params),
            r: res.r,
            dropped_mass: res.dropped_mass,
            rho_terms: res.rho.as_ref().map(|s| s.len()),
            orders: res
                .orders
                .iter()
                .map(|o| OrderSummary {
                    s: o.s,
                    homological_residual: o.homological_residual,
                    structural_residual: o.structural_residual,
                    z_kernel_residual: o.z_kernel_residual,
                    chi_range_residual: o.chi_range_residual,
                    neumann_iterations: o.neumann.iterations,
                    neumann_first_ratio: o.neumann.ratios.first().copied().unwrap_or(0.0),
                    chi_terms: o.chi_terms,
                    phi_terms: o.phi_terms,
                    sigma_s: o.sigma_s,
                    chi_fit_c: o.chi_fit.c,
                    z_fit_c: o.z_fit.c,
                })
                .collect(),
        }
    }
}

fn build_result(cfg: &ExperimentConfig, params: &ChainParams, r: usize) -> Result<NormalFormResult> {
    let nf = build_quadratic_nf(params, &cfg.nf)?;
    build_normal_form(&nf, r, &cfg.nf)
}

/// Builds the normal form to order `nf.r`, writes the seeds, a manifest and
/// `summary.json` to `out`.
pub fn cmd_build(cfg: &ExperimentConfig, out: &Path) -> Result<BuildSummary> {
    let params = cfg.params()?;
    let res = build_result(cfg, &params, cfg.r)?;
    fs::create_dir_all(out)?;
    res.save(out)?;
    let summary = BuildSummary::new(&res);
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------- check

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    /// Computed fine but above tolerance.
    Tolerance,
    /// The check itself failed to run.
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub outcome: Outcome,
    pub detail: String,
}

impl CheckRow {
    fn measured(name: &str, value: f64, tolerance: f64) -> Self {
        let outcome = if value <= tolerance { Outcome::Pass } else { Outcome::Tolerance };
        CheckRow {
            name: name.into(),
            value,
            tolerance,
            outcome,
            detail: String::new(),
        }
    }

    fn failed(name: &str, e: &Error) -> Self {
        CheckRow {
            name: name.into(),
            value: f64::NAN,
            tolerance: f64::NAN,
            outcome: Outcome::Error,
            detail: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub model: ModelSummary,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.outcome == Outcome::Pass)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<28} {:>12} {:>12}  result\n", "check", "value", "tolerance");
        for r in &self.rows {
            let tag = match r.outcome {
                Outcome::Pass => "pass".to_string(),
                Outcome::Tolerance => "FAIL (tolerance)".to_string(),
                Outcome::Error => format!("FAIL (error: {})", r.detail),
            };
            s.push_str(&format!("{:<28} {:>12.3e} {:>12.3e}  {tag}\n", r.name, r.value, r.tolerance));
        }
        s
    }
}

fn random_state(n: usize, amp: f64, rng: &mut ChaCha8Rng) -> PhaseState {
    PhaseState {
        x: (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
        y: (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn random_seed(n: usize, rng: &mut ChaCha8Rng) -> Result<RealSeed> {
    let terms = (0..rng.gen_range(1..5))
        .map(|_| {
            let deg = rng.gen_range(1..4);
            let f: Vec<(usize, u32, u32)> = (0..deg)
                .map(|_| {
                    let q = rng.gen_bool(0.5) as u32;
                    (rng.gen_range(0..3), q, 1 - q)
                })
                .collect();
            Ok((Monomial::from_factors(&f)?, rng.gen_range(-1.0..1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Seed::from_terms(n, terms))
}

fn run_check<F: FnOnce() -> Result<(f64, f64)>>(rows: &mut Vec<CheckRow>, name: &str, scale: f64, f: F) {
    rows.push(match f() {
        Ok((value, tol)) => CheckRow::measured(name, value, tol * scale),
        Err(e) => CheckRow::failed(name, &e),
    });
}

/// Runs the invariant suite for the configured model and order.
pub fn cmd_check(cfg: &ExperimentConfig, out: &Path) -> Result<CheckReport> {
    let params = cfg.params()?;
    let n = params.n;
    let k = cfg.tolerance_scale;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xC4EC));
    let mut rows = Vec::new();

    run_check(&mut rows, "spectrum", k, || {
        let eigs = spectrum(&build_a_matrix(&params)?).eigs;
        let err = (0..n)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                (eigs[j] - (1.0 + 2.0 * params.a - 2.0 * params.a * th.cos())).abs()
            })
            .fold(0.0, f64::max);
        Ok((err, 1e-12))
    });
    run_check(&mut rows, "a_quarter_row_decay", k, || {
        let q = power(&build_a_matrix(&params)?, 0.25)?;
        let worst = (1..=n / 2)
            .map(|j| q.row_entry(j).abs() / (2.0 * params.omega.sqrt() * (2.0 * params.mu).powi(j as i32 - 1)))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        Ok((worst, 1.0))
    });

    let nf = build_quadratic_nf(&params, &cfg.nf);
    run_check(&mut rows, "quadratic_commutation", k, || {
        let nf = nf.as_ref().map_err(clone_err)?;
        let br = poisson_seed(&nf.h_omega_seed, &nf.zeta0_seed)?;
        let scale = nf.h_omega_seed.norm() * nf.zeta0_seed.norm();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            worst = worst.max(br.extensive_eval(&random_state(n, 1.0, &mut rng))?.abs());
        }
        Ok((if scale > 0.0 { worst / scale } else { worst }, 1e-10))
    });
    run_check(&mut rows, "zeta0_decay_bound", k, || {
        let nf = nf.as_ref().map_err(clone_err)?;
        let worst = nf
            .decay_fit_zeta0
            .profile
            .iter()
            .enumerate()
            .map(|(m, v)| v / (8.0 * params.omega * (2.0 * params.mu).powi(m as i32)))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        Ok((worst, 1.0))
    });
    if params.a > 0.0 {
        run_check(&mut rows, "h1_decay_rate", k, || {
            let nf = nf.as_ref().map_err(clone_err)?;
            let rate = measured_rate(&nf.decay_fit_h1.profile, 1)
                .ok_or_else(|| Error::InsufficientSamples("h1 has fewer than two range parts".into()))?;
            // reported as a shortfall so that smaller is better
            Ok((0.9 * params.sigma1 / rate, 1.0))
        });
    }

    let mut bound = 0.0f64;
    let mut jacobi = 0.0f64;
    let mut translation = 0.0f64;
    let algebra: Result<()> = (|| {
        let m = n.min(16);
        for _ in 0..200 {
            let (f, g, h) = (random_seed(m, &mut rng)?, random_seed(m, &mut rng)?, random_seed(m, &mut rng)?);
            let fg = poisson_seed(&f, &g)?;
            let b = bracket_norm_bound(&f, &g);
            if b > 0.0 {
                bound = bound.max(fg.norm() / b);
            }
            let j = poisson_seed(&f, &poisson_seed(&g, &h)?)?
                .add(&poisson_seed(&g, &poisson_seed(&h, &f)?)?)
                .add(&poisson_seed(&h, &fg)?);
            let z = random_state(m, 1.0, &mut rng);
            let scale = (f.norm() * g.norm() * h.norm()).max(f64::MIN_POSITIVE);
            jacobi = jacobi.max(j.extensive_eval(&z)?.abs() / scale);
            let v = f.extensive_eval(&z)?;
            let s = rng.gen_range(1..m);
            translation = translation.max((f.extensive_eval(&z.shifted(s))? - v).abs() / v.abs().max(1e-300));
        }
        Ok(())
    })();
    match algebra {
        Ok(()) => {
            rows.push(CheckRow::measured("bracket_norm_bound", bound, k));
            rows.push(CheckRow::measured("jacobi_identity", jacobi, 1e-9 * k));
            rows.push(CheckRow::measured("translation_invariance", translation, 1e-10 * k));
        }
        Err(e) => rows.push(CheckRow::failed("seed_algebra", &e)),
    }

    let res = nf
        .as_ref()
        .map_err(clone_err)
        .and_then(|nf| build_normal_form(nf, cfg.r, &cfg.nf));
    match &res {
        Err(e) => rows.push(CheckRow::failed("normal_form_build", e)),
        Ok(res) => {
            let max = |f: &dyn Fn(&crate::normal_form::OrderDiagnostics) -> f64| {
                res.orders.iter().map(f).fold(0.0, f64::max)
            };
            rows.push(CheckRow::measured("homological_residual", max(&|o| o.homological_residual), 1e-8 * k));
            rows.push(CheckRow::measured("z_kernel_residual", max(&|o| o.z_kernel_residual), 1e-10 * k));
            rows.push(CheckRow::measured("chi_range_residual", max(&|o| o.chi_range_residual), 1e-10 * k));
            if cfg.nf.structural_check {
                rows.push(CheckRow::measured(
                    "structural_residual",
                    max(&|o| o.structural_residual.unwrap_or(f64::NAN)),
                    1e-6 * k,
                ));
            }
            if let Some(rho) = &res.rho {
                let odd = rho.terms().iter().filter(|t| t.0.q_degree() % 2 == 0 || t.0.p_degree() % 2 == 0).count();
                rows.push(CheckRow::measured("remainder_parity", odd as f64, 0.0));
            }
            run_check(&mut rows, "remainder_identity", k, || {
                let ev = InvariantEvaluator::new(res)?;
                let amp = (1.0 / params.beta).sqrt();
                let mut worst: f64 = 0.0;
                for _ in 0..20 {
                    let z = random_state(n, amp, &mut rng);
                    let r = ev.remainder(&z)?;
                    let d = ev.flow_derivative(&params, &z)?;
                    worst = worst.max((d - r).abs() / r.abs().max(1e-300));
                }
                Ok((worst, 1e-6))
            });
            run_check(&mut rows, "seed_round_trip", k, || {
                let dir = match &cfg.seed_dir {
                    Some(d) => d.clone(),
                    None => {
                        let d = out.join("seeds");
                        res.save(&d)?;
                        d
                    }
                };
                let back = NormalFormResult::load(&dir, params.beta)?;
                let z = random_state(n, 0.3, &mut rng);
                let a = InvariantEvaluator::new(res)?.phi(&z)?;
                let b = InvariantEvaluator::new(&back)?.phi(&z)?;
                Ok(((a - b).abs() / a.abs(), 1e-12))
            });
        }
    }

    run_check(&mut rows, "energy_drift", k, || {
        let amp = (2.0 / params.beta).sqrt();
        let z0 = random_state(n, amp, &mut rng);
        let h0 = hamiltonian(&params, &z0)?;
        let mut z = z0.clone();
        let dt = 0.01 / params.omega;
        let mut integ = Integrator::new(&params, cfg.scheme);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            integ.advance(&mut z, dt, 100)?;
            worst = worst.max((hamiltonian(&params, &z)? - h0).abs() / h0);
        }
        Ok((worst, 1e-6))
    });
    run_check(&mut rows, "time_reversal", k, || {
        let z0 = random_state(n, 0.3, &mut rng);
        let mut z = z0.clone();
        let mut integ = Integrator::new(&params, cfg.scheme);
        integ.advance(&mut z, 0.01, 1000)?;
        integ.advance(&mut z, -0.01, 1000)?;
        let err = z.x.iter().chain(&z.y).zip(z0.x.iter().chain(&z0.y)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((err, 1e-8))
    });
    let scfg = cfg.sampler_for(0x6199);
    let gibbs = sample_values(&params, &scfg, 2, |z, o| {
        o[0] = z.y.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        o[1] = hamiltonian(&params, z).unwrap_or(f64::NAN) / z.len() as f64;
    });
    match gibbs {
        Err(e) => rows.push(CheckRow::failed("gibbs_sampler", &e)),
        Ok(set) => {
            run_check(&mut rows, "momentum_variance_se", k, || {
                let e = estimate(&set.values[0], scfg.n_batches)?;
                Ok(((e.mean - 1.0 / params.beta).abs() / e.std_error, 3.0))
            });
            run_check(&mut rows, "energy_per_site", k, || {
                let e = estimate(&set.values[1], scfg.n_batches)?;
                Ok(((e.mean * params.beta - 1.0).abs(), 0.05))
            });
            rows.push(CheckRow::measured("acceptance_band", (set.acceptance - 0.4).abs(), 0.2 * k));
        }
    }

    let report = CheckReport {
        model: ModelSummary::new(&params),
        rows,
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::Divergence { order, ratio, iterations } => Error::Divergence {
            order: *order,
            ratio: *ratio,
            iterations: *iterations,
        },
        other => Error::Parameter(other.to_string()),
    }
}

// ------------------------------------------------------------ adiabatic

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub orbit_id: usize,
    pub beta: f64,
    pub r: usize,
    pub t_end: f64,
    pub phi0: f64,
    pub delta_phi: f64,
    pub sigma2_t: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FractionAbove {
    pub delta: f64,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub beta: f64,
    pub r: usize,
    pub t_end: f64,
    /// Time between recorded samples.
    pub sample_spacing: f64,
    pub n_orbits: usize,
    pub excluded: usize,
    pub gibbs_variance: f64,
    pub gibbs_variance_se: f64,
    pub median_ratio: f64,
    pub median_ci: [f64; 2],
    pub mean_ratio: f64,
    pub median_abs_delta_phi: f64,
    pub fractions: Vec<FractionAbove>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub r: usize,
    pub betas: Vec<f64>,
    pub median_ratios: Vec<f64>,
    /// Every step up in `beta` has the upper CI bound below the previous
    /// lower CI bound.
    pub strictly_decreasing: bool,
    /// Median ratio divided by the order-0 median ratio at the same `beta`.
    pub relative_to_order0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdiabaticSummary {
    pub model: ModelSummary,
    pub seed: u64,
    pub built_order: usize,
    pub build_dropped_mass: f64,
    pub eval_prune: f64,
    pub eval_dropped_mass: Vec<f64>,
    pub dt: f64,
    pub sample_interval: f64,
    pub cells: Vec<CellSummary>,
    pub scaling: Vec<ScalingSummary>,
    pub excluded_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GibbsCell {
    pub beta: f64,
    pub acceptance: f64,
    pub estimates: Vec<EstimateRecord>,
}

fn median_of(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Percentile bootstrap 95% interval of the median.
pub fn bootstrap_median_ci(v: &[f64], resamples: usize, seed: u64) -> [f64; 2] {
    if v.is_empty() {
        return [f64::NAN, f64::NAN];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meds: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: Vec<f64> = (0..v.len()).map(|_| v[rng.gen_range(0..v.len())]).collect();
            median_of(&s)
        })
        .collect();
    meds.sort_by(f64::total_cmp);
    let at = |q: f64| meds[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    [at(0.025), at(0.975)]
}

fn run_parallel<T: Send, F: Fn(usize) -> T + Sync>(count: usize, threads: usize, f: F) -> Vec<T> {
    let threads = threads.max(1).min(count.max(1));
    if threads == 1 {
        return (0..count).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || (t..count).step_by(threads).map(|i| (i, f(i))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (i, v) in h.join().expect("worker panicked") {
                out[i] = Some(v);
            }
        }
    });
    out.into_iter().map(|v| v.expect("every index visited")).collect()
}

const CSV_HEADER: &str = "orbit_id,beta,r,t_end,phi0,delta_phi,sigma2_t,ratio";

fn csv_row(o: &OrbitRecord) -> String {
    format!(
        "{},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        o.orbit_id, o.beta, o.r, o.t_end, o.phi0, o.delta_phi, o.sigma2_t, o.ratio
    )
}

/// Runs the experiment over every `(beta, r)` cell and writes
/// `summary.json`, `orbits.csv` and `gibbs.json` to `out`.
pub fn cmd_adiabatic(cfg: &ExperimentConfig, out: &Path) -> Result<AdiabaticSummary> {
    let base = cfg.params()?;
    let mut orders = cfg.orders.clone();
    if !orders.contains(&0) {
        orders.push(0);
    }
    orders.sort_unstable();
    orders.dedup();
    let r_max = *orders.last().unwrap_or(&0);
    let res = build_result(cfg, &base, r_max.max(1))?;
    let mut evaluators = Vec::new();
    let mut eval_dropped = Vec::new();
    for &r in &orders {
        let mut ev = InvariantEvaluator::truncated(&res, r)?;
        eval_dropped.push(ev.prune(cfg.eval_prune));
        evaluators.push(ev);
    }

    fs::create_dir_all(out)?;
    let mut csv = std::io::BufWriter::new(fs::File::create(out.join("orbits.csv"))?);
    writeln!(csv, "{CSV_HEADER}")?;
    let mut cells = Vec::new();
    let mut gibbs_cells = Vec::new();
    let mut dt_used = f64::NAN;
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let params = base.with_beta(beta)?;
        let scfg = cfg.sampler_for(0x100 + bi as u64);
        let k = evaluators.len();
        let set = sample_values(&params, &scfg, k + 2, |z, o| {
            for (slot, ev) in o.iter_mut().zip(&evaluators) {
                *slot = ev.phi(z).unwrap_or(f64::NAN);
            }
            o[k] = hamiltonian(&params, z).unwrap_or(f64::NAN) / z.len() as f64;
            o[k + 1] = z.y.iter().map(|v| v * v).sum::<f64>() / z.len() as f64;
        })?;
        let hash = scfg.config_hash(&params);
        let mut estimates = vec![
            EstimateRecord::new("energy_per_site", &estimate(&set.values[k], scfg.n_batches)?, hash),
            EstimateRecord::new("momentum_square", &estimate(&set.values[k + 1], scfg.n_batches)?, hash),
        ];
        let mut variances = Vec::new();
        for (i, &r) in orders.iter().enumerate() {
            let v = variance(&set.values[i], scfg.n_batches)?;
            estimates.push(EstimateRecord::new(&format!("variance_phi_r{r}"), &v, hash));
            variances.push(v);
        }
        gibbs_cells.push(GibbsCell {
            beta,
            acceptance: set.acceptance,
            estimates,
        });

        // one independent chain per initial condition, shared by all orders
        let icfg = SamplerConfig {
            n_chains: cfg.n_orbits,
            samples_per_chain: 1,
            burn_in: cfg.orbit_burn_in,
            thinning: 1,
            ..cfg.sampler_for(0x200 + bi as u64)
        };
        let inits: Vec<PhaseState> = sample(&params, &icfg)?.collect();

        for (i, &r) in orders.iter().enumerate() {
            let t_end = cfg.horizon(beta, r);
            let ic = cfg.integrator_for(&params, t_end)?;
            dt_used = ic.grid().1;
            let ev = &evaluators[i];
            let var = variances[i].mean;
            let obs = |z: &PhaseState| ev.phi(z);
            let results = run_parallel(inits.len(), cfg.threads, |o| {
                integrate(&params, &inits[o], &ic, &[&obs]).map(|(_, st)| st.into_iter().next())
            });
            let mut records = Vec::new();
            let mut excluded = 0;
            for (o, r_) in results.into_iter().enumerate() {
                match r_ {
                    Ok(Some(st)) => records.push(OrbitRecord {
                        orbit_id: o,
                        beta,
                        r,
                        t_end,
                        phi0: st.values[0],
                        delta_phi: st.values[st.values.len() - 1] - st.values[0],
                        sigma2_t: st.time_variance,
                        ratio: st.time_variance / var,
                    }),
                    Ok(None) => excluded += 1,
                    Err(Error::BlowUp { step }) => {
                        eprintln!("orbit {o} (beta={beta}, r={r}) blew up at step {step}; excluded");
                        excluded += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            for rec in &records {
                writeln!(csv, "{}", csv_row(rec))?;
            }
            csv.flush()?;
            let ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
            let deltas = cfg.deltas.clone().unwrap_or_else(|| vec![1.0, 1.0 / beta.sqrt(), 0.1]);
            let nr = ratios.len().max(1) as f64;
            cells.push(CellSummary {
                beta,
                r,
                t_end,
                sample_spacing: ic.sample_stride as f64 * ic.grid().1,
                n_orbits: records.len(),
                excluded,
                gibbs_variance: var,
                gibbs_variance_se: variances[i].std_error,
                median_ratio: median_of(&ratios),
                median_ci: bootstrap_median_ci(&ratios, cfg.bootstrap, derive_seed(cfg.seed, 0x300 + (bi * 64 + r) as u64)),
                mean_ratio: ratios.iter().sum::<f64>() / nr,
                median_abs_delta_phi: median_of(&records.iter().map(|r| r.delta_phi.abs()).collect::<Vec<_>>()),
                fractions: deltas
                    .into_iter()
                    .map(|d| FractionAbove {
                        delta: d,
                        fraction: ratios.iter().filter(|&&x| x >= d).count() as f64 / nr,
                    })
                    .collect(),
            });
        }
    }
    drop(csv);

    let scaling = orders
        .iter()
        .map(|&r| {
            let mine: Vec<&CellSummary> = cells.iter().filter(|c| c.r == r).collect();
            let strictly_decreasing = mine.windows(2).all(|w| w[1].median_ci[1] < w[0].median_ci[0]);
            let relative_to_order0 = mine
                .iter()
                .map(|c| {
                    let base = cells.iter().find(|b| b.r == 0 && b.beta == c.beta).map_or(f64::NAN, |b| b.median_ratio);
                    c.median_ratio / base
                })
                .collect();
            ScalingSummary {
                r,
                betas: mine.iter().map(|c| c.beta).collect(),
                median_ratios: mine.iter().map(|c| c.median_ratio).collect(),
                strictly_decreasing,
                relative_to_order0,
            }
        })
        .collect();
    let summary = AdiabaticSummary {
        model: ModelSummary::new(&base),
        seed: cfg.seed,
        built_order: res.r,
        build_dropped_mass: res.dropped_mass,
        eval_prune: cfg.eval_prune,
        eval_dropped_mass: eval_dropped,
        dt: dt_used,
        sample_interval: cfg.sample_interval,
        excluded_total: cells.iter().map(|c| c.excluded).sum(),
        cells,
        scaling,
    };
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("gibbs.json"), &gibbs_cells)?;
    Ok(summary)
}

/// Loads `--config`, applies the command-line overrides and validates.
pub fn load_config(path: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        cfg.threads = t;
    }
    Ok(cfg)
}

/// Key/value view of a config, for logs.
pub fn describe(cfg: &ExperimentConfig) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    m.insert("model.n", cfg.n.to_string());
    m.insert("model.a", cfg.a.to_string());
    m.insert("model.beta", cfg.beta.to_string());
    m.insert("nf.r", cfg.r.to_string());
    m.insert("exp.betas", format!("{:?}", cfg.betas));
    m.insert("exp.orders", format!("{:?}", cfg.orders));
    m.insert("exp.n_orbits", cfg.n_orbits.to_string());
    m.insert("exp.seed", cfg.seed.to_string());
    m
}
