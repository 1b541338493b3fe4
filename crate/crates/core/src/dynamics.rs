//! Symplectic integration of the chain and time statistics of observables.

use std::io::Write;

use crate::chain_model::{ChainParams, PhaseState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Kick-drift-kick, second order.
    Leapfrog,
    /// Triple-jump composition of leapfrog, fourth order.
    Yoshida4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leapfrog" => Ok(Scheme::Leapfrog),
            "yoshida4" => Ok(Scheme::Yoshida4),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Observables are sampled every `sample_stride` steps.
    pub sample_stride: usize,
    pub scheme: Scheme,
}

impl IntegratorConfig {
    /// `dt = 0.01 / omega`.
    pub fn default_for(params: &ChainParams, t_end: f64) -> Self {
        IntegratorConfig {
            dt: 1e-2 / params.omega,
            t_end,
            sample_stride: 10,
            scheme: Scheme::Yoshida4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt={} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end={} must be non-negative", self.t_end)));
        }
        if self.sample_stride == 0 {
            return Err(Error::Config("sample_stride must be positive".into()));
        }
        Ok(())
    }

    /// A warning when `dt * omega` exceeds 0.2.
    pub fn warning(&self, params: &ChainParams) -> Option<String> {
        (self.dt * params.omega > 0.2).then(|| {
            format!("dt*omega = {:.3} above 0.2; expect large integrator error", self.dt * params.omega)
        })
    }

    /// Number of steps and the step actually used: the step count is
    /// rounded up to a multiple of the stride and `dt` shrunk so the last
    /// sample falls on `t_end`.
    pub fn grid(&self) -> (usize, f64) {
        let raw = (self.t_end / self.dt).ceil() as usize;
        let blocks = raw.div_ceil(self.sample_stride);
        let steps = blocks * self.sample_stride;
        if steps == 0 {
            (0, self.dt)
        } else {
            (steps, self.t_end / steps as f64)
        }
    }
}

/// `-dV/dx` with the periodic three-point coupling.
pub fn force(params: &ChainParams, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let a = params.a;
    for j in 0..n {
        let left = x[if j == 0 { n - 1 } else { j - 1 }];
        let right = x[if j + 1 == n { 0 } else { j + 1 }];
        let xj = x[j];
        out[j] = -(xj + a * (2.0 * xj - left - right) + xj * xj * xj);
    }
}

const YOSHIDA_W1: f64 = 1.351_207_191_959_657_8; // 1 / (2 - 2^(1/3))
const YOSHIDA_W0: f64 = -1.702_414_383_919_315_3; // -2^(1/3) * W1

/// Stepper owning its scratch buffer.
pub struct Integrator<'a> {
    params: &'a ChainParams,
    scheme: Scheme,
    f: Vec<f64>,
}

impl<'a> Integrator<'a> {
    pub fn new(params: &'a ChainParams, scheme: Scheme) -> Self {
        Integrator {
            params,
            scheme,
            f: vec![0.0; params.n],
        }
    }

    fn leapfrog(&mut self, z: &mut PhaseState, h: f64) {
        let half = 0.5 * h;
        force(self.params, &z.x, &mut self.f);
        for (y, f) in z.y.iter_mut().zip(&self.f) {
            *y += half * f;
        }
        for (x, y) in z.x.iter_mut().zip(&z.y) {
            *x += h * y;
        }
        force(self.params, &z.x, &mut self.f);
        for (y, f) in z.y.iter_mut().zip(&self.f) {
            *y += half * f;
        }
    }

    pub fn step(&mut self, z: &mut PhaseState, dt: f64) {
        match self.scheme {
            Scheme::Leapfrog => self.leapfrog(z, dt),
            Scheme::Yoshida4 => {
                self.leapfrog(z, YOSHIDA_W1 * dt);
                self.leapfrog(z, YOSHIDA_W0 * dt);
                self.leapfrog(z, YOSHIDA_W1 * dt);
            }
        }
    }

    /// `steps` steps of size `dt` (negative `dt` runs backwards).
    pub fn advance(&mut self, z: &mut PhaseState, dt: f64, steps: usize) -> Result<()> {
        for k in 0..steps {
            self.step(z, dt);
            if !z.x.iter().chain(&z.y).all(|v| v.is_finite()) {
                return Err(Error::BlowUp { step: k + 1 });
            }
        }
        Ok(())
    }
}

/// Samples of one observable on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesStats {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub time_mean: f64,
    /// `mean(X^2) - mean(X)^2` under the trapezoid rule, clamped at 0.
    pub time_variance: f64,
    /// `max_t |X(t) - X(0)|`.
    pub max_drift: f64,
}

impl TimeSeriesStats {
    /// Trapezoid time averages on a (possibly non-uniform) grid; a single
    /// sample has zero variance.
    pub fn from_samples(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || t.len() != values.len() {
            return Err(Error::InsufficientSamples(format!(
                "{} times for {} values",
                t.len(),
                values.len()
            )));
        }
        let span = t[t.len() - 1] - t[0];
        let (mean, var) = if values.len() == 1 || span <= 0.0 {
            (values[0], 0.0)
        } else {
            let integral = |g: &dyn Fn(f64) -> f64| -> f64 {
                t.windows(2)
                    .zip(values.windows(2))
                    .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (g(vw[0]) + g(vw[1])))
                    .sum::<f64>()
                    / span
            };
            let mean = integral(&|v| v);
            // centred form, identical under the trapezoid rule but free of
            // cancellation
            let var = integral(&|v| (v - mean) * (v - mean));
            (mean, var)
        };
        let first = values[0];
        let max_drift = values.iter().map(|v| (v - first).abs()).fold(0.0, f64::max);
        Ok(TimeSeriesStats {
            t,
            values,
            time_mean: mean,
            time_variance: var.max(0.0),
            max_drift,
        })
    }
}

/// Mean and variance with equal weights on every sample.
pub fn uniform_mean_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InsufficientSamples("empty series".into()));
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    Ok((mean, var))
}

/// `Delta_t X = X(t) - X(0)`.
pub fn delta_phi(stats: &TimeSeriesStats) -> Result<f64> {
    match (stats.values.first(), stats.values.last()) {
        (Some(a), Some(b)) => Ok(b - a),
        _ => Err(Error::InsufficientSamples("empty series".into())),
    }
}

/// `sigma_t^2[X]`.
pub fn sigma2_t(stats: &TimeSeriesStats) -> Result<f64> {
    if stats.values.is_empty() {
        return Err(Error::InsufficientSamples("empty series".into()));
    }
    Ok(stats.time_variance)
}

pub type Observable<'a> = &'a dyn Fn(&PhaseState) -> Result<f64>;

/// Integrates from `z0` and samples every observable on the grid of
/// [`IntegratorConfig::grid`], including `t = 0`. Returns the final state
/// and one series per observable.
pub fn integrate(
    params: &ChainParams,
    z0: &PhaseState,
    cfg: &IntegratorConfig,
    observables: &[Observable<'_>],
) -> Result<(PhaseState, Vec<TimeSeriesStats>)> {
    cfg.validate()?;
    z0.check_len(params.n)?;
    if !z0.x.iter().chain(&z0.y).all(|v| v.is_finite()) {
        return Err(Error::BlowUp { step: 0 });
    }
    let (steps, dt) = cfg.grid();
    let mut z = z0.clone();
    let mut integ = Integrator::new(params, cfg.scheme);
    let samples = steps / cfg.sample_stride + 1;
    let mut t = Vec::with_capacity(samples);
    let mut vals: Vec<Vec<f64>> = vec![Vec::with_capacity(samples); observables.len()];
    let mut record = |z: &PhaseState, time: f64, t: &mut Vec<f64>| -> Result<()> {
        t.push(time);
        for (o, v) in observables.iter().zip(vals.iter_mut()) {
            v.push(o(z)?);
        }
        Ok(())
    };
    record(&z, 0.0, &mut t)?;
    for block in 0..steps / cfg.sample_stride {
        integ
            .advance(&mut z, dt, cfg.sample_stride)
            .map_err(|e| match e {
                Error::BlowUp { step } => Error::BlowUp {
                    step: block * cfg.sample_stride + step,
                },
                other => other,
            })?;
        record(&z, (block + 1) as f64 * cfg.sample_stride as f64 * dt, &mut t)?;
    }
    let stats = vals
        .into_iter()
        .map(|v| TimeSeriesStats::from_samples(t.clone(), v))
        .collect::<Result<_>>()?;
    Ok((z, stats))
}

/// `t,obs1,obs2,...` with 17 significant digits.
pub fn write_csv<W: Write>(mut w: W, names: &[&str], stats: &[TimeSeriesStats]) -> Result<()> {
    if names.len() != stats.len() {
        return Err(Error::Dimension {
            expected: names.len(),
            got: stats.len(),
        });
    }
    writeln!(w, "t,{}", names.join(","))?;
    let rows = stats.first().map_or(0, |s| s.t.len());
    for i in 0..rows {
        write!(w, "{:.16e}", stats[0].t[i])?;
        for s in stats {
            write!(w, ",{:.16e}", s.values[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_model::hamiltonian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, amp: f64, seed: u64) -> PhaseState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PhaseState::new(
            (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
            (0..n).map(|_| amp * rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn energy_error(params: &ChainParams, z0: &PhaseState, dt: f64, t_end: f64, scheme: Scheme) -> f64 {
        let cfg = IntegratorConfig {
            dt,
            t_end,
            sample_stride: 1,
            scheme,
        };
        let h = |z: &PhaseState| hamiltonian(params, z);
        let (_, s) = integrate(params, z0, &cfg, &[&h]).unwrap();
        s[0].max_drift / hamiltonian(params, z0).unwrap()
    }

    #[test]
    fn force_is_minus_gradient() {
        let p = ChainParams::new(6, 0.15, 1.0).unwrap();
        let z = random_state(6, 0.8, 1);
        let mut f = vec![0.0; 6];
        force(&p, &z.x, &mut f);
        let eps = 1e-6;
        for j in 0..6 {
            let (mut a, mut b) = (z.clone(), z.clone());
            a.x[j] += eps;
            b.x[j] -= eps;
            let fd = (hamiltonian(&p, &a).unwrap() - hamiltonian(&p, &b).unwrap()) / (2.0 * eps);
            assert!((fd + f[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_limit_period() {
        // a = 0, one site at small amplitude: period 2 pi (1 + O(A^2)).
        let p = ChainParams::new(4, 0.0, 1.0).unwrap();
        let mut z = PhaseState::zeros(4);
        z.x[0] = 1e-3;
        let cfg = IntegratorConfig {
            dt: 1e-3,
            t_end: 2.0 * std::f64::consts::PI,
            sample_stride: 1,
            scheme: Scheme::Leapfrog,
        };
        let (end, _) = integrate(&p, &z, &cfg, &[]).unwrap();
        assert!((end.x[0] - 1e-3).abs() < 1e-8);
        assert!(end.y[0].abs() < 1e-8);
    }

    #[test]
    fn energy_drift_at_typical_amplitude() {
        // beta ~ 50 amplitudes, N = 32, dt = 1e-3 over t = 1e3
        let p = ChainParams::new(32, 0.1, 50.0).unwrap();
        let z = random_state(32, 0.25, 2);
        let err = energy_error(&p, &z, 1e-3, 1e3, Scheme::Leapfrog);
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn leapfrog_error_is_second_order() {
        let p = ChainParams::new(8, 0.1, 1.0).unwrap();
        let z = random_state(8, 0.6, 3);
        let dts = [0.04, 0.02, 0.01, 0.005];
        let errs: Vec<f64> = dts.iter().map(|&dt| energy_error(&p, &z, dt, 20.0, Scheme::Leapfrog)).collect();
        let slope = (errs[0] / errs[3]).ln() / (dts[0] / dts[3]).ln();
        assert!((slope - 2.0).abs() <= 0.2, "slope {slope} errs {errs:?}");
        let e4: Vec<f64> = [0.04, 0.02].iter().map(|&dt| energy_error(&p, &z, dt, 20.0, Scheme::Yoshida4)).collect();
        assert!(e4[0] / e4[1] > 10.0, "{e4:?}");
    }

    #[test]
    fn time_reversal() {
        let p = ChainParams::new(16, 0.1, 1.0).unwrap();
        let z0 = random_state(16, 0.5, 4);
        for scheme in [Scheme::Leapfrog, Scheme::Yoshida4] {
            let mut z = z0.clone();
            let mut integ = Integrator::new(&p, scheme);
            integ.advance(&mut z, 0.01, 2000).unwrap();
            integ.advance(&mut z, -0.01, 2000).unwrap();
            for (a, b) in z.x.iter().chain(&z.y).zip(z0.x.iter().chain(&z0.y)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn one_step_is_symplectic() {
        // det of the finite-difference Jacobian of one step.
        let n = 4;
        let p = ChainParams::new(n, 0.2, 1.0).unwrap();
        let z0 = random_state(n, 0.7, 5);
        let flat = |z: &PhaseState| z.x.iter().chain(&z.y).copied().collect::<Vec<f64>>();
        let step = |v: &[f64]| {
            let mut z = PhaseState::new(v[..n].to_vec(), v[n..].to_vec()).unwrap();
            Integrator::new(&p, Scheme::Yoshida4).step(&mut z, 0.05);
            flat(&z)
        };
        let base = flat(&z0);
        let h = 1e-6;
        let dim = 2 * n;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for k in 0..dim {
            let (mut a, mut b) = (base.clone(), base.clone());
            a[k] += h;
            b[k] -= h;
            let (fa, fb) = (step(&a), step(&b));
            for i in 0..dim {
                jac[(i, k)] = (fa[i] - fb[i]) / (2.0 * h);
            }
        }
        let det = jac.determinant();
        assert!((det - 1.0).abs() < 1e-8, "{det}");
    }

    #[test]
    fn blow_up_reported() {
        let p = ChainParams::new(4, 0.0, 1.0).unwrap();
        let mut z = PhaseState::zeros(4);
        z.x[0] = 1e200;
        let cfg = IntegratorConfig {
            dt: 0.1,
            t_end: 1.0,
            sample_stride: 1,
            scheme: Scheme::Leapfrog,
        };
        assert!(matches!(integrate(&p, &z, &cfg, &[]), Err(Error::BlowUp { step: 1 })));
    }

    #[test]
    fn statistics_examples() {
        let c = TimeSeriesStats::from_samples(vec![0.0, 1.0, 2.0], vec![3.0; 3]).unwrap();
        assert_eq!(delta_phi(&c).unwrap(), 0.0);
        assert_eq!(sigma2_t(&c).unwrap(), 0.0);
        let alt: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let (_, v) = uniform_mean_variance(&alt).unwrap();
        assert_eq!(v, 0.25);
        let s = TimeSeriesStats::from_samples((0..1000).map(|i| i as f64).collect(), alt).unwrap();
        assert!((s.time_variance - 0.25).abs() < 1e-3);
        assert!(TimeSeriesStats::from_samples(vec![], vec![]).is_err());
    }

    #[test]
    fn exact_invariant_has_tiny_delta() {
        let p = ChainParams::new(8, 0.1, 1.0).unwrap();
        let z = random_state(8, 0.3, 6);
        let h = |z: &PhaseState| hamiltonian(&p, z);
        let cfg = IntegratorConfig::default_for(&p, 50.0);
        let (_, s) = integrate(&p, &z, &cfg, &[&h]).unwrap();
        assert!(delta_phi(&s[0]).unwrap().abs() < 1e-10 * s[0].values[0]);
        let mut buf = Vec::new();
        write_csv(&mut buf, &["H"], &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,H\n0.0000000000000000e0,"));
    }
}
