//! Monte Carlo for the Gibbs measure `exp(-beta H) / Z`.
//!
//! Momenta are exact i.i.d. normals of variance `1/beta`; positions come
//! from single-site random-walk Metropolis with the step tuned during
//! burn-in. Every chain owns a ChaCha stream derived from the master seed,
//! and results are merged in chain order, so output does not depend on the
//! number of threads.

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::chain_model::{ChainParams, PhaseState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Sweeps discarded per chain; the step size is tuned here.
    pub burn_in: usize,
    /// Sweeps between recorded samples.
    pub thinning: usize,
    pub samples_per_chain: usize,
    /// Initial step; `None` starts from `2.4 / sqrt(beta omega^2)`.
    pub proposal_std: Option<f64>,
    pub rng_seed: u64,
    pub n_batches: usize,
    pub threads: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            burn_in: 500,
            thinning: 2,
            samples_per_chain: 2000,
            proposal_std: None,
            rng_seed: 1,
            n_batches: 32,
            threads: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.thinning == 0 || self.samples_per_chain == 0 {
            return Err(Error::Config("n_chains, thinning and samples must be positive".into()));
        }
        if self.n_batches < 2 {
            return Err(Error::Config("need at least 2 batches".into()));
        }
        if let Some(s) = self.proposal_std {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("proposal_std={s} must be positive")));
            }
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.n_chains * self.samples_per_chain
    }

    /// Stable 64-bit hash of the configuration and model.
    pub fn config_hash(&self, params: &ChainParams) -> u64 {
        let mut h = rustc_hash::FxHasher::default();
        (self.n_chains, self.burn_in, self.thinning, self.samples_per_chain).hash(&mut h);
        self.proposal_std.map(f64::to_bits).hash(&mut h);
        (self.rng_seed, self.n_batches).hash(&mut h);
        params.n.hash(&mut h);
        params.a.to_bits().hash(&mut h);
        params.beta.to_bits().hash(&mut h);
        h.finish()
    }
}

const TARGET_ACCEPTANCE: f64 = 0.4;
const TUNE_EVERY: usize = 20;

/// One Metropolis chain over the positions.
pub struct MetropolisChain<'a> {
    params: &'a ChainParams,
    x: Vec<f64>,
    step: f64,
    rng: ChaCha8Rng,
    accepted: u64,
    proposed: u64,
}

impl<'a> MetropolisChain<'a> {
    pub fn new(params: &'a ChainParams, cfg: &SamplerConfig, chain: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(chain);
        let sd = 1.0 / (params.beta * params.omega2).sqrt();
        let x = (0..params.n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        MetropolisChain {
            params,
            x,
            step: cfg.proposal_std.unwrap_or(2.4 * sd),
            rng,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    /// One update per site, in site order.
    pub fn sweep(&mut self) {
        let n = self.x.len();
        let (beta, a, w2) = (self.params.beta, self.params.a, self.params.omega2);
        for j in 0..n {
            let l = self.x[if j == 0 { n - 1 } else { j - 1 }];
            let r = self.x[if j + 1 == n { 0 } else { j + 1 }];
            let old = self.x[j];
            let new = old + self.step * self.rng.sample::<f64, _>(StandardNormal);
            let (o2, n2) = (old * old, new * new);
            let dv = 0.5 * w2 * (n2 - o2) + 0.25 * (n2 * n2 - o2 * o2) - a * (new - old) * (l + r);
            self.proposed += 1;
            if dv <= 0.0 || self.rng.gen::<f64>() < (-beta * dv).exp() {
                self.x[j] = new;
                self.accepted += 1;
            }
        }
    }

    /// Burn-in, rescaling the step every few sweeps toward the target
    /// acceptance; counters restart afterwards.
    pub fn burn_in(&mut self, sweeps: usize) {
        let mut done = 0;
        while done < sweeps {
            let block = TUNE_EVERY.min(sweeps - done);
            let (a0, p0) = (self.accepted, self.proposed);
            for _ in 0..block {
                self.sweep();
            }
            done += block;
            let acc = (self.accepted - a0) as f64 / (self.proposed - p0) as f64;
            self.step *= ((acc + 0.01) / (TARGET_ACCEPTANCE + 0.01)).clamp(0.5, 2.0);
        }
        self.accepted = 0;
        self.proposed = 0;
    }

    /// Current positions with freshly drawn momenta.
    pub fn draw(&mut self) -> PhaseState {
        let sd = 1.0 / self.params.beta.sqrt();
        let y = (0..self.x.len())
            .map(|_| sd * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        PhaseState { x: self.x.clone(), y }
    }
}

/// Iterator over Gibbs samples: all of chain 0, then chain 1, and so on.
pub struct SampleStream<'a> {
    params: &'a ChainParams,
    cfg: SamplerConfig,
    chain: Option<MetropolisChain<'a>>,
    chain_index: usize,
    emitted: usize,
}

pub fn sample<'a>(params: &'a ChainParams, cfg: &SamplerConfig) -> Result<SampleStream<'a>> {
    cfg.validate()?;
    Ok(SampleStream {
        params,
        cfg: cfg.clone(),
        chain: None,
        chain_index: 0,
        emitted: 0,
    })
}

impl Iterator for SampleStream<'_> {
    type Item = PhaseState;

    fn next(&mut self) -> Option<PhaseState> {
        if self.chain_index >= self.cfg.n_chains {
            return None;
        }
        if self.chain.is_none() {
            let mut c = MetropolisChain::new(self.params, &self.cfg, self.chain_index as u64);
            c.burn_in(self.cfg.burn_in);
            self.chain = Some(c);
        }
        let c = self.chain.as_mut().unwrap();
        for _ in 0..self.cfg.thinning {
            c.sweep();
        }
        let z = c.draw();
        self.emitted += 1;
        if self.emitted == self.cfg.samples_per_chain {
            self.emitted = 0;
            self.chain_index += 1;
            self.chain = None;
        }
        Some(z)
    }
}

/// Observable values per sample, concatenated over chains in chain order.
#[derive(Clone, Debug)]
pub struct SampleSet {
    /// `values[k][i]`: observable `k` at sample `i`.
    pub values: Vec<Vec<f64>>,
    pub acceptance: f64,
    pub step_sizes: Vec<f64>,
}

/// Runs every chain and records `n_obs` observables per sample; chains are
/// spread over `cfg.threads` workers.
pub fn sample_values<F>(params: &ChainParams, cfg: &SamplerConfig, n_obs: usize, observe: F) -> Result<SampleSet>
where
    F: Fn(&PhaseState, &mut [f64]) + Sync,
{
    cfg.validate()?;
    let run_chain = |c: usize| -> (Vec<Vec<f64>>, f64, f64) {
        let mut chain = MetropolisChain::new(params, cfg, c as u64);
        chain.burn_in(cfg.burn_in);
        let mut out = vec![Vec::with_capacity(cfg.samples_per_chain); n_obs];
        let mut buf = vec![0.0; n_obs];
        for _ in 0..cfg.samples_per_chain {
            for _ in 0..cfg.thinning {
                chain.sweep();
            }
            let z = chain.draw();
            observe(&z, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                o.push(*v);
            }
        }
        (out, chain.acceptance(), chain.step_size())
    };
    let threads = cfg.threads.max(1).min(cfg.n_chains);
    let mut per_chain: Vec<Option<(Vec<Vec<f64>>, f64, f64)>> = vec![None; cfg.n_chains];
    if threads == 1 {
        for (c, slot) in per_chain.iter_mut().enumerate() {
            *slot = Some(run_chain(c));
        }
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let run = &run_chain;
                    s.spawn(move || {
                        (t..cfg.n_chains)
                            .step_by(threads)
                            .map(|c| (c, run(c)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("sampler worker panicked") {
                    per_chain[c] = Some(r);
                }
            }
        });
    }
    let mut values = vec![Vec::with_capacity(cfg.total_samples()); n_obs];
    let mut acc = 0.0;
    let mut steps = Vec::new();
    for r in per_chain.into_iter().flatten() {
        for (v, o) in values.iter_mut().zip(r.0) {
            v.extend(o);
        }
        acc += r.1;
        steps.push(r.2);
    }
    Ok(SampleSet {
        values,
        acceptance: acc / cfg.n_chains as f64,
        step_sizes: steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Effective sample size from the batch-means variance inflation.
    pub ess_estimate: f64,
}

/// Delete-one-batch jackknife of `g(means of series)`. For linear `g`
/// this is the batch-means error.
pub fn jackknife<G: Fn(&[f64]) -> f64>(series: &[&[f64]], n_batches: usize, g: G) -> Result<EstimateWithError> {
    let n = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::InsufficientSamples("series of unequal length".into()));
    }
    if n_batches < 2 || n < n_batches {
        return Err(Error::InsufficientSamples(format!("{n} samples for {n_batches} batches")));
    }
    let b = n / n_batches;
    let used = b * n_batches;
    let k = series.len();
    let mut batch_sums = vec![vec![0.0; k]; n_batches];
    let mut total = vec![0.0; k];
    for (j, s) in series.iter().enumerate() {
        for (bi, chunk) in s[..used].chunks(b).enumerate() {
            let v: f64 = chunk.iter().sum();
            batch_sums[bi][j] = v;
            total[j] += v;
        }
    }
    let full: Vec<f64> = total.iter().map(|t| t / used as f64).collect();
    let theta = g(&full);
    let leave_out: Vec<f64> = batch_sums
        .iter()
        .map(|bs| {
            let m: Vec<f64> = total.iter().zip(bs).map(|(t, x)| (t - x) / (used - b) as f64).collect();
            g(&m)
        })
        .collect();
    let nb = n_batches as f64;
    let lbar = leave_out.iter().sum::<f64>() / nb;
    let var_jk = (nb - 1.0) / nb * leave_out.iter().map(|v| (v - lbar).powi(2)).sum::<f64>();
    let se = var_jk.sqrt();
    // ESS against the naive i.i.d. error of the first series
    let s0 = &series[0][..used];
    let m0 = full[0];
    let var0 = s0.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / (used as f64 - 1.0);
    let ess = if var_jk > 0.0 && k == 1 {
        (var0 / var_jk).min(used as f64)
    } else {
        used as f64
    };
    Ok(EstimateWithError {
        mean: theta,
        std_error: se,
        n_samples: used,
        ess_estimate: ess,
    })
}

/// Batch-means estimate of the mean.
pub fn estimate(values: &[f64], n_batches: usize) -> Result<EstimateWithError> {
    jackknife(&[values], n_batches, |m| m[0])
}

/// `<X^2> - <X>^2` with the `n/(n-1)` correction and jackknife error.
pub fn variance(values: &[f64], n_batches: usize) -> Result<EstimateWithError> {
    let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    let n = (values.len() / n_batches.max(1) * n_batches.max(1)) as f64;
    let corr = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let mut e = jackknife(&[values, &squares], n_batches, |m| (m[1] - m[0] * m[0]) * corr)?;
    e.ess_estimate = estimate(values, n_batches)?.ess_estimate;
    Ok(e)
}

/// `int x^k w(x) dx / int w(x) dx` for the single-site weight
/// `w = exp(-beta (x^2/2 + x^4/4))`, by the trapezoid rule on a grid wide
/// enough that the tails vanish in double precision.
pub fn single_site_moment(beta: f64, k: u32) -> f64 {
    let width = (80.0 / beta).sqrt().max((160.0 / beta).powf(0.25));
    let m = 20_000;
    let h = 2.0 * width / m as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=m {
        let x = -width + i as f64 * h;
        let w = (-beta * (0.5 * x * x + 0.25 * x.powi(4))).exp() * if i == 0 || i == m { 0.5 } else { 1.0 };
        num += w * x.powi(k as i32);
        den += w;
    }
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationEstimator {
    /// `x_0^2` against `x_d^2` only.
    SiteZero,
    /// Averaged over all `N` translations.
    TranslationAveraged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub d: usize,
    /// Signed correlation coefficient of `x_0^2` and `x_d^2`.
    pub corr: EstimateWithError,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationScan {
    pub rows: Vec<CorrelationRow>,
    /// `-slope` of `ln |corr|` against `d` over the rows with `d >= 1` that
    /// sit more than 3 standard errors from zero.
    pub rate: Option<f64>,
    pub fitted: Vec<usize>,
}

/// Correlation coefficients `corr(x_0^2, x_d^2)` for the given distances.
pub fn correlation_decay_scan(
    params: &ChainParams,
    cfg: &SamplerConfig,
    distances: &[usize],
    estimator: CorrelationEstimator,
) -> Result<CorrelationScan> {
    let n = params.n;
    if let Some(&d) = distances.iter().find(|&&d| d >= n) {
        return Err(Error::Parameter(format!("distance {d} not below N={n}")));
    }
    let k = distances.len();
    let set = sample_values(params, cfg, k + 2, |z, out| {
        let sq: Vec<f64> = z.x.iter().map(|v| v * v).collect();
        match estimator {
            CorrelationEstimator::SiteZero => {
                out[0] = sq[0];
                out[1] = sq[0] * sq[0];
                for (o, &d) in out[2..].iter_mut().zip(distances) {
                    *o = sq[0] * sq[d];
                }
                // the partner's own moments enter through translation
                // invariance of the measure
            }
            CorrelationEstimator::TranslationAveraged => {
                let inv = 1.0 / n as f64;
                out[0] = sq.iter().sum::<f64>() * inv;
                out[1] = sq.iter().map(|s| s * s).sum::<f64>() * inv;
                for (o, &d) in out[2..].iter_mut().zip(distances) {
                    *o = (0..n).map(|j| sq[j] * sq[(j + d) % n]).sum::<f64>() * inv;
                }
            }
        }
    })?;
    let mut rows = Vec::with_capacity(k);
    for (i, &d) in distances.iter().enumerate() {
        let series = [&set.values[0][..], &set.values[1][..], &set.values[2 + i][..]];
        let corr = jackknife(&series, cfg.n_batches, |m| (m[2] - m[0] * m[0]) / (m[1] - m[0] * m[0]))?;
        rows.push(CorrelationRow { d, corr });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.d >= 1 && r.corr.mean.abs() > 3.0 * r.corr.std_error)
        .map(|r| (r.d as f64, r.corr.mean.abs().ln()))
        .collect();
    let fitted = rows
        .iter()
        .filter(|r| r.d >= 1 && r.corr.mean.abs() > 3.0 * r.corr.std_error)
        .map(|r| r.d)
        .collect();
    let rate = (pts.len() >= 2).then(|| {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        -sxy / sxx
    });
    Ok(CorrelationScan { rows, rate, fitted })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub variance: EstimateWithError,
    /// `sigma^2[Phi] beta^2 / (N Omega^2)`.
    pub ratio: f64,
    pub ratio_se: f64,
}

/// Gibbs variance of an extensive observable and its normalized ratio.
pub fn variance_lower_check<F>(params: &ChainParams, cfg: &SamplerConfig, phi: F) -> Result<VarianceReport>
where
    F: Fn(&PhaseState) -> f64 + Sync,
{
    let set = sample_values(params, cfg, 1, |z, out| out[0] = phi(z))?;
    let v = variance(&set.values[0], cfg.n_batches)?;
    let scale = params.beta * params.beta / (params.n as f64 * params.big_omega * params.big_omega);
    Ok(VarianceReport {
        ratio: v.mean * scale,
        ratio_se: v.std_error * scale,
        variance: v,
    })
}

/// JSON record of one estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub config_hash: String,
}

impl EstimateRecord {
    pub fn new(name: &str, e: &EstimateWithError, hash: u64) -> Self {
        EstimateRecord {
            name: name.to_string(),
            mean: e.mean,
            std_error: e.std_error,
            n: e.n_samples,
            config_hash: format!("{hash:016x}"),
        }
    }
}
