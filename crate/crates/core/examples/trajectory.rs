//! Integrates one Gibbs-sampled orbit and records H and the invariants of
//! orders 0..=r, written as CSV to stdout.
//!
//! cargo run --release --example trajectory -- 16 0.1 40 2 > orbit.csv

use adiabatic_chain::dynamics::{integrate, write_csv, IntegratorConfig};
use adiabatic_chain::gibbs::{sample, SamplerConfig};
use adiabatic_chain::normal_form::{build_normal_form, build_quadratic_nf, InvariantEvaluator, NormalFormConfig};
use adiabatic_chain::{hamiltonian, ChainParams, PhaseState};

fn main() -> adiabatic_chain::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(16, |s| s.parse().expect("N"));
    let a: f64 = args.get(1).map_or(0.1, |s| s.parse().expect("a"));
    let beta: f64 = args.get(2).map_or(40.0, |s| s.parse().expect("beta"));
    let r: usize = args.get(3).map_or(2, |s| s.parse().expect("r"));
    let params = ChainParams::new(n, a, beta)?;
    let cfg = NormalFormConfig {
        compute_rho: false,
        ..NormalFormConfig::default()
    };
    let res = build_normal_form(&build_quadratic_nf(&params, &cfg)?, r.max(1), &cfg)?;
    let evs = (0..=r).map(|k| InvariantEvaluator::truncated(&res, k)).collect::<adiabatic_chain::Result<Vec<_>>>()?;

    let z0 = sample(
        &params,
        &SamplerConfig {
            n_chains: 1,
            samples_per_chain: 1,
            ..SamplerConfig::default()
        },
    )?
    .next()
    .expect("one sample");
    let mut ic = IntegratorConfig::default_for(&params, beta.powf(r as f64 / 2.0));
    ic.sample_stride = 10;
    let h = |z: &PhaseState| hamiltonian(&params, z);
    let phis: Vec<Box<dyn Fn(&PhaseState) -> adiabatic_chain::Result<f64>>> =
        evs.iter().map(|e| Box::new(move |z: &PhaseState| e.phi(z)) as Box<dyn Fn(&PhaseState) -> _>).collect();
    let mut obs: Vec<&dyn Fn(&PhaseState) -> adiabatic_chain::Result<f64>> = vec![&h];
    obs.extend(phis.iter().map(|b| b.as_ref()));
    let (_, stats) = integrate(&params, &z0, &ic, &obs)?;

    let mut names = vec!["H".to_string()];
    names.extend((0..=r).map(|k| format!("phi{k}")));
    for (name, s) in names.iter().zip(&stats) {
        eprintln!("{name:<5} max drift {:.3e}, time variance {:.3e}", s.max_drift, s.time_variance);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_csv(std::io::stdout().lock(), &refs, &stats)
}
