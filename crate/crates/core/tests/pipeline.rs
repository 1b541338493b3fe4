use adiabatic_chain::dynamics::{integrate, IntegratorConfig};
use adiabatic_chain::gibbs::{sample, SamplerConfig};
use adiabatic_chain::normal_form::{build_normal_form, build_quadratic_nf, InvariantEvaluator, NormalFormConfig, NormalFormResult};
use adiabatic_chain::{ChainParams, PhaseState};

fn build(n: usize, a: f64, r: usize) -> NormalFormResult {
    let p = ChainParams::new(n, a, 40.0).unwrap();
    let cfg = NormalFormConfig::default();
    build_normal_form(&build_quadratic_nf(&p, &cfg).unwrap(), r, &cfg).unwrap()
}

#[test]
fn saved_invariant_evaluates_identically() {
    let res = build(8, 0.1, 2);
    let d = tempfile::tempdir().unwrap();
    res.save(d.path()).unwrap();
    let back = NormalFormResult::load(d.path(), 40.0).unwrap();
    assert_eq!(back.r, 2);
    let z = PhaseState::new((0..8).map(|i| 0.1 * (i as f64).sin()).collect(), (0..8).map(|i| 0.2 * (i as f64).cos()).collect())
        .unwrap();
    for k in 0..=2 {
        let a = InvariantEvaluator::truncated(&res, k).unwrap().phi(&z).unwrap();
        let b = InvariantEvaluator::truncated(&back, k).unwrap().phi(&z).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs(), "order {k}: {a} vs {b}");
    }
    let r0 = InvariantEvaluator::new(&res).unwrap().remainder(&z).unwrap();
    let r1 = InvariantEvaluator::new(&back).unwrap().remainder(&z).unwrap();
    assert!((r0 - r1).abs() <= 1e-12 * r0.abs());
}

#[test]
fn higher_orders_drift_less_on_one_orbit() {
    let res = build(16, 0.1, 2);
    let params = res.params.clone();
    let z0 = sample(
        &params,
        &SamplerConfig {
            n_chains: 1,
            samples_per_chain: 1,
            rng_seed: 11,
            ..SamplerConfig::default()
        },
    )
    .unwrap()
    .next()
    .unwrap();
    let evs: Vec<_> = (0..=2).map(|k| InvariantEvaluator::truncated(&res, k).unwrap()).collect();
    let obs: Vec<Box<dyn Fn(&PhaseState) -> adiabatic_chain::Result<f64> + '_>> =
        evs.iter().map(|e| Box::new(move |z: &PhaseState| e.phi(z)) as Box<dyn Fn(&PhaseState) -> _>).collect();
    let refs: Vec<&dyn Fn(&PhaseState) -> adiabatic_chain::Result<f64>> = obs.iter().map(|b| b.as_ref()).collect();
    let (_, stats) = integrate(&params, &z0, &IntegratorConfig::default_for(&params, 20.0), &refs).unwrap();
    let drift: Vec<f64> = stats.iter().map(|s| s.max_drift).collect();
    assert!(drift[1] < drift[0] && drift[2] < drift[1], "{drift:?}");
    assert!(stats[2].time_variance < 1e-2 * stats[0].time_variance, "{:?}", stats.iter().map(|s| s.time_variance).collect::<Vec<_>>());
}

#[test]
fn uncoupled_invariant_is_the_harmonic_energy() {
    let res = build(8, 0.0, 2);
    let z = PhaseState::new((0..8).map(|i| 0.05 * i as f64).collect(), (0..8).map(|i| 0.03 * (8 - i) as f64).collect()).unwrap();
    let harmonic: f64 = z.x.iter().zip(&z.y).map(|(x, y)| 0.5 * (x * x + y * y)).sum();
    let ev0 = InvariantEvaluator::truncated(&res, 0).unwrap();
    assert!((ev0.phi(&z).unwrap() - harmonic).abs() <= 1e-14 * harmonic);
    assert!((ev0.phi(&z.shifted(3)).unwrap() - harmonic).abs() <= 1e-14 * harmonic);
}
