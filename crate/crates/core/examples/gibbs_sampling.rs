//! Gibbs averages with batch-means error bars, checked against the
//! single-site quadrature at a = 0.
//!
//! cargo run --release --example gibbs_sampling -- 32 0.1 40

use adiabatic_chain::gibbs::{estimate, sample_values, single_site_moment, SamplerConfig};
use adiabatic_chain::{hamiltonian, ChainParams};

fn main() -> adiabatic_chain::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(32, |s| s.parse().expect("N"));
    let a: f64 = args.get(1).map_or(0.1, |s| s.parse().expect("a"));
    let beta: f64 = args.get(2).map_or(40.0, |s| s.parse().expect("beta"));
    let cfg = SamplerConfig {
        samples_per_chain: 5000,
        ..SamplerConfig::default()
    };

    for a in [0.0, a] {
        let params = ChainParams::new(n, a, beta)?;
        let set = sample_values(&params, &cfg, 4, |z, o| {
            let k = z.len() as f64;
            o[0] = z.y.iter().map(|v| v * v).sum::<f64>() / k;
            o[1] = z.x.iter().map(|v| v * v).sum::<f64>() / k;
            o[2] = z.x.iter().map(|v| v.powi(4)).sum::<f64>() / k;
            o[3] = hamiltonian(&params, z).unwrap_or(f64::NAN) / k;
        })?;
        println!("a={a} beta={beta}: acceptance {:.3}", set.acceptance);
        let names = ["<y^2>", "<x^2>", "<x^4>", "<H>/N"];
        for (name, v) in names.iter().zip(&set.values) {
            let e = estimate(v, cfg.n_batches)?;
            println!("  {name:<6} {:.6e} +- {:.1e}", e.mean, e.std_error);
        }
        if a == 0.0 {
            println!("  quadrature <x^2> {:.6e}, <x^4> {:.6e}", single_site_moment(beta, 2), single_site_moment(beta, 4));
        }
        println!("  1/beta {:.6e}", 1.0 / beta);
    }
    Ok(())
}
