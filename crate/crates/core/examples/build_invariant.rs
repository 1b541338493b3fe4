//! Builds the order-r invariant for one chain and prints the per-order
//! diagnostics.
//!
//! cargo run --release --example build_invariant -- 16 0.1 2 [--no-rho] [--no-structural]

use std::time::Instant;

use adiabatic_chain::normal_form::{build_normal_form, build_quadratic_nf, NormalFormConfig};
use adiabatic_chain::ChainParams;

fn main() -> adiabatic_chain::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (flags, pos): (Vec<&String>, Vec<&String>) = args.iter().partition(|s| s.starts_with("--"));
    let n: usize = pos.first().map_or(16, |s| s.parse().expect("N"));
    let a: f64 = pos.get(1).map_or(0.1, |s| s.parse().expect("a"));
    let r: usize = pos.get(2).map_or(2, |s| s.parse().expect("r"));

    let params = ChainParams::new(n, a, 40.0)?;
    let mut cfg = NormalFormConfig::default();
    cfg.compute_rho = !flags.iter().any(|f| *f == "--no-rho");
    cfg.structural_check = !flags.iter().any(|f| *f == "--no-structural");
    let t0 = Instant::now();
    let nf = build_quadratic_nf(&params, &cfg)?;
    println!(
        "N={n} a={a} Omega={:.6} zeta0 terms={} h1 terms={}",
        nf.omega,
        nf.zeta0_seed.len(),
        nf.h1_seed_q.len()
    );
    let res = build_normal_form(&nf, r, &cfg)?;
    for o in &res.orders {
        println!(
            "s={} |chi|={:.3e} ({} terms) |Z|={:.3e} |Phi|={:.3e} ({} terms) hom={:.1e} struct={} neumann={} ratio0={:.3}",
            o.s,
            o.chi_norm,
            o.chi_terms,
            o.z_norm,
            o.phi_norm,
            o.phi_terms,
            o.homological_residual,
            o.structural_residual.map_or("-".to_string(), |v| format!("{v:.1e}")),
            o.neumann.iterations,
            o.neumann.ratios.first().copied().unwrap_or(0.0)
        );
    }
    if let Some(rho) = &res.rho {
        println!("rho: {} terms, norm {:.3e}", rho.len(), rho.norm());
    }
    println!("dropped mass {:.2e}; {:.2?}", res.dropped_mass, t0.elapsed());
    Ok(())
}
