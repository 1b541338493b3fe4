//! Spectrum of the coupling matrix, the effective frequency and the
//! normal-coordinate map.
//!
//! cargo run --release --example normal_coordinates -- 16 0.1

use adiabatic_chain::circulant::{build_a_matrix, power, spectrum, NormalCoordinateMap};
use adiabatic_chain::{hamiltonian_parts, ChainParams, PhaseState};

fn main() -> adiabatic_chain::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map_or(16, |s| s.parse().expect("N"));
    let a: f64 = args.get(1).map_or(0.1, |s| s.parse().expect("a"));
    let params = ChainParams::new(n, a, 10.0)?;
    println!(
        "omega={:.6} mu={:.6} Omega={:.10} sigma0={:.4} sigma1={:.4}",
        params.omega, params.mu, params.big_omega, params.sigma0, params.sigma1
    );

    let m = build_a_matrix(&params)?;
    for (k, e) in spectrum(&m).eigs.iter().enumerate().take(n / 2 + 1) {
        println!("mode {k:>3}: {e:.12}");
    }
    let q = power(&m, 0.25)?;
    println!("row of A^1/4 against 2 sqrt(omega) (2 mu)^(j-1):");
    println!("  j=  0 {:+.3e}", q.row_entry(0));
    for j in 1..=n / 2 {
        let bound = 2.0 * params.omega.sqrt() * (2.0 * params.mu).powi(j as i32 - 1);
        println!("  j={j:>3} {:+.3e} {bound:.3e}", q.row_entry(j));
    }

    // a localized excitation spreads under the map and comes back exactly
    let map = NormalCoordinateMap::new(&params)?;
    let mut z = PhaseState::zeros(n);
    z.x[0] = 0.1;
    z.y[1] = -0.05;
    let w = map.forward(&z)?;
    let back = map.backward(&w)?;
    let err = z.x.iter().chain(&z.y).zip(back.x.iter().chain(&back.y)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    println!("q = {:.3?}", &w.x[..4.min(n)]);
    println!("round-trip error {err:.1e}");
    let (quad, quartic) = hamiltonian_parts(&params, &z)?;
    println!("H = {quad:.6e} (quadratic) + {quartic:.6e} (quartic)");
    Ok(())
}
