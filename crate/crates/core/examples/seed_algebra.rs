//! Seeds of extensive polynomials: brackets, evaluation, range
//! decomposition and the text format.
//!
//! cargo run --release --example seed_algebra

use adiabatic_chain::poly::io::{read_real, write_real};
use adiabatic_chain::poly::{bracket_norm_bound, poisson_seed, range_decompose, Monomial, Seed, Slot};
use adiabatic_chain::PhaseState;

fn main() -> adiabatic_chain::Result<()> {
    let n = 8;
    // f = sum_j q_j p_{j+1},  g = sum_j (q_j^2 + p_j^2) / 2
    let f = Seed::monomial(n, Monomial::from_factors(&[(0, 1, 0), (1, 0, 1)])?, 1.0);
    let g = Seed::from_terms(
        n,
        [(Monomial::var(0, Slot::Q).mul(Monomial::var(0, Slot::Q))?, 0.5), (Monomial::from_factors(&[(0, 0, 2)])?, 0.5)],
    );
    let fg = poisson_seed(&f, &g)?;
    println!("f  = {}", write_real(&f).trim_end().replace('\n', " | "));
    println!("{{f,g}} has {} terms, norm {:.3} <= bound {:.3}", fg.len(), fg.norm(), bracket_norm_bound(&f, &g));

    let z = PhaseState::new((0..n).map(|i| (i as f64 * 0.7).sin()).collect(), (0..n).map(|i| (i as f64 * 0.3).cos()).collect())?;
    println!("f(z) = {:.6}, f(shifted z) = {:.6}", f.extensive_eval(&z)?, f.extensive_eval(&z.shifted(3))?);

    let h = fg.add(&Seed::monomial(n, Monomial::from_factors(&[(0, 1, 0), (3, 1, 0)])?, 0.01));
    for (m, part) in range_decompose(&h).parts().iter().enumerate() {
        if !part.is_empty() {
            println!("range {m}: {} terms, norm {:.3e}", part.len(), part.norm());
        }
    }

    let text = write_real(&h);
    let back = read_real(&text)?;
    println!("text round trip equal: {}", back == h);
    Ok(())
}
