//! Sparse algebra of cyclically symmetric polynomials represented by seeds.

pub mod bracket;
pub mod coeff;
pub mod complex;
pub mod io;
pub mod monomial;
pub mod range;
pub mod seed;
pub mod subst;

pub use bracket::{
    bracket_norm_bound, poisson_ranged, poisson_ranged_seeds, poisson_seed, poisson_seed_pruned, poisson_seed_thresholded,
    poisson_seed_tracked,
};
pub use coeff::Coeff;
pub use complex::{from_complex, to_complex};
pub use monomial::{Factor, Monomial, Slot, MAX_DEGREE};
pub use range::{fit_decay, measured_rate, range_decompose, DecayFit, RangeDecomposition};
pub use seed::{Accumulator, ComplexSeed, RealSeed, Seed, EPS_PRUNE};
pub use subst::{linear_substitute, Substitution};
