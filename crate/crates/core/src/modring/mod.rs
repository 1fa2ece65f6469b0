//! Arithmetic in Z_m and in the negacyclic polynomial ring Z_m\[x\]/(x^n+1).
//!
//! Coefficients live in single `u64` words (moduli are capped below 2^62 so
//! sums never overflow and products fit in `u128`). Multi-precision integers
//! appear only at CRT recombination boundaries.

mod crt;
mod modulus;
mod ntt;
mod poly;
mod primes;

pub use crt::{crt_combine, signed_lift, signed_lift_big, CrtBasis};
pub use modulus::{Modulus, MAX_MODULUS_BITS};
pub use ntt::{ntt_tables_for, NttTables};
pub use poly::{ntt_forward, ntt_inverse, RingPoly};
pub use primes::{find_ntt_prime, is_prime_u64};

/// Errors from ring and residue arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RingError {
    #[error("invalid modulus {0}: must lie in [2, 2^62)")]
    InvalidModulus(u64),
    #[error("polynomial degree {0} is not a power of two")]
    BadDegree(usize),
    #[error("degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("{value} is not invertible modulo {modulus}")]
    NonInvertible { value: u64, modulus: u64 },
    #[error("modulus {modulus} does not support a degree-{degree_n} negacyclic NTT")]
    UnsupportedModulus { modulus: u64, degree_n: usize },
    #[error("bit length {bit_len} is too small to hold a prime congruent to 1 mod {two_n}")]
    WindowTooSmall { bit_len: u32, two_n: u64 },
    #[error("no prime of bit length {bit_len} congruent to 1 mod {two_n}")]
    PrimeSearchExhausted { bit_len: u32, two_n: u64 },
    #[error("residue count {got} does not match CRT basis size {want}")]
    ResidueCount { got: usize, want: usize },
    #[error("CRT moduli {0} and {1} are not coprime")]
    NotCoprime(u64, u64),
    #[error("empty CRT basis")]
    EmptyBasis,
}
