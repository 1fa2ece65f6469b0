use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Zero};

use super::{Modulus, RingError};

/// A fixed list of pairwise coprime moduli with precomputed reconstruction
/// terms for Chinese remainder recombination.
#[derive(Debug, Clone)]
pub struct CrtBasis {
    moduli: Vec<Modulus>,
    product: BigUint,
    /// terms[i] = M_i * (M_i^{-1} mod m_i) mod M, where M_i = M / m_i.
    /// combine() is then a dot product with the residues, reduced mod M.
    terms: Vec<BigUint>,
}

impl CrtBasis {
    pub fn new(moduli: Vec<Modulus>) -> Result<Self, RingError> {
        if moduli.is_empty() {
            return Err(RingError::EmptyBasis);
        }
        for i in 0..moduli.len() {
            for j in i + 1..moduli.len() {
                let gcd = moduli[i].value().gcd(&moduli[j].value());
                if gcd != 1 {
                    return Err(RingError::NotCoprime(moduli[i].value(), moduli[j].value()));
                }
            }
        }
        let product: BigUint = moduli
            .iter()
            .fold(BigUint::one(), |acc, m| acc * BigUint::from(m.value()));
        let terms = moduli
            .iter()
            .map(|m| {
                let m_i = &product / BigUint::from(m.value());
                let rem = m.reduce_biguint(&m_i);
                let inv = m.inv(rem).expect("coprime by construction");
                (&m_i * BigUint::from(inv)) % &product
            })
            .collect();
        Ok(CrtBasis {
            moduli,
            product,
            terms,
        })
    }

    #[inline]
    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    /// Product of all moduli.
    #[inline]
    pub fn product(&self) -> &BigUint {
        &self.product
    }

    /// Reconstructs the unique x in [0, M) with x = residues[i] mod m_i.
    pub fn combine(&self, residues: &[u64]) -> Result<BigUint, RingError> {
        if residues.len() != self.moduli.len() {
            return Err(RingError::ResidueCount {
                got: residues.len(),
                want: self.moduli.len(),
            });
        }
        let mut acc = BigUint::zero();
        for (term, (&r, m)) in self.terms.iter().zip(residues.iter().zip(&self.moduli)) {
            debug_assert!(r < m.value());
            acc += term * BigUint::from(r);
        }
        Ok(acc % &self.product)
    }

    /// Residues of an arbitrary-precision signed value in each modulus.
    pub fn decompose_bigint(&self, v: &BigInt) -> Vec<u64> {
        self.moduli.iter().map(|m| m.reduce_bigint(v)).collect()
    }
}

/// Chinese remainder recombination of `residues` against `basis`.
pub fn crt_combine(residues: &[u64], basis: &CrtBasis) -> Result<BigUint, RingError> {
    basis.combine(residues)
}

/// Maps a residue x in [0, m) to its centered representative in
/// [-floor(m/2), ceil(m/2) - 1], the signed value closest to zero.
#[inline]
pub fn signed_lift(x: u64, m: Modulus) -> i64 {
    debug_assert!(x < m.value());
    let half = m.value().div_ceil(2);
    if x < half {
        x as i64
    } else {
        x as i64 - m.value() as i64
    }
}

/// Centered representative of x mod M for arbitrary-precision values, in
/// [-floor(M/2), ceil(M/2) - 1].
pub fn signed_lift_big(x: &BigUint, modulus: &BigUint) -> BigInt {
    debug_assert!(x < modulus);
    let half = (modulus + BigUint::one()) / 2u32;
    if x < &half {
        BigInt::from(x.clone())
    } else {
        BigInt::from(x.clone()) - BigInt::from(modulus.clone())
    }
}
