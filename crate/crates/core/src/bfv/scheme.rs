use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::modring::{find_ntt_prime, is_prime_u64, ntt_tables_for, CrtBasis, Modulus};
use crate::params::security_q_bound;

use super::BfvError;

/// Everything the scheme needs to know about a parameter set: ring degree n,
/// the q prime chain, one plaintext modulus t, the error width, and the
/// claimed security level. Cheap to clone and share.
///
/// `security_bits = 0` opts out of the security-table check and claims no
/// security at all; it exists for tests and calibration runs with small or
/// oversized q.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ParamsSpec", into = "ParamsSpec")]
pub struct SchemeParams {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    degree_n: usize,
    q_primes: Vec<Modulus>,
    plain_modulus: Modulus,
    error_stddev: f64,
    security_bits: u32,
    q_basis: CrtBasis,
    q: BigUint,
    q_bits: u64,
    delta: BigUint,
    delta_limbs: Vec<u64>,
    mul_context: OnceLock<Result<MulContext, BfvError>>,
}

/// Extended CRT basis used by the ciphertext multiply: the q primes plus
/// enough fresh NTT primes that the full basis exactly represents the integer
/// tensor product before scaling by t/q.
#[derive(Debug, Clone)]
pub(super) struct MulContext {
    pub aux_moduli: Vec<Modulus>,
    pub full_basis: CrtBasis,
}

/// Wire form of SchemeParams used by both serde and validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamsSpec {
    degree_n: usize,
    q_primes: Vec<u64>,
    plain_modulus: u64,
    error_stddev: f64,
    security_bits: u32,
}

impl TryFrom<ParamsSpec> for SchemeParams {
    type Error = BfvError;
    fn try_from(s: ParamsSpec) -> Result<Self, BfvError> {
        SchemeParams::new(
            s.degree_n,
            &s.q_primes,
            s.plain_modulus,
            s.error_stddev,
            s.security_bits,
        )
    }
}

impl From<SchemeParams> for ParamsSpec {
    fn from(p: SchemeParams) -> ParamsSpec {
        ParamsSpec {
            degree_n: p.degree_n(),
            q_primes: p.q_primes().iter().map(|m| m.value()).collect(),
            plain_modulus: p.plain_modulus().value(),
            error_stddev: p.error_stddev(),
            security_bits: p.security_bits(),
        }
    }
}

impl PartialEq for SchemeParams {
    fn eq(&self, other: &Self) -> bool {
        self.inner.degree_n == other.inner.degree_n
            && self.inner.q_primes == other.inner.q_primes
            && self.inner.plain_modulus == other.inner.plain_modulus
            && self.inner.error_stddev == other.inner.error_stddev
            && self.inner.security_bits == other.inner.security_bits
    }
}

impl SchemeParams {
    pub fn new(
        degree_n: usize,
        q_primes: &[u64],
        plain_modulus: u64,
        error_stddev: f64,
        security_bits: u32,
    ) -> Result<Self, BfvError> {
        if !degree_n.is_power_of_two() || !(1024..=32768).contains(&degree_n) {
            return Err(BfvError::Parameter(format!(
                "ring degree {degree_n} must be a power of two in [1024, 32768]"
            )));
        }
        if q_primes.is_empty() {
            return Err(BfvError::Parameter("empty q prime chain".into()));
        }
        if !(error_stddev > 0.0 && error_stddev.is_finite()) {
            return Err(BfvError::Parameter(format!(
                "error stddev {error_stddev} must be positive and finite"
            )));
        }
        let two_n = 2 * degree_n as u64;
        let mut moduli = Vec::with_capacity(q_primes.len());
        for &p in q_primes {
            if !is_prime_u64(p) {
                return Err(BfvError::Parameter(format!("q factor {p} is not prime")));
            }
            if p % two_n != 1 {
                return Err(BfvError::Parameter(format!(
                    "q prime {p} is not congruent to 1 mod {two_n}; no degree-{degree_n} NTT"
                )));
            }
            let m = Modulus::new(p)?;
            if ntt_tables_for(degree_n, m).is_none() {
                return Err(BfvError::Parameter(format!(
                    "q prime {p} does not support a degree-{degree_n} NTT"
                )));
            }
            moduli.push(m);
        }
        let q_basis = CrtBasis::new(moduli.clone())?;
        let q = q_basis.product().clone();
        let q_bits = q.bits();
        if security_bits != 0 {
            let bound = security_q_bound(degree_n, security_bits).ok_or_else(|| {
                BfvError::Parameter(format!(
                    "no security estimate for degree {degree_n} at {security_bits} bits"
                ))
            })?;
            if q_bits > bound as u64 {
                return Err(BfvError::Parameter(format!(
                    "q has {q_bits} bits, above the {bound}-bit limit for degree {degree_n} at {security_bits}-bit security"
                )));
            }
        }
        let t = Modulus::new(plain_modulus)?;
        if BigUint::from(t.value()) >= q {
            return Err(BfvError::Parameter(format!(
                "plaintext modulus {} is not smaller than q",
                t.value()
            )));
        }
        let delta = &q / BigUint::from(t.value());
        let delta_limbs = moduli.iter().map(|m| m.reduce_biguint(&delta)).collect();
        Ok(SchemeParams {
            inner: Arc::new(Inner {
                degree_n,
                q_primes: moduli,
                plain_modulus: t,
                error_stddev,
                security_bits,
                q_basis,
                q,
                q_bits,
                delta,
                delta_limbs,
                mul_context: OnceLock::new(),
            }),
        })
    }

    /// Same n, q chain, error width and security level, different plaintext
    /// modulus. Key material is valid across such rebindings because keys
    /// depend only on (n, q, sigma).
    pub fn with_plain_modulus(&self, plain_modulus: u64) -> Result<SchemeParams, BfvError> {
        SchemeParams::new(
            self.degree_n(),
            &self
                .q_primes()
                .iter()
                .map(|m| m.value())
                .collect::<Vec<_>>(),
            plain_modulus,
            self.error_stddev(),
            self.security_bits(),
        )
    }

    #[inline]
    pub fn degree_n(&self) -> usize {
        self.inner.degree_n
    }

    #[inline]
    pub fn q_primes(&self) -> &[Modulus] {
        &self.inner.q_primes
    }

    #[inline]
    pub fn plain_modulus(&self) -> Modulus {
        self.inner.plain_modulus
    }

    #[inline]
    pub fn error_stddev(&self) -> f64 {
        self.inner.error_stddev
    }

    #[inline]
    pub fn security_bits(&self) -> u32 {
        self.inner.security_bits
    }

    #[inline]
    pub fn q_basis(&self) -> &CrtBasis {
        &self.inner.q_basis
    }

    #[inline]
    pub fn q(&self) -> &BigUint {
        &self.inner.q
    }

    /// Bit length of the full ciphertext modulus.
    #[inline]
    pub fn q_bits(&self) -> u64 {
        self.inner.q_bits
    }

    /// delta = floor(q / t), the plaintext scaling factor.
    #[inline]
    pub fn delta(&self) -> &BigUint {
        &self.inner.delta
    }

    /// delta reduced into each q limb.
    #[inline]
    pub fn delta_limbs(&self) -> &[u64] {
        &self.inner.delta_limbs
    }

    /// True when the two parameter sets share key material: same ring, same
    /// q chain, same error width. The plaintext modulus may differ.
    pub fn same_key_domain(&self, other: &SchemeParams) -> bool {
        self.inner.degree_n == other.inner.degree_n
            && self.inner.q_primes == other.inner.q_primes
            && self.inner.error_stddev == other.inner.error_stddev
    }

    /// The extended basis for ciphertext multiplication, built on first use.
    pub(super) fn mul_context(&self) -> Result<&MulContext, BfvError> {
        self.inner
            .mul_context
            .get_or_init(|| self.build_mul_context())
            .as_ref()
            .map_err(|e| e.clone())
    }

    fn build_mul_context(&self) -> Result<MulContext, BfvError> {
        // The integer tensor coefficients are bounded by n * (q/2)^2, so the
        // full basis must exceed n * q^2 / 2 in absolute value, i.e. hold
        // log2(n) + 2*q_bits + 1 bits including sign.
        let n = self.degree_n();
        let needed = (n.ilog2() as u64 + self.q_bits() + 2).div_ceil(61);
        let mut exclude: Vec<u64> = self.q_primes().iter().map(|m| m.value()).collect();
        exclude.push(self.plain_modulus().value());
        let mut aux = Vec::with_capacity(needed as usize);
        for _ in 0..needed {
            let p = find_ntt_prime(61, n, &exclude)?;
            exclude.push(p.value());
            aux.push(p);
        }
        let mut all = self.q_primes().to_vec();
        all.extend(aux.iter().copied());
        let full_basis = CrtBasis::new(all)?;
        debug_assert!(full_basis.product() > &(BigUint::from(n) * self.q() * self.q()));
        Ok(MulContext {
            aux_moduli: aux,
            full_basis,
        })
    }
}
