use num_bigint::BigUint;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::modring::{ntt_tables_for, RingPoly};

use super::rns::RnsPoly;
use super::scheme::SchemeParams;
use super::BfvError;

/// Digit width of the relinearization decomposition.
pub const RELIN_BASE_BITS: u32 = 16;

/// The ternary secret s and its per-limb residues.
#[derive(Debug, Clone)]
pub struct SecretKey {
    params: SchemeParams,
    s_signed: Vec<i64>,
    s: RnsPoly,
}

/// An RLWE encryption of zero: b = -(a*s + e), with a uniform.
#[derive(Debug, Clone)]
pub struct PublicKey {
    params: SchemeParams,
    b: RnsPoly,
    a: RnsPoly,
}

/// Key-switching material for degree reduction after multiplication. Row j
/// hides B^j * s^2 where B = 2^RELIN_BASE_BITS:
/// rows[j] = (-(a_j*s + e_j) + B^j*s^2, a_j).
#[derive(Debug, Clone)]
pub struct RelinKey {
    params: SchemeParams,
    base_bits: u32,
    rows: Vec<(RnsPoly, RnsPoly)>,
    /// NTT form of every row limb, precomputed because multiplication
    /// consumes the rows in the evaluation domain.
    rows_eval: Vec<(Vec<Vec<u64>>, Vec<Vec<u64>>)>,
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
    pub relin: RelinKey,
}

impl SecretKey {
    pub(super) fn from_signed(params: SchemeParams, s_signed: Vec<i64>) -> Result<Self, BfvError> {
        let s = RnsPoly::from_signed(&s_signed, params.q_primes())?;
        Ok(SecretKey {
            params,
            s_signed,
            s,
        })
    }

    #[inline]
    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    #[inline]
    pub(super) fn rns(&self) -> &RnsPoly {
        &self.s
    }

    /// Same secret bound to a different plaintext modulus.
    pub fn rebind_plain_modulus(&self, t: u64) -> Result<SecretKey, BfvError> {
        Ok(SecretKey {
            params: self.params.with_plain_modulus(t)?,
            s_signed: self.s_signed.clone(),
            s: self.s.clone(),
        })
    }
}

impl PublicKey {
    pub(super) fn from_parts(params: SchemeParams, b: RnsPoly, a: RnsPoly) -> Self {
        PublicKey { params, b, a }
    }

    #[inline]
    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    #[inline]
    pub(super) fn b(&self) -> &RnsPoly {
        &self.b
    }

    #[inline]
    pub(super) fn a(&self) -> &RnsPoly {
        &self.a
    }

    /// The public key is an encryption of zero; exposing its parts lets
    /// callers (and tests) treat it as a ciphertext.
    pub fn parts(&self) -> (&RnsPoly, &RnsPoly) {
        (&self.b, &self.a)
    }

    pub fn rebind_plain_modulus(&self, t: u64) -> Result<PublicKey, BfvError> {
        Ok(PublicKey {
            params: self.params.with_plain_modulus(t)?,
            b: self.b.clone(),
            a: self.a.clone(),
        })
    }
}

impl RelinKey {
    pub(super) fn from_rows(
        params: SchemeParams,
        base_bits: u32,
        rows: Vec<(RnsPoly, RnsPoly)>,
    ) -> Self {
        let rows_eval = rows
            .iter()
            .map(|(b, a)| (eval_limbs(b), eval_limbs(a)))
            .collect();
        RelinKey {
            params,
            base_bits,
            rows,
            rows_eval,
        }
    }

    #[inline]
    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    #[inline]
    pub fn base_bits(&self) -> u32 {
        self.base_bits
    }

    #[inline]
    pub fn digit_count(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub(super) fn rows(&self) -> &[(RnsPoly, RnsPoly)] {
        &self.rows
    }

    #[inline]
    pub(super) fn rows_eval(&self) -> &[(Vec<Vec<u64>>, Vec<Vec<u64>>)] {
        &self.rows_eval
    }

    pub fn rebind_plain_modulus(&self, t: u64) -> Result<RelinKey, BfvError> {
        Ok(RelinKey {
            params: self.params.with_plain_modulus(t)?,
            base_bits: self.base_bits,
            rows: self.rows.clone(),
            rows_eval: self.rows_eval.clone(),
        })
    }
}

impl KeyPair {
    pub fn rebind_plain_modulus(&self, t: u64) -> Result<KeyPair, BfvError> {
        Ok(KeyPair {
            secret: self.secret.rebind_plain_modulus(t)?,
            public: self.public.rebind_plain_modulus(t)?,
            relin: self.relin.rebind_plain_modulus(t)?,
        })
    }
}

fn eval_limbs(p: &RnsPoly) -> Vec<Vec<u64>> {
    p.limbs()
        .iter()
        .map(|l| {
            let tables = ntt_tables_for(l.degree_n(), l.modulus()).expect("q limb is NTT friendly");
            let mut v = l.coeffs().to_vec();
            tables.forward(&mut v);
            v
        })
        .collect()
}

/// Uniform ternary vector over {-1, 0, 1}.
pub(super) fn sample_ternary<R: Rng>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(0..3i64) - 1).collect()
}

/// Centered discrete Gaussian by rounding, truncated at 6 sigma (resampled
/// beyond the cutoff).
pub(super) fn sample_gaussian<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Vec<i64> {
    let cutoff = (6.0 * sigma).floor();
    (0..n)
        .map(|_| loop {
            // Box-Muller on two uniforms keeps the sample count per draw
            // fixed, so seeded streams stay reproducible across platforms.
            let u1: f64 = rng.random::<f64>();
            let u2: f64 = rng.random::<f64>();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            let x = (g * sigma).round();
            if x.abs() <= cutoff {
                return x as i64;
            }
        })
        .collect()
}

/// Uniform element of R_q, sampled limb-wise (the CRT map makes independent
/// per-limb uniforms exactly uniform mod q).
pub(super) fn sample_uniform_rns<R: Rng>(
    rng: &mut R,
    n: usize,
    params: &SchemeParams,
) -> Result<RnsPoly, BfvError> {
    let limbs = params
        .q_primes()
        .iter()
        .map(|&m| {
            let coeffs: Vec<u64> = (0..n).map(|_| rng.random_range(0..m.value())).collect();
            RingPoly::from_u64(coeffs, m)
        })
        .collect::<Result<_, _>>()?;
    Ok(RnsPoly::from_limbs(limbs))
}

/// Deterministic key generation: ternary secret, RLWE public key, and
/// relinearization rows for s^2 in base 2^RELIN_BASE_BITS.
pub fn keygen(params: &SchemeParams, seed: [u8; 32]) -> Result<KeyPair, BfvError> {
    let mut rng = ChaCha20Rng::from_seed(seed);
    let n = params.degree_n();
    let sigma = params.error_stddev();

    let secret = SecretKey::from_signed(params.clone(), sample_ternary(&mut rng, n))?;
    let s = secret.rns().clone();

    let e_pk = RnsPoly::from_signed(&sample_gaussian(&mut rng, n, sigma), params.q_primes())?;
    let a_pk = sample_uniform_rns(&mut rng, n, params)?;
    let b_pk = a_pk.mul(&s)?.add(&e_pk)?.neg();
    let public = PublicKey::from_parts(params.clone(), b_pk, a_pk);

    let s2 = s.mul(&s)?;
    let digits = params.q_bits().div_ceil(RELIN_BASE_BITS as u64) as usize;
    let mut rows = Vec::with_capacity(digits);
    let mut power = BigUint::from(1u32);
    for _ in 0..digits {
        let e = RnsPoly::from_signed(&sample_gaussian(&mut rng, n, sigma), params.q_primes())?;
        let a = sample_uniform_rns(&mut rng, n, params)?;
        let power_limbs: Vec<u64> = params
            .q_primes()
            .iter()
            .map(|m| m.reduce_biguint(&power))
            .collect();
        let b = a
            .mul(&s)?
            .add(&e)?
            .neg()
            .add(&s2.mul_limb_scalars(&power_limbs))?;
        rows.push((b, a));
        power <<= RELIN_BASE_BITS;
    }
    let relin = RelinKey::from_rows(params.clone(), RELIN_BASE_BITS, rows);

    Ok(KeyPair {
        secret,
        public,
        relin,
    })
}
