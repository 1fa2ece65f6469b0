//! Maps application integers to plaintext ring polynomials.
//!
//! Two encodings exist. The scalar encoding stores one signed integer in the
//! constant coefficient. The slot encoding packs up to n integers so that ring
//! addition and multiplication act slot-wise; it evaluates the polynomial at
//! the odd powers of a primitive 2n-th root of unity mod t, which requires t
//! prime with t ≡ 1 (mod 2n).
//!
//! Slot order is the transform's natural evaluation order. It is stable and
//! consistent between encode and decode, and nothing in the pipeline rotates
//! slots, so the exact permutation is deliberately not exposed.

use std::sync::Arc;

use thiserror::Error;

use crate::bfv::Plaintext;
use crate::modring::{is_prime_u64, ntt_tables_for, signed_lift, Modulus, NttTables, RingPoly};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("plaintext modulus {modulus} does not support {degree_n} slots: need a prime with {modulus} = 1 mod {}", 2 * degree_n)]
    UnsupportedModulus { modulus: u64, degree_n: usize },
    #[error("value {value} exceeds the representable range [{lo}, {hi}] mod {modulus}")]
    Overflow {
        value: i64,
        lo: i64,
        hi: i64,
        modulus: u64,
    },
    #[error("{got} values do not fit in {slots} slots")]
    TooManyValues { got: usize, slots: usize },
    #[error("polynomial has modulus {got}, encoder uses {want}")]
    ModulusMismatch { got: u64, want: u64 },
    #[error("polynomial has degree {got}, encoder uses {want}")]
    DegreeMismatch { got: usize, want: usize },
    #[error("invalid degree {0}: must be a power of two of at least 2")]
    BadDegree(usize),
}

/// Signed range representable mod `m`: the image of the centered lift.
fn signed_range(m: Modulus) -> (i64, i64) {
    let half = m.value().div_ceil(2);
    (-((m.value() / 2) as i64), (half - 1) as i64)
}

fn reduce_signed(v: i64, m: Modulus) -> Result<u64, EncodeError> {
    let (lo, hi) = signed_range(m);
    if v < lo || v > hi {
        return Err(EncodeError::Overflow {
            value: v,
            lo,
            hi,
            modulus: m.value(),
        });
    }
    Ok(m.reduce_i64(v))
}

/// Stores `v` in the constant coefficient of a degree-n plaintext.
pub fn encode_scalar(v: i64, plain_modulus: Modulus, degree_n: usize) -> Result<Plaintext, EncodeError> {
    if !degree_n.is_power_of_two() || degree_n < 2 {
        return Err(EncodeError::BadDegree(degree_n));
    }
    let mut coeffs = vec![0u64; degree_n];
    coeffs[0] = reduce_signed(v, plain_modulus)?;
    Ok(RingPoly::from_u64(coeffs, plain_modulus).expect("degree and modulus already checked"))
}

/// Reads the constant coefficient back as a signed integer.
pub fn decode_scalar(pt: &Plaintext) -> i64 {
    signed_lift(pt.coeffs()[0], pt.modulus())
}

/// Packs up to n signed integers into one plaintext with slot-wise add and
/// multiply semantics.
#[derive(Clone)]
pub struct SlotEncoder {
    degree_n: usize,
    plain_modulus: Modulus,
    tables: Arc<NttTables>,
}

impl SlotEncoder {
    pub fn new(degree_n: usize, plain_modulus: Modulus) -> Result<Self, EncodeError> {
        if !degree_n.is_power_of_two() || degree_n < 2 {
            return Err(EncodeError::BadDegree(degree_n));
        }
        let unsupported = || EncodeError::UnsupportedModulus {
            modulus: plain_modulus.value(),
            degree_n,
        };
        if !is_prime_u64(plain_modulus.value()) {
            return Err(unsupported());
        }
        let tables = ntt_tables_for(degree_n, plain_modulus).ok_or_else(unsupported)?;
        Ok(SlotEncoder {
            degree_n,
            plain_modulus,
            tables,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.degree_n
    }

    pub fn plain_modulus(&self) -> Modulus {
        self.plain_modulus
    }

    /// Shorter inputs are zero-padded to the full slot count.
    pub fn encode(&self, values: &[i64]) -> Result<Plaintext, EncodeError> {
        if values.len() > self.degree_n {
            return Err(EncodeError::TooManyValues {
                got: values.len(),
                slots: self.degree_n,
            });
        }
        let mut evals = vec![0u64; self.degree_n];
        for (slot, &v) in evals.iter_mut().zip(values) {
            *slot = reduce_signed(v, self.plain_modulus)?;
        }
        self.tables.inverse(&mut evals);
        Ok(RingPoly::from_u64(evals, self.plain_modulus).expect("reduced coefficients"))
    }

    /// Returns all n slots, signed.
    pub fn decode(&self, pt: &Plaintext) -> Result<Vec<i64>, EncodeError> {
        if pt.modulus() != self.plain_modulus {
            return Err(EncodeError::ModulusMismatch {
                got: pt.modulus().value(),
                want: self.plain_modulus.value(),
            });
        }
        if pt.degree_n() != self.degree_n {
            return Err(EncodeError::DegreeMismatch {
                got: pt.degree_n(),
                want: self.degree_n,
            });
        }
        let mut evals = pt.coeffs().to_vec();
        self.tables.forward(&mut evals);
        Ok(evals
            .into_iter()
            .map(|v| signed_lift(v, self.plain_modulus))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn t40961() -> Modulus {
        Modulus::new(40961).unwrap()
    }

    #[test]
    fn scalar_zero_is_the_zero_polynomial() {
        let pt = encode_scalar(0, t40961(), 1024).unwrap();
        assert!(pt.is_zero());
        assert_eq!(decode_scalar(&pt), 0);
    }

    #[test]
    fn scalar_minus_one_wraps_to_t_minus_one() {
        let pt = encode_scalar(-1, t40961(), 1024).unwrap();
        assert_eq!(pt.coeffs()[0], 40960);
        assert!(pt.coeffs()[1..].iter().all(|&c| c == 0));
        assert_eq!(decode_scalar(&pt), -1);
    }

    #[test]
    fn scalar_roundtrip_is_exhaustive_for_a_small_modulus() {
        let t = Modulus::new(257).unwrap();
        for v in -128..=128i64 {
            let pt = encode_scalar(v, t, 16).unwrap();
            assert_eq!(decode_scalar(&pt), v);
        }
        assert!(matches!(
            encode_scalar(129, t, 16),
            Err(EncodeError::Overflow { .. })
        ));
        assert!(matches!(
            encode_scalar(-129, t, 16),
            Err(EncodeError::Overflow { .. })
        ));
    }

    #[test]
    fn scalar_encodings_multiply_as_integers() {
        let t = t40961();
        let a = encode_scalar(-7, t, 64).unwrap();
        let b = encode_scalar(13, t, 64).unwrap();
        assert_eq!(decode_scalar(&a.mul(&b).unwrap()), -91);
        assert_eq!(decode_scalar(&a.add(&b).unwrap()), 6);
    }

    #[test]
    fn encoder_requires_a_matching_prime() {
        // 7 is prime but 6 is not a multiple of 2n.
        assert!(matches!(
            SlotEncoder::new(1024, Modulus::new(7).unwrap()),
            Err(EncodeError::UnsupportedModulus { .. })
        ));
        // 40962 = 1 mod 2048 fails primality.
        assert!(matches!(
            SlotEncoder::new(1024, Modulus::new(40962).unwrap()),
            Err(EncodeError::UnsupportedModulus { .. })
        ));
        assert!(SlotEncoder::new(1024, t40961()).is_ok());
    }

    #[test]
    fn all_zero_slots_encode_to_the_zero_polynomial() {
        let enc = SlotEncoder::new(1024, t40961()).unwrap();
        let pt = enc.encode(&vec![0; 1024]).unwrap();
        assert!(pt.is_zero());
        let empty = enc.encode(&[]).unwrap();
        assert!(empty.is_zero());
    }

    #[test]
    fn short_batches_are_zero_padded() {
        let enc = SlotEncoder::new(1024, t40961()).unwrap();
        let values = [5, -3, 11];
        let pt = enc.encode(&values).unwrap();
        let decoded = enc.decode(&pt).unwrap();
        assert_eq!(decoded.len(), 1024);
        assert_eq!(&decoded[..3], &values);
        assert!(decoded[3..].iter().all(|&v| v == 0));
    }

    #[test]
    fn too_many_values_are_rejected() {
        let enc = SlotEncoder::new(16, Modulus::new(257).unwrap()).unwrap();
        assert!(matches!(
            enc.encode(&vec![1; 17]),
            Err(EncodeError::TooManyValues { got: 17, slots: 16 })
        ));
    }

    #[test]
    fn ring_product_multiplies_slot_wise() {
        let enc = SlotEncoder::new(1024, t40961()).unwrap();
        let u: Vec<i64> = (1..=1024).collect();
        let v = vec![3i64; 1024];
        let prod = enc
            .encode(&u)
            .unwrap()
            .mul(&enc.encode(&v).unwrap())
            .unwrap();
        let decoded = enc.decode(&prod).unwrap();
        for (i, &got) in decoded.iter().enumerate() {
            assert_eq!(got, 3 * (i as i64 + 1));
        }
    }

    #[test]
    fn slot_homomorphism_matches_the_per_slot_oracle() {
        let t = t40961();
        let enc = SlotEncoder::new(1024, t).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let (lo, hi) = signed_range(t);
        for _ in 0..10 {
            let u: Vec<i64> = (0..1024).map(|_| rng.random_range(lo..=hi)).collect();
            let v: Vec<i64> = (0..1024).map(|_| rng.random_range(lo..=hi)).collect();
            let eu = enc.encode(&u).unwrap();
            let ev = enc.encode(&v).unwrap();

            let sum = enc.decode(&eu.add(&ev).unwrap()).unwrap();
            let prod = enc.decode(&eu.mul(&ev).unwrap()).unwrap();
            for i in 0..1024 {
                let expect_sum = signed_lift(t.reduce_i64(u[i] + v[i]), t);
                assert_eq!(sum[i], expect_sum);
                let expect_prod =
                    signed_lift(t.reduce_u64(t.reduce_i64(u[i]).wrapping_mul(t.reduce_i64(v[i]))), t);
                assert_eq!(prod[i], expect_prod);
            }
        }
    }

    #[test]
    fn encoding_is_linear() {
        let t = Modulus::new(257).unwrap();
        let enc = SlotEncoder::new(16, t).unwrap();
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..50 {
            let u: Vec<i64> = (0..16).map(|_| rng.random_range(-60..=60)).collect();
            let v: Vec<i64> = (0..16).map(|_| rng.random_range(-60..=60)).collect();
            let w: Vec<i64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let lhs = enc.encode(&w).unwrap();
            let rhs = enc.encode(&u).unwrap().add(&enc.encode(&v).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn range_bounds_roundtrip_and_beyond_overflows() {
        let t = t40961();
        let enc = SlotEncoder::new(1024, t).unwrap();
        let hi = 20480i64;
        let pt = enc.encode(&[hi, -hi]).unwrap();
        let decoded = enc.decode(&pt).unwrap();
        assert_eq!(decoded[0], hi);
        assert_eq!(decoded[1], -hi);
        assert!(matches!(
            enc.encode(&[hi + 1]),
            Err(EncodeError::Overflow { .. })
        ));
    }

    #[test]
    fn decode_rejects_foreign_polynomials() {
        let enc = SlotEncoder::new(1024, t40961()).unwrap();
        let wrong_mod = RingPoly::zero(1024, Modulus::new(12289).unwrap()).unwrap();
        assert!(matches!(
            enc.decode(&wrong_mod),
            Err(EncodeError::ModulusMismatch { .. })
        ));
        let wrong_deg = RingPoly::zero(2048, t40961()).unwrap();
        assert!(matches!(
            enc.decode(&wrong_deg),
            Err(EncodeError::DegreeMismatch { .. })
        ));
    }

    #[test]
    fn encrypted_operations_act_slot_wise() {
        use crate::bfv::{decrypt, encrypt, he_add, he_mul, keygen, SchemeParams};
        use crate::modring::find_ntt_prime;

        let q0 = find_ntt_prime(60, 1024, &[]).unwrap().value();
        let params = SchemeParams::new(1024, &[q0], 40961, 3.2, 0).unwrap();
        let keys = keygen(&params, [31u8; 32]).unwrap();
        let enc = SlotEncoder::new(1024, params.plain_modulus()).unwrap();

        let mut rng = StdRng::seed_from_u64(7);
        let u: Vec<i64> = (0..1024).map(|_| rng.random_range(-100..=100)).collect();
        let v: Vec<i64> = (0..1024).map(|_| rng.random_range(-100..=100)).collect();
        let cu = encrypt(&keys.public, &enc.encode(&u).unwrap()).unwrap();
        let cv = encrypt(&keys.public, &enc.encode(&v).unwrap()).unwrap();

        let sum = enc
            .decode(&decrypt(&keys.secret, &he_add(&cu, &cv).unwrap()).unwrap())
            .unwrap();
        let prod = enc
            .decode(&decrypt(&keys.secret, &he_mul(&cu, &cv, &keys.relin).unwrap()).unwrap())
            .unwrap();
        for i in 0..1024 {
            assert_eq!(sum[i], u[i] + v[i]);
            assert_eq!(prod[i], u[i] * v[i]);
        }
    }
}
