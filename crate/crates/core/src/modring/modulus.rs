use num_bigint::{BigInt, BigUint};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::RingError;

/// Largest supported modulus bit width. Keeping m < 2^62 lets `add` work in
/// plain u64 words and keeps 6-sigma-truncated noise embeddable as i64.
pub const MAX_MODULUS_BITS: u32 = 62;

/// A validated modulus m in [2, 2^62) with the scalar mod-m operations used
/// throughout the ring layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Modulus(u64);

impl TryFrom<u64> for Modulus {
    type Error = RingError;
    fn try_from(value: u64) -> Result<Self, RingError> {
        Modulus::new(value)
    }
}

impl From<Modulus> for u64 {
    fn from(m: Modulus) -> u64 {
        m.0
    }
}

impl Modulus {
    pub fn new(value: u64) -> Result<Self, RingError> {
        if value < 2 || value >= (1u64 << MAX_MODULUS_BITS) {
            return Err(RingError::InvalidModulus(value));
        }
        Ok(Modulus(value))
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    /// Number of bits in m, i.e. floor(log2 m) + 1.
    #[inline]
    pub fn bit_len(self) -> u32 {
        64 - self.0.leading_zeros()
    }

    #[inline]
    pub fn add(self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.0 && b < self.0);
        let s = a + b;
        if s >= self.0 {
            s - self.0
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(self, a: u64, b: u64) -> u64 {
        debug_assert!(a < self.0 && b < self.0);
        if a >= b {
            a - b
        } else {
            a + self.0 - b
        }
    }

    #[inline]
    pub fn neg(self, a: u64) -> u64 {
        debug_assert!(a < self.0);
        if a == 0 {
            0
        } else {
            self.0 - a
        }
    }

    #[inline]
    pub fn mul(self, a: u64, b: u64) -> u64 {
        ((a as u128) * (b as u128) % (self.0 as u128)) as u64
    }

    pub fn pow(self, base: u64, mut exp: u64) -> u64 {
        let mut base = self.reduce_u64(base);
        let mut acc = 1u64 % self.0;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(self, a: u64) -> Result<u64, RingError> {
        let a = self.reduce_u64(a);
        let (mut r0, mut r1) = (self.0 as i128, a as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (t0, t1) = (t1, t0 - q * t1);
        }
        if r0 != 1 {
            return Err(RingError::NonInvertible {
                value: a,
                modulus: self.0,
            });
        }
        Ok(t0.rem_euclid(self.0 as i128) as u64)
    }

    #[inline]
    pub fn reduce_u64(self, v: u64) -> u64 {
        v % self.0
    }

    #[inline]
    pub fn reduce_i64(self, v: i64) -> u64 {
        v.rem_euclid(self.0 as i64) as u64
    }

    #[inline]
    pub fn reduce_u128(self, v: u128) -> u64 {
        (v % self.0 as u128) as u64
    }

    pub fn reduce_biguint(self, v: &BigUint) -> u64 {
        (v % self.0).to_u64().expect("residue fits u64")
    }

    pub fn reduce_bigint(self, v: &BigInt) -> u64 {
        let m = BigInt::from(self.0);
        let r = ((v % &m) + &m) % &m;
        r.to_u64().expect("residue fits u64")
    }
}
