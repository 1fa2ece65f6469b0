use serde::{Deserialize, Serialize};

use crate::modring::{Modulus, RingPoly};

use super::BfvError;

/// A polynomial mod q represented limb-wise: one residue polynomial per prime
/// in the q chain. All arithmetic distributes over limbs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnsPoly {
    limbs: Vec<RingPoly>,
}

impl RnsPoly {
    pub fn zero(degree_n: usize, moduli: &[Modulus]) -> Result<Self, BfvError> {
        let limbs = moduli
            .iter()
            .map(|&m| RingPoly::zero(degree_n, m))
            .collect::<Result<_, _>>()?;
        Ok(RnsPoly { limbs })
    }

    /// Embeds signed integer coefficients consistently in every limb, so the
    /// limbs are the CRT residues of the same signed value.
    pub fn from_signed(coeffs: &[i64], moduli: &[Modulus]) -> Result<Self, BfvError> {
        let limbs = moduli
            .iter()
            .map(|&m| RingPoly::from_i64(coeffs, m))
            .collect::<Result<_, _>>()?;
        Ok(RnsPoly { limbs })
    }

    pub fn from_limbs(limbs: Vec<RingPoly>) -> Self {
        RnsPoly { limbs }
    }

    #[inline]
    pub fn limbs(&self) -> &[RingPoly] {
        &self.limbs
    }

    #[inline]
    pub fn limb(&self, i: usize) -> &RingPoly {
        &self.limbs[i]
    }

    #[inline]
    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    #[inline]
    pub fn degree_n(&self) -> usize {
        self.limbs[0].degree_n()
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.iter().all(|l| l.is_zero())
    }

    pub fn add(&self, other: &RnsPoly) -> Result<RnsPoly, BfvError> {
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| a.add(b))
            .collect::<Result<_, _>>()?;
        Ok(RnsPoly { limbs })
    }

    pub fn sub(&self, other: &RnsPoly) -> Result<RnsPoly, BfvError> {
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<_, _>>()?;
        Ok(RnsPoly { limbs })
    }

    pub fn neg(&self) -> RnsPoly {
        RnsPoly {
            limbs: self.limbs.iter().map(|l| l.neg()).collect(),
        }
    }

    /// Limb-wise negacyclic product (inputs share the q chain).
    pub fn mul(&self, other: &RnsPoly) -> Result<RnsPoly, BfvError> {
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .map(|(a, b)| a.mul(b))
            .collect::<Result<_, _>>()?;
        Ok(RnsPoly { limbs })
    }

    /// Multiplies every limb by the same signed scalar.
    pub fn mul_scalar_signed(&self, w: i64) -> RnsPoly {
        let limbs = self
            .limbs
            .iter()
            .map(|l| {
                let m = l.modulus();
                l.mul_scalar(m.reduce_i64(w))
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Multiplies limb i by scalars[i]; used for values like delta that have
    /// distinct residues per limb.
    pub fn mul_limb_scalars(&self, scalars: &[u64]) -> RnsPoly {
        debug_assert_eq!(scalars.len(), self.limbs.len());
        let limbs = self
            .limbs
            .iter()
            .zip(scalars)
            .map(|(l, &s)| l.mul_scalar(s))
            .collect();
        RnsPoly { limbs }
    }
}
