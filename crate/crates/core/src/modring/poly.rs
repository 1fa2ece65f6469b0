use serde::{Deserialize, Serialize};

use super::{ntt_tables_for, Modulus, RingError};

/// Element of Z_m[x]/(x^n+1), stored as n coefficients in [0, m).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingPoly {
    coeffs: Vec<u64>,
    modulus: Modulus,
}

impl RingPoly {
    pub fn zero(degree_n: usize, modulus: Modulus) -> Result<Self, RingError> {
        check_degree(degree_n)?;
        Ok(RingPoly {
            coeffs: vec![0; degree_n],
            modulus,
        })
    }

    /// Builds a polynomial from unsigned coefficients, reducing each mod m.
    pub fn from_u64(coeffs: Vec<u64>, modulus: Modulus) -> Result<Self, RingError> {
        check_degree(coeffs.len())?;
        let coeffs = coeffs.into_iter().map(|c| modulus.reduce_u64(c)).collect();
        Ok(RingPoly { coeffs, modulus })
    }

    /// Builds a polynomial from signed coefficients, reducing each mod m.
    pub fn from_i64(coeffs: &[i64], modulus: Modulus) -> Result<Self, RingError> {
        check_degree(coeffs.len())?;
        let coeffs = coeffs.iter().map(|&c| modulus.reduce_i64(c)).collect();
        Ok(RingPoly { coeffs, modulus })
    }

    #[inline]
    pub fn degree_n(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn modulus(&self) -> Modulus {
        self.modulus
    }

    #[inline]
    pub fn coeffs(&self) -> &[u64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0)
    }

    fn check_compat(&self, other: &RingPoly) -> Result<(), RingError> {
        if self.degree_n() != other.degree_n() {
            return Err(RingError::DegreeMismatch(self.degree_n(), other.degree_n()));
        }
        if self.modulus != other.modulus {
            return Err(RingError::ModulusMismatch(
                self.modulus.value(),
                other.modulus.value(),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &RingPoly) -> Result<RingPoly, RingError> {
        self.check_compat(other)?;
        let m = self.modulus;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| m.add(a, b))
            .collect();
        Ok(RingPoly { coeffs, modulus: m })
    }

    pub fn sub(&self, other: &RingPoly) -> Result<RingPoly, RingError> {
        self.check_compat(other)?;
        let m = self.modulus;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(&a, &b)| m.sub(a, b))
            .collect();
        Ok(RingPoly { coeffs, modulus: m })
    }

    pub fn neg(&self) -> RingPoly {
        let m = self.modulus;
        RingPoly {
            coeffs: self.coeffs.iter().map(|&a| m.neg(a)).collect(),
            modulus: m,
        }
    }

    pub fn mul_scalar(&self, scalar: u64) -> RingPoly {
        let m = self.modulus;
        let s = m.reduce_u64(scalar);
        RingPoly {
            coeffs: self.coeffs.iter().map(|&a| m.mul(a, s)).collect(),
            modulus: m,
        }
    }

    /// Negacyclic product in Z_m[x]/(x^n+1). Uses the NTT when m supports a
    /// degree-n transform and falls back to direct convolution otherwise.
    pub fn mul(&self, other: &RingPoly) -> Result<RingPoly, RingError> {
        self.check_compat(other)?;
        let n = self.degree_n();
        let m = self.modulus;
        if let Some(tables) = ntt_tables_for(n, m) {
            let mut a = self.coeffs.clone();
            let mut b = other.coeffs.clone();
            tables.forward(&mut a);
            tables.forward(&mut b);
            for (x, y) in a.iter_mut().zip(&b) {
                *x = m.mul(*x, *y);
            }
            tables.inverse(&mut a);
            return Ok(RingPoly {
                coeffs: a,
                modulus: m,
            });
        }
        let mut out = vec![0u64; n];
        for (i, &ai) in self.coeffs.iter().enumerate() {
            if ai == 0 {
                continue;
            }
            for (j, &bj) in other.coeffs.iter().enumerate() {
                if bj == 0 {
                    continue;
                }
                let term = m.mul(ai, bj);
                let k = i + j;
                if k < n {
                    out[k] = m.add(out[k], term);
                } else {
                    out[k - n] = m.sub(out[k - n], term);
                }
            }
        }
        Ok(RingPoly {
            coeffs: out,
            modulus: m,
        })
    }
}

fn check_degree(n: usize) -> Result<(), RingError> {
    if !n.is_power_of_two() || n < 2 {
        return Err(RingError::BadDegree(n));
    }
    Ok(())
}

/// Forward negacyclic NTT of a polynomial. Errors when the modulus does not
/// support a degree-n transform.
pub fn ntt_forward(p: &RingPoly) -> Result<Vec<u64>, RingError> {
    let tables = ntt_tables_for(p.degree_n(), p.modulus()).ok_or(RingError::UnsupportedModulus {
        modulus: p.modulus().value(),
        degree_n: p.degree_n(),
    })?;
    let mut values = p.coeffs().to_vec();
    tables.forward(&mut values);
    Ok(values)
}

/// Inverse negacyclic NTT: reconstructs the polynomial whose forward transform
/// equals `values` (each value reduced mod m first).
pub fn ntt_inverse(values: &[u64], modulus: Modulus) -> Result<RingPoly, RingError> {
    check_degree(values.len())?;
    let tables = ntt_tables_for(values.len(), modulus).ok_or(RingError::UnsupportedModulus {
        modulus: modulus.value(),
        degree_n: values.len(),
    })?;
    let mut coeffs: Vec<u64> = values.iter().map(|&v| modulus.reduce_u64(v)).collect();
    tables.inverse(&mut coeffs);
    Ok(RingPoly {
        coeffs,
        modulus,
    })
}
