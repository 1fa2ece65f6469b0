use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::{is_prime_u64, Modulus};

/// Precomputed twiddle tables for the negacyclic NTT of degree n over a prime
/// p = 1 mod 2n. Powers of the 2n-th root psi are merged into the butterfly
/// stages, so forward/inverse transforms map directly between coefficients of
/// Z_p[x]/(x^n+1) and its evaluation representation.
///
/// Each twiddle is stored with its Shoup companion floor(w * 2^64 / p), which
/// turns the butterfly multiply-mod into two word multiplications and one
/// conditional subtraction.
pub struct NttTables {
    pub n: usize,
    pub modulus: Modulus,
    /// psi^i in bit-reversed order, consumed stage by stage by the forward
    /// Cooley-Tukey pass.
    psi_br: Vec<u64>,
    psi_br_shoup: Vec<u64>,
    /// psi^{-i} in bit-reversed order, for the inverse Gentleman-Sande pass.
    psi_inv_br: Vec<u64>,
    psi_inv_br_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

/// floor(w * 2^64 / p), the fixed-point reciprocal used by mul_shoup.
#[inline]
fn shoup_precompute(w: u64, p: u64) -> u64 {
    (((w as u128) << 64) / p as u128) as u64
}

/// Computes a * w mod p given w_shoup = floor(w * 2^64 / p). Requires w < p
/// and p < 2^63; a may be any u64.
#[inline]
fn mul_shoup(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let q = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(q.wrapping_mul(p));
    if r >= p {
        r - p
    } else {
        r
    }
}

/// Returns shared NTT tables for (n, modulus), or None when the modulus is
/// not a prime congruent to 1 mod 2n. Tables are built once per pair and
/// cached process-wide.
pub fn ntt_tables_for(n: usize, modulus: Modulus) -> Option<Arc<NttTables>> {
    static REGISTRY: OnceLock<Mutex<HashMap<(usize, u64), Option<Arc<NttTables>>>>> =
        OnceLock::new();
    let registry = REGISTRY.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, modulus.value());
    if let Some(entry) = registry.lock().unwrap().get(&key) {
        return entry.clone();
    }
    let built = build_tables(n, modulus).map(Arc::new);
    registry.lock().unwrap().insert(key, built.clone());
    built
}

fn build_tables(n: usize, modulus: Modulus) -> Option<NttTables> {
    if !n.is_power_of_two() || n < 2 {
        return None;
    }
    let p = modulus.value();
    let two_n = 2 * n as u64;
    if (p - 1) % two_n != 0 || !is_prime_u64(p) {
        return None;
    }
    let psi = primitive_2nth_root(modulus, n);
    let psi_inv = modulus.inv(psi).expect("root is a unit");
    let log_n = n.trailing_zeros();
    let mut psi_br = vec![0u64; n];
    let mut psi_inv_br = vec![0u64; n];
    let mut fwd = 1u64;
    let mut inv = 1u64;
    let powers: Vec<(u64, u64)> = (0..n)
        .map(|_| {
            let pair = (fwd, inv);
            fwd = modulus.mul(fwd, psi);
            inv = modulus.mul(inv, psi_inv);
            pair
        })
        .collect();
    for (i, &(f, v)) in powers.iter().enumerate() {
        let r = bit_reverse(i, log_n);
        psi_br[r] = f;
        psi_inv_br[r] = v;
    }
    let psi_br_shoup = psi_br.iter().map(|&w| shoup_precompute(w, p)).collect();
    let psi_inv_br_shoup = psi_inv_br.iter().map(|&w| shoup_precompute(w, p)).collect();
    let n_inv = modulus.inv(n as u64).expect("n is a unit mod p");
    Some(NttTables {
        n,
        modulus,
        psi_br,
        psi_br_shoup,
        psi_inv_br,
        psi_inv_br_shoup,
        n_inv,
        n_inv_shoup: shoup_precompute(n_inv, p),
    })
}

/// Finds psi with psi^n = -1 mod p, i.e. a primitive 2n-th root of unity.
fn primitive_2nth_root(modulus: Modulus, n: usize) -> u64 {
    let p = modulus.value();
    let exp = (p - 1) / (2 * n as u64);
    for c in 2..p {
        let cand = modulus.pow(c, exp);
        if modulus.pow(cand, n as u64) == p - 1 {
            return cand;
        }
    }
    unreachable!("a prime p = 1 mod 2n always has a primitive 2n-th root")
}

#[inline]
fn bit_reverse(x: usize, bits: u32) -> usize {
    x.reverse_bits() >> (usize::BITS - bits)
}

impl NttTables {
    /// In-place forward negacyclic NTT (coefficients to evaluations).
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.modulus.value();
        let n = self.n;
        let mut t = n;
        let mut groups = 1usize;
        while groups < n {
            t /= 2;
            for i in 0..groups {
                let w = self.psi_br[groups + i];
                let ws = self.psi_br_shoup[groups + i];
                let start = 2 * i * t;
                for j in start..start + t {
                    let u = a[j];
                    let v = mul_shoup(a[j + t], w, ws, p);
                    let sum = u + v;
                    a[j] = if sum >= p { sum - p } else { sum };
                    a[j + t] = if u >= v { u - v } else { u + p - v };
                }
            }
            groups *= 2;
        }
    }

    /// In-place inverse negacyclic NTT (evaluations to coefficients).
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.modulus.value();
        let n = self.n;
        let mut t = 1usize;
        let mut groups = n / 2;
        while groups >= 1 {
            for i in 0..groups {
                let w = self.psi_inv_br[groups + i];
                let ws = self.psi_inv_br_shoup[groups + i];
                let start = 2 * i * t;
                for j in start..start + t {
                    let u = a[j];
                    let v = a[j + t];
                    let sum = u + v;
                    a[j] = if sum >= p { sum - p } else { sum };
                    let diff = if u >= v { u - v } else { u + p - v };
                    a[j + t] = mul_shoup(diff, w, ws, p);
                }
            }
            t *= 2;
            groups /= 2;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, p);
        }
    }

    /// Pointwise product of two evaluation-domain vectors into `out`.
    pub fn pointwise_accumulate(&self, out: &mut [u64], a: &[u64], b: &[u64]) {
        let m = self.modulus;
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = m.add(*o, m.mul(x, y));
        }
    }
}
