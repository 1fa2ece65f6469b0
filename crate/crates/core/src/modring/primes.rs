use super::{Modulus, RingError, MAX_MODULUS_BITS};

/// Deterministic Miller-Rabin primality test, exact for all u64 inputs with
/// this base set.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut r = 0u32;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..r - 1 {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

#[inline]
fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128) * (b as u128) % (m as u128)) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    base %= m;
    let mut acc = 1u64 % m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Finds the largest prime p with `bit_len` bits satisfying p = 1 mod 2n,
/// skipping any value in `exclude`. Primes of this shape admit a negacyclic
/// NTT of degree n.
pub fn find_ntt_prime(bit_len: u32, degree_n: usize, exclude: &[u64]) -> Result<Modulus, RingError> {
    if !degree_n.is_power_of_two() || degree_n < 2 {
        return Err(RingError::BadDegree(degree_n));
    }
    let two_n = 2 * degree_n as u64;
    if bit_len < 2 || bit_len > MAX_MODULUS_BITS {
        return Err(RingError::WindowTooSmall { bit_len, two_n });
    }
    let lo = 1u64 << (bit_len - 1);
    let hi = (1u64 << bit_len) - 1;
    // Smallest candidate of the form k*2n+1 is 2n+1; if even that exceeds the
    // window there is nothing to scan.
    if two_n + 1 > hi {
        return Err(RingError::PrimeSearchExhausted { bit_len, two_n });
    }
    let mut k = (hi - 1) / two_n;
    while k >= 1 {
        let candidate = k * two_n + 1;
        if candidate < lo {
            break;
        }
        if !exclude.contains(&candidate) && is_prime_u64(candidate) {
            return Ok(Modulus::new(candidate)?);
        }
        k -= 1;
    }
    Err(RingError::PrimeSearchExhausted { bit_len, two_n })
}
