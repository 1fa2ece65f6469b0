use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use crate::modring::{ntt_tables_for, signed_lift, signed_lift_big, RingPoly};

use super::keys::{sample_gaussian, sample_ternary, PublicKey, RelinKey, SecretKey};
use super::rns::RnsPoly;
use super::scheme::SchemeParams;
use super::{BfvError, Plaintext};

/// An RLWE ciphertext: parts (c0, c1, ...) over the q chain, decrypting to
/// sum(c_i * s^i) scaled down by t/q. Fresh and relinearized ciphertexts have
/// exactly two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    parts: Vec<RnsPoly>,
    params: SchemeParams,
}

impl Ciphertext {
    pub fn from_parts(parts: Vec<RnsPoly>, params: SchemeParams) -> Result<Self, BfvError> {
        if parts.len() < 2 {
            return Err(BfvError::CiphertextMismatch(format!(
                "a ciphertext needs at least 2 parts, got {}",
                parts.len()
            )));
        }
        for part in &parts {
            if part.limb_count() != params.q_primes().len()
                || part.degree_n() != params.degree_n()
            {
                return Err(BfvError::CiphertextMismatch(
                    "part shape does not match parameters".into(),
                ));
            }
        }
        Ok(Ciphertext { parts, params })
    }

    /// The all-zero ciphertext: a valid, noise-free encryption of zero that
    /// carries no randomness at all (transparent by construction).
    pub fn zero(params: &SchemeParams) -> Result<Self, BfvError> {
        let z = RnsPoly::zero(params.degree_n(), params.q_primes())?;
        Ok(Ciphertext {
            parts: vec![z.clone(), z],
            params: params.clone(),
        })
    }

    #[inline]
    pub fn parts(&self) -> &[RnsPoly] {
        &self.parts
    }

    #[inline]
    pub fn params(&self) -> &SchemeParams {
        &self.params
    }
}

fn check_plaintext(params: &SchemeParams, pt: &Plaintext) -> Result<(), BfvError> {
    if pt.modulus() != params.plain_modulus() {
        return Err(BfvError::PlaintextMismatch(format!(
            "plaintext modulus {} vs scheme plaintext modulus {}",
            pt.modulus().value(),
            params.plain_modulus().value()
        )));
    }
    if pt.degree_n() != params.degree_n() {
        return Err(BfvError::PlaintextMismatch(format!(
            "plaintext degree {} vs ring degree {}",
            pt.degree_n(),
            params.degree_n()
        )));
    }
    Ok(())
}

fn check_same_params(a: &Ciphertext, b: &Ciphertext) -> Result<(), BfvError> {
    if a.params != b.params {
        return Err(BfvError::CiphertextMismatch(
            "operands come from different parameter sets".into(),
        ));
    }
    Ok(())
}

/// Per-limb embedding of delta * m for a plaintext with coefficients in
/// [0, t).
fn delta_message(params: &SchemeParams, pt: &Plaintext) -> Result<RnsPoly, BfvError> {
    let limbs = params
        .q_primes()
        .iter()
        .zip(params.delta_limbs())
        .map(|(&m, &delta_l)| {
            let coeffs: Vec<u64> = pt.coeffs().iter().map(|&c| m.reduce_u64(c)).collect();
            RingPoly::from_u64(coeffs, m).map(|p| p.mul_scalar(delta_l))
        })
        .collect::<Result<_, _>>()?;
    Ok(RnsPoly::from_limbs(limbs))
}

/// Signed coefficient lift of a plaintext: each coefficient mapped to its
/// centered representative mod t. Keeps noise growth proportional to the
/// magnitude of the signed value rather than its unsigned residue.
fn signed_plain_coeffs(pt: &Plaintext) -> Vec<i64> {
    let t = pt.modulus();
    pt.coeffs().iter().map(|&c| signed_lift(c, t)).collect()
}

/// Encrypts with the caller's randomness source; deterministic given the rng
/// state.
pub fn encrypt_with_rng<R: Rng>(
    pk: &PublicKey,
    pt: &Plaintext,
    rng: &mut R,
) -> Result<Ciphertext, BfvError> {
    let params = pk.params();
    check_plaintext(params, pt)?;
    let n = params.degree_n();
    let sigma = params.error_stddev();
    let u = RnsPoly::from_signed(&sample_ternary(rng, n), params.q_primes())?;
    let e1 = RnsPoly::from_signed(&sample_gaussian(rng, n, sigma), params.q_primes())?;
    let e2 = RnsPoly::from_signed(&sample_gaussian(rng, n, sigma), params.q_primes())?;
    let c0 = pk.b().mul(&u)?.add(&e1)?.add(&delta_message(params, pt)?)?;
    let c1 = pk.a().mul(&u)?.add(&e2)?;
    Ok(Ciphertext {
        parts: vec![c0, c1],
        params: params.clone(),
    })
}

/// Encrypts under the public key with fresh system randomness.
pub fn encrypt(pk: &PublicKey, pt: &Plaintext) -> Result<Ciphertext, BfvError> {
    encrypt_with_rng(pk, pt, &mut rand::rng())
}

fn check_key_matches(sk: &SecretKey, ct: &Ciphertext) -> Result<(), BfvError> {
    if !sk.params().same_key_domain(ct.params()) {
        return Err(BfvError::CiphertextMismatch(
            "secret key and ciphertext use different (n, q) domains".into(),
        ));
    }
    Ok(())
}

/// Evaluates sum(c_i * s^i) mod q by Horner's rule.
fn decryption_poly(sk: &SecretKey, ct: &Ciphertext) -> Result<RnsPoly, BfvError> {
    let s = sk.rns();
    let mut acc = ct.parts.last().expect("at least two parts").clone();
    for part in ct.parts.iter().rev().skip(1) {
        acc = acc.mul(s)?.add(part)?;
    }
    Ok(acc)
}

/// Decrypts to the message polynomial mod t. Exact whenever the noise budget
/// is positive; past that, returns whatever the rounding produces.
pub fn decrypt(sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext, BfvError> {
    check_key_matches(sk, ct)?;
    let params = ct.params();
    let t = params.plain_modulus();
    let x = decryption_poly(sk, ct)?;
    let n = params.degree_n();
    let mut out = Vec::with_capacity(n);
    if params.q_primes().len() == 1 {
        // Single-limb fast path in 128-bit arithmetic.
        let q = params.q_primes()[0];
        let qv = q.value() as i128;
        let tv = t.value() as i128;
        for &c in x.limb(0).coeffs() {
            let xs = signed_lift(c, q) as i128;
            let m = (2 * tv * xs + qv).div_euclid(2 * qv);
            out.push(m.rem_euclid(tv) as u64);
        }
    } else {
        let q = params.q();
        let basis = params.q_basis();
        let t_big = BigInt::from(t.value());
        let q_big = BigInt::from(q.clone());
        let two_q = &q_big * 2;
        let mut scratch = vec![0u64; basis.len()];
        for i in 0..n {
            for (k, limb) in x.limbs().iter().enumerate() {
                scratch[k] = limb.coeffs()[i];
            }
            let combined = basis.combine(&scratch)?;
            let xs = signed_lift_big(&combined, q);
            let m = (&t_big * xs * 2u32 + &q_big).div_floor(&two_q);
            out.push(m.mod_floor(&t_big).to_u64().expect("residue fits u64"));
        }
    }
    Ok(Plaintext::from_u64(out, t)?)
}

/// Decrypts only when the noise budget is still positive, erring instead of
/// returning a possibly corrupted message.
pub fn checked_decrypt(sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext, BfvError> {
    if noise_budget(sk, ct)? == 0 {
        return Err(BfvError::BudgetExhausted);
    }
    decrypt(sk, ct)
}

/// Bits of headroom before noise corrupts decryption: floor(log2(q / (2u)))
/// where u is the largest centered residue of t * (sum c_i s^i) mod q, and
/// q_bits - 1 for the noise-free case. Zero means decryption is no longer
/// guaranteed; any positive value guarantees it.
pub fn noise_budget(sk: &SecretKey, ct: &Ciphertext) -> Result<u32, BfvError> {
    check_key_matches(sk, ct)?;
    let params = ct.params();
    let t = params.plain_modulus();
    let x = decryption_poly(sk, ct)?;
    if params.q_primes().len() == 1 {
        let q = params.q_primes()[0];
        let qv = q.value() as u128;
        let tv = t.value() as u128;
        let mut max_u: u128 = 0;
        for &c in x.limb(0).coeffs() {
            let u = (tv * c as u128) % qv;
            let centered = u.min(qv - u); // |centered residue|
            max_u = max_u.max(centered);
        }
        if max_u == 0 {
            return Ok(q.bit_len() - 1);
        }
        let ratio = qv / (2 * max_u);
        Ok(if ratio == 0 {
            0
        } else {
            127 - ratio.leading_zeros()
        })
    } else {
        let q = params.q();
        let basis = params.q_basis();
        let t_big = BigUint::from(t.value());
        let mut max_u = BigUint::zero();
        let mut scratch = vec![0u64; basis.len()];
        for i in 0..params.degree_n() {
            for (k, limb) in x.limbs().iter().enumerate() {
                scratch[k] = limb.coeffs()[i];
            }
            let combined = basis.combine(&scratch)?;
            let u = (&t_big * &combined) % q;
            let complement = q - &u;
            let centered = u.min(complement);
            if centered > max_u {
                max_u = centered;
            }
        }
        if max_u.is_zero() {
            return Ok(params.q_bits() as u32 - 1);
        }
        let ratio = q / (max_u * 2u32);
        if ratio.is_zero() {
            Ok(0)
        } else {
            Ok(ratio.bits() as u32 - 1)
        }
    }
}

/// Part-wise sum; operands may have different part counts (e.g. one
/// unrelinearized three-part operand).
pub fn he_add(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, BfvError> {
    check_same_params(a, b)?;
    let (longer, shorter) = if a.parts.len() >= b.parts.len() {
        (a, b)
    } else {
        (b, a)
    };
    let mut parts = Vec::with_capacity(longer.parts.len());
    for (i, part) in longer.parts.iter().enumerate() {
        match shorter.parts.get(i) {
            Some(other) => parts.push(part.add(other)?),
            None => parts.push(part.clone()),
        }
    }
    Ok(Ciphertext {
        parts,
        params: a.params.clone(),
    })
}

pub fn he_sub(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, BfvError> {
    check_same_params(a, b)?;
    let len = a.parts.len().max(b.parts.len());
    let mut parts = Vec::with_capacity(len);
    for i in 0..len {
        let part = match (a.parts.get(i), b.parts.get(i)) {
            (Some(x), Some(y)) => x.sub(y)?,
            (Some(x), None) => x.clone(),
            (None, Some(y)) => y.neg(),
            (None, None) => unreachable!(),
        };
        parts.push(part);
    }
    Ok(Ciphertext {
        parts,
        params: a.params.clone(),
    })
}

pub fn he_negate(a: &Ciphertext) -> Result<Ciphertext, BfvError> {
    Ok(Ciphertext {
        parts: a.parts.iter().map(|p| p.neg()).collect(),
        params: a.params.clone(),
    })
}

/// Adds a plaintext into the ciphertext: c0 += delta * m, with m taken in
/// centered form.
pub fn he_add_plain(a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, BfvError> {
    let params = a.params();
    check_plaintext(params, pt)?;
    let signed = signed_plain_coeffs(pt);
    let m = RnsPoly::from_signed(&signed, params.q_primes())?;
    let scaled = m.mul_limb_scalars(params.delta_limbs());
    let mut parts = a.parts.clone();
    parts[0] = parts[0].add(&scaled)?;
    Ok(Ciphertext {
        parts,
        params: params.clone(),
    })
}

/// Multiplies a ciphertext by a plaintext polynomial. The plaintext enters in
/// centered form so the noise scales with the signed magnitude of its
/// coefficients. Constant polynomials take a scalar fast path.
pub fn he_mul_plain(a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, BfvError> {
    let params = a.params();
    check_plaintext(params, pt)?;
    if pt.is_zero() {
        return Err(BfvError::TransparentResult);
    }
    let signed = signed_plain_coeffs(pt);
    let is_constant = signed[1..].iter().all(|&c| c == 0);
    let parts = if is_constant {
        a.parts
            .iter()
            .map(|p| p.mul_scalar_signed(signed[0]))
            .collect()
    } else {
        let m = RnsPoly::from_signed(&signed, params.q_primes())?;
        a.parts
            .iter()
            .map(|p| p.mul(&m))
            .collect::<Result<_, _>>()?
    };
    Ok(Ciphertext {
        parts,
        params: params.clone(),
    })
}

/// The scaled tensor product round(t/q * (a tensor b)) as three q-chain
/// polynomials. Exact integer arithmetic throughout: inputs are lifted into
/// an extended CRT basis wide enough to hold the tensor coefficients.
fn mul_tensor(a: &Ciphertext, b: &Ciphertext) -> Result<[RnsPoly; 3], BfvError> {
    let params = a.params();
    let n = params.degree_n();
    let ctx = params.mul_context()?;
    let q_count = params.q_primes().len();
    let square = std::ptr::eq(a, b);

    // Residues of every input part in every full-basis limb, NTT domain.
    let inputs: Vec<&RnsPoly> = if square {
        vec![&a.parts[0], &a.parts[1]]
    } else {
        vec![&a.parts[0], &a.parts[1], &b.parts[0], &b.parts[1]]
    };
    let mut lifted: Vec<Vec<Vec<u64>>> = Vec::with_capacity(inputs.len());
    for poly in &inputs {
        lifted.push(lift_to_full_basis(poly, params, ctx)?);
    }
    for limb_set in &mut lifted {
        for (limb_idx, evals) in limb_set.iter_mut().enumerate() {
            let m = ctx.full_basis.moduli()[limb_idx];
            let tables = ntt_tables_for(n, m).expect("full-basis prime is NTT friendly");
            tables.forward(evals);
        }
    }
    let (a0, a1, b0, b1) = if square {
        (&lifted[0], &lifted[1], &lifted[0], &lifted[1])
    } else {
        (&lifted[0], &lifted[1], &lifted[2], &lifted[3])
    };

    let full_count = ctx.full_basis.len();
    let mut tensors: [Vec<Vec<u64>>; 3] = [
        Vec::with_capacity(full_count),
        Vec::with_capacity(full_count),
        Vec::with_capacity(full_count),
    ];
    for l in 0..full_count {
        let m = ctx.full_basis.moduli()[l];
        let tables = ntt_tables_for(n, m).expect("full-basis prime is NTT friendly");
        let mut d0 = vec![0u64; n];
        let mut d1 = vec![0u64; n];
        let mut d2 = vec![0u64; n];
        tables.pointwise_accumulate(&mut d0, &a0[l], &b0[l]);
        tables.pointwise_accumulate(&mut d1, &a0[l], &b1[l]);
        tables.pointwise_accumulate(&mut d1, &a1[l], &b0[l]);
        tables.pointwise_accumulate(&mut d2, &a1[l], &b1[l]);
        tables.inverse(&mut d0);
        tables.inverse(&mut d1);
        tables.inverse(&mut d2);
        tensors[0].push(d0);
        tensors[1].push(d1);
        tensors[2].push(d2);
    }

    // Exact scale-and-round per coefficient: combine full-basis residues to
    // the signed integer tensor coefficient, then round(t * T / q) and
    // redistribute to the q limbs.
    let t_big = BigInt::from(params.plain_modulus().value());
    let q_big = BigInt::from(params.q().clone());
    let two_q = &q_big * 2;
    let full_product = ctx.full_basis.product();
    let mut out = Vec::with_capacity(3);
    let mut scratch = vec![0u64; full_count];
    for tensor in &tensors {
        let mut limb_coeffs: Vec<Vec<u64>> = vec![Vec::with_capacity(n); q_count];
        for i in 0..n {
            for (l, limb) in tensor.iter().enumerate() {
                scratch[l] = limb[i];
            }
            let combined = ctx.full_basis.combine(&scratch)?;
            let t_int = signed_lift_big(&combined, full_product);
            let v = (&t_big * t_int * 2u32 + &q_big).div_floor(&two_q);
            for (limb_idx, &m) in params.q_primes().iter().enumerate() {
                limb_coeffs[limb_idx].push(m.reduce_bigint(&v));
            }
        }
        let limbs = limb_coeffs
            .into_iter()
            .zip(params.q_primes())
            .map(|(coeffs, &m)| RingPoly::from_u64(coeffs, m))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RnsPoly::from_limbs(limbs));
    }
    let d2 = out.pop().expect("three tensors");
    let d1 = out.pop().expect("three tensors");
    let d0 = out.pop().expect("three tensors");
    Ok([d0, d1, d2])
}

/// Residues of a q-chain polynomial in every limb of the extended basis.
fn lift_to_full_basis(
    poly: &RnsPoly,
    params: &SchemeParams,
    ctx: &super::scheme::MulContext,
) -> Result<Vec<Vec<u64>>, BfvError> {
    let n = params.degree_n();
    let q_count = params.q_primes().len();
    let mut limbs: Vec<Vec<u64>> = Vec::with_capacity(ctx.full_basis.len());
    for l in 0..q_count {
        limbs.push(poly.limb(l).coeffs().to_vec());
    }
    if q_count == 1 {
        // Single q limb: residues lift to centered i64 directly.
        let q = params.q_primes()[0];
        let centered: Vec<i64> = poly
            .limb(0)
            .coeffs()
            .iter()
            .map(|&c| signed_lift(c, q))
            .collect();
        for &aux in &ctx.aux_moduli {
            limbs.push(centered.iter().map(|&c| aux.reduce_i64(c)).collect());
        }
    } else {
        let basis = params.q_basis();
        let q = params.q();
        let mut centered: Vec<BigInt> = Vec::with_capacity(n);
        let mut scratch = vec![0u64; q_count];
        for i in 0..n {
            for l in 0..q_count {
                scratch[l] = poly.limb(l).coeffs()[i];
            }
            let combined = basis.combine(&scratch)?;
            centered.push(signed_lift_big(&combined, q));
        }
        for &aux in &ctx.aux_moduli {
            limbs.push(centered.iter().map(|c| aux.reduce_bigint(c)).collect());
        }
    }
    Ok(limbs)
}

/// Full homomorphic multiplication: scaled tensor product followed by
/// relinearization back to two parts.
pub fn he_mul(a: &Ciphertext, b: &Ciphertext, rlk: &RelinKey) -> Result<Ciphertext, BfvError> {
    if !std::ptr::eq(a, b) {
        check_same_params(a, b)?;
    }
    let params = a.params();
    if a.parts.len() != 2 || b.parts.len() != 2 {
        return Err(BfvError::CiphertextMismatch(format!(
            "multiplication expects 2-part operands, got {} and {}",
            a.parts.len(),
            b.parts.len()
        )));
    }
    if !rlk.params().same_key_domain(params) {
        return Err(BfvError::CiphertextMismatch(
            "relinearization key belongs to a different (n, q) domain".into(),
        ));
    }
    let expected_digits = params.q_bits().div_ceil(rlk.base_bits() as u64) as usize;
    if rlk.digit_count() != expected_digits {
        return Err(BfvError::CiphertextMismatch(format!(
            "relinearization key has {} digits, parameters need {}",
            rlk.digit_count(),
            expected_digits
        )));
    }
    let [d0, d1, d2] = mul_tensor(a, b)?;
    let (r0, r1) = key_switch(&d2, rlk, params)?;
    let c0 = d0.add(&r0)?;
    let c1 = d1.add(&r1)?;
    Ok(Ciphertext {
        parts: vec![c0, c1],
        params: params.clone(),
    })
}

/// Tensor product without relinearization: returns the three-part ciphertext
/// decrypting under (1, s, s^2).
pub fn he_mul_unrelinearized(a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, BfvError> {
    if !std::ptr::eq(a, b) {
        check_same_params(a, b)?;
    }
    if a.parts.len() != 2 || b.parts.len() != 2 {
        return Err(BfvError::CiphertextMismatch(
            "multiplication expects 2-part operands".into(),
        ));
    }
    let [d0, d1, d2] = mul_tensor(a, b)?;
    Ok(Ciphertext {
        parts: vec![d0, d1, d2],
        params: a.params.clone(),
    })
}

/// Key switching of a part known under s^2: decomposes it in base
/// 2^base_bits and folds the relinearization rows in the NTT domain.
fn key_switch(
    d2: &RnsPoly,
    rlk: &RelinKey,
    params: &SchemeParams,
) -> Result<(RnsPoly, RnsPoly), BfvError> {
    let n = params.degree_n();
    let q_count = params.q_primes().len();
    let digits = rlk.digit_count();
    let base_bits = rlk.base_bits();

    // Integer coefficients of d2 in [0, q), then base-2^w digits.
    let mut digit_coeffs: Vec<Vec<u64>> = vec![vec![0u64; n]; digits];
    if q_count == 1 {
        for (i, &c) in d2.limb(0).coeffs().iter().enumerate() {
            let mut rest = c;
            for row in digit_coeffs.iter_mut() {
                row[i] = rest & ((1u64 << base_bits) - 1);
                rest >>= base_bits;
            }
        }
    } else {
        let basis = params.q_basis();
        let mask = BigUint::from((1u64 << base_bits) - 1);
        let mut scratch = vec![0u64; q_count];
        for i in 0..n {
            for l in 0..q_count {
                scratch[l] = d2.limb(l).coeffs()[i];
            }
            let mut rest = basis.combine(&scratch)?;
            for row in digit_coeffs.iter_mut() {
                row[i] = (&rest & &mask).to_u64().expect("digit fits u64");
                rest >>= base_bits;
            }
        }
    }

    let mut acc0: Vec<Vec<u64>> = vec![vec![0u64; n]; q_count];
    let mut acc1: Vec<Vec<u64>> = vec![vec![0u64; n]; q_count];
    for (j, digit) in digit_coeffs.iter().enumerate() {
        let (row_b, row_a) = &rlk.rows_eval()[j];
        for l in 0..q_count {
            let m = params.q_primes()[l];
            let tables = ntt_tables_for(n, m).expect("q limb is NTT friendly");
            let mut evals = digit.clone();
            tables.forward(&mut evals);
            tables.pointwise_accumulate(&mut acc0[l], &evals, &row_b[l]);
            tables.pointwise_accumulate(&mut acc1[l], &evals, &row_a[l]);
        }
    }
    let finish = |acc: Vec<Vec<u64>>| -> Result<RnsPoly, BfvError> {
        let limbs = acc
            .into_iter()
            .zip(params.q_primes())
            .map(|(mut evals, &m)| {
                let tables = ntt_tables_for(n, m).expect("q limb is NTT friendly");
                tables.inverse(&mut evals);
                RingPoly::from_u64(evals, m)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RnsPoly::from_limbs(limbs))
    };
    Ok((finish(acc0)?, finish(acc1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfv::keygen;
    use crate::modring::{find_ntt_prime, Modulus};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn prime_chain(bits: u32, n: usize, count: usize, exclude_t: u64) -> Vec<u64> {
        let mut primes = Vec::with_capacity(count);
        let mut exclude = vec![exclude_t];
        for _ in 0..count {
            let p = find_ntt_prime(bits, n, &exclude).unwrap().value();
            exclude.push(p);
            primes.push(p);
        }
        primes
    }

    fn params_one_limb(q_bits: u32) -> SchemeParams {
        let primes = prime_chain(q_bits, 1024, 1, 40961);
        SchemeParams::new(1024, &primes, 40961, 3.2, 0).unwrap()
    }

    fn params_three_limbs() -> SchemeParams {
        let primes = prime_chain(30, 1024, 3, 40961);
        SchemeParams::new(1024, &primes, 40961, 3.2, 0).unwrap()
    }

    fn random_plaintext<R: Rng>(rng: &mut R, params: &SchemeParams) -> Plaintext {
        let t = params.plain_modulus();
        let coeffs: Vec<u64> = (0..params.degree_n())
            .map(|_| rng.random_range(0..t.value()))
            .collect();
        RingPoly::from_u64(coeffs, t).unwrap()
    }

    #[test]
    fn roundtrip_one_hundred_random_messages() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [1u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..100 {
            let pt = random_plaintext(&mut rng, &params);
            let ct = encrypt(&keys.public, &pt).unwrap();
            assert!(noise_budget(&keys.secret, &ct).unwrap() > 0);
            assert_eq!(decrypt(&keys.secret, &ct).unwrap(), pt);
        }
    }

    #[test]
    fn roundtrip_with_multi_limb_modulus() {
        let params = params_three_limbs();
        let keys = keygen(&params, [2u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let pt = random_plaintext(&mut rng, &params);
            let ct = encrypt(&keys.public, &pt).unwrap();
            assert!(noise_budget(&keys.secret, &ct).unwrap() > 0);
            assert_eq!(decrypt(&keys.secret, &ct).unwrap(), pt);
        }
    }

    #[test]
    fn encryption_is_randomized_but_decrypts_equal() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [3u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let pt = random_plaintext(&mut rng, &params);
        let ct1 = encrypt(&keys.public, &pt).unwrap();
        let ct2 = encrypt(&keys.public, &pt).unwrap();
        assert_ne!(ct1.parts()[0], ct2.parts()[0]);
        assert_eq!(decrypt(&keys.secret, &ct1).unwrap(), pt);
        assert_eq!(decrypt(&keys.secret, &ct2).unwrap(), pt);
    }

    #[test]
    fn encrypting_zero_decrypts_to_zero() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [4u8; 32]).unwrap();
        let zero = RingPoly::zero(1024, params.plain_modulus()).unwrap();
        let ct = encrypt(&keys.public, &zero).unwrap();
        assert!(decrypt(&keys.secret, &ct).unwrap().is_zero());
    }

    #[test]
    fn public_key_is_a_noisy_encryption_of_zero() {
        let params = params_three_limbs();
        let keys = keygen(&params, [5u8; 32]).unwrap();
        let (b, a) = keys.public.parts();
        let ct = Ciphertext::from_parts(vec![b.clone(), a.clone()], params).unwrap();
        assert!(noise_budget(&keys.secret, &ct).unwrap() > 0);
        assert!(decrypt(&keys.secret, &ct).unwrap().is_zero());
    }

    // Fresh budget sits near log2(q/t) minus a scheme constant; the constant
    // was measured once on these reference parameters.
    #[test]
    fn fresh_budget_tracks_modulus_ratio() {
        const CALIBRATED_OFFSET: i64 = 15;
        for q_bits in [45u32, 55, 60] {
            let params = params_one_limb(q_bits);
            let keys = keygen(&params, [6u8; 32]).unwrap();
            let mut rng = StdRng::seed_from_u64(11);
            let pt = random_plaintext(&mut rng, &params);
            let ct = encrypt(&keys.public, &pt).unwrap();
            let budget = noise_budget(&keys.secret, &ct).unwrap() as i64;
            let t_bits = Modulus::new(40961).unwrap().bit_len() as i64;
            let predicted = params.q_bits() as i64 - t_bits - CALIBRATED_OFFSET;
            assert!(
                (budget - predicted).abs() <= 4,
                "budget {budget} not within 4 bits of predicted {predicted} at q_bits {q_bits}"
            );
        }
    }

    #[test]
    fn add_sub_negate_match_the_modular_oracle() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [7u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..100 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let cb = encrypt(&keys.public, &pb).unwrap();
            let sum = decrypt(&keys.secret, &he_add(&ca, &cb).unwrap()).unwrap();
            assert_eq!(sum, pa.add(&pb).unwrap());
            let diff = decrypt(&keys.secret, &he_sub(&ca, &cb).unwrap()).unwrap();
            assert_eq!(diff, pa.sub(&pb).unwrap());
            let neg = decrypt(&keys.secret, &he_negate(&ca).unwrap()).unwrap();
            assert_eq!(neg, pa.neg());
        }
    }

    #[test]
    fn adding_an_encryption_of_zero_is_identity() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [8u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        let pa = random_plaintext(&mut rng, &params);
        let zero = RingPoly::zero(1024, params.plain_modulus()).unwrap();
        let ca = encrypt(&keys.public, &pa).unwrap();
        let cz = encrypt(&keys.public, &zero).unwrap();
        assert_eq!(decrypt(&keys.secret, &he_add(&ca, &cz).unwrap()).unwrap(), pa);
        assert!(decrypt(&keys.secret, &he_sub(&ca, &ca).unwrap()).unwrap().is_zero());
    }

    #[test]
    fn add_plain_matches_the_modular_oracle() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [9u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..50 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let sum = decrypt(&keys.secret, &he_add_plain(&ca, &pb).unwrap()).unwrap();
            assert_eq!(sum, pa.add(&pb).unwrap());
        }
    }

    #[test]
    fn mul_plain_matches_the_modular_oracle() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [10u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let prod = decrypt(&keys.secret, &he_mul_plain(&ca, &pb).unwrap()).unwrap();
            assert_eq!(prod, pa.mul(&pb).unwrap());
        }
    }

    #[test]
    fn mul_plain_by_small_constants() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [11u8; 32]).unwrap();
        let t = params.plain_modulus();
        let mut three = vec![0u64; 1024];
        three[0] = 3;
        let pt = RingPoly::from_u64(three, t).unwrap();
        let ct = encrypt(&keys.public, &pt).unwrap();

        let mut one = vec![0u64; 1024];
        one[0] = 1;
        let const_one = RingPoly::from_u64(one, t).unwrap();
        assert_eq!(
            decrypt(&keys.secret, &he_mul_plain(&ct, &const_one).unwrap()).unwrap(),
            pt
        );

        let mut two = vec![0u64; 1024];
        two[0] = 2;
        let const_two = RingPoly::from_u64(two, t).unwrap();
        let six = decrypt(&keys.secret, &he_mul_plain(&ct, &const_two).unwrap()).unwrap();
        assert_eq!(six.coeffs()[0], 6);
        assert!(six.coeffs()[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn mul_plain_by_zero_is_a_transparent_result() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [12u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(29);
        let pa = random_plaintext(&mut rng, &params);
        let ca = encrypt(&keys.public, &pa).unwrap();
        let zero = RingPoly::zero(1024, params.plain_modulus()).unwrap();
        assert!(matches!(
            he_mul_plain(&ca, &zero),
            Err(BfvError::TransparentResult)
        ));
    }

    #[test]
    fn mul_ct_matches_the_ring_product() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [13u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..20 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let cb = encrypt(&keys.public, &pb).unwrap();
            let prod = he_mul(&ca, &cb, &keys.relin).unwrap();
            assert_eq!(prod.parts().len(), 2);
            assert!(noise_budget(&keys.secret, &prod).unwrap() > 0);
            assert_eq!(decrypt(&keys.secret, &prod).unwrap(), pa.mul(&pb).unwrap());
        }
    }

    #[test]
    fn mul_ct_with_multi_limb_modulus() {
        let params = params_three_limbs();
        let keys = keygen(&params, [14u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..5 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let cb = encrypt(&keys.public, &pb).unwrap();
            let prod = he_mul(&ca, &cb, &keys.relin).unwrap();
            assert_eq!(decrypt(&keys.secret, &prod).unwrap(), pa.mul(&pb).unwrap());
        }
    }

    #[test]
    fn mul_by_encrypted_constants() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [15u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(41);
        let pa = random_plaintext(&mut rng, &params);
        let ca = encrypt(&keys.public, &pa).unwrap();
        let t = params.plain_modulus();

        let mut one = vec![0u64; 1024];
        one[0] = 1;
        let c_one = encrypt(&keys.public, &RingPoly::from_u64(one, t).unwrap()).unwrap();
        assert_eq!(
            decrypt(&keys.secret, &he_mul(&ca, &c_one, &keys.relin).unwrap()).unwrap(),
            pa
        );

        let zero = RingPoly::zero(1024, t).unwrap();
        let c_zero = encrypt(&keys.public, &zero).unwrap();
        assert!(decrypt(&keys.secret, &he_mul(&ca, &c_zero, &keys.relin).unwrap())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn squaring_detects_aliased_operands() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [16u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(43);
        let pa = random_plaintext(&mut rng, &params);
        let ca = encrypt(&keys.public, &pa).unwrap();
        let sq = he_mul(&ca, &ca, &keys.relin).unwrap();
        assert_eq!(decrypt(&keys.secret, &sq).unwrap(), pa.mul(&pa).unwrap());
    }

    #[test]
    fn relinearization_preserves_the_decrypted_value() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [17u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(47);
        for _ in 0..5 {
            let pa = random_plaintext(&mut rng, &params);
            let pb = random_plaintext(&mut rng, &params);
            let ca = encrypt(&keys.public, &pa).unwrap();
            let cb = encrypt(&keys.public, &pb).unwrap();
            let wide = he_mul_unrelinearized(&ca, &cb).unwrap();
            assert_eq!(wide.parts().len(), 3);
            let slim = he_mul(&ca, &cb, &keys.relin).unwrap();
            let expected = pa.mul(&pb).unwrap();
            assert_eq!(decrypt(&keys.secret, &wide).unwrap(), expected);
            assert_eq!(decrypt(&keys.secret, &slim).unwrap(), expected);
        }
    }

    #[test]
    fn three_part_ciphertexts_combine_with_two_part_ones() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [18u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(53);
        let pa = random_plaintext(&mut rng, &params);
        let pb = random_plaintext(&mut rng, &params);
        let pc = random_plaintext(&mut rng, &params);
        let ca = encrypt(&keys.public, &pa).unwrap();
        let cb = encrypt(&keys.public, &pb).unwrap();
        let cc = encrypt(&keys.public, &pc).unwrap();
        let wide = he_mul_unrelinearized(&ca, &cb).unwrap();
        let sum = he_add(&wide, &cc).unwrap();
        assert_eq!(sum.parts().len(), 3);
        let expected = pa.mul(&pb).unwrap().add(&pc).unwrap();
        assert_eq!(decrypt(&keys.secret, &sum).unwrap(), expected);
        let diff = he_sub(&cc, &wide).unwrap();
        let expected_diff = pc.sub(&pa.mul(&pb).unwrap()).unwrap();
        assert_eq!(decrypt(&keys.secret, &diff).unwrap(), expected_diff);
    }

    #[test]
    fn plain_multiplication_costs_less_noise_than_ciphertext_multiplication() {
        let params = params_one_limb(60);
        let keys = keygen(&params, [19u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(59);
        let pa = random_plaintext(&mut rng, &params);
        let pb = random_plaintext(&mut rng, &params);
        let ca = encrypt(&keys.public, &pa).unwrap();
        let cb = encrypt(&keys.public, &pb).unwrap();
        let before = noise_budget(&keys.secret, &ca).unwrap();
        let after_plain = noise_budget(&keys.secret, &he_mul_plain(&ca, &pb).unwrap()).unwrap();
        let after_ct = noise_budget(&keys.secret, &he_mul(&ca, &cb, &keys.relin).unwrap()).unwrap();
        assert!(before - after_plain < before - after_ct);
    }

    #[test]
    fn budget_is_non_increasing_along_operation_chains() {
        let params = params_three_limbs();
        let keys = keygen(&params, [20u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(61);
        for _ in 0..5 {
            let mut ct = encrypt(&keys.public, &random_plaintext(&mut rng, &params)).unwrap();
            let mut budget = noise_budget(&keys.secret, &ct).unwrap();
            for _ in 0..6 {
                let next = match rng.random_range(0..4u32) {
                    0 => he_add(&ct, &encrypt(&keys.public, &random_plaintext(&mut rng, &params)).unwrap()).unwrap(),
                    1 => he_sub(&ct, &encrypt(&keys.public, &random_plaintext(&mut rng, &params)).unwrap()).unwrap(),
                    2 => he_negate(&ct).unwrap(),
                    _ => he_add_plain(&ct, &random_plaintext(&mut rng, &params)).unwrap(),
                };
                let next_budget = noise_budget(&keys.secret, &next).unwrap();
                assert!(next_budget <= budget);
                ct = next;
                budget = next_budget;
            }
        }
    }

    #[test]
    fn budget_after_add_is_at_most_the_operand_minimum() {
        let params = params_one_limb(50);
        let keys = keygen(&params, [21u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(67);
        for _ in 0..20 {
            let ca = encrypt(&keys.public, &random_plaintext(&mut rng, &params)).unwrap();
            let cb = encrypt(&keys.public, &random_plaintext(&mut rng, &params)).unwrap();
            let ba = noise_budget(&keys.secret, &ca).unwrap();
            let bb = noise_budget(&keys.secret, &cb).unwrap();
            let bs = noise_budget(&keys.secret, &he_add(&ca, &cb).unwrap()).unwrap();
            assert!(bs <= ba.min(bb));
        }
    }

    #[test]
    fn decryption_fails_only_once_the_budget_reads_zero() {
        let params = params_one_limb(55);
        let keys = keygen(&params, [22u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(71);
        let pt = random_plaintext(&mut rng, &params);
        let mut expected = pt.clone();
        let mut ct = encrypt(&keys.public, &pt).unwrap();
        let mut saw_failure = false;
        for _ in 0..4 {
            ct = he_mul(&ct, &ct, &keys.relin).unwrap();
            expected = expected.mul(&expected).unwrap();
            let budget = noise_budget(&keys.secret, &ct).unwrap();
            let correct = decrypt(&keys.secret, &ct).unwrap() == expected;
            if budget > 0 {
                assert!(correct, "budget {budget} > 0 but decryption went wrong");
                assert!(matches!(checked_decrypt(&keys.secret, &ct), Ok(_)));
            } else {
                assert!(matches!(
                    checked_decrypt(&keys.secret, &ct),
                    Err(BfvError::BudgetExhausted)
                ));
                saw_failure = true;
                break;
            }
        }
        assert!(saw_failure, "chain never exhausted the budget");
    }

    #[test]
    fn operations_reject_mismatched_parameter_sets() {
        let pa = params_one_limb(50);
        let pb = params_one_limb(51);
        let ka = keygen(&pa, [23u8; 32]).unwrap();
        let kb = keygen(&pb, [23u8; 32]).unwrap();
        let mut rng = StdRng::seed_from_u64(73);
        let ca = encrypt(&ka.public, &random_plaintext(&mut rng, &pa)).unwrap();
        let cb = encrypt(&kb.public, &random_plaintext(&mut rng, &pb)).unwrap();
        assert!(matches!(
            he_add(&ca, &cb),
            Err(BfvError::CiphertextMismatch(_))
        ));
        assert!(matches!(
            noise_budget(&kb.secret, &ca),
            Err(BfvError::CiphertextMismatch(_))
        ));
        let wrong_t = RingPoly::zero(1024, Modulus::new(7681).unwrap()).unwrap();
        assert!(matches!(
            he_add_plain(&ca, &wrong_t),
            Err(BfvError::PlaintextMismatch(_))
        ));
        assert!(matches!(
            encrypt(&ka.public, &wrong_t),
            Err(BfvError::PlaintextMismatch(_))
        ));
    }

    #[test]
    fn rebound_keys_serve_a_second_plaintext_modulus() {
        let primes = prime_chain(30, 1024, 3, 40961);
        let params = SchemeParams::new(1024, &primes, 40961, 3.2, 0).unwrap();
        let keys = keygen(&params, [24u8; 32]).unwrap();
        let second_t = find_ntt_prime(15, 1024, &[40961]).unwrap().value();
        let keys2 = keys.rebind_plain_modulus(second_t).unwrap();
        let mut rng = StdRng::seed_from_u64(79);
        let pa = random_plaintext(&mut rng, keys2.public.params());
        let pb = random_plaintext(&mut rng, keys2.public.params());
        let ca = encrypt(&keys2.public, &pa).unwrap();
        let cb = encrypt(&keys2.public, &pb).unwrap();
        let prod = he_mul(&ca, &cb, &keys2.relin).unwrap();
        assert_eq!(decrypt(&keys2.secret, &prod).unwrap(), pa.mul(&pb).unwrap());
    }
}
