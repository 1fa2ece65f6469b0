//! Binary wire format for keys and ciphertexts. Little-endian, versioned
//! header {magic "SLHE", version u16, n u32, prime count u8, primes u64[],
//! part count u8}, then raw limb data. Bit-exact across platforms.

use crate::modring::RingPoly;

use super::keys::{PublicKey, RelinKey, SecretKey};
use super::ops::Ciphertext;
use super::rns::RnsPoly;
use super::scheme::SchemeParams;
use super::BfvError;

const MAGIC: &[u8; 4] = b"SLHE";
const VERSION: u16 = 1;

const KIND_CIPHERTEXT: u8 = 1;
const KIND_SECRET_KEY: u8 = 2;
const KIND_PUBLIC_KEY: u8 = 3;
const KIND_RELIN_KEY: u8 = 4;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn header(&mut self, params: &SchemeParams, part_count: u8) {
        self.buf.extend_from_slice(MAGIC);
        self.u16(VERSION);
        self.u32(params.degree_n() as u32);
        self.u8(params.q_primes().len() as u8);
        for m in params.q_primes() {
            self.u64(m.value());
        }
        self.u8(part_count);
    }

    fn scheme_payload(&mut self, params: &SchemeParams, kind: u8) {
        self.u8(kind);
        self.u64(params.plain_modulus().value());
        self.f64(params.error_stddev());
        self.u32(params.security_bits());
    }

    fn rns_poly(&mut self, p: &RnsPoly) {
        for limb in p.limbs() {
            for &c in limb.coeffs() {
                self.u64(c);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], BfvError> {
        if self.pos + len > self.buf.len() {
            return Err(BfvError::Serialization("unexpected end of data".into()));
        }
        let slice = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, BfvError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, BfvError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, BfvError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, BfvError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, BfvError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), BfvError> {
        if self.pos != self.buf.len() {
            return Err(BfvError::Serialization(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    /// Reads the header and scheme payload; returns the reconstructed
    /// (validated) parameters and the declared part count.
    fn open(&mut self, expected_kind: u8) -> Result<(SchemeParams, u8), BfvError> {
        let magic = self.take(4)?;
        if magic != MAGIC {
            return Err(BfvError::Serialization("bad magic".into()));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(BfvError::Serialization(format!(
                "unsupported version {version}"
            )));
        }
        let n = self.u32()? as usize;
        let prime_count = self.u8()? as usize;
        if prime_count == 0 {
            return Err(BfvError::Serialization("empty prime chain".into()));
        }
        let mut primes = Vec::with_capacity(prime_count);
        for _ in 0..prime_count {
            primes.push(self.u64()?);
        }
        let part_count = self.u8()?;
        let kind = self.u8()?;
        if kind != expected_kind {
            return Err(BfvError::Serialization(format!(
                "object kind {kind} does not match expected kind {expected_kind}"
            )));
        }
        let plain_modulus = self.u64()?;
        let error_stddev = self.f64()?;
        let security_bits = self.u32()?;
        let params = SchemeParams::new(n, &primes, plain_modulus, error_stddev, security_bits)
            .map_err(|e| BfvError::Serialization(format!("invalid parameters: {e}")))?;
        Ok((params, part_count))
    }

    fn rns_poly(&mut self, params: &SchemeParams) -> Result<RnsPoly, BfvError> {
        let n = params.degree_n();
        let mut limbs = Vec::with_capacity(params.q_primes().len());
        for &m in params.q_primes() {
            let mut coeffs = Vec::with_capacity(n);
            for _ in 0..n {
                let c = self.u64()?;
                if c >= m.value() {
                    return Err(BfvError::Serialization(format!(
                        "coefficient {c} out of range for modulus {}",
                        m.value()
                    )));
                }
                coeffs.push(c);
            }
            limbs.push(RingPoly::from_u64(coeffs, m)?);
        }
        Ok(RnsPoly::from_limbs(limbs))
    }
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.header(self.params(), self.parts().len() as u8);
        w.scheme_payload(self.params(), KIND_CIPHERTEXT);
        for part in self.parts() {
            w.rns_poly(part);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BfvError> {
        let mut r = Reader::new(bytes);
        let (params, part_count) = r.open(KIND_CIPHERTEXT)?;
        if part_count < 2 {
            return Err(BfvError::Serialization(format!(
                "ciphertext needs at least 2 parts, header says {part_count}"
            )));
        }
        let mut parts = Vec::with_capacity(part_count as usize);
        for _ in 0..part_count {
            parts.push(r.rns_poly(&params)?);
        }
        r.finish()?;
        Ciphertext::from_parts(parts, params)
    }
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.header(self.params(), 1);
        w.scheme_payload(self.params(), KIND_SECRET_KEY);
        w.rns_poly(self.rns());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BfvError> {
        let mut r = Reader::new(bytes);
        let (params, part_count) = r.open(KIND_SECRET_KEY)?;
        if part_count != 1 {
            return Err(BfvError::Serialization(
                "secret key stores exactly one part".into(),
            ));
        }
        let stored = r.rns_poly(&params)?;
        r.finish()?;
        // Recover the signed ternary form from the first limb, then check
        // every limb is consistent with it.
        let m0 = params.q_primes()[0];
        let signed: Vec<i64> = stored
            .limb(0)
            .coeffs()
            .iter()
            .map(|&c| crate::modring::signed_lift(c, m0))
            .collect();
        if signed.iter().any(|&c| c.abs() > 1) {
            return Err(BfvError::Serialization("secret key is not ternary".into()));
        }
        let rebuilt = SecretKey::from_signed(params, signed)?;
        if rebuilt.rns() != &stored {
            return Err(BfvError::Serialization(
                "secret key limbs are inconsistent".into(),
            ));
        }
        Ok(rebuilt)
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.header(self.params(), 2);
        w.scheme_payload(self.params(), KIND_PUBLIC_KEY);
        w.rns_poly(self.b());
        w.rns_poly(self.a());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BfvError> {
        let mut r = Reader::new(bytes);
        let (params, part_count) = r.open(KIND_PUBLIC_KEY)?;
        if part_count != 2 {
            return Err(BfvError::Serialization(
                "public key stores exactly two parts".into(),
            ));
        }
        let b = r.rns_poly(&params)?;
        let a = r.rns_poly(&params)?;
        r.finish()?;
        Ok(PublicKey::from_parts(params, b, a))
    }
}

impl RelinKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.header(self.params(), (2 * self.digit_count()) as u8);
        w.scheme_payload(self.params(), KIND_RELIN_KEY);
        w.u8(self.base_bits() as u8);
        w.u8(self.digit_count() as u8);
        for (b, a) in self.rows() {
            w.rns_poly(b);
            w.rns_poly(a);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BfvError> {
        let mut r = Reader::new(bytes);
        let (params, part_count) = r.open(KIND_RELIN_KEY)?;
        let base_bits = r.u8()? as u32;
        let digit_count = r.u8()? as usize;
        if base_bits == 0 || base_bits > 32 {
            return Err(BfvError::Serialization(format!(
                "relinearization base 2^{base_bits} out of range"
            )));
        }
        if part_count as usize != 2 * digit_count {
            return Err(BfvError::Serialization(format!(
                "part count {part_count} does not match {digit_count} digit rows"
            )));
        }
        let mut rows = Vec::with_capacity(digit_count);
        for _ in 0..digit_count {
            let b = r.rns_poly(&params)?;
            let a = r.rns_poly(&params)?;
            rows.push((b, a));
        }
        r.finish()?;
        Ok(RelinKey::from_rows(params, base_bits, rows))
    }
}

/// Two key files make up a key set on disk: the server side (public + relin)
/// and the client side (secret). This container concatenates public and relin
/// key with a small length prefix so one file can hold both.
pub fn public_bundle_to_bytes(public: &PublicKey, relin: &RelinKey) -> Vec<u8> {
    let pk = public.to_bytes();
    let rk = relin.to_bytes();
    let mut out = Vec::with_capacity(8 + pk.len() + rk.len());
    out.extend_from_slice(&(pk.len() as u64).to_le_bytes());
    out.extend_from_slice(&pk);
    out.extend_from_slice(&rk);
    out
}

pub fn public_bundle_from_bytes(bytes: &[u8]) -> Result<(PublicKey, RelinKey), BfvError> {
    if bytes.len() < 8 {
        return Err(BfvError::Serialization("bundle too short".into()));
    }
    let pk_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if 8 + pk_len > bytes.len() {
        return Err(BfvError::Serialization("bundle length field invalid".into()));
    }
    let public = PublicKey::from_bytes(&bytes[8..8 + pk_len])?;
    let relin = RelinKey::from_bytes(&bytes[8 + pk_len..])?;
    Ok((public, relin))
}
