//! Leveled BFV-style homomorphic encryption over Z_q\[x\]/(x^n+1): key
//! generation, encryption, decryption, homomorphic arithmetic, and noise
//! budget measurement.
//!
//! Ciphertext coefficients are held in RNS limbs over the q prime chain for
//! additions and NTT multiplications; the multiply's scale-and-round by t/q
//! lifts to multi-precision integers via CRT, rounds exactly, and
//! redistributes to limbs.

mod keys;
mod ops;
mod rns;
mod scheme;
mod serial;

pub use keys::{keygen, KeyPair, PublicKey, RelinKey, SecretKey, RELIN_BASE_BITS};
pub use ops::{
    checked_decrypt, decrypt, encrypt, encrypt_with_rng, he_add, he_add_plain, he_mul,
    he_mul_plain, he_mul_unrelinearized, he_negate, he_sub, noise_budget, Ciphertext,
};
pub use rns::RnsPoly;
pub use scheme::SchemeParams;
pub use serial::{public_bundle_from_bytes, public_bundle_to_bytes};

/// A plaintext is a polynomial over the plaintext modulus t.
pub type Plaintext = crate::modring::RingPoly;

/// Errors from scheme setup and homomorphic operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BfvError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error(transparent)]
    Ring(#[from] crate::modring::RingError),
    #[error("plaintext does not match scheme parameters: {0}")]
    PlaintextMismatch(String),
    #[error("ciphertext mismatch: {0}")]
    CiphertextMismatch(String),
    #[error("noise budget exhausted: decryption is no longer guaranteed")]
    BudgetExhausted,
    #[error("multiplication by an all-zero plaintext yields a result independent of the ciphertext; encrypt a zero instead")]
    TransparentResult,
    #[error("serialization: {0}")]
    Serialization(String),
}
