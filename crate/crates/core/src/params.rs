//! Automatic encryption-parameter selection: plaintext-modulus estimation and
//! CRT decomposition, candidate enumeration under a cost model, and trial
//! evaluation against the real scheme.

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfv::{BfvError, SchemeParams};
use crate::graph::{Feeds, Graph, GraphError, Interval};
use crate::modring::{find_ntt_prime, is_prime_u64, MAX_MODULUS_BITS};

/// Ring degrees the candidate search considers.
pub const SUPPORTED_DEGREES: [usize; 5] = [1024, 2048, 4096, 8192, 16384];

/// Error width used for all generated parameter sets.
pub const DEFAULT_ERROR_STDDEV: f64 = 3.2;

/// Largest bit length used for a single ciphertext-modulus prime. One bit
/// below the modulus ceiling so products and Shoup precomputations stay
/// comfortably in range.
const MAX_Q_PRIME_BITS: u32 = MAX_MODULUS_BITS - 1;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("margin {0} must be finite and at least 1")]
    BadMargin(f64),
    #[error("plaintext moduli count must be at least 1")]
    BadModuliCount,
    #[error("no {count} primes congruent to 1 mod {two_n} cover {t_bits} bits")]
    DecompositionExhausted {
        count: usize,
        two_n: u64,
        t_bits: u64,
    },
    #[error("no ciphertext modulus chain of at most {budget_bits} bits for degree {degree_n}")]
    ChainExhausted { degree_n: usize, budget_bits: u32 },
    #[error("security level {0} bits is not tabulated")]
    UnsupportedSecurity(u32),
    #[error("no feasible candidate for a {t_bits}-bit plaintext modulus at {security_bits}-bit security")]
    NoCandidates { t_bits: u64, security_bits: u32 },
    #[error("every candidate failed trial evaluation:\n{summary}")]
    SelectionFailed { summary: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scheme(#[from] BfvError),
    #[error("bad parameter document: {0}")]
    BadDocument(String),
}

/// Maximum total bits of the ciphertext modulus q for a ring degree and
/// claimed security level, assuming a ternary secret and classical attacks.
/// Returns None for unsupported (degree, level) combinations.
pub fn security_q_bound(degree_n: usize, security_bits: u32) -> Option<u32> {
    let column = match security_bits {
        128 => 0,
        192 => 1,
        256 => 2,
        _ => return None,
    };
    let row: [u32; 3] = match degree_n {
        1024 => [27, 19, 14],
        2048 => [54, 37, 29],
        4096 => [109, 75, 58],
        8192 => [218, 152, 118],
        16384 => [438, 305, 237],
        32768 => [881, 611, 476],
        _ => return None,
    };
    Some(row[column])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Prefer the smallest ring degree that works: lowest single-run latency.
    Latency,
    /// Prefer the fewest plaintext moduli, then the smallest degree: best
    /// amortized cost per slot at full batch occupancy.
    Throughput,
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    pub security_bits: u32,
    /// Headroom factor on the output magnitude, at least 1.
    pub margin: f64,
    pub objective: Objective,
    /// Largest number of plaintext moduli the search may split into.
    pub max_crt_moduli: usize,
    /// How many calibration examples each trial evaluation runs.
    pub trial_batch: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            security_bits: 192,
            margin: 1.2,
            objective: Objective::Latency,
            max_crt_moduli: 4,
            trial_batch: 8,
        }
    }
}

/// A concrete parameter set: ring degree, ciphertext modulus chain, and the
/// plaintext moduli whose product hosts the computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptionParams {
    pub degree_n: usize,
    pub q_primes: Vec<u64>,
    pub plain_moduli: Vec<u64>,
    pub security_bits: u32,
    pub objective: Objective,
    pub margin: f64,
}

impl EncryptionParams {
    /// Product of the plaintext moduli: the effective plaintext modulus.
    pub fn plain_product(&self) -> BigUint {
        self.plain_moduli.iter().map(|&t| BigUint::from(t)).product()
    }

    /// One scheme parameter set per plaintext modulus, all sharing the same
    /// key domain so a single key pair serves every branch.
    pub fn branch_params(&self) -> Result<Vec<SchemeParams>, BfvError> {
        let first = SchemeParams::new(
            self.degree_n,
            &self.q_primes,
            self.plain_moduli[0],
            DEFAULT_ERROR_STDDEV,
            self.security_bits,
        )?;
        self.plain_moduli
            .iter()
            .map(|&t| first.with_plain_modulus(t))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.plain_moduli.is_empty() {
            return Err(ParamsError::BadModuliCount);
        }
        let two_n = 2 * self.degree_n as u64;
        for (i, &t) in self.plain_moduli.iter().enumerate() {
            if !is_prime_u64(t) {
                return Err(ParamsError::BadDocument(format!(
                    "plaintext modulus {t} is not prime"
                )));
            }
            if t % two_n != 1 {
                return Err(ParamsError::BadDocument(format!(
                    "plaintext modulus {t} is not congruent to 1 mod {two_n}"
                )));
            }
            if self.plain_moduli[..i].contains(&t) {
                return Err(ParamsError::BadDocument(format!(
                    "plaintext modulus {t} appears twice"
                )));
            }
            // Keeping each t as a limb of q makes q/t an exact integer, so
            // encryption noise carries no message-dependent rounding term.
            if !self.q_primes.contains(&t) {
                return Err(ParamsError::BadDocument(format!(
                    "plaintext modulus {t} is not a limb of the ciphertext modulus chain"
                )));
            }
        }
        self.branch_params()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, ParamsError> {
        serde_json::to_string_pretty(self).map_err(|e| ParamsError::BadDocument(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ParamsError> {
        let params: EncryptionParams =
            serde_json::from_str(text).map_err(|e| ParamsError::BadDocument(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }
}

/// Splits a finite f64 that is at least 1 into (mantissa, exponent) with
/// value = mantissa * 2^exponent, exactly.
fn f64_parts(v: f64) -> (u64, i32) {
    let bits = v.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let mantissa = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
    (mantissa, raw_exp - 1075)
}

/// Smallest plaintext modulus worth considering: it must host a prime
/// congruent to 1 mod 2n at the smallest supported degree.
fn minimum_viable_t() -> BigUint {
    BigUint::from(2u64 * 2 * SUPPORTED_DEGREES[0] as u64 + 2)
}

/// Required plaintext modulus for an output domain: twice the largest output
/// magnitude, stretched by the margin, rounded up. The factor of two leaves
/// room for the sign.
pub fn estimate_plain_modulus(domain: &Interval, margin: f64) -> Result<BigUint, ParamsError> {
    if !margin.is_finite() || margin < 1.0 || margin > 1_048_576.0 {
        return Err(ParamsError::BadMargin(margin));
    }
    let max_abs = domain.max_abs();
    if max_abs.is_zero() {
        return Ok(minimum_viable_t());
    }
    // Exact ceil(2 * max_abs * margin) using the margin's binary mantissa.
    let (mantissa, exp) = f64_parts(margin);
    let scaled = (max_abs << 1u32) * mantissa;
    Ok(if exp >= 0 {
        scaled << exp as u32
    } else {
        let shift = (-exp) as u64;
        let floor = &scaled >> shift;
        if &floor << shift == scaled {
            floor
        } else {
            floor + 1u32
        }
    })
}

/// Finds `count` distinct primes congruent to 1 mod 2n of near-equal bit
/// length whose product is at least t_req.
pub fn decompose_plain_modulus(
    t_req: &BigUint,
    degree_n: usize,
    count: usize,
) -> Result<Vec<u64>, ParamsError> {
    if count == 0 {
        return Err(ParamsError::BadModuliCount);
    }
    let t_bits = t_req.bits().max(1);
    let base_bits = (t_bits.div_ceil(count as u64) as u32).max(2);
    for bit_len in base_bits..=MAX_MODULUS_BITS {
        let mut found: Vec<u64> = Vec::with_capacity(count);
        while found.len() < count {
            match find_ntt_prime(bit_len, degree_n, &found) {
                Ok(p) => found.push(p.value()),
                Err(_) => break,
            }
        }
        if found.len() < count {
            continue;
        }
        let product: BigUint = found.iter().map(|&p| BigUint::from(p)).product();
        if &product >= t_req {
            return Ok(found);
        }
    }
    Err(ParamsError::DecompositionExhausted {
        count,
        two_n: 2 * degree_n as u64,
        t_bits,
    })
}

/// Builds a chain of NTT-friendly primes whose product stays within the given
/// bit budget, with per-prime sizes as equal as possible.
///
/// The plaintext moduli lead the chain. Making each tᵢ a limb of q keeps the
/// scale q/tᵢ an exact integer, so encryption noise is the sampled error alone
/// rather than error plus a rounding term proportional to the message. The
/// remaining bit budget is filled with fresh primes.
pub fn ciphertext_modulus_chain(
    degree_n: usize,
    budget_bits: u32,
    plain_moduli: &[u64],
) -> Result<Vec<u64>, ParamsError> {
    let exhausted = || ParamsError::ChainExhausted {
        degree_n,
        budget_bits,
    };
    let plain_bits: u32 = plain_moduli.iter().map(|&t| t.ilog2() + 1).sum();
    // A chain with no room beyond the plaintext moduli leaves no space for
    // noise at all.
    let Some(fill_bits) = budget_bits.checked_sub(plain_bits).filter(|&b| b >= 2) else {
        return Err(exhausted());
    };
    let count = fill_bits.div_ceil(MAX_Q_PRIME_BITS);
    let base = fill_bits / count;
    let rem = fill_bits % count;
    let mut primes: Vec<u64> = plain_moduli.to_vec();
    let mut taken: Vec<u64> = plain_moduli.to_vec();
    for i in 0..count {
        let mut size = base + u32::from(i < rem);
        loop {
            if size < 2 {
                return Err(exhausted());
            }
            match find_ntt_prime(size, degree_n, &taken) {
                Ok(p) => {
                    taken.push(p.value());
                    primes.push(p.value());
                    break;
                }
                // Shrinking a prime keeps the product under the budget.
                Err(_) => size -= 1,
            }
        }
    }
    Ok(primes)
}

/// A parameter candidate awaiting trial evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub degree_n: usize,
    pub plain_moduli: Vec<u64>,
    pub q_primes: Vec<u64>,
}

impl Candidate {
    pub fn moduli_count(&self) -> usize {
        self.plain_moduli.len()
    }

    pub fn describe(&self) -> String {
        format!(
            "n={}, {} plaintext moduli {:?}, q of {} bits",
            self.degree_n,
            self.plain_moduli.len(),
            self.plain_moduli,
            self.q_primes
                .iter()
                .map(|&p| BigUint::from(p))
                .product::<BigUint>()
                .bits()
        )
    }
}

/// Enumerates feasible (degree, plaintext moduli, q chain) candidates in
/// objective order. Infeasible combinations are skipped: no prime window for
/// the split, no q chain under the security budget, or a plaintext modulus at
/// least as large as q.
pub fn enumerate_candidates(
    t_req: &BigUint,
    config: &SelectionConfig,
) -> Result<Vec<Candidate>, ParamsError> {
    if config.max_crt_moduli == 0 {
        return Err(ParamsError::BadModuliCount);
    }
    if !config.margin.is_finite() || config.margin < 1.0 {
        return Err(ParamsError::BadMargin(config.margin));
    }
    let mut candidates = Vec::new();
    for &n in &SUPPORTED_DEGREES {
        let Some(budget) = security_q_bound(n, config.security_bits) else {
            return Err(ParamsError::UnsupportedSecurity(config.security_bits));
        };
        for k in 1..=config.max_crt_moduli {
            let Ok(plain_moduli) = decompose_plain_modulus(t_req, n, k) else {
                continue;
            };
            let Ok(q_primes) = ciphertext_modulus_chain(n, budget, &plain_moduli) else {
                continue;
            };
            let q: BigUint = q_primes.iter().map(|&p| BigUint::from(p)).product();
            if plain_moduli.iter().any(|&t| BigUint::from(t) >= q) {
                continue;
            }
            candidates.push(Candidate {
                degree_n: n,
                plain_moduli,
                q_primes,
            });
        }
    }
    if candidates.is_empty() {
        return Err(ParamsError::NoCandidates {
            t_bits: t_req.bits(),
            security_bits: config.security_bits,
        });
    }
    match config.objective {
        // Generation order is already (n ascending, k ascending).
        Objective::Latency => {}
        // Amortized cost per slot is proportional to the number of plaintext
        // moduli, since per-op cost grows linearly with n while slot count is
        // n itself. Ties favor the smaller degree.
        Objective::Throughput => {
            candidates.sort_by_key(|c| (c.moduli_count(), c.degree_n));
        }
    }
    Ok(candidates)
}

/// Outcome of trying one candidate on the calibration set.
#[derive(Debug, Clone)]
pub enum TrialOutcome {
    /// Every branch decrypted correctly with budget remaining.
    Pass,
    /// Decryption failed or the noise budget reached zero; splitting the
    /// plaintext modulus further may help.
    NoiseExhausted(String),
    /// The candidate cannot run at all (keys, encoding, or sizing).
    Infeasible(String),
}

/// Evaluates a graph under one candidate parameter set. The standard
/// implementation lives in the executor; tests substitute stubs.
pub trait TrialBackend {
    fn trial(
        &self,
        graph: &Graph,
        calibration: &[Feeds],
        candidate: &Candidate,
        security_bits: u32,
    ) -> TrialOutcome;
}

/// Picks the first candidate, in objective order, that evaluates the graph
/// correctly with noise budget to spare. A candidate that fails on noise is
/// followed by retries at the same degree with more, smaller plaintext
/// moduli before the search advances.
pub fn select(
    graph: &Graph,
    calibration: &[Feeds],
    config: &SelectionConfig,
    backend: &dyn TrialBackend,
) -> Result<EncryptionParams, ParamsError> {
    let domain = if calibration.is_empty() {
        graph.sizing_domain().clone()
    } else {
        let mut recorded = graph.clone();
        recorded.record_output_domain(calibration)?
    };
    let t_req = estimate_plain_modulus(&domain, config.margin)?;
    let candidates = enumerate_candidates(&t_req, config)?;
    let trial_set = &calibration[..config.trial_batch.min(calibration.len())];

    let mut tried = vec![false; candidates.len()];
    let mut failures: Vec<String> = Vec::new();
    let run = |idx: usize,
                   tried: &mut Vec<bool>,
                   failures: &mut Vec<String>|
     -> Option<Result<EncryptionParams, String>> {
        if tried[idx] {
            return None;
        }
        tried[idx] = true;
        let cand = &candidates[idx];
        match backend.trial(graph, trial_set, cand, config.security_bits) {
            TrialOutcome::Pass => Some(Ok(EncryptionParams {
                degree_n: cand.degree_n,
                q_primes: cand.q_primes.clone(),
                plain_moduli: cand.plain_moduli.clone(),
                security_bits: config.security_bits,
                objective: config.objective,
                margin: config.margin,
            })),
            TrialOutcome::NoiseExhausted(msg) => {
                failures.push(format!("{}: noise exhausted: {msg}", cand.describe()));
                Some(Err(msg))
            }
            TrialOutcome::Infeasible(msg) => {
                failures.push(format!("{}: infeasible: {msg}", cand.describe()));
                None
            }
        }
    };

    for i in 0..candidates.len() {
        match run(i, &mut tried, &mut failures) {
            Some(Ok(params)) => return Ok(params),
            Some(Err(_)) => {
                // Noise exhaustion: retry this degree with more moduli.
                let n = candidates[i].degree_n;
                for k in candidates[i].moduli_count() + 1..=config.max_crt_moduli {
                    let Some(j) = candidates
                        .iter()
                        .position(|c| c.degree_n == n && c.moduli_count() == k)
                    else {
                        continue;
                    };
                    match run(j, &mut tried, &mut failures) {
                        Some(Ok(params)) => return Ok(params),
                        _ => continue,
                    }
                }
            }
            None => {}
        }
    }
    Err(ParamsError::SelectionFailed {
        summary: failures.join("\n"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, IntTensor};

    #[test]
    fn security_table_matches_reference_values() {
        assert_eq!(security_q_bound(4096, 192), Some(75));
        assert_eq!(security_q_bound(8192, 192), Some(152));
        assert_eq!(security_q_bound(1024, 128), Some(27));
        assert_eq!(security_q_bound(32768, 256), Some(476));
        assert_eq!(security_q_bound(512, 128), None);
        assert_eq!(security_q_bound(4096, 100), None);
    }

    #[test]
    fn bounds_grow_with_degree_and_shrink_with_security() {
        for &lambda in &[128u32, 192, 256] {
            let mut prev = 0;
            for &n in &[1024usize, 2048, 4096, 8192, 16384, 32768] {
                let b = security_q_bound(n, lambda).unwrap();
                assert!(b > prev);
                prev = b;
            }
        }
        for &n in &[1024usize, 2048, 4096, 8192, 16384, 32768] {
            let b128 = security_q_bound(n, 128).unwrap();
            let b192 = security_q_bound(n, 192).unwrap();
            let b256 = security_q_bound(n, 256).unwrap();
            assert!(b128 > b192 && b192 > b256);
        }
    }

    #[test]
    fn estimate_matches_the_reference_examples() {
        let d = Interval::from_i64(-1000, 900).unwrap();
        assert_eq!(
            estimate_plain_modulus(&d, 1.2).unwrap(),
            BigUint::from(2400u32)
        );
        let d = Interval::from_i64(-5, 5).unwrap();
        assert_eq!(estimate_plain_modulus(&d, 1.0).unwrap(), BigUint::from(10u32));
    }

    #[test]
    fn estimate_depends_only_on_the_largest_magnitude() {
        for a in [7i64, 100, 12345] {
            let sym = Interval::from_i64(-a, a).unwrap();
            let asym = Interval::from_i64(-a, a - 1).unwrap();
            for margin in [1.0, 1.2, 2.5] {
                assert_eq!(
                    estimate_plain_modulus(&sym, margin).unwrap(),
                    estimate_plain_modulus(&asym, margin).unwrap()
                );
            }
        }
    }

    #[test]
    fn degenerate_domain_gets_the_minimum_viable_modulus() {
        let d = Interval::from_i64(0, 0).unwrap();
        let t = estimate_plain_modulus(&d, 1.5).unwrap();
        assert_eq!(t, BigUint::from(4098u32));
    }

    #[test]
    fn sub_unit_margins_are_rejected() {
        let d = Interval::from_i64(-5, 5).unwrap();
        assert!(matches!(
            estimate_plain_modulus(&d, 0.99),
            Err(ParamsError::BadMargin(_))
        ));
        assert!(matches!(
            estimate_plain_modulus(&d, f64::NAN),
            Err(ParamsError::BadMargin(_))
        ));
    }

    #[test]
    fn estimate_rounds_up() {
        // 2 * 3 * 1.5 = 9 exactly; 2 * 3 * 1.4 = 8.4, rounded up to 9.
        let d = Interval::from_i64(-3, 3).unwrap();
        assert_eq!(estimate_plain_modulus(&d, 1.5).unwrap(), BigUint::from(9u32));
        assert_eq!(estimate_plain_modulus(&d, 1.4).unwrap(), BigUint::from(9u32));
    }

    #[test]
    fn decomposition_finds_the_expected_single_prime() {
        let primes = decompose_plain_modulus(&BigUint::from(2400u32), 1024, 1).unwrap();
        assert_eq!(primes, vec![12289]);
    }

    #[test]
    fn decomposition_product_always_covers_the_request() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..20 {
            let t_req = BigUint::from(next() >> (next() % 40));
            for &n in &[1024usize, 4096] {
                for k in 1..=3usize {
                    let primes = match decompose_plain_modulus(&t_req, n, k) {
                        Ok(p) => p,
                        Err(_) => continue,
                    };
                    assert_eq!(primes.len(), k);
                    let product: BigUint =
                        primes.iter().map(|&p| BigUint::from(p)).product();
                    assert!(product >= t_req, "{primes:?} under {t_req}");
                    let two_n = 2 * n as u64;
                    for (i, &p) in primes.iter().enumerate() {
                        assert!(is_prime_u64(p));
                        assert_eq!(p % two_n, 1);
                        assert!(!primes[..i].contains(&p));
                    }
                }
            }
        }
    }

    #[test]
    fn decomposition_into_two_distinct_primes() {
        let primes =
            decompose_plain_modulus(&BigUint::from(1_000_000u64), 1024, 2).unwrap();
        assert_eq!(primes.len(), 2);
        assert_ne!(primes[0], primes[1]);
        let product: BigUint = primes.iter().map(|&p| BigUint::from(p)).product();
        assert!(product >= BigUint::from(1_000_000u64));
    }

    #[test]
    fn zero_count_is_rejected() {
        assert!(matches!(
            decompose_plain_modulus(&BigUint::from(100u32), 1024, 0),
            Err(ParamsError::BadModuliCount)
        ));
    }

    #[test]
    fn modulus_chains_respect_the_bit_budget() {
        for &n in &[1024usize, 4096, 8192] {
            for budget in [19u32, 75, 152, 305] {
                let chain = ciphertext_modulus_chain(n, budget, &[]).unwrap();
                let q: BigUint = chain.iter().map(|&p| BigUint::from(p)).product();
                assert!(
                    q.bits() <= budget as u64,
                    "chain {chain:?} has {} bits, budget {budget}",
                    q.bits()
                );
                let two_n = 2 * n as u64;
                for &p in &chain {
                    assert!(is_prime_u64(p));
                    assert_eq!(p % two_n, 1);
                }
            }
        }
    }

    #[test]
    fn modulus_chains_lead_with_the_plaintext_moduli() {
        let chain = ciphertext_modulus_chain(1024, 60, &[40961, 12289]).unwrap();
        assert_eq!(&chain[..2], &[40961, 12289]);
        let q: BigUint = chain.iter().map(|&p| BigUint::from(p)).product();
        assert!(q.bits() <= 60);
        // The fill primes are distinct from the plaintext moduli.
        for &p in &chain[2..] {
            assert!(p != 40961 && p != 12289);
            assert!(is_prime_u64(p));
            assert_eq!(p % 2048, 1);
        }
        // No room for noise beyond the plaintext moduli: rejected.
        assert!(matches!(
            ciphertext_modulus_chain(1024, 31, &[40961, 12289]),
            Err(ParamsError::ChainExhausted { .. })
        ));
    }

    #[test]
    fn latency_order_scans_degrees_ascending() {
        let config = SelectionConfig::default();
        let t_req = BigUint::from(40_000u32);
        let candidates = enumerate_candidates(&t_req, &config).unwrap();
        let mut last_n = 0;
        let mut last_k = 0;
        for c in &candidates {
            assert!(c.degree_n >= last_n);
            if c.degree_n == last_n {
                assert!(c.moduli_count() > last_k);
            }
            last_n = c.degree_n;
            last_k = c.moduli_count();
        }
    }

    #[test]
    fn throughput_order_prefers_fewer_moduli_then_smaller_degree() {
        let config = SelectionConfig {
            objective: Objective::Throughput,
            ..SelectionConfig::default()
        };
        let t_req = BigUint::from(40_000u32);
        let candidates = enumerate_candidates(&t_req, &config).unwrap();
        for pair in candidates.windows(2) {
            let key = |c: &Candidate| (c.moduli_count(), c.degree_n);
            assert!(key(&pair[0]) <= key(&pair[1]));
        }
        assert_eq!(candidates[0].moduli_count(), 1);
    }

    #[test]
    fn every_candidate_fits_the_security_table() {
        for &lambda in &[128u32, 192] {
            let config = SelectionConfig {
                security_bits: lambda,
                ..SelectionConfig::default()
            };
            let candidates =
                enumerate_candidates(&BigUint::from(3_000_000u64), &config).unwrap();
            for c in &candidates {
                let bound = security_q_bound(c.degree_n, lambda).unwrap();
                let q: BigUint = c.q_primes.iter().map(|&p| BigUint::from(p)).product();
                assert!(q.bits() <= bound as u64);
                let product: BigUint =
                    c.plain_moduli.iter().map(|&p| BigUint::from(p)).product();
                assert!(product >= BigUint::from(3_000_000u64));
            }
        }
    }

    #[test]
    fn oversized_plaintext_moduli_exclude_small_degrees() {
        // A 60-bit requirement cannot fit under a 19-bit q at n=1024 with one
        // modulus, but splits can. Candidates where some t >= q must be gone.
        let config = SelectionConfig::default();
        let t_req = BigUint::from(u64::MAX);
        let candidates = enumerate_candidates(&t_req, &config).unwrap();
        for c in &candidates {
            let q: BigUint = c.q_primes.iter().map(|&p| BigUint::from(p)).product();
            for &t in &c.plain_moduli {
                assert!(BigUint::from(t) < q, "{}", c.describe());
            }
        }
        assert!(!candidates
            .iter()
            .any(|c| c.degree_n == 1024 && c.moduli_count() == 1));
    }

    struct StubBackend<F: Fn(&Candidate) -> TrialOutcome> {
        judge: F,
    }

    impl<F: Fn(&Candidate) -> TrialOutcome> TrialBackend for StubBackend<F> {
        fn trial(
            &self,
            _graph: &Graph,
            _calibration: &[Feeds],
            candidate: &Candidate,
            _security_bits: u32,
        ) -> TrialOutcome {
            (self.judge)(candidate)
        }
    }

    fn tiny_graph() -> (Graph, Vec<Feeds>) {
        let mut b = GraphBuilder::new();
        let x = b.placeholder(&[2], 100, true).unwrap();
        let sq = b.square(x).unwrap();
        let g = b.build(sq).unwrap();
        let batch: Vec<Feeds> = [-50i64, 30]
            .iter()
            .map(|&v| {
                [(x, IntTensor::new(vec![2], vec![v, -v]).unwrap())]
                    .into_iter()
                    .collect()
            })
            .collect();
        (g, batch)
    }

    #[test]
    fn selection_returns_the_first_passing_candidate() {
        let (g, batch) = tiny_graph();
        let config = SelectionConfig::default();
        let backend = StubBackend {
            judge: |c: &Candidate| {
                if c.degree_n >= 4096 {
                    TrialOutcome::Pass
                } else {
                    TrialOutcome::NoiseExhausted("too tight".into())
                }
            },
        };
        let params = select(&g, &batch, &config, &backend).unwrap();
        assert_eq!(params.degree_n, 4096);
        assert_eq!(params.plain_moduli.len(), 1);

        // Exhaustive re-trial: nothing earlier in the order passes.
        let t_req = estimate_plain_modulus(
            &Interval::from_i64(-2500, 2500).unwrap(),
            config.margin,
        )
        .unwrap();
        let candidates = enumerate_candidates(&t_req, &config).unwrap();
        for c in &candidates {
            if c.degree_n == params.degree_n && c.plain_moduli == params.plain_moduli {
                break;
            }
            assert!(matches!(
                backend.trial(&g, &batch, c, 192),
                TrialOutcome::NoiseExhausted(_)
            ));
        }
    }

    #[test]
    fn noise_failures_retry_with_more_moduli_before_advancing() {
        let (g, batch) = tiny_graph();
        let config = SelectionConfig {
            objective: Objective::Throughput,
            ..SelectionConfig::default()
        };
        // Every single-modulus candidate runs out of noise; splits pass.
        let backend = StubBackend {
            judge: |c: &Candidate| {
                if c.moduli_count() >= 2 {
                    TrialOutcome::Pass
                } else {
                    TrialOutcome::NoiseExhausted("single modulus too large".into())
                }
            },
        };
        let params = select(&g, &batch, &config, &backend).unwrap();
        // The retry rule keeps the degree of the failed candidate rather than
        // advancing to the next single-modulus degree. The smallest degree
        // offering both a one-modulus and a two-moduli chain here is 4096.
        assert_eq!(params.degree_n, 4096);
        assert_eq!(params.plain_moduli.len(), 2);
    }

    #[test]
    fn selection_reports_every_failure_when_nothing_passes() {
        let (g, batch) = tiny_graph();
        let config = SelectionConfig {
            max_crt_moduli: 2,
            ..SelectionConfig::default()
        };
        let backend = StubBackend {
            judge: |_: &Candidate| TrialOutcome::Infeasible("stub says no".into()),
        };
        let err = select(&g, &batch, &config, &backend).unwrap_err();
        match err {
            ParamsError::SelectionFailed { summary } => {
                assert!(summary.contains("stub says no"));
                assert!(summary.contains("n=2048"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn selection_is_deterministic() {
        let (g, batch) = tiny_graph();
        let config = SelectionConfig::default();
        let backend = StubBackend {
            judge: |c: &Candidate| {
                if c.degree_n >= 2048 {
                    TrialOutcome::Pass
                } else {
                    TrialOutcome::NoiseExhausted("no".into())
                }
            },
        };
        let a = select(&g, &batch, &config, &backend).unwrap();
        let b = select(&g, &batch, &config, &backend).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_overrides_the_static_domain() {
        // Static domain says 100^2; calibration only reaches 50^2, so the
        // estimate shrinks accordingly.
        let (g, batch) = tiny_graph();
        let config = SelectionConfig {
            margin: 1.0,
            ..SelectionConfig::default()
        };
        let seen = std::cell::RefCell::new(Vec::new());
        let backend = StubBackend {
            judge: |c: &Candidate| {
                seen.borrow_mut().push(c.clone());
                TrialOutcome::Pass
            },
        };
        let params = select(&g, &batch, &config, &backend).unwrap();
        let t_product = params.plain_product();
        // Calibration maximum is 50^2 = 2500, so t must cover 5000 but need
        // not cover the static bound 20000.
        assert!(t_product >= BigUint::from(5000u32));
        drop(backend);
        let recorded = seen.into_inner();
        assert_eq!(recorded.len(), 1);
    }

    #[test]
    fn params_json_round_trips_and_validates() {
        let params = EncryptionParams {
            degree_n: 1024,
            q_primes: ciphertext_modulus_chain(1024, 60, &[40961]).unwrap(),
            plain_moduli: vec![40961],
            security_bits: 0,
            objective: Objective::Latency,
            margin: 1.2,
        };
        let json = params.to_json().unwrap();
        let back = EncryptionParams::from_json(&json).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.plain_product(), BigUint::from(40961u32));
        let branches = back.branch_params().unwrap();
        assert_eq!(branches.len(), 1);
        assert_eq!(branches[0].degree_n(), 1024);

        let bad = json.replace("40961", "40962");
        assert!(EncryptionParams::from_json(&bad).is_err());
    }

    #[test]
    fn branch_params_share_one_key_domain() {
        let plain_moduli =
            decompose_plain_modulus(&BigUint::from(10_000_000u64), 1024, 2).unwrap();
        let params = EncryptionParams {
            degree_n: 1024,
            q_primes: ciphertext_modulus_chain(1024, 60, &plain_moduli).unwrap(),
            plain_moduli,
            security_bits: 0,
            objective: Objective::Throughput,
            margin: 1.0,
        };
        params.validate().unwrap();
        let branches = params.branch_params().unwrap();
        assert_eq!(branches.len(), 2);
        assert!(branches[0].same_key_domain(&branches[1]));
        assert_ne!(
            branches[0].plain_modulus().value(),
            branches[1].plain_modulus().value()
        );
    }
}
