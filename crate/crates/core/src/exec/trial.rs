//! Candidate evaluation for parameter selection, backed by real encryption.
//!
//! A candidate is tried in two stages. The tracer first forecasts the final
//! noise budget on the trial batch; candidates whose forecast is hopeless are
//! rejected without touching the lattice backend. The forecast is a
//! conservative bound that can undershoot the measured budget by a handful of
//! bits on deep circuits, so rejection requires the forecast to fall a grace
//! margin below zero; everything else goes to a full encrypted dry run that
//! checks exact decryption and leftover budget.

use num_traits::ToPrimitive;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::bfv::{keygen, noise_budget};
use crate::graph::{Feeds, Graph, IntTensor};
use crate::modring::CrtBasis;
use crate::params::{Candidate, EncryptionParams, Objective, TrialBackend, TrialOutcome};

use super::{
    compile, decrypt_recombine, encrypt_batch, example_slice, run, stack_examples, tracer_run,
    EncryptedFeeds, EvalKeys, ExecError,
};

/// How far below zero the modeled budget forecast may fall before a candidate
/// is rejected without an encrypted dry run. Covers the worst observed gap
/// between the forecast and measured budgets on two-level circuits with wide
/// linear rows, where the model charges the full coefficient mass but the
/// signed terms mostly cancel.
pub const PREFILTER_GRACE_BITS: i64 = 26;

/// Tries candidates by compiling the graph, forecasting noise, and running a
/// small encrypted batch end to end.
#[derive(Debug, Clone)]
pub struct EncryptedTrialBackend {
    /// Examples per trial batch; calibration data beyond this is ignored.
    pub trial_examples: usize,
    /// Seeds key generation and, when no calibration data is supplied, the
    /// synthetic in-domain trial inputs.
    pub seed: [u8; 32],
}

impl Default for EncryptedTrialBackend {
    fn default() -> Self {
        EncryptedTrialBackend {
            trial_examples: 8,
            seed: *b"trial-backend-default-seed-0000!",
        }
    }
}

enum TrialFailure {
    Outcome(TrialOutcome),
    Error(ExecError),
}

impl From<ExecError> for TrialFailure {
    fn from(e: ExecError) -> Self {
        TrialFailure::Error(e)
    }
}

impl EncryptedTrialBackend {
    /// In-domain random feeds for graphs tried without calibration data.
    fn synthetic_examples(&self, graph: &Graph) -> Result<Vec<Feeds>, ExecError> {
        let mut rng = StdRng::from_seed(self.seed);
        let mut examples = Vec::with_capacity(self.trial_examples);
        for _ in 0..self.trial_examples {
            let mut feeds = Feeds::new();
            for id in graph.placeholders() {
                let node = graph.node(id)?;
                let lo = node.domain.lo().to_i64().unwrap_or(i64::MIN / 4);
                let hi = node.domain.hi().to_i64().unwrap_or(i64::MAX / 4);
                let len: usize = node.shape.iter().product();
                let data = (0..len).map(|_| rng.random_range(lo..=hi)).collect();
                feeds.insert(id, IntTensor::new(node.shape.clone(), data)?);
            }
            examples.push(feeds);
        }
        Ok(examples)
    }

    fn run_trial(
        &self,
        graph: &Graph,
        calibration: &[Feeds],
        candidate: &Candidate,
        security_bits: u32,
    ) -> Result<TrialOutcome, TrialFailure> {
        let params = EncryptionParams {
            degree_n: candidate.degree_n,
            q_primes: candidate.q_primes.clone(),
            plain_moduli: candidate.plain_moduli.clone(),
            security_bits,
            objective: Objective::Latency,
            margin: 1.0,
        };
        params.validate().map_err(ExecError::from)?;
        let plan = compile(graph, &params, None)?;

        let owned_examples;
        let examples: Vec<&Feeds> = if calibration.is_empty() {
            owned_examples = self.synthetic_examples(graph)?;
            owned_examples.iter().collect()
        } else {
            calibration.iter().take(self.trial_examples).collect()
        };

        let mut batched: Feeds = Feeds::new();
        for (id, _) in plan.placeholders() {
            let per_example: Vec<&IntTensor> = examples
                .iter()
                .map(|f| f.get(id).ok_or(ExecError::MissingFeed(*id)))
                .collect::<Result<_, _>>()?;
            batched.insert(*id, stack_examples(&per_example)?);
        }

        let traces = tracer_run(&plan, &batched)?;
        let forecast = traces.iter().map(|t| t.min_budget()).min().unwrap_or(0);
        if forecast < -PREFILTER_GRACE_BITS {
            return Err(TrialFailure::Outcome(TrialOutcome::NoiseExhausted(
                format!("noise forecast {forecast} bits at {}", candidate.describe()),
            )));
        }

        let branch_params = params.branch_params().map_err(ExecError::from)?;
        let keys = keygen(&branch_params[0], self.seed).map_err(ExecError::from)?;
        let eval_keys = EvalKeys {
            public: keys.public.clone(),
            relin: keys.relin.clone(),
        };

        let mut branch_feeds: Vec<EncryptedFeeds> =
            vec![EncryptedFeeds::new(); params.plain_moduli.len()];
        for (id, _) in plan.placeholders() {
            let tensors = encrypt_batch(&keys.public, &batched[id], &params)?;
            for (branch, tensor) in tensors.into_iter().enumerate() {
                branch_feeds[branch].insert(*id, tensor);
            }
        }

        let outputs = run(&plan, &branch_feeds, &eval_keys)?;
        for tensor in &outputs {
            let t = params.plain_moduli[tensor.modulus_index()];
            let sk = keys.secret.rebind_plain_modulus(t).map_err(ExecError::from)?;
            for ct in tensor.ciphertexts() {
                let budget = noise_budget(&sk, ct).map_err(ExecError::from)?;
                if budget == 0 {
                    return Err(TrialFailure::Outcome(TrialOutcome::NoiseExhausted(
                        format!("budget exhausted at {}", candidate.describe()),
                    )));
                }
            }
        }

        let moduli = params
            .plain_moduli
            .iter()
            .map(|&t| crate::modring::Modulus::new(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(crate::bfv::BfvError::from)
            .map_err(ExecError::from)?;
        let basis = CrtBasis::new(moduli)
            .map_err(crate::bfv::BfvError::from)
            .map_err(ExecError::from)?;
        let recombined = decrypt_recombine(&keys.secret, &outputs, &basis)?;

        let product = params.plain_product();
        for (ex, feeds) in examples.iter().enumerate() {
            let oracle = graph
                .eval_plain(feeds, Some(&product))
                .map_err(ExecError::from)?;
            if example_slice(&recombined, ex) != oracle.data() {
                return Err(TrialFailure::Outcome(TrialOutcome::NoiseExhausted(
                    format!("decryption diverged at {}", candidate.describe()),
                )));
            }
        }
        Ok(TrialOutcome::Pass)
    }
}

impl TrialBackend for EncryptedTrialBackend {
    fn trial(
        &self,
        graph: &Graph,
        calibration: &[Feeds],
        candidate: &Candidate,
        security_bits: u32,
    ) -> TrialOutcome {
        match self.run_trial(graph, calibration, candidate, security_bits) {
            Ok(outcome) => outcome,
            Err(TrialFailure::Outcome(outcome)) => outcome,
            Err(TrialFailure::Error(e)) => TrialOutcome::Infeasible(e.to_string()),
        }
    }
}
