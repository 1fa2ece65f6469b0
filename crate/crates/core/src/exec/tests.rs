use std::collections::HashMap;

use num_traits::ToPrimitive;

use crate::bfv::{keygen, noise_budget};
use crate::graph::{Feeds, Graph, GraphBuilder, IntTensor, NodeId};
use crate::modring::{CrtBasis, Modulus};
use crate::params::{ciphertext_modulus_chain, Candidate, EncryptionParams, Objective, TrialBackend, TrialOutcome};

use super::*;

const SEED: [u8; 32] = *b"execution-module-test-seed-0001!";

fn test_params(n: usize, ts: &[u64], q_budget_bits: u32) -> EncryptionParams {
    EncryptionParams {
        degree_n: n,
        q_primes: ciphertext_modulus_chain(n, q_budget_bits, ts).unwrap(),
        plain_moduli: ts.to_vec(),
        security_bits: 0,
        objective: Objective::Latency,
        margin: 1.0,
    }
}

fn basis_of(params: &EncryptionParams) -> CrtBasis {
    let moduli = params
        .plain_moduli
        .iter()
        .map(|&t| Modulus::new(t).unwrap())
        .collect();
    CrtBasis::new(moduli).unwrap()
}

/// Full encrypt-run-decrypt pipeline plus the smallest measured output
/// budget across branches.
fn encrypted_eval(
    graph: &Graph,
    params: &EncryptionParams,
    batch: &HashMap<NodeId, IntTensor>,
    gates: Option<&HashMap<NodeId, Vec<u8>>>,
) -> (crate::graph::BigTensor, u32) {
    let plan = compile(graph, params, gates).unwrap();
    let kp = keygen(&params.branch_params().unwrap()[0], SEED).unwrap();
    let mut feeds = vec![EncryptedFeeds::new(); params.plain_moduli.len()];
    for (id, tensor) in batch {
        for (i, et) in encrypt_batch(&kp.public, tensor, params)
            .unwrap()
            .into_iter()
            .enumerate()
        {
            feeds[i].insert(*id, et);
        }
    }
    let keys = EvalKeys {
        public: kp.public.clone(),
        relin: kp.relin.clone(),
    };
    let outputs = run(&plan, &feeds, &keys).unwrap();
    let mut min_budget = u32::MAX;
    for tensor in &outputs {
        let t = params.plain_moduli[tensor.modulus_index()];
        let sk = kp.secret.rebind_plain_modulus(t).unwrap();
        for ct in tensor.ciphertexts() {
            min_budget = min_budget.min(noise_budget(&sk, ct).unwrap());
        }
    }
    let result = decrypt_recombine(&kp.secret, &outputs, &basis_of(params)).unwrap();
    (result, min_budget)
}

fn batch_of(examples: &[Feeds]) -> HashMap<NodeId, IntTensor> {
    let mut out = HashMap::new();
    for id in examples[0].keys() {
        let tensors: Vec<&IntTensor> = examples.iter().map(|f| &f[id]).collect();
        out.insert(*id, stack_examples(&tensors).unwrap());
    }
    out
}

fn affine_graph() -> (Graph, NodeId) {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[3], 16, true).unwrap();
    let w = IntTensor::new(vec![3, 2], vec![2, -1, 0, 3, 5, 1]).unwrap();
    let m = b.matmul(x, w).unwrap();
    let c = b.constant(IntTensor::new(vec![2], vec![7, -4]).unwrap());
    let out = b.add(m, c).unwrap();
    (b.build(out).unwrap(), x)
}

#[test]
fn affine_plan_matches_plain_oracle() {
    let (graph, x) = affine_graph();
    let params = test_params(1024, &[40961], 60);
    let examples: Vec<Feeds> = [[1i64, -2, 3], [16, 0, -16]]
        .iter()
        .map(|vals| {
            Feeds::from([(x, IntTensor::new(vec![3], vals.to_vec()).unwrap())])
        })
        .collect();
    let (result, budget) = encrypted_eval(&graph, &params, &batch_of(&examples), None);
    assert!(budget > 0);
    assert_eq!(result.shape(), &[2, 2]);
    for (ex, feeds) in examples.iter().enumerate() {
        let oracle = graph.eval_plain(feeds, None).unwrap();
        assert_eq!(example_slice(&result, ex), oracle.data());
    }
}

#[test]
fn square_plan_squares_each_example() {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[1], 16, true).unwrap();
    let sq = b.square(x).unwrap();
    let graph = b.build(sq).unwrap();
    let params = test_params(1024, &[40961], 60);
    let batch = HashMap::from([(x, IntTensor::new(vec![2, 1], vec![-3, 2]).unwrap())]);
    let (result, budget) = encrypted_eval(&graph, &params, &batch, None);
    assert!(budget > 0);
    let got: Vec<i64> = result.data().iter().map(|v| v.to_i64().unwrap()).collect();
    assert_eq!(got, vec![9, 4]);
}

#[test]
fn crt_branches_recombine_beyond_single_modulus() {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[1], 300, true).unwrap();
    let sq = b.square(x).unwrap();
    let c = b.constant(IntTensor::new(vec![1], vec![1234]).unwrap());
    let out = b.add(sq, c).unwrap();
    let graph = b.build(out).unwrap();

    let params = test_params(1024, &[12289, 40961], 60);
    let product = params.plain_product();
    let examples: Vec<Feeds> = [250i64, -299, 0]
        .iter()
        .map(|&v| Feeds::from([(x, IntTensor::new(vec![1], vec![v]).unwrap())]))
        .collect();
    let (result, budget) = encrypted_eval(&graph, &params, &batch_of(&examples), None);
    assert!(budget > 0);
    for (ex, feeds) in examples.iter().enumerate() {
        // 250^2 + 1234 overflows either modulus alone but not their product.
        let exact = graph.eval_plain(feeds, None).unwrap();
        assert!(exact.data()[0].magnitude() * 2u32 < product);
        assert_eq!(example_slice(&result, ex), exact.data());
    }
}

#[test]
fn batching_transparency() {
    let (graph, x) = affine_graph();
    let params = test_params(1024, &[40961], 60);
    let examples: Vec<Feeds> = [[3i64, 1, -4], [0, 2, 9], [-16, 16, 5]]
        .iter()
        .map(|vals| Feeds::from([(x, IntTensor::new(vec![3], vals.to_vec()).unwrap())]))
        .collect();

    let (packed, _) = encrypted_eval(&graph, &params, &batch_of(&examples), None);
    for (ex, feeds) in examples.iter().enumerate() {
        let (single, _) = encrypted_eval(&graph, &params, &batch_of(&[feeds.clone()]), None);
        assert_eq!(example_slice(&packed, ex), example_slice(&single, 0));
    }
}

fn gated_graph() -> (Graph, NodeId, NodeId) {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[4], 16, true).unwrap();
    let gate = b.gate_mask(x, vec![1, 1, 1, 1]).unwrap();
    let sq = b.square(gate).unwrap();
    let w = IntTensor::new(vec![4, 1], vec![1, 1, 1, 1]).unwrap();
    let out = b.matmul(sq, w).unwrap();
    (b.build(out).unwrap(), x, gate)
}

#[test]
fn gate_override_elides_ops() {
    let (graph, x, gate) = gated_graph();
    let params = test_params(1024, &[40961], 60);

    let ungated = compile(&graph, &params, None).unwrap();
    assert_eq!(ungated.counts().ct_mul, 4);
    assert!(ungated.skipped().is_empty());

    let half = HashMap::from([(gate, vec![1u8, 0, 1, 0])]);
    let gated = compile(&graph, &params, Some(&half)).unwrap();
    assert_eq!(gated.counts().ct_mul, 2);
    assert!(gated.counts().total() < ungated.counts().total());

    // Gated execution equals the plain evaluation of the masked graph.
    let examples = vec![Feeds::from([(
        x,
        IntTensor::new(vec![4], vec![3, 5, -2, 7]).unwrap(),
    )])];
    let (result, _) = encrypted_eval(&graph, &params, &batch_of(&examples), Some(&half));
    // Only elements 0 and 2 survive: 3^2 + (-2)^2 = 13.
    assert_eq!(result.data()[0].to_i64().unwrap(), 13);
}

#[test]
fn all_gates_zero_skips_everything() {
    let (graph, x, gate) = gated_graph();
    let params = test_params(1024, &[40961], 60);
    let none = HashMap::from([(gate, vec![0u8, 0, 0, 0])]);
    let plan = compile(&graph, &params, Some(&none)).unwrap();
    assert_eq!(plan.counts().total(), 0);
    assert_eq!(plan.op_len(), 0);
    // The gate, the squares, and the matmul all disappear.
    assert_eq!(plan.skipped().len(), 3);

    let examples = vec![Feeds::from([(
        x,
        IntTensor::new(vec![4], vec![3, 5, -2, 7]).unwrap(),
    )])];
    let (result, budget) = encrypted_eval(&graph, &params, &batch_of(&examples), Some(&none));
    assert!(budget > 0, "skipped outputs are fresh zero encryptions");
    assert_eq!(result.data()[0].to_i64().unwrap(), 0);
}

#[test]
fn constant_difference_folds_away() {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[2], 16, true).unwrap();
    let diff = b.sub(x, x).unwrap();
    let graph = b.build(diff).unwrap();
    let params = test_params(1024, &[40961], 60);
    let plan = compile(&graph, &params, None).unwrap();
    assert_eq!(plan.op_len(), 0, "x - x folds to a known zero");
}

#[test]
fn gate_override_validation() {
    let (graph, x, gate) = gated_graph();
    let params = test_params(1024, &[40961], 60);
    let wrong_len = HashMap::from([(gate, vec![1u8, 0])]);
    assert!(matches!(
        compile(&graph, &params, Some(&wrong_len)),
        Err(ExecError::GateOverride { .. })
    ));
    let not_gate = HashMap::from([(x, vec![1u8, 1, 1, 1])]);
    assert!(matches!(
        compile(&graph, &params, Some(&not_gate)),
        Err(ExecError::NotGated(_))
    ));
}

#[test]
fn run_validates_branch_and_feed_shapes() {
    let (graph, x) = affine_graph();
    let params = test_params(1024, &[40961], 60);
    let plan = compile(&graph, &params, None).unwrap();
    let kp = keygen(&params.branch_params().unwrap()[0], SEED).unwrap();
    let keys = EvalKeys {
        public: kp.public.clone(),
        relin: kp.relin.clone(),
    };
    assert!(matches!(
        run(&plan, &[], &keys),
        Err(ExecError::BranchCount { .. })
    ));
    let empty = vec![EncryptedFeeds::new()];
    assert!(matches!(
        run(&plan, &empty, &keys),
        Err(ExecError::MissingFeed(id)) if id == x
    ));
}

#[test]
fn encrypt_batch_rejects_oversized_batches() {
    let params = test_params(1024, &[40961], 60);
    let kp = keygen(&params.branch_params().unwrap()[0], SEED).unwrap();
    let batch = IntTensor::new(vec![1025, 1], vec![1; 1025]).unwrap();
    assert!(matches!(
        encrypt_batch(&kp.public, &batch, &params),
        Err(ExecError::BatchTooLarge { got: 1025, max: 1024 })
    ));
}

#[test]
fn tensor_bytes_roundtrip() {
    let params = test_params(1024, &[40961], 60);
    let kp = keygen(&params.branch_params().unwrap()[0], SEED).unwrap();
    let batch = IntTensor::new(vec![2, 3], vec![1, -2, 3, 4, -5, 6]).unwrap();
    let tensors = encrypt_batch(&kp.public, &batch, &params).unwrap();
    let bytes = tensors[0].to_bytes();
    let back = EncryptedTensor::from_bytes(&bytes).unwrap();
    assert_eq!(back.shape(), tensors[0].shape());
    assert_eq!(back.batch_count(), 2);
    assert_eq!(back.modulus_index(), 0);

    // Same decryption before and after the roundtrip.
    let sk = kp.secret.rebind_plain_modulus(40961).unwrap();
    let enc = crate::encode::SlotEncoder::new(1024, Modulus::new(40961).unwrap()).unwrap();
    for (a, b) in tensors[0].ciphertexts().iter().zip(back.ciphertexts()) {
        let da = enc.decode(&crate::bfv::decrypt(&sk, a).unwrap()).unwrap();
        let db = enc.decode(&crate::bfv::decrypt(&sk, b).unwrap()).unwrap();
        assert_eq!(da, db);
    }

    assert!(EncryptedTensor::from_bytes(&bytes[..10]).is_err());
    let mut corrupt = bytes.clone();
    corrupt[0] ^= 0xff;
    assert!(matches!(
        EncryptedTensor::from_bytes(&corrupt),
        Err(ExecError::Serialization(_))
    ));
}

#[test]
fn tracer_matches_values_and_underestimates_budget() {
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[2], 16, true).unwrap();
    let c = b.constant(IntTensor::new(vec![2], vec![3, -5]).unwrap());
    let scaled = b.mul(x, c).unwrap();
    let shift = b.constant(IntTensor::new(vec![2], vec![11, 7]).unwrap());
    let affine = b.add(scaled, shift).unwrap();
    let sq = b.square(affine).unwrap();
    let graph = b.build(sq).unwrap();

    let params = test_params(1024, &[40961], 60);
    let examples: Vec<Feeds> = [[4i64, -16], [0, 9]]
        .iter()
        .map(|vals| Feeds::from([(x, IntTensor::new(vec![2], vals.to_vec()).unwrap())]))
        .collect();
    let batch = batch_of(&examples);

    let plan = compile(&graph, &params, None).unwrap();
    let traces = tracer_run(&plan, &batch).unwrap();
    assert_eq!(traces.len(), 1);
    let trace = &traces[0];

    // Exact value tracking: slot values equal the plain evaluation mod t.
    let t = num_bigint::BigUint::from(40961u64);
    for (ex, feeds) in examples.iter().enumerate() {
        let oracle = graph.eval_plain(feeds, Some(&t)).unwrap();
        for (elem, vals) in trace.values.iter().enumerate() {
            assert_eq!(vals[ex], oracle.data()[elem].to_i64().unwrap());
        }
    }

    // Conservative forecast: modeled budget never exceeds the measured one.
    let (_, measured) = encrypted_eval(&graph, &params, &batch, None);
    let forecast = trace.min_budget();
    assert!(forecast > 0);
    assert!(
        forecast <= measured as i64,
        "forecast {forecast} exceeds measured {measured}"
    );
}

#[test]
fn tracer_budget_decreases_with_depth() {
    let params = test_params(1024, &[40961], 60);
    let feeds = |x: NodeId| {
        HashMap::from([(x, IntTensor::new(vec![1, 1], vec![16]).unwrap())])
    };

    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[1], 16, true).unwrap();
    let shallow = b.build(x).unwrap();
    let plan = compile(&shallow, &params, None).unwrap();
    let fresh = tracer_run(&plan, &feeds(x)).unwrap()[0].min_budget();

    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[1], 16, true).unwrap();
    let sq = b.square(x).unwrap();
    let deeper = b.build(sq).unwrap();
    let plan = compile(&deeper, &params, None).unwrap();
    let squared = tracer_run(&plan, &feeds(x)).unwrap()[0].min_budget();

    assert!(fresh > squared);
}

#[test]
fn trial_backend_passes_and_prefilters() {
    let (graph, _) = affine_graph();
    let backend = EncryptedTrialBackend::default();

    let pass = Candidate {
        degree_n: 1024,
        plain_moduli: vec![40961],
        q_primes: ciphertext_modulus_chain(1024, 60, &[40961]).unwrap(),
    };
    assert!(matches!(
        backend.trial(&graph, &[], &pass, 0),
        TrialOutcome::Pass
    ));

    // Three squarings cannot fit a 31-bit modulus chain; the forecast alone
    // rules the candidate out.
    let mut b = GraphBuilder::new();
    let x = b.placeholder(&[1], 16, true).unwrap();
    let s1 = b.square(x).unwrap();
    let s2 = b.square(s1).unwrap();
    let s3 = b.square(s2).unwrap();
    let deep = b.build(s3).unwrap();
    let shallow_q = Candidate {
        degree_n: 1024,
        plain_moduli: vec![40961],
        q_primes: ciphertext_modulus_chain(1024, 31, &[40961]).unwrap(),
    };
    match backend.trial(&deep, &[], &shallow_q, 0) {
        TrialOutcome::NoiseExhausted(msg) => {
            assert!(msg.contains("forecast"), "expected prefilter rejection: {msg}")
        }
        other => panic!("expected noise exhaustion, got {other:?}"),
    }

    let invalid = Candidate {
        degree_n: 1024,
        plain_moduli: vec![40962],
        q_primes: ciphertext_modulus_chain(1024, 60, &[]).unwrap(),
    };
    assert!(matches!(
        backend.trial(&graph, &[], &invalid, 0),
        TrialOutcome::Infeasible(_)
    ));
}
