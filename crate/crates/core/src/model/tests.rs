use super::*;
use crate::diffcore::Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 23,
        context_length: 24,
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ffn: 32,
        tie_embeddings: true,
    }
}

fn random_tokens(rng: &mut Rng, n: usize, vocab: usize) -> Vec<TokenId> {
    (0..n).map(|_| rng.below(vocab as u64) as TokenId).collect()
}

/// Init scale is tiny; spread the weights so attention patterns matter.
fn spread(mut m: Model, seed: u64) -> Model {
    let mut rng = Rng::seed_from_u64(seed);
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    m
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = Model::init(small_config(), 3).unwrap();
    let b = Model::init(small_config(), 3).unwrap();
    let c = Model::init(small_config(), 4).unwrap();
    assert_eq!(a.param_bytes(), b.param_bytes());
    assert!(a.params().iter().zip(c.params()).any(|(x, y)| x != y));
}

#[test]
fn init_follows_the_scheme() {
    let m = Model::init(small_config(), 1).unwrap();
    for ((name, _, _), p) in m.layout().entries.iter().zip(m.params()) {
        if name.ends_with(".gain") {
            assert!(p.data().iter().all(|&v| v == 1.0), "{name}");
        } else if name.ends_with(".bias") {
            assert!(p.data().iter().all(|&v| v == 0.0), "{name}");
        } else {
            let n = p.len() as f64;
            let std = (p.data().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
            assert!((std - 0.02).abs() < 0.005, "{name}: std {std}");
        }
    }
}

#[test]
fn parameter_count_closed_form() {
    let cfg = ModelConfig {
        vocab_size: 128,
        context_length: 256,
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        d_ffn: 256,
        tie_embeddings: true,
    };
    let (v, c, l, d, f) = (128, 256, 2, 64, 256);
    let per_block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
    let expected = v * d + c * d + l * per_block + 2 * d;
    assert_eq!(expected, 124_672);
    let m = Model::init(cfg.clone(), 0).unwrap();
    assert_eq!(m.param_count(), expected);
    let untied = ModelConfig {
        tie_embeddings: false,
        ..cfg
    };
    assert_eq!(ParamLayout::new(&untied).count(), expected + d * v);
}

#[test]
fn invalid_config_is_rejected() {
    let cfg = ModelConfig {
        n_heads: 3,
        ..small_config()
    };
    assert!(matches!(Model::init(cfg, 0), Err(ModelError::Config(_))));
    let cfg = ModelConfig {
        d_ffn: 0,
        ..small_config()
    };
    assert!(matches!(Model::init(cfg, 0), Err(ModelError::Config(_))));
}

#[test]
fn future_tokens_never_change_past_logits() {
    let m = spread(Model::init(small_config(), 5).unwrap(), 6);
    let mut rng = Rng::seed_from_u64(9);
    let tokens = random_tokens(&mut rng, 12, 23);
    let base = m.forward_logits(&tokens).unwrap();
    for j in 0..tokens.len() {
        let mut other = tokens.clone();
        other[j] = (other[j] + 1) % 23;
        let pert = m.forward_logits(&other).unwrap();
        for r in 0..j {
            assert_eq!(base.row(r), pert.row(r), "row {r} moved when token {j} changed");
        }
        assert_ne!(base.row(j), pert.row(j));
    }
}

#[test]
fn incremental_session_matches_full_forward() {
    for tie in [true, false] {
        let cfg = ModelConfig {
            tie_embeddings: tie,
            ..small_config()
        };
        let m = spread(Model::init(cfg, 7).unwrap(), 8);
        let mut rng = Rng::seed_from_u64(10);
        let tokens = random_tokens(&mut rng, 20, 23);
        let full = m.forward_logits(&tokens).unwrap();
        let mut s = InferenceSession::new(&m);
        for (i, &t) in tokens.iter().enumerate() {
            let row = s.step(t).unwrap();
            for (a, b) in row.iter().zip(full.row(i)) {
                assert!((a - b).abs() <= 1e-9, "pos {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn forward_errors() {
    let m = Model::init(small_config(), 0).unwrap();
    assert!(matches!(
        m.forward_logits(&[0; 25]),
        Err(ModelError::Context { len: 25, max: 24 })
    ));
    assert!(matches!(
        m.forward_logits(&[1, 23]),
        Err(ModelError::Vocab { token: 23, vocab: 23 })
    ));
    assert!(matches!(m.forward_logits(&[]), Err(ModelError::EmptySequence)));
    let mut s = InferenceSession::new(&m);
    for _ in 0..24 {
        s.step(1).unwrap();
    }
    assert!(matches!(s.step(1), Err(ModelError::Context { .. })));
}

#[test]
fn step_distributions_are_normalized_and_consistent() {
    let m = spread(Model::init(small_config(), 11).unwrap(), 12);
    let ctx = [1, 2, 3, 4];
    let roll = [5, 6, 7, 8, 9];
    assert!(m.step_distributions(&ctx, &[]).unwrap().is_empty());
    let rows = m.step_distributions(&ctx, &roll).unwrap();
    assert_eq!(rows.len(), roll.len());
    for row in &rows {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() <= 1e-12);
    }
    // position 1 is the last row of the context alone
    let first = m.forward_logits(&ctx).unwrap();
    let mut lp = vec![0.0; 23];
    crate::diffcore::kernels::log_softmax_row(first.row(3), 1.0, &mut lp);
    for (a, b) in rows[0].iter().zip(&lp) {
        assert!((a - b).abs() <= 1e-9);
    }
    // incremental path
    let mut s = InferenceSession::new(&m);
    let mut logits = s.prefill(&ctx).unwrap().to_vec();
    for (n, &t) in roll.iter().enumerate() {
        crate::diffcore::kernels::log_softmax_row(&logits, 1.0, &mut lp);
        for (a, b) in rows[n].iter().zip(&lp) {
            assert!((a - b).abs() <= 1e-9);
        }
        logits = s.step(t).unwrap().to_vec();
    }
}

#[test]
fn nucleus_hand_example() {
    let kept = nucleus_filter(&[0.5, 0.3, 0.15, 0.05], 0.8);
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[0].0, 0);
    assert_eq!(kept[1].0, 1);
    assert!((kept[0].1 - 0.625).abs() < 1e-12);
    assert!((kept[1].1 - 0.375).abs() < 1e-12);
}

#[test]
fn nucleus_keeps_top_token_even_when_it_exceeds_top_p() {
    let kept = nucleus_filter(&[0.1, 0.9], 0.05);
    assert_eq!(kept, vec![(1, 1.0)]);
    // ties by ascending id
    let kept = nucleus_filter(&[0.25, 0.25, 0.25, 0.25], 0.3);
    assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1]);
}

fn params(t: f64, p: f64, budget: usize) -> SamplingParams {
    SamplingParams {
        temperature: t,
        top_p: p,
        budget,
        stop_token: 0,
    }
}

#[test]
fn sampling_is_deterministic_and_respects_budget() {
    let m = spread(Model::init(small_config(), 13).unwrap(), 14);
    let a = sample_sequence(&m, &[1, 2], &params(1.0, 0.95, 10), 99).unwrap();
    let b = sample_sequence(&m, &[1, 2], &params(1.0, 0.95, 10), 99).unwrap();
    assert_eq!(a, b);
    for seed in 0..40 {
        let r = sample_sequence(&m, &[1, 2], &params(1.3, 1.0, 6), seed).unwrap();
        assert!(r.tokens.len() <= 6);
        assert_eq!(r.tokens.len(), r.logprobs.len());
        assert!(r.logprobs.iter().all(|lp| lp.is_finite() && *lp <= 0.0));
        match r.terminated_by {
            Termination::Eos => assert_eq!(*r.tokens.last().unwrap(), 0),
            Termination::Budget => {
                assert_eq!(r.tokens.len(), 6);
                assert!(!r.tokens.contains(&0));
            }
        }
    }
}

#[test]
fn greedy_limit_is_argmax() {
    let m = spread(Model::init(small_config(), 15).unwrap(), 16);
    let a = sample_sequence(&m, &[3], &params(1e-7, 1.0, 8), 1).unwrap();
    let b = sample_sequence(&m, &[3], &params(1e-7, 1.0, 8), 2).unwrap();
    assert_eq!(a.tokens, b.tokens);
    let logits = m.forward_logits(&[3]).unwrap();
    let row = logits.row(0);
    let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
    assert_eq!(a.tokens[0] as usize, best);
}

#[test]
fn sampling_rejects_bad_parameters() {
    let m = Model::init(small_config(), 0).unwrap();
    assert!(sample_sequence(&m, &[1], &params(0.0, 1.0, 4), 0).is_err());
    assert!(sample_sequence(&m, &[1], &params(1.0, 0.0, 4), 0).is_err());
    assert!(sample_sequence(&m, &[1], &params(1.0, 1.5, 4), 0).is_err());
    assert!(sample_sequence(&m, &[1], &params(1.0, 1.0, 0), 0).is_err());
    assert!(matches!(
        sample_sequence(&m, &[1; 30], &params(1.0, 1.0, 4), 0),
        Err(ModelError::Context { .. })
    ));
}

#[test]
fn sampling_stops_at_context_edge() {
    let m = Model::init(small_config(), 0).unwrap();
    let r = sample_sequence(&m, &[1; 20], &params(1.0, 1.0, 100), 0).unwrap();
    assert!(r.tokens.len() <= 5);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::init(small_config(), 21).unwrap();
    save_checkpoint(&m, 5, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step_tag, 5);
    assert_eq!(loaded.model.config(), m.config());
    for (a, b) in loaded.model.params().iter().zip(m.params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), (*y as f32 as f64).to_bits());
        }
    }
    // a second trip is bit-exact
    let again = decode_checkpoint(&encode_checkpoint(&loaded.model, 5)).unwrap();
    assert_eq!(again.model.param_bytes(), loaded.model.param_bytes());
    assert_eq!(encode_checkpoint(&again.model, 5), std::fs::read(&path).unwrap());

    let bytes = std::fs::read(&path).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::MagicMismatch)));

    let short = &bytes[..bytes.len() - 4];
    match decode_checkpoint(short) {
        Err(CheckpointError::Truncated { expected, actual }) => {
            assert_eq!(expected, bytes.len());
            assert_eq!(actual, bytes.len() - 4);
        }
        other => panic!("expected truncation, got {other:?}"),
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_checkpoint(&long), Err(CheckpointError::TrailingBytes { extra: 1 })));
}

#[test]
fn checkpoint_manifest_disagreement() {
    let m = Model::init(small_config(), 1).unwrap();
    let bytes = encode_checkpoint(&m, 0);
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[12..12 + n]).unwrap();
    let tampered = header.replacen("[23,16]", "[16,23]", 1);
    assert_ne!(tampered, header);
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
    out.extend_from_slice(tampered.as_bytes());
    out.extend_from_slice(&bytes[12 + n..]);
    assert!(matches!(decode_checkpoint(&out), Err(CheckpointError::Manifest(_))));
}
