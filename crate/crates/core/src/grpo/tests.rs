use super::*;
use crate::corpus::{generate_corpus, CorpusSpec, Difficulty, Vocab, BOX_CLOSE, BOX_OPEN, EOS};
use crate::model::Binding;
use crate::model::{ModelConfig, Termination};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 128,
        context_length: 128,
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ffn: 32,
        tie_embeddings: true,
    }
}

fn rollout(tokens: Vec<TokenId>) -> Rollout {
    Rollout {
        prompt: vec![0],
        logprobs: vec![0.0; tokens.len()],
        tokens,
        terminated_by: Termination::Eos,
        seed: 0,
        policy_version: 0,
    }
}

#[test]
fn rewards() {
    let d = Vocab::digit;
    assert_eq!(binary_reward(&[BOX_OPEN, d(7), BOX_CLOSE, EOS], 7), 1.0);
    assert_eq!(binary_reward(&[d(7), EOS], 7), 0.0);
    assert_eq!(binary_reward(&[BOX_OPEN, d(8), BOX_CLOSE], 7), 0.0);
}

#[test]
fn advantages() {
    let a = group_advantages(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-8).unwrap();
    assert!((a[0] - 1.7321).abs() < 1e-4 && (a[1] - 1.7321).abs() < 1e-4);
    assert!(a[2..].iter().all(|&v| (v + 0.5774).abs() < 1e-4));
    assert!(a.iter().sum::<f64>().abs() < 1e-9);
    assert_eq!(group_advantages(&[1.0; 8], 1e-8).unwrap(), vec![0.0; 8]);
    assert_eq!(group_advantages(&[0.0; 4], 1e-8).unwrap(), vec![0.0; 4]);
    assert!(group_advantages(&[1.0], 1e-8).is_err());
}

#[test]
fn degenerate_groups_give_zero_loss_and_gradient() {
    let m = Model::init(tiny_config(), 1).unwrap();
    let g = GroupResult {
        prompt_id: 0,
        context: vec![0, 30, 2],
        rollouts: vec![rollout(vec![7, 1]), rollout(vec![8, 9, 1])],
        rewards: vec![0.0, 0.0],
        advantages: vec![0.0, 0.0],
    };
    assert!(g.is_degenerate());
    let (loss, grads) = grpo_step_loss(&m, &[g]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.iter().all(|a| a.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn step_loss_scalar_oracle() {
    let m = Model::init(tiny_config(), 2).unwrap();
    let ctx = vec![0u32, 30, 2];
    let (y1, y2) = (vec![7u32, 1], vec![8u32, 9]);
    let g = GroupResult {
        prompt_id: 0,
        context: ctx.clone(),
        rollouts: vec![rollout(y1.clone()), rollout(y2.clone())],
        rewards: vec![1.0, 0.0],
        advantages: vec![1.0, -1.0],
    };
    let (loss, _) = grpo_step_loss(&m, &[g]).unwrap();
    let mean_lp = |y: &[TokenId]| {
        let rows = m.step_distributions(&ctx, y).unwrap();
        rows.iter().zip(y).map(|(r, &t)| r[t as usize]).sum::<f64>() / y.len() as f64
    };
    let want = -(mean_lp(&y1) - mean_lp(&y2)) / 2.0;
    assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
}

#[test]
fn policy_loss_matches_finite_differences() {
    let m = Model::init(tiny_config(), 3).unwrap();
    let ctx = [0u32, 30, 2];
    let y = [7u32, 17, 8, 1];
    let scalar = |model: &Model| {
        let mut g = Graph::new();
        let vars = model.bind(&mut g, Binding::Constant).unwrap();
        let l = rollout_policy_loss(&mut g, model, &vars, &ctx, &y, 0.7, 0.5).unwrap().unwrap();
        g.value(l).item()
    };
    let (_, grads) = loss_and_grads(&m, |g, vars| rollout_policy_loss(g, &m, vars, &ctx, &y, 0.7, 0.5)).unwrap().unwrap();
    let h = 1e-5;
    let (mut num, mut ana) = (Vec::new(), Vec::new());
    for (pi, p) in m.params().iter().enumerate() {
        for j in (0..p.len()).step_by(37) {
            let mut plus = m.clone();
            plus.params_mut()[pi].data_mut()[j] += h;
            let mut minus = m.clone();
            minus.params_mut()[pi].data_mut()[j] -= h;
            num.push((scalar(&plus) - scalar(&minus)) / (2.0 * h));
            ana.push(grads[pi].data()[j]);
        }
    }
    let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    assert!(diff / norm < 1e-4, "rel err {}", diff / norm);
}

#[test]
fn config_validation() {
    assert!(GrpoConfig::default().validate().is_ok());
    assert!(GrpoConfig { group_size: 1, ..Default::default() }.validate().is_err());
    assert!(GrpoConfig { kl_coefficient: 0.1, ..Default::default() }.validate().is_err());
}

#[test]
fn training_determinism_rescoring_and_zero_update() {
    let corpus = generate_corpus(&CorpusSpec {
        seed: 4,
        n_dialects: 1,
        pretrain_high: 10,
        pretrain_low_per_dialect: 2,
        privileged_per_dialect: 0,
        distill_size: 5,
        eval_size: 2,
        difficulty: Difficulty { max_ops: 2, ..Difficulty::default() },
    })
    .unwrap();
    let base = Model::init(tiny_config(), 7).unwrap();
    let config = GrpoConfig {
        batch_size: 2,
        group_size: 3,
        rollout_budget: 8,
        total_steps: 3,
        checkpoint_every: 1,
        ..Default::default()
    };
    let run = || train_grpo(&base, &corpus.vocab, &corpus.distill, Dialect(1), &config, true, |_, _| Ok(())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.policy.param_bytes(), b.policy.param_bytes());
    assert_eq!(a.log, b.log);
    let gold: std::collections::HashMap<u64, i64> = corpus.distill.iter().map(|r| (r.id, r.answer)).collect();
    for (log, groups) in a.log.iter().zip(&a.groups) {
        let mut total = 0.0;
        let mut n = 0.0;
        for g in groups {
            for r in &g.rollouts {
                total += if crate::eval::extract_boxed(&r.tokens) == Some(gold[&g.prompt_id]) { 1.0 } else { 0.0 };
                n += 1.0;
            }
        }
        assert_eq!(log.mean_reward, total / n);
    }
    // an untrained model never boxes the answer: every group is degenerate
    assert!(a.log.iter().all(|l| l.degenerate_group_frac == 1.0 && l.loss == 0.0));
    assert_eq!(a.policy.param_bytes(), base.param_bytes());
}
