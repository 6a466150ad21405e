//! Next-token pretraining that produces the base model.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use copsd::corpus::PretrainRecord;
use copsd::diffcore::{adamw_step, derive_seed, AdamWConfig, DiffError, Graph, OptimizerState, Var};
use copsd::distill::CyclicSampler;
use copsd::model::{accumulate_grads, loss_and_grads, zero_grads, Model, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("invalid pretrain config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} on document {doc_id}")]
    NonFinite { step: u64, doc_id: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub steps: u64,
    /// Documents per update.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Floor of the cosine decay, as a fraction of `learning_rate`.
    pub min_lr_ratio: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    /// When set, the corpus hash must match before training starts.
    pub expected_corpus_hash: Option<String>,
    pub record_wall_time: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            seed: 0,
            steps: 3000,
            batch_size: 16,
            learning_rate: 3e-3,
            min_lr_ratio: 0.1,
            warmup_steps: 100,
            weight_decay: 0.01,
            expected_corpus_hash: None,
            record_wall_time: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), PretrainError> {
        self.model.validate()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(PretrainError::Config("steps and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(PretrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) || !(self.weight_decay >= 0.0) {
            return Err(PretrainError::Config("min_lr_ratio must lie in [0, 1], weight_decay >= 0".into()));
        }
        Ok(())
    }

    /// Linear warmup, then cosine decay to `min_lr_ratio · learning_rate`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let peak = self.learning_rate;
        if step < self.warmup_steps {
            return peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.steps - self.warmup_steps.min(self.steps)).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = peak * self.min_lr_ratio;
        floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainStepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Mean next-token negative log-likelihood of `tokens`, scaled by `weight`.
pub fn lm_loss(g: &mut Graph, model: &Model, vars: &[Var], tokens: &[u32], weight: f64) -> Result<Option<Var>, ModelError> {
    if tokens.len() < 2 {
        return Ok(None);
    }
    let logits = model.forward(g, vars, &tokens[..tokens.len() - 1])?;
    let lp = g.log_softmax(logits, 1.0)?;
    let targets: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
    let picked = g.pick(lp, &targets)?;
    let mean = g.mean(picked)?;
    Ok(Some(g.scale(mean, -weight)?))
}

pub struct PretrainOutcome {
    pub model: Model,
    pub log: Vec<PretrainStepLog>,
}

/// Trains a freshly initialized model on `docs`. Each update averages the
/// token-level loss over a batch of documents drawn cyclically from a
/// seeded permutation.
pub fn pretrain(docs: &[PretrainRecord], config: &PretrainConfig) -> Result<PretrainOutcome, PretrainError> {
    use rayon::prelude::*;
    config.validate()?;
    if docs.is_empty() {
        return Err(PretrainError::Config("no pretraining documents".into()));
    }
    for d in docs {
        if d.tokens.len() > config.model.context_length + 1 {
            return Err(PretrainError::Config(format!(
                "document {} has {} tokens; context length is {}",
                d.id,
                d.tokens.len(),
                config.model.context_length
            )));
        }
    }
    let mut model = Model::init(config.model.clone(), derive_seed(config.seed, &[1]))?;
    let names = model.param_names();
    let mut opt = OptimizerState::new(
        model.params(),
        AdamWConfig {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut sampler = CyclicSampler::new(docs.len(), derive_seed(config.seed, &[2]));
    let mut log = Vec::with_capacity(config.steps as usize);
    let start = Instant::now();
    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let total: usize = batch.iter().map(|&i| docs[i].tokens.len().saturating_sub(1)).sum();
        let parts = batch
            .par_iter()
            .map(|&i| {
                let tokens = &docs[i].tokens;
                let weight = tokens.len().saturating_sub(1) as f64 / total.max(1) as f64;
                loss_and_grads::<PretrainError, _>(&model, |g, vars| Ok(lm_loss(g, &model, vars, tokens, weight)?))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut grads = zero_grads(&model);
        let mut loss = 0.0;
        for (&i, part) in batch.iter().zip(&parts) {
            if let Some((value, g)) = part {
                if !value.is_finite() {
                    return Err(PretrainError::NonFinite { step, doc_id: docs[i].id });
                }
                loss += value;
                accumulate_grads(&mut grads, g, 1.0);
            }
        }
        let lr = config.lr_at(step);
        opt.hyper.lr = lr;
        adamw_step(model.params_mut(), &grads, &names, &mut opt)?;
        log.push(PretrainStepLog {
            step,
            loss,
            lr,
            seconds: if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        if step % 100 == 0 {
            log::info!("pretrain step {step} loss {loss:.4}");
        }
    }
    Ok(PretrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use copsd::corpus::{generate_corpus, CorpusSpec};

    fn small() -> (Vec<PretrainRecord>, PretrainConfig) {
        let spec = CorpusSpec {
            pretrain_high: 200,
            pretrain_low_per_dialect: 10,
            privileged_per_dialect: 10,
            distill_size: 5,
            eval_size: 5,
            ..CorpusSpec::default()
        };
        let corpus = generate_corpus(&spec).unwrap();
        let config = PretrainConfig {
            model: ModelConfig {
                d_model: 32,
                n_heads: 2,
                d_ffn: 64,
                ..ModelConfig::default()
            },
            steps: 100,
            batch_size: 4,
            warmup_steps: 10,
            ..PretrainConfig::default()
        };
        (corpus.pretrain, config)
    }

    #[test]
    fn schedule_warms_up_then_decays_to_floor() {
        let c = PretrainConfig::default();
        assert!((c.lr_at(0) - c.learning_rate / 100.0).abs() < 1e-15);
        assert!((c.lr_at(99) - c.learning_rate).abs() < 1e-15);
        assert!((c.lr_at(c.steps) - c.learning_rate * c.min_lr_ratio).abs() < 1e-12);
        for s in 100..c.steps {
            assert!(c.lr_at(s + 1) <= c.lr_at(s));
        }
    }

    #[test]
    fn loss_falls_over_first_hundred_steps() {
        let (docs, config) = small();
        let out = pretrain(&docs, &config).unwrap();
        let mean = |w: &[PretrainStepLog]| w.iter().map(|l| l.loss).sum::<f64>() / w.len() as f64;
        let windows: Vec<f64> = out.log.chunks(20).map(mean).collect();
        for w in windows.windows(2) {
            assert!(w[1] < w[0], "{windows:?}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_parameters() {
        let (docs, mut config) = small();
        config.steps = 5;
        let a = pretrain(&docs, &config).unwrap();
        let b = pretrain(&docs, &config).unwrap();
        assert_eq!(a.model.param_bytes(), b.model.param_bytes());
        assert_eq!(a.log, b.log);
        config.seed = 1;
        let c = pretrain(&docs, &config).unwrap();
        assert_ne!(a.model.param_bytes(), c.model.param_bytes());
    }

    #[test]
    fn rejects_documents_longer_than_context() {
        let (docs, mut config) = small();
        config.model.context_length = 8;
        assert!(matches!(pretrain(&docs, &config), Err(PretrainError::Config(_))));
    }
}
