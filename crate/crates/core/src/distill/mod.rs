//! On-policy self-distillation: the student samples under its own context,
//! a frozen copy of the base model scores the same tokens under the
//! privileged context, and the student minimizes the per-token divergence.


use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dialect, DistillRecord, Vocab, EOS};
use crate::diffcore::{adamw_step, derive_seed, seeded_rng, AdamWConfig, DiffError, Graph, OptimizerState, Var};
pub(crate) use crate::model::{accumulate_grads as accumulate, loss_and_grads, zero_grads};
use crate::model::{
    sample_sequence, Binding, CheckpointError, Model, ModelError, Rollout, SamplingParams, TokenId,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("log-distribution widths differ: {0} vs {1}")]
    Width(usize, usize),
    #[error("distribution sequences differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid distill config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} on problem {problem_id}")]
    NonFinite { step: u64, problem_id: u64 },
    #[error("rollout stamped with policy version {found}, expected {expected}")]
    OffPolicy { expected: u64, found: u64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(p_S ∥ p_T)`, the reverse KL.
    #[default]
    StudentToTeacher,
    /// `KL(p_T ∥ p_S)`
    TeacherToStudent,
}

/// `Σ exp(log_p)(log_p − log_q)`, clamped at zero.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> Result<f64, DistillError> {
    if log_p.len() != log_q.len() {
        return Err(DistillError::Width(log_p.len(), log_q.len()));
    }
    Ok(crate::diffcore::row_kl(log_p, log_q).max(0.0))
}

/// Per-position log-distributions of both policies along one rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistributions {
    pub student: Vec<Vec<f64>>,
    pub teacher: Vec<Vec<f64>>,
}

impl StepDistributions {
    pub fn new(student: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>) -> Result<Self, DistillError> {
        if student.len() != teacher.len() {
            return Err(DistillError::Length(student.len(), teacher.len()));
        }
        Ok(Self { student, teacher })
    }

    /// Both policies' distributions at every position of `rollout`.
    pub fn compute(
        student: &Model,
        teacher: &Model,
        student_ctx: &[TokenId],
        teacher_ctx: &[TokenId],
        rollout: &[TokenId],
    ) -> Result<Self, DistillError> {
        Self::new(
            student.step_distributions(student_ctx, rollout)?,
            teacher.step_distributions(teacher_ctx, rollout)?,
        )
    }

    pub fn len(&self) -> usize {
        self.student.len()
    }

    pub fn is_empty(&self) -> bool {
        self.student.is_empty()
    }

    /// Trajectory-averaged divergence; 0 for an empty rollout.
    pub fn trajectory_loss(&self, direction: KlDirection) -> Result<f64, DistillError> {
        if self.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (s, t) in self.student.iter().zip(&self.teacher) {
            total += match direction {
                KlDirection::StudentToTeacher => kl_divergence(s, t)?,
                KlDirection::TeacherToStudent => kl_divergence(t, s)?,
            };
        }
        Ok(total / self.len() as f64)
    }
}

/// Graph node for one trajectory's loss
/// `(1/|ŷ|) Σ_n D(p_S^n, p_T^n)`, or `None` for an empty rollout.
///
/// `teacher_vars` should come from [`Binding::Frozen`] (or constants) so no
/// gradient reaches the teacher.
#[allow(clippy::too_many_arguments)]
pub fn copsd_loss(
    g: &mut Graph,
    student: &Model,
    student_vars: &[Var],
    teacher: &Model,
    teacher_vars: &[Var],
    student_ctx: &[TokenId],
    teacher_ctx: &[TokenId],
    rollout: &[TokenId],
    direction: KlDirection,
) -> Result<Option<Var>, DistillError> {
    if rollout.is_empty() {
        return Ok(None);
    }
    let s = student.rollout_log_probs(g, student_vars, student_ctx, rollout)?;
    let t = teacher.rollout_log_probs(g, teacher_vars, teacher_ctx, rollout)?;
    let per_position = match direction {
        KlDirection::StudentToTeacher => g.kl_rows(s, t)?,
        KlDirection::TeacherToStudent => g.kl_rows(t, s)?,
    };
    Ok(Some(g.mean(per_position)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub rollout_budget: usize,
    pub rollout_temperature: f64,
    pub generations_per_prompt: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub kl_direction: KlDirection,
    pub seed: u64,
    /// Write elapsed seconds into the step log; off keeps logs byte-stable.
    pub record_wall_time: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 0.0,
            batch_size: 32,
            rollout_budget: 128,
            rollout_temperature: 1.1,
            generations_per_prompt: 1,
            total_steps: 100,
            checkpoint_every: 5,
            kl_direction: KlDirection::StudentToTeacher,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if self.batch_size == 0 || self.rollout_budget == 0 || self.generations_per_prompt == 0 {
            return bad("batch_size, rollout_budget and generations_per_prompt must be positive");
        }
        if self.total_steps == 0 || self.checkpoint_every == 0 {
            return bad("total_steps and checkpoint_every must be positive");
        }
        if !(self.rollout_temperature > 0.0 && self.rollout_temperature.is_finite()) {
            return bad("rollout_temperature must be positive");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillStepLog {
    pub step: u64,
    pub loss: f64,
    pub mean_rollout_len: f64,
    pub zero_len_count: usize,
    pub seconds: f64,
}

/// Cycles through a seeded permutation of `0..n`, reshuffling each pass.
pub struct CyclicSampler {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl CyclicSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.n).collect();
        seeded_rng(derive_seed(self.seed, &[self.epoch])).shuffle(&mut self.order);
        self.epoch += 1;
        self.cursor = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.reshuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Largest new-token count that keeps `ctx ++ rollout` inside the context.
pub(crate) fn budget_for(model: &Model, ctx_len: usize, budget: usize) -> usize {
    budget.min(model.config().context_length.saturating_sub(ctx_len))
}

/// Samples under `ctx`, or returns an empty rollout when `budget` is 0.
pub(crate) fn sample_or_empty(
    model: &Model,
    ctx: &[TokenId],
    params: &SamplingParams,
    seed: u64,
    policy_version: u64,
) -> Result<Rollout, ModelError> {
    let mut r = if params.budget == 0 {
        Rollout {
            prompt: ctx.to_vec(),
            tokens: Vec::new(),
            logprobs: Vec::new(),
            terminated_by: crate::model::Termination::Budget,
            seed,
            policy_version,
        }
    } else {
        sample_sequence(model, ctx, params, seed)?
    };
    r.policy_version = policy_version;
    Ok(r)
}

pub struct DistillOutcome {
    pub student: Model,
    /// The frozen teacher as it stood at the end of training.
    pub teacher: Model,
    pub log: Vec<DistillStepLog>,
}

struct Prepared {
    id: u64,
    student_ctx: Vec<TokenId>,
    teacher_ctx: Vec<TokenId>,
}

/// Trains a student initialized from `base` on the `dialect` records of
/// `set`, with the teacher frozen at `base`. `on_checkpoint(step, model)`
/// runs after every `checkpoint_every` updates.
pub fn train_copsd<F>(
    base: &Model,
    vocab: &Vocab,
    set: &[DistillRecord],
    dialect: Dialect,
    config: &DistillConfig,
    mut on_checkpoint: F,
) -> Result<DistillOutcome, DistillError>
where
    F: FnMut(u64, &Model) -> Result<(), DistillError>,
{
    config.validate()?;
    let name = dialect.name();
    let problems = set
        .iter()
        .filter(|r| r.dialect == name)
        .map(|r| {
            Ok(Prepared {
                id: r.id,
                student_ctx: r.student_context(vocab)?.tokens,
                teacher_ctx: r.teacher_context(vocab)?.tokens,
            })
        })
        .collect::<Result<Vec<_>, DistillError>>()?;
    if problems.is_empty() {
        return Err(DistillError::Config(format!("no distillation records for {name}")));
    }
    let teacher = base.clone();
    let mut student = base.clone();
    let names = student.param_names();
    let mut opt = OptimizerState::new(student.params(), config.optimizer());
    let mut sampler = CyclicSampler::new(problems.len(), derive_seed(config.seed, &[0x5eed]));
    let mut log = Vec::new();
    let start = Instant::now();

    for step in 0..config.total_steps {
        let batch: Vec<(usize, usize)> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .flat_map(|p| (0..config.generations_per_prompt).map(move |g| (p, g)))
            .collect();
        let rollouts = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &(p, _))| {
                let pr = &problems[p];
                // the rollout must fit after the longer teacher context
                let params = SamplingParams {
                    temperature: config.rollout_temperature,
                    top_p: 1.0,
                    budget: budget_for(&student, pr.teacher_ctx.len(), config.rollout_budget),
                    stop_token: EOS,
                };
                let seed = derive_seed(config.seed, &[step, pr.id, slot as u64]);
                Ok(sample_or_empty(&student, &pr.student_ctx, &params, seed, step)?)
            })
            .collect::<Result<Vec<Rollout>, DistillError>>()?;

        let results = batch
            .par_iter()
            .zip(&rollouts)
            .map(|(&(p, _), r)| {
                if r.policy_version != step {
                    return Err(DistillError::OffPolicy {
                        expected: step,
                        found: r.policy_version,
                    });
                }
                let pr = &problems[p];
                loss_and_grads(&student, |g, svars| {
                    let tvars = teacher.bind(g, Binding::Frozen)?;
                    copsd_loss(
                        g,
                        &student,
                        svars,
                        &teacher,
                        &tvars,
                        &pr.student_ctx,
                        &pr.teacher_ctx,
                        &r.tokens,
                        config.kl_direction,
                    )
                })
            })
            .collect::<Result<Vec<_>, DistillError>>()?;

        let nonempty = results.iter().filter(|r| r.is_some()).count();
        let mut grads = zero_grads(&student);
        let mut loss = 0.0;
        for (&(p, _), res) in batch.iter().zip(&results) {
            if let Some((value, g)) = res {
                if !value.is_finite() {
                    return Err(DistillError::NonFinite {
                        step,
                        problem_id: problems[p].id,
                    });
                }
                loss += value / nonempty as f64;
                accumulate(&mut grads, g, 1.0 / nonempty as f64);
            }
        }
        if nonempty == 0 {
            log::warn!("step {step}: every rollout was empty; skipping the update");
        } else {
            adamw_step(student.params_mut(), &grads, &names, &mut opt)?;
        }
        log.push(DistillStepLog {
            step,
            loss,
            mean_rollout_len: rollouts.iter().map(|r| r.tokens.len()).sum::<usize>() as f64 / rollouts.len() as f64,
            zero_len_count: rollouts.len() - nonempty,
            seconds: if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        log::info!("copsd {name} step {step} loss {loss:.6}");
        let done = step + 1;
        if done % config.checkpoint_every == 0 {
            on_checkpoint(done, &student)?;
        }
    }
    Ok(DistillOutcome { student, teacher, log })
}
