//! Group-relative policy optimization with binary verified rewards.

#[cfg(test)]
mod tests;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialect, DistillRecord, Vocab, EOS};
use crate::diffcore::{adamw_step, derive_seed, AdamWConfig, Graph, OptimizerState, Var};
use crate::distill::{
    accumulate, budget_for, loss_and_grads, sample_or_empty, zero_grads, CyclicSampler,
    DistillError,
};
use crate::eval::is_correct;
use crate::model::{Model, Rollout, SamplingParams, TokenId};

pub type GrpoError = DistillError;

/// 1 when the rollout's boxed answer equals `gold`.
pub fn binary_reward(rollout: &[TokenId], gold: i64) -> f64 {
    if is_correct(rollout, gold) {
        1.0
    } else {
        0.0
    }
}

/// `(r − mean) / σ` with the population σ; all zeros when `σ < eps`.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::Config("a group needs at least 2 rollouts".into()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma < eps {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / sigma).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub prompt_id: u64,
    pub context: Vec<TokenId>,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupResult {
    pub fn is_degenerate(&self) -> bool {
        self.advantages.iter().all(|&a| a == 0.0)
    }
}

/// Loss term of one rollout, `−scale · A · mean_t log p(y_t | prefix)`, or
/// `None` when the rollout is empty or its advantage is 0.
pub fn rollout_policy_loss(
    g: &mut Graph,
    model: &Model,
    vars: &[Var],
    context: &[TokenId],
    rollout: &[TokenId],
    advantage: f64,
    scale: f64,
) -> Result<Option<Var>, GrpoError> {
    if rollout.is_empty() || advantage == 0.0 {
        return Ok(None);
    }
    let lp = model.rollout_log_probs(g, vars, context, rollout)?;
    let idx: Vec<usize> = rollout.iter().map(|&t| t as usize).collect();
    let picked = g.pick(lp, &idx)?;
    let mean = g.mean(picked)?;
    Ok(Some(g.scale(mean, -scale * advantage)?))
}

/// `−(1/N) Σ_i A_i · mean_t log p(y_i,t)` over the `N` nonempty rollouts of
/// all groups, with its parameter gradients. Zero loss and zero gradients
/// when every advantage is 0.
pub fn grpo_step_loss(model: &Model, groups: &[GroupResult]) -> Result<(f64, Vec<crate::diffcore::Array>), GrpoError> {
    let items: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, grp)| (0..grp.rollouts.len()).map(move |i| (gi, i)))
        .filter(|&(gi, i)| !groups[gi].rollouts[i].tokens.is_empty())
        .collect();
    let mut grads = zero_grads(model);
    if items.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / items.len() as f64;
    let parts = items
        .par_iter()
        .map(|&(gi, i)| {
            let grp = &groups[gi];
            loss_and_grads(model, |g, vars| {
                rollout_policy_loss(g, model, vars, &grp.context, &grp.rollouts[i].tokens, grp.advantages[i], scale)
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut loss = 0.0;
    for (&(gi, _), part) in items.iter().zip(&parts) {
        if let Some((value, g)) = part {
            if !value.is_finite() {
                return Err(GrpoError::NonFinite {
                    step: u64::MAX,
                    problem_id: groups[gi].prompt_id,
                });
            }
            loss += value;
            accumulate(&mut grads, g, 1.0);
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub group_size: usize,
    pub rollout_budget: usize,
    pub rollout_temperature: f64,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    /// Reference-KL weight; only 0 is supported.
    pub kl_coefficient: f64,
    pub advantage_eps: f64,
    pub seed: u64,
    pub record_wall_time: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            weight_decay: 0.0,
            batch_size: 4,
            group_size: 8,
            rollout_budget: 256,
            rollout_temperature: 1.2,
            total_steps: 500,
            checkpoint_every: 5,
            kl_coefficient: 0.0,
            advantage_eps: 1e-8,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::Config(m.into()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if self.kl_coefficient != 0.0 {
            return bad("kl_coefficient must be 0; the reference-KL term is not implemented");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay nonnegative");
        }
        if self.batch_size == 0 || self.rollout_budget == 0 || self.total_steps == 0 || self.checkpoint_every == 0 {
            return bad("batch_size, rollout_budget, total_steps and checkpoint_every must be positive");
        }
        if !(self.rollout_temperature > 0.0 && self.rollout_temperature.is_finite()) || !(self.advantage_eps >= 0.0) {
            return bad("rollout_temperature must be positive and advantage_eps nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrpoStepLog {
    pub step: u64,
    pub mean_reward: f64,
    pub degenerate_group_frac: f64,
    pub loss: f64,
    pub seconds: f64,
}

pub struct GrpoOutcome {
    pub policy: Model,
    pub log: Vec<GrpoStepLog>,
    /// Groups of every step, kept when requested for re-scoring.
    pub groups: Vec<Vec<GroupResult>>,
}

/// Samples one group per prompt under the student context and scores it.
pub fn sample_groups(
    model: &Model,
    prompts: &[(u64, Vec<TokenId>, i64)],
    config: &GrpoConfig,
    step: u64,
) -> Result<Vec<GroupResult>, GrpoError> {
    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..config.group_size).map(move |i| (p, i)))
        .collect();
    let rollouts = jobs
        .par_iter()
        .map(|&(p, i)| {
            let (id, ctx, _) = &prompts[p];
            let params = SamplingParams {
                temperature: config.rollout_temperature,
                top_p: 1.0,
                budget: budget_for(model, ctx.len(), config.rollout_budget),
                stop_token: EOS,
            };
            let seed = derive_seed(config.seed, &[step, *id, p as u64, i as u64]);
            Ok(sample_or_empty(model, ctx, &params, seed, step)?)
        })
        .collect::<Result<Vec<Rollout>, GrpoError>>()?;
    let mut groups = Vec::with_capacity(prompts.len());
    for (p, chunk) in rollouts.chunks(config.group_size).enumerate() {
        let (id, ctx, gold) = &prompts[p];
        let rewards: Vec<f64> = chunk.iter().map(|r| binary_reward(&r.tokens, *gold)).collect();
        groups.push(GroupResult {
            prompt_id: *id,
            context: ctx.clone(),
            advantages: group_advantages(&rewards, config.advantage_eps)?,
            rewards,
            rollouts: chunk.to_vec(),
        });
    }
    Ok(groups)
}

/// GRPO on the student prompts of the `dialect` records. When every group
/// of a step is degenerate the optimizer is not called, so parameters and
/// moments stay byte-identical.
pub fn train_grpo<F>(
    base: &Model,
    vocab: &Vocab,
    set: &[DistillRecord],
    dialect: Dialect,
    config: &GrpoConfig,
    keep_groups: bool,
    mut on_checkpoint: F,
) -> Result<GrpoOutcome, GrpoError>
where
    F: FnMut(u64, &Model) -> Result<(), GrpoError>,
{
    config.validate()?;
    let name = dialect.name();
    let prompts = set
        .iter()
        .filter(|r| r.dialect == name)
        .map(|r| Ok((r.id, r.student_context(vocab)?.tokens, r.answer)))
        .collect::<Result<Vec<_>, GrpoError>>()?;
    if prompts.is_empty() {
        return Err(GrpoError::Config(format!("no training prompts for {name}")));
    }
    let mut policy = base.clone();
    let names = policy.param_names();
    let mut opt = OptimizerState::new(
        policy.params(),
        AdamWConfig {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let mut sampler = CyclicSampler::new(prompts.len(), derive_seed(config.seed, &[0x5eed]));
    let mut log = Vec::new();
    let mut history = Vec::new();
    let start = Instant::now();
    for step in 0..config.total_steps {
        let batch: Vec<_> = sampler
            .next_batch(config.batch_size)
            .into_iter()
            .map(|i| prompts[i].clone())
            .collect();
        let groups = sample_groups(&policy, &batch, config, step)?;
        let degenerate = groups.iter().filter(|g| g.is_degenerate()).count();
        let (loss, grads) = if degenerate == groups.len() {
            (0.0, Vec::new())
        } else {
            grpo_step_loss(&policy, &groups).map_err(|e| match e {
                GrpoError::NonFinite { problem_id, .. } => GrpoError::NonFinite { step, problem_id },
                e => e,
            })?
        };
        if degenerate < groups.len() {
            adamw_step(policy.params_mut(), &grads, &names, &mut opt)?;
        }
        let rewards: Vec<f64> = groups.iter().flat_map(|g| g.rewards.iter().copied()).collect();
        log.push(GrpoStepLog {
            step,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            degenerate_group_frac: degenerate as f64 / groups.len() as f64,
            loss,
            seconds: if config.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        log::info!("grpo {name} step {step} reward {:.4}", log.last().unwrap().mean_reward);
        if keep_groups {
            history.push(groups);
        }
        let done = step + 1;
        if done % config.checkpoint_every == 0 {
            on_checkpoint(done, &policy)?;
        }
    }
    Ok(GrpoOutcome {
        policy,
        log,
        groups: history,
    })
}
