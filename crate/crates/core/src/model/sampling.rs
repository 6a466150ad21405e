use serde::{Deserialize, Serialize};

use crate::diffcore::{kernels, Rng};

use super::{InferenceSession, Model, ModelError, TokenId};

/// Below this temperature sampling degenerates to argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub budget: usize,
    pub stop_token: TokenId,
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(ModelError::Sampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::Sampling(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.budget == 0 {
            return Err(ModelError::Sampling("budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Eos,
    Budget,
}

/// A sampled continuation of a prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Conditioning prefix, including any forced think prefix.
    pub prompt: Vec<TokenId>,
    /// Sampled tokens only.
    pub tokens: Vec<TokenId>,
    /// Log-probability of each sampled token under the distribution it was
    /// drawn from (after temperature and nucleus truncation).
    pub logprobs: Vec<f64>,
    pub terminated_by: Termination,
    pub seed: u64,
    /// Version stamp of the parameters that produced this rollout.
    pub policy_version: u64,
}

/// The nucleus of `probs`: the shortest prefix of tokens sorted by
/// descending probability (ties by ascending id) whose mass reaches `top_p`,
/// renormalized. Always keeps at least one token.
pub fn nucleus_filter(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    if top_p < 1.0 {
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut mass = 0.0;
        let mut keep = 0;
        for &i in &order {
            mass += probs[i];
            keep += 1;
            if mass >= top_p {
                break;
            }
        }
        order.truncate(keep.max(1));
    }
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    order.into_iter().map(|i| (i, probs[i] / total)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Draws one token from temperature-scaled logits; returns `(token, logprob)`.
pub(crate) fn sample_token(logits: &[f64], params: &SamplingParams, rng: &mut Rng, probs: &mut Vec<f64>) -> (usize, f64) {
    if params.temperature < GREEDY_TEMPERATURE {
        return (argmax(logits), 0.0);
    }
    probs.resize(logits.len(), 0.0);
    kernels::softmax_row(logits, params.temperature, probs);
    let kept = nucleus_filter(probs, params.top_p);
    let u = rng.uniform();
    let mut acc = 0.0;
    for &(tok, p) in &kept {
        acc += p;
        if u < acc {
            return (tok, p.ln());
        }
    }
    // u landed in the rounding gap above the cumulative sum
    let &(tok, p) = kept.iter().rev().find(|(_, p)| *p > 0.0).unwrap_or(&kept[kept.len() - 1]);
    (tok, p.ln())
}

/// Autoregressively samples up to `budget` tokens after `prompt`, stopping
/// early at the stop token (which is kept as the last sampled token).
pub fn sample_sequence(
    model: &Model,
    prompt: &[TokenId],
    params: &SamplingParams,
    seed: u64,
) -> Result<Rollout, ModelError> {
    params.validate()?;
    model.check_tokens(prompt)?;
    let max_new = params
        .budget
        .min(model.config().context_length.saturating_sub(prompt.len()) + 1);
    let mut session = InferenceSession::new(model);
    let mut rng = Rng::seed_from_u64(seed);
    let mut logits = session.prefill(prompt)?.to_vec();
    let mut tokens = Vec::new();
    let mut logprobs = Vec::new();
    let mut probs = Vec::new();
    let mut terminated_by = Termination::Budget;
    while tokens.len() < max_new {
        let (tok, lp) = sample_token(&logits, params, &mut rng, &mut probs);
        let tok = tok as TokenId;
        tokens.push(tok);
        logprobs.push(lp);
        if tok == params.stop_token {
            terminated_by = Termination::Eos;
            break;
        }
        if tokens.len() == max_new {
            break;
        }
        logits.copy_from_slice(session.step(tok)?);
    }
    Ok(Rollout {
        prompt: prompt.to_vec(),
        tokens,
        logprobs,
        terminated_by,
        seed,
        policy_version: 0,
    })
}
