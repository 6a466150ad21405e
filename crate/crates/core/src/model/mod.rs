//! Tiny causal transformer language model.

mod checkpoint;
mod config;
mod infer;
mod params;
mod sampling;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError,
    ManifestEntry, ModelCheckpoint, CHECKPOINT_MAGIC,
};
pub use config::ModelConfig;
pub use infer::InferenceSession;
pub use params::{init_params, ParamLayout};
pub use sampling::{nucleus_filter, sample_sequence, Rollout, SamplingParams, Termination};

use thiserror::Error;

use crate::diffcore::{Array, DiffError, Graph, Var};

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds context length {max}")]
    Context { len: usize, max: usize },
    #[error("token id {token} outside vocabulary of size {vocab}")]
    Vocab { token: TokenId, vocab: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid sampling parameter: {0}")]
    Sampling(String),
    #[error("parameter set does not match the layout: {0}")]
    Params(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Parameters θ together with the configuration that shapes them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    params: Vec<Array>,
}

/// How a model's parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    /// Leaves that accumulate gradients.
    Trainable,
    /// Leaves wrapped in stop-gradient: the frozen-teacher path.
    Frozen,
    /// Plain constants, for forward-only evaluation.
    Constant,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: Vec<Array>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.len() {
            return Err(ModelError::Params(format!(
                "expected {} arrays, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), p) in layout.entries.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(ModelError::Params(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn param_count(&self) -> usize {
        self.layout.count()
    }

    /// Little-endian bytes of every parameter, for byte-level comparisons.
    pub fn param_bytes(&self) -> Vec<u8> {
        self.params
            .iter()
            .flat_map(|p| p.data().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if tokens.len() > self.config.context_length {
            return Err(ModelError::Context {
                len: tokens.len(),
                max: self.config.context_length,
            });
        }
        if let Some(&bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(ModelError::Vocab {
                token: bad,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Adds every parameter to `g` as a leaf.
    pub fn bind(&self, g: &mut Graph, binding: Binding) -> Result<Vec<Var>, ModelError> {
        self.params
            .iter()
            .map(|p| match binding {
                Binding::Trainable => Ok(g.leaf(p.clone(), true)),
                Binding::Constant => Ok(g.constant(p.clone())),
                Binding::Frozen => {
                    let leaf = g.leaf(p.clone(), true);
                    Ok(g.stop_gradient(leaf)?)
                }
            })
            .collect()
    }

    /// Causal forward pass on a graph; returns `[len × V]` logits where row
    /// `n` scores the token following position `n`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], tokens: &[TokenId]) -> Result<Var, ModelError> {
        self.check_tokens(tokens)?;
        let l = &self.layout;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = g.embedding(vars[l.tok_emb], &ids)?;
        let pos = g.embedding(vars[l.pos_emb], &positions)?;
        let mut h = g.add(tok, pos)?;
        for b in &l.blocks {
            let n = g.layer_norm(h, vars[b.ln1_gain], vars[b.ln1_bias])?;
            let qkv = g.matmul(n, vars[b.qkv_weight])?;
            let qkv = g.add_row(qkv, vars[b.qkv_bias])?;
            let att = g.causal_attention(qkv, self.config.n_heads)?;
            let att = g.matmul(att, vars[b.out_weight])?;
            let att = g.add_row(att, vars[b.out_bias])?;
            h = g.add(h, att)?;
            let n = g.layer_norm(h, vars[b.ln2_gain], vars[b.ln2_bias])?;
            let f = g.matmul(n, vars[b.fc_weight])?;
            let f = g.add_row(f, vars[b.fc_bias])?;
            let f = g.gelu(f)?;
            let f = g.matmul(f, vars[b.proj_weight])?;
            let f = g.add_row(f, vars[b.proj_bias])?;
            h = g.add(h, f)?;
        }
        let h = g.layer_norm(h, vars[l.lnf_gain], vars[l.lnf_bias])?;
        let logits = match l.head {
            Some(head) => g.matmul(h, vars[head])?,
            None => g.matmul_nt(h, vars[l.tok_emb])?,
        };
        Ok(logits)
    }

    /// Forward-only logits for `tokens`.
    pub fn forward_logits(&self, tokens: &[TokenId]) -> Result<Array, ModelError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Binding::Constant)?;
        let out = self.forward(&mut g, &vars, tokens)?;
        Ok(g.value(out).clone())
    }

    /// Full-vocabulary log-distributions for each rollout position: row `n`
    /// is conditioned on `context ++ rollout[..n]`. One forward pass.
    pub fn step_distributions(
        &self,
        context: &[TokenId],
        rollout: &[TokenId],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        if rollout.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Binding::Constant)?;
        let lp = self.rollout_log_probs(&mut g, &vars, context, rollout)?;
        let v = g.value(lp);
        Ok((0..v.rows()).map(|r| v.row(r).to_vec()).collect())
    }

    /// Graph node holding `[|rollout| × V]` log-distributions over the
    /// rollout positions (temperature 1).
    pub fn rollout_log_probs(
        &self,
        g: &mut Graph,
        vars: &[Var],
        context: &[TokenId],
        rollout: &[TokenId],
    ) -> Result<Var, ModelError> {
        if context.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let mut seq = Vec::with_capacity(context.len() + rollout.len());
        seq.extend_from_slice(context);
        seq.extend_from_slice(rollout);
        // the last rollout token is never conditioned on
        let seq = &seq[..seq.len() - 1];
        let logits = self.forward(g, vars, seq)?;
        let start = context.len() - 1;
        let rows = g.slice_rows(logits, start, start + rollout.len())?;
        Ok(g.log_softmax(rows, 1.0)?)
    }
}

/// Runs `build` on a fresh graph with `model` bound as trainable and
/// returns the loss value with the parameter gradients, or `None` when
/// `build` produced no loss. A non-finite loss is returned without
/// gradients.
pub fn loss_and_grads<E, F>(model: &Model, build: F) -> Result<Option<(f64, Vec<Array>)>, E>
where
    E: From<ModelError> + From<DiffError>,
    F: FnOnce(&mut Graph, &[Var]) -> Result<Option<Var>, E>,
{
    let mut g = Graph::new();
    let vars = model.bind(&mut g, Binding::Trainable)?;
    let Some(loss) = build(&mut g, &vars)? else {
        return Ok(None);
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok(Some((value, Vec::new())));
    }
    g.backward(loss)?;
    let grads = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();
    Ok(Some((value, grads)))
}

/// Adds `scale · src` into `acc`.
pub fn accumulate_grads(acc: &mut [Array], src: &[Array], scale: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        for (x, &y) in a.data_mut().iter_mut().zip(s.data()) {
            *x += scale * y;
        }
    }
}

pub fn zero_grads(model: &Model) -> Vec<Array> {
    model.params().iter().map(|p| Array::zeros(p.shape())).collect()
}

#[cfg(test)]
mod tests;
