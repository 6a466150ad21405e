use crate::diffcore::kernels;

use super::{Model, ModelError, TokenId};

/// Incremental forward pass with a key/value cache, one token at a time.
/// Produces the same logits as [`Model::forward`] up to summation order.
pub struct InferenceSession<'m> {
    model: &'m Model,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    // scratch
    h: Vec<f64>,
    n: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    ffn: Vec<f64>,
    scores: Vec<f64>,
    logits: Vec<f64>,
}

impl<'m> InferenceSession<'m> {
    pub fn new(model: &'m Model) -> Self {
        let c = model.config();
        let cap = c.context_length * c.d_model;
        Self {
            model,
            keys: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
            h: vec![0.0; c.d_model],
            n: vec![0.0; c.d_model],
            qkv: vec![0.0; 3 * c.d_model],
            att: vec![0.0; c.d_model],
            ffn: vec![0.0; c.d_ffn],
            scores: vec![0.0; c.context_length],
            logits: vec![0.0; c.vocab_size],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds every token and returns the logits after the last one.
    pub fn prefill(&mut self, tokens: &[TokenId]) -> Result<&[f64], ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        for &t in tokens {
            self.step(t)?;
        }
        Ok(&self.logits)
    }

    /// Appends one token; returns logits for the next position.
    pub fn step(&mut self, token: TokenId) -> Result<&[f64], ModelError> {
        let model = self.model;
        let c = model.config();
        if self.len >= c.context_length {
            return Err(ModelError::Context {
                len: self.len + 1,
                max: c.context_length,
            });
        }
        if token as usize >= c.vocab_size {
            return Err(ModelError::Vocab {
                token,
                vocab: c.vocab_size,
            });
        }
        let (d, heads, hd) = (c.d_model, c.n_heads, c.head_dim());
        let l = model.layout();
        let p = model.params();
        let pos = self.len;
        let tok_row = &p[l.tok_emb].data()[token as usize * d..(token as usize + 1) * d];
        let pos_row = &p[l.pos_emb].data()[pos * d..(pos + 1) * d];
        for i in 0..d {
            self.h[i] = tok_row[i] + pos_row[i];
        }
        let scale = 1.0 / (hd as f64).sqrt();
        for (li, b) in l.blocks.iter().enumerate() {
            kernels::layer_norm_row(&self.h, p[b.ln1_gain].data(), p[b.ln1_bias].data(), &mut self.n);
            self.qkv.copy_from_slice(p[b.qkv_bias].data());
            kernels::matmul_acc(&self.n, p[b.qkv_weight].data(), &mut self.qkv, 1, d, 3 * d);
            self.keys[li].extend_from_slice(&self.qkv[d..2 * d]);
            self.values[li].extend_from_slice(&self.qkv[2 * d..]);
            let (keys, values) = (&self.keys[li], &self.values[li]);
            self.att.iter_mut().for_each(|v| *v = 0.0);
            for h in 0..heads {
                let q = &self.qkv[h * hd..(h + 1) * hd];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=pos {
                    let s = kernels::dot(q, &keys[j * d + h * hd..j * d + (h + 1) * hd]) * scale;
                    self.scores[j] = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for s in &mut self.scores[..=pos] {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let out = &mut self.att[h * hd..(h + 1) * hd];
                for j in 0..=pos {
                    kernels::axpy(
                        self.scores[j] / sum,
                        &values[j * d + h * hd..j * d + (h + 1) * hd],
                        out,
                    );
                }
            }
            self.n.copy_from_slice(p[b.out_bias].data());
            kernels::matmul_acc(&self.att, p[b.out_weight].data(), &mut self.n, 1, d, d);
            for i in 0..d {
                self.h[i] += self.n[i];
            }
            kernels::layer_norm_row(&self.h, p[b.ln2_gain].data(), p[b.ln2_bias].data(), &mut self.n);
            self.ffn.copy_from_slice(p[b.fc_bias].data());
            kernels::matmul_acc(&self.n, p[b.fc_weight].data(), &mut self.ffn, 1, d, c.d_ffn);
            self.ffn.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            self.n.copy_from_slice(p[b.proj_bias].data());
            kernels::matmul_acc(&self.ffn, p[b.proj_weight].data(), &mut self.n, 1, c.d_ffn, d);
            for i in 0..d {
                self.h[i] += self.n[i];
            }
        }
        kernels::layer_norm_row(&self.h, p[l.lnf_gain].data(), p[l.lnf_bias].data(), &mut self.n);
        match l.head {
            Some(head) => {
                self.logits.iter_mut().for_each(|v| *v = 0.0);
                kernels::matmul_acc(&self.n, p[head].data(), &mut self.logits, 1, d, c.vocab_size);
            }
            None => {
                self.logits.iter_mut().for_each(|v| *v = 0.0);
                kernels::matmul_nt_acc(&self.n, p[l.tok_emb].data(), &mut self.logits, 1, d, c.vocab_size);
            }
        }
        self.len += 1;
        Ok(&self.logits)
    }
}
