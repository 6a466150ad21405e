use crate::diffcore::{Array, Rng};

use super::{ModelConfig, ModelError};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Indices of one transformer block's parameters in the flat list.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockIndex {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub qkv_weight: usize,
    pub qkv_bias: usize,
    pub out_weight: usize,
    pub out_bias: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub fc_weight: usize,
    pub fc_bias: usize,
    pub proj_weight: usize,
    pub proj_bias: usize,
}

/// Ordered parameter names and shapes for a config.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub(crate) entries: Vec<(String, Vec<usize>, Init)>,
    pub(crate) tok_emb: usize,
    pub(crate) pos_emb: usize,
    pub(crate) blocks: Vec<BlockIndex>,
    pub(crate) lnf_gain: usize,
    pub(crate) lnf_bias: usize,
    pub(crate) head: Option<usize>,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let (v, c, d, f) = (
            config.vocab_size,
            config.context_length,
            config.d_model,
            config.d_ffn,
        );
        let mut entries = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| {
            entries.push((name, shape, init));
            entries.len() - 1
        };
        let tok_emb = push("tok_emb".into(), vec![v, d], Init::Normal);
        let pos_emb = push("pos_emb".into(), vec![c, d], Init::Normal);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(BlockIndex {
                ln1_gain: push(p("ln1.gain"), vec![d], Init::Ones),
                ln1_bias: push(p("ln1.bias"), vec![d], Init::Zeros),
                qkv_weight: push(p("attn.qkv.weight"), vec![d, 3 * d], Init::Normal),
                qkv_bias: push(p("attn.qkv.bias"), vec![3 * d], Init::Zeros),
                out_weight: push(p("attn.out.weight"), vec![d, d], Init::Normal),
                out_bias: push(p("attn.out.bias"), vec![d], Init::Zeros),
                ln2_gain: push(p("ln2.gain"), vec![d], Init::Ones),
                ln2_bias: push(p("ln2.bias"), vec![d], Init::Zeros),
                fc_weight: push(p("mlp.fc.weight"), vec![d, f], Init::Normal),
                fc_bias: push(p("mlp.fc.bias"), vec![f], Init::Zeros),
                proj_weight: push(p("mlp.proj.weight"), vec![f, d], Init::Normal),
                proj_bias: push(p("mlp.proj.bias"), vec![d], Init::Zeros),
            });
        }
        let lnf_gain = push("ln_f.gain".into(), vec![d], Init::Ones);
        let lnf_bias = push("ln_f.bias".into(), vec![d], Init::Zeros);
        let head = (!config.tie_embeddings).then(|| push("head.weight".into(), vec![d, v], Init::Normal));
        Self {
            entries,
            tok_emb,
            pos_emb,
            blocks,
            lnf_gain,
            lnf_bias,
            head,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _, _)| n.clone()).collect()
    }

    pub fn shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.entries.iter().map(|(_, s, _)| s.as_slice())
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.shapes().map(|s| s.iter().product::<usize>()).sum()
    }
}

/// Fresh parameters: weights and embeddings from N(0, 0.02²), biases and
/// norm offsets zero, norm gains one. Draw order follows the layout.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Vec<Array>, ModelError> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut rng = Rng::seed_from_u64(seed);
    Ok(layout
        .entries
        .iter()
        .map(|(_, shape, init)| match init {
            Init::Zeros => Array::zeros(shape),
            Init::Ones => Array::filled(shape, 1.0),
            Init::Normal => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| INIT_STD * rng.normal()).collect();
                Array::new(shape.clone(), data).expect("layout shapes are valid")
            }
        })
        .collect())
}
