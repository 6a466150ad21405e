//! Crosslingual on-policy self-distillation at desk scale.
//!
//! A tiny causal transformer is pretrained on a synthetic multi-dialect
//! arithmetic corpus, then fine-tuned in a low-resource dialect either by
//! distilling from itself conditioned on privileged high-resource context
//! ([`distill`]) or by outcome-reward policy gradient ([`grpo`]).

pub mod diffcore;
pub mod distill;
pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod model;
pub mod policies;
