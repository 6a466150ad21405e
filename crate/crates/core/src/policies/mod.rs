//! Student and teacher conditioning contexts.
//!
//! The student sees only the low-resource problem. The teacher additionally
//! sees the `H` problem and the `H` reference solution. Both end with the
//! same think-open plus dialect prefix, so one rollout continues either.

#[cfg(test)]
mod tests;

use crate::corpus::{
    gen_reference_trace, render, CorpusError, Dialect, DistillRecord, Problem, Vocab, BOS, SEP,
    THINK_OPEN,
};
use crate::model::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Student,
    Teacher,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyContext {
    pub role: Role,
    pub dialect: Dialect,
    pub tokens: Vec<TokenId>,
}

/// The fixed 4-token language-control prefix placed after think-open.
pub fn think_prefix(vocab: &Vocab, dialect: Dialect) -> Result<Vec<TokenId>, CorpusError> {
    vocab.think_prefix(dialect)
}

/// Rejects empty spans and spans carrying words of any other dialect.
fn check_span(vocab: &Vocab, span: &[TokenId], dialect: Dialect, what: &str) -> Result<(), CorpusError> {
    if span.is_empty() {
        return Err(CorpusError::Format(format!("missing {what}")));
    }
    for &id in span {
        vocab.decode(id)?;
        if let Some(owner) = vocab.dialect_of(id) {
            if owner != dialect {
                return Err(CorpusError::Format(format!(
                    "{what} for {dialect} contains a {owner} word"
                )));
            }
        }
    }
    Ok(())
}

/// `[bos, x_L, think-open, prefix]`
pub fn build_student_context(vocab: &Vocab, dialect: Dialect, x_low: &[TokenId]) -> Result<PolicyContext, CorpusError> {
    vocab.check_dialect(dialect)?;
    check_span(vocab, x_low, dialect, "rendering")?;
    let mut tokens = Vec::with_capacity(x_low.len() + 6);
    tokens.push(BOS);
    tokens.extend_from_slice(x_low);
    tokens.push(THINK_OPEN);
    tokens.extend(think_prefix(vocab, dialect)?);
    Ok(PolicyContext {
        role: Role::Student,
        dialect,
        tokens,
    })
}

/// `[bos, x_L, sep, x_H, sep, y*, sep, think-open, prefix]`
pub fn build_teacher_context(
    vocab: &Vocab,
    dialect: Dialect,
    x_low: &[TokenId],
    x_high: &[TokenId],
    y_star: &[TokenId],
) -> Result<PolicyContext, CorpusError> {
    vocab.check_dialect(dialect)?;
    check_span(vocab, x_low, dialect, "rendering")?;
    check_span(vocab, x_high, Dialect::HIGH, "high-resource rendering")?;
    check_span(vocab, y_star, Dialect::HIGH, "reference solution")?;
    let mut tokens = Vec::with_capacity(x_low.len() + x_high.len() + y_star.len() + 9);
    tokens.push(BOS);
    tokens.extend_from_slice(x_low);
    tokens.push(SEP);
    tokens.extend_from_slice(x_high);
    tokens.push(SEP);
    tokens.extend_from_slice(y_star);
    tokens.push(SEP);
    tokens.push(THINK_OPEN);
    tokens.extend(think_prefix(vocab, dialect)?);
    Ok(PolicyContext {
        role: Role::Teacher,
        dialect,
        tokens,
    })
}

pub fn student_context_for(vocab: &Vocab, problem: &Problem, dialect: Dialect) -> Result<PolicyContext, CorpusError> {
    build_student_context(vocab, dialect, &render(vocab, problem, dialect)?)
}

pub fn teacher_context_for(vocab: &Vocab, problem: &Problem, dialect: Dialect) -> Result<PolicyContext, CorpusError> {
    build_teacher_context(
        vocab,
        dialect,
        &render(vocab, problem, dialect)?,
        &render(vocab, problem, Dialect::HIGH)?,
        &gen_reference_trace(vocab, problem),
    )
}

impl DistillRecord {
    pub fn student_context(&self, vocab: &Vocab) -> Result<PolicyContext, CorpusError> {
        build_student_context(vocab, vocab.parse_dialect(&self.dialect)?, &self.x_low)
    }

    pub fn teacher_context(&self, vocab: &Vocab) -> Result<PolicyContext, CorpusError> {
        build_teacher_context(
            vocab,
            vocab.parse_dialect(&self.dialect)?,
            &self.x_low,
            &self.x_high,
            &self.y_star,
        )
    }
}
