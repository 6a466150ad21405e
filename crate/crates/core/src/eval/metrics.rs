use std::collections::HashSet;

use crate::corpus::{Dialect, Vocab, BOX_CLOSE, BOX_OPEN, MINUS, THINK_CLOSE};
use crate::model::TokenId;

use super::EvalError;

/// Integer inside the last `box-open .. box-close` span that has no other
/// box marker inside it. The content must be an optional minus followed by
/// digits; anything else yields `None`.
pub fn extract_boxed(tokens: &[TokenId]) -> Option<i64> {
    let mut open: Option<usize> = None;
    let mut last: Option<(usize, usize)> = None;
    for (i, &t) in tokens.iter().enumerate() {
        if t == BOX_OPEN {
            open = Some(i);
        } else if t == BOX_CLOSE {
            if let Some(o) = open.take() {
                last = Some((o + 1, i));
            }
        }
    }
    let (start, end) = last?;
    parse_integer(&tokens[start..end])
}

fn parse_integer(span: &[TokenId]) -> Option<i64> {
    let (negative, digits) = match span.split_first() {
        Some((&MINUS, rest)) => (true, rest),
        _ => (false, span),
    };
    if digits.is_empty() {
        return None;
    }
    let mut value: i64 = 0;
    for &t in digits {
        let d = Vocab::digit_value(t)? as i64;
        value = value.checked_mul(10)?.checked_add(d)?;
    }
    Some(if negative { -value } else { value })
}

/// Whether the boxed answer of `tokens` equals `gold`.
pub fn is_correct(tokens: &[TokenId], gold: i64) -> bool {
    extract_boxed(tokens) == Some(gold)
}

/// 1 when any of the `k` outcomes succeeded.
pub fn pass_at_k_direct(outcomes: &[bool], k: usize) -> Result<bool, EvalError> {
    if outcomes.len() != k {
        return Err(EvalError::Protocol(format!(
            "expected {k} outcomes, got {}",
            outcomes.len()
        )));
    }
    Ok(outcomes.iter().any(|&o| o))
}

/// Dataset-level pass@k in percent from per-problem indicators.
pub fn pass_rate_percent(per_problem: &[bool]) -> f64 {
    if per_problem.is_empty() {
        return 0.0;
    }
    100.0 * per_problem.iter().filter(|&&p| p).count() as f64 / per_problem.len() as f64
}

/// Unbiased estimator `1 − C(n−c, k) / C(n, k)`, evaluated as a sum of logs.
pub fn pass_at_k_unbiased(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if c > n || k > n || k == 0 {
        return Err(EvalError::Param(format!("need 0 <= c <= n, 1 <= k <= n; got n={n} c={c} k={k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    // C(n−c, k)/C(n, k) = Π_{i=n−c+1..n} (1 − k/i)
    let log_ratio: f64 = (n - c + 1..=n).map(|i| (1.0 - k as f64 / i as f64).ln()).sum();
    Ok(1.0 - log_ratio.exp())
}

/// Percent of samples with a parsable boxed integer.
pub fn format_rate<T: AsRef<[TokenId]>>(samples: &[T]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let ok = samples.iter().filter(|s| extract_boxed(s.as_ref()).is_some()).count();
    100.0 * ok as f64 / samples.len() as f64
}

/// `1 − unique/total` over contiguous n-grams; 0 when fewer than `n` tokens.
pub fn repeat_rate(tokens: &[TokenId], n: usize) -> Result<f64, EvalError> {
    if n == 0 {
        return Err(EvalError::Param("n-gram order must be at least 1".into()));
    }
    if tokens.len() < n {
        return Ok(0.0);
    }
    let grams: Vec<&[TokenId]> = tokens.windows(n).collect();
    let unique: HashSet<&[TokenId]> = grams.iter().copied().collect();
    Ok(1.0 - unique.len() as f64 / grams.len() as f64)
}

/// Share of dialect words in the think span (everything before the first
/// think-close) that belong to `dialect`. 1.0 when there are none.
pub fn language_consistency(vocab: &Vocab, generated: &[TokenId], dialect: Dialect) -> f64 {
    let end = generated.iter().position(|&t| t == THINK_CLOSE).unwrap_or(generated.len());
    let owners: Vec<Dialect> = generated[..end].iter().filter_map(|&t| vocab.dialect_of(t)).collect();
    if owners.is_empty() {
        return 1.0;
    }
    owners.iter().filter(|&&d| d == dialect).count() as f64 / owners.len() as f64
}
