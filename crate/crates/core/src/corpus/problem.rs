use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::model::TokenId;

use super::vocab::{
    Dialect, Operator, Token, Vocab, WordSlot, BOX_CLOSE, BOX_OPEN, EOS, EQUALS, SUBJECTS,
    THINK_CLOSE, VERBS,
};
use super::CorpusError;

/// Operand range, chain length and the bound every intermediate value must
/// respect. Intermediates are kept in `[0, value_max]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Difficulty {
    pub operand_min: i64,
    pub operand_max: i64,
    pub min_ops: usize,
    pub max_ops: usize,
    pub value_max: i64,
}

impl Default for Difficulty {
    fn default() -> Self {
        Self {
            operand_min: 1,
            operand_max: 9,
            min_ops: 2,
            max_ops: 4,
            value_max: 99,
        }
    }
}

impl Difficulty {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Spec(format!("difficulty: {m}")));
        if self.operand_min < 0 || self.operand_min > self.operand_max {
            return bad("need 0 <= operand_min <= operand_max");
        }
        if self.operand_max > 999 || self.value_max > 999_999 {
            return bad("values too large");
        }
        if self.min_ops == 0 || self.min_ops > self.max_ops || self.max_ops > 8 {
            return bad("need 1 <= min_ops <= max_ops <= 8");
        }
        // guarantees some operator keeps every intermediate in range
        if self.value_max < 2 * self.operand_max {
            return bad("value_max must be at least 2 * operand_max");
        }
        Ok(())
    }
}

/// One arithmetic word problem. The chain is evaluated strictly left to
/// right with no operator precedence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Problem {
    pub id: u64,
    pub operands: Vec<i64>,
    pub ops: Vec<Operator>,
    pub subject: u8,
    pub verb: u8,
    pub answer: i64,
}

/// One line of a worked solution: `lhs op rhs = result`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub lhs: i64,
    pub op: Operator,
    pub rhs: i64,
    pub result: i64,
}

/// Left-associative value of a chain, `None` on overflow or shape mismatch.
pub fn evaluate_chain(operands: &[i64], ops: &[Operator]) -> Option<i64> {
    if operands.len() != ops.len() + 1 {
        return None;
    }
    let mut acc = operands[0];
    for (op, &b) in ops.iter().zip(&operands[1..]) {
        acc = match op {
            Operator::Plus => acc.checked_add(b)?,
            Operator::Minus => acc.checked_sub(b)?,
            Operator::Times => acc.checked_mul(b)?,
        };
    }
    Some(acc)
}

impl Problem {
    pub fn new(id: u64, operands: Vec<i64>, ops: Vec<Operator>, subject: u8, verb: u8) -> Result<Self, CorpusError> {
        if ops.is_empty() || subject >= SUBJECTS || verb >= VERBS || operands.iter().any(|&v| v < 0) {
            return Err(CorpusError::Spec("malformed problem".into()));
        }
        let answer = evaluate_chain(&operands, &ops).ok_or_else(|| CorpusError::Spec("malformed chain".into()))?;
        Ok(Self {
            id,
            operands,
            ops,
            subject,
            verb,
            answer,
        })
    }

    pub fn steps(&self) -> Vec<Step> {
        let mut acc = self.operands[0];
        self.ops
            .iter()
            .zip(&self.operands[1..])
            .map(|(&op, &rhs)| {
                let result = op.apply(acc, rhs);
                let step = Step { lhs: acc, op, rhs, result };
                acc = result;
                step
            })
            .collect()
    }

    /// Operands and operators only; identical in every dialect.
    pub fn expression(&self) -> Vec<TokenId> {
        let mut out = Vocab::number(self.operands[0]);
        for (op, &b) in self.ops.iter().zip(&self.operands[1..]) {
            out.push(op.token());
            out.extend(Vocab::number(b));
        }
        out
    }

    /// Structural key: two problems with the same key pose the same sum.
    pub fn structure(&self) -> (Vec<i64>, Vec<Operator>) {
        (self.operands.clone(), self.ops.clone())
    }
}

pub fn gen_problem(rng: &mut Rng, difficulty: &Difficulty, id: u64) -> Problem {
    let d = difficulty;
    let span = (d.operand_max - d.operand_min + 1) as u64;
    let n_ops = d.min_ops + rng.below((d.max_ops - d.min_ops + 1) as u64) as usize;
    let mut operands = vec![d.operand_min + rng.below(span) as i64];
    let mut ops = Vec::with_capacity(n_ops);
    let mut acc = operands[0];
    for _ in 0..n_ops {
        // pick an operator that admits at least one operand, then a uniform
        // operand among those keeping the value in range
        loop {
            let op = Operator::ALL[rng.below(3) as usize];
            let valid: Vec<i64> = (d.operand_min..=d.operand_max)
                .filter(|&b| (0..=d.value_max).contains(&op.apply(acc, b)))
                .collect();
            if valid.is_empty() {
                continue;
            }
            let b = valid[rng.below(valid.len() as u64) as usize];
            acc = op.apply(acc, b);
            ops.push(op);
            operands.push(b);
            break;
        }
    }
    let subject = rng.below(SUBJECTS as u64) as u8;
    let verb = rng.below(VERBS as u64) as u8;
    Problem::new(id, operands, ops, subject, verb).expect("generator respects its own bounds")
}

/// Surface form of `problem` in `dialect`. `H` puts subject and verb before
/// the expression; low-resource dialects put them after it.
pub fn render(vocab: &Vocab, problem: &Problem, dialect: Dialect) -> Result<Vec<TokenId>, CorpusError> {
    vocab.check_dialect(dialect)?;
    let subject = vocab.word(dialect, WordSlot::Subject(problem.subject));
    let verb = vocab.word(dialect, WordSlot::Verb(problem.verb));
    let question = vocab.word(dialect, WordSlot::Question);
    let expr = problem.expression();
    let mut out = Vec::with_capacity(expr.len() + 3);
    if dialect.is_high() {
        out.extend([subject, verb]);
        out.extend(expr);
    } else {
        out.extend(expr);
        out.extend([subject, verb]);
    }
    out.push(question);
    Ok(out)
}

/// Boxed-answer tail shared by every completion.
pub fn answer_tail(answer: i64) -> Vec<TokenId> {
    let mut out = vec![THINK_CLOSE, BOX_OPEN];
    out.extend(Vocab::number(answer));
    out.extend([BOX_CLOSE, EOS]);
    out
}

/// Worked solution in `dialect`: one step per operation, each closed by the
/// dialect's step word, then the boxed answer.
pub fn reasoning_trace(vocab: &Vocab, problem: &Problem, dialect: Dialect) -> Result<Vec<TokenId>, CorpusError> {
    vocab.check_dialect(dialect)?;
    let step_end = vocab.word(dialect, WordSlot::StepEnd);
    let mut out = Vec::new();
    for s in problem.steps() {
        out.extend(Vocab::number(s.lhs));
        out.push(s.op.token());
        out.extend(Vocab::number(s.rhs));
        out.push(EQUALS);
        out.extend(Vocab::number(s.result));
        out.push(step_end);
    }
    out.extend(answer_tail(problem.answer));
    Ok(out)
}

/// The reference solution `y*`, always in `H`.
pub fn gen_reference_trace(vocab: &Vocab, problem: &Problem) -> Vec<TokenId> {
    reasoning_trace(vocab, problem, Dialect::HIGH).expect("H always exists")
}

/// Structure recovered from a rendering by the template grammar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedRendering {
    pub dialect: Dialect,
    pub operands: Vec<i64>,
    pub ops: Vec<Operator>,
    pub subject: u8,
    pub verb: u8,
}

/// Inverse of [`render`].
pub fn parse_rendering(vocab: &Vocab, ids: &[TokenId]) -> Result<ParsedRendering, CorpusError> {
    let bad = || CorpusError::Format("rendering does not match the template".into());
    let toks = vocab.decode_all(ids)?;
    if toks.len() < 6 {
        return Err(bad());
    }
    let (dialect, question_slot) = match toks[toks.len() - 1] {
        Token::Word { dialect, slot } => (dialect, slot),
        _ => return Err(bad()),
    };
    if question_slot != WordSlot::Question {
        return Err(bad());
    }
    let body = &toks[..toks.len() - 1];
    let (words, expr) = if dialect.is_high() {
        (&body[..2], &body[2..])
    } else {
        (&body[body.len() - 2..], &body[..body.len() - 2])
    };
    let word = |t: &Token| match *t {
        Token::Word { dialect: d, slot } if d == dialect => Some(slot),
        _ => None,
    };
    let subject = match word(&words[0]) {
        Some(WordSlot::Subject(s)) => s,
        _ => return Err(bad()),
    };
    let verb = match word(&words[1]) {
        Some(WordSlot::Verb(v)) => v,
        _ => return Err(bad()),
    };
    let (operands, ops) = parse_expression(expr).ok_or_else(bad)?;
    Ok(ParsedRendering {
        dialect,
        operands,
        ops,
        subject,
        verb,
    })
}

fn parse_expression(toks: &[Token]) -> Option<(Vec<i64>, Vec<Operator>)> {
    let mut operands = Vec::new();
    let mut ops = Vec::new();
    let mut current: Option<i64> = None;
    for t in toks {
        match *t {
            Token::Digit(d) => {
                // no leading zeros, matching the renderer
                if current == Some(0) {
                    return None;
                }
                current = Some(current.unwrap_or(0).checked_mul(10)?.checked_add(d as i64)?);
            }
            Token::Op(op) => {
                operands.push(current.take()?);
                ops.push(op);
            }
            _ => return None,
        }
    }
    operands.push(current?);
    (!ops.is_empty()).then_some((operands, ops))
}
