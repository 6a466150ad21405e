//! Synthetic bilingual arithmetic corpus and its tokenizer.
//!
//! Problems are chains like `3 + 4 * 2`, evaluated strictly left to right
//! (so that one is 14). Every dialect renders the same chain with its own
//! words; digits and operators are shared.

mod problem;
mod records;
mod vocab;
#[cfg(test)]
mod tests;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::seeded_rng;
use crate::policies;

pub use problem::{
    answer_tail, evaluate_chain, gen_problem, gen_reference_trace, parse_rendering, reasoning_trace,
    render, Difficulty, ParsedRendering, Problem, Step,
};
pub use records::{
    parse_record, read_jsonl, write_jsonl, DistillRecord, DocKind, EvalRecord, PretrainRecord,
};
pub use vocab::{
    Dialect, DialectEntry, Operator, Operators, Specials, Token, Vocab, VocabFile, WordSlot,
    BOS, BOX_CLOSE, BOX_OPEN, EOS, EQUALS, MINUS, PLUS, PREFIX_LEN, SEP, SUBJECTS, THINK_CLOSE,
    THINK_OPEN, TIMES, VERBS, WORDS_PER_DIALECT,
};

pub const PRETRAIN_FILE: &str = "pretrain.jsonl";
pub const DISTILL_FILE: &str = "distill.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown dialect {0:?}")]
    UnknownDialect(String),
    #[error("cannot encode {0}")]
    Encode(String),
    #[error("unknown token id {0}")]
    Decode(u32),
    #[error("{0}")]
    Format(String),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("could not draw {0} distinct problems; widen the difficulty")]
    Exhausted(usize),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seed: u64,
    /// Number of low-resource dialects K.
    pub n_dialects: u8,
    /// `H` documents with full worked solutions.
    pub pretrain_high: usize,
    /// Answer-only documents per low-resource dialect.
    pub pretrain_low_per_dialect: usize,
    /// Teacher-layout documents per low-resource dialect; 0 disables them.
    pub privileged_per_dialect: usize,
    /// Problems in the distillation set, rendered in every dialect.
    pub distill_size: usize,
    /// Held-out problems, rendered in every dialect including `H`.
    pub eval_size: usize,
    pub difficulty: Difficulty,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_dialects: 3,
            pretrain_high: 8000,
            pretrain_low_per_dialect: 200,
            privileged_per_dialect: 200,
            distill_size: 500,
            eval_size: 250,
            difficulty: Difficulty::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n_dialects == 0 || self.n_dialects > 32 {
            return Err(CorpusError::Spec("n_dialects must be in 1..=32".into()));
        }
        if self.pretrain_high == 0 || self.pretrain_low_per_dialect == 0 || self.distill_size == 0 || self.eval_size == 0 {
            return Err(CorpusError::Spec("counts must be positive".into()));
        }
        self.difficulty.validate()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.n_dialects)
    }
}

/// All splits of a generated corpus, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub pretrain: Vec<PretrainRecord>,
    pub distill: Vec<DistillRecord>,
    pub eval: Vec<EvalRecord>,
}

/// Draws problems whose chain differs from every chain drawn before.
struct ProblemSource<'a> {
    rng: crate::diffcore::Rng,
    difficulty: &'a Difficulty,
    seen: HashSet<(Vec<i64>, Vec<Operator>)>,
    next_id: u64,
}

impl ProblemSource<'_> {
    fn draw(&mut self) -> Result<Problem, CorpusError> {
        for _ in 0..10_000 {
            let p = gen_problem(&mut self.rng, self.difficulty, self.next_id);
            if self.seen.insert(p.structure()) {
                self.next_id += 1;
                return Ok(p);
            }
        }
        Err(CorpusError::Exhausted(self.seen.len() + 1))
    }

    fn draw_n(&mut self, n: usize) -> Result<Vec<Problem>, CorpusError> {
        (0..n).map(|_| self.draw()).collect()
    }
}

/// Generates the corpus in memory; a pure function of `spec`.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let vocab = spec.vocab();
    let mut src = ProblemSource {
        rng: seeded_rng(spec.seed),
        difficulty: &spec.difficulty,
        seen: HashSet::new(),
        next_id: 0,
    };
    let h = Dialect::HIGH;
    let mut pretrain = Vec::new();
    for p in src.draw_n(spec.pretrain_high)? {
        let ctx = policies::build_student_context(&vocab, h, &render(&vocab, &p, h)?)?;
        let mut tokens = ctx.tokens;
        tokens.extend(reasoning_trace(&vocab, &p, h)?);
        pretrain.push(PretrainRecord {
            id: p.id,
            dialect: h.name(),
            kind: DocKind::Trace,
            tokens,
        });
    }
    for d in vocab.low_dialects() {
        for p in src.draw_n(spec.pretrain_low_per_dialect)? {
            let ctx = policies::build_student_context(&vocab, d, &render(&vocab, &p, d)?)?;
            let mut tokens = ctx.tokens;
            tokens.extend(answer_tail(p.answer));
            pretrain.push(PretrainRecord {
                id: p.id,
                dialect: d.name(),
                kind: DocKind::Answer,
                tokens,
            });
        }
    }
    for d in vocab.low_dialects() {
        for p in src.draw_n(spec.privileged_per_dialect)? {
            let ctx = policies::build_teacher_context(
                &vocab,
                d,
                &render(&vocab, &p, d)?,
                &render(&vocab, &p, h)?,
                &gen_reference_trace(&vocab, &p),
            )?;
            let mut tokens = ctx.tokens;
            tokens.extend(reasoning_trace(&vocab, &p, d)?);
            pretrain.push(PretrainRecord {
                id: p.id,
                dialect: d.name(),
                kind: DocKind::Privileged,
                tokens,
            });
        }
    }
    let distill_problems = src.draw_n(spec.distill_size)?;
    let mut distill = Vec::new();
    for d in vocab.low_dialects() {
        for p in &distill_problems {
            distill.push(DistillRecord {
                id: p.id,
                dialect: d.name(),
                x_low: render(&vocab, p, d)?,
                x_high: render(&vocab, p, h)?,
                y_star: gen_reference_trace(&vocab, p),
                answer: p.answer,
            });
        }
    }
    let eval_problems = src.draw_n(spec.eval_size)?;
    let mut eval = Vec::new();
    for d in vocab.dialects() {
        for p in &eval_problems {
            eval.push(EvalRecord {
                id: p.id,
                dialect: d.name(),
                x_low: render(&vocab, p, d)?,
                answer: p.answer,
            });
        }
    }
    Ok(Corpus {
        vocab,
        pretrain,
        distill,
        eval,
    })
}

/// Writes `pretrain.jsonl`, `distill.jsonl`, `eval.jsonl` and `vocab.json`
/// into `out_dir` and returns their paths in that order.
pub fn build_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let corpus = generate_corpus(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| CorpusError::io(out_dir, e))?;
    let paths: Vec<PathBuf> = [PRETRAIN_FILE, DISTILL_FILE, EVAL_FILE, VOCAB_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_jsonl(&paths[0], &corpus.pretrain)?;
    write_jsonl(&paths[1], &corpus.distill)?;
    write_jsonl(&paths[2], &corpus.eval)?;
    let vocab_json = serde_json::to_string_pretty(&corpus.vocab.to_file()).expect("vocab serializes") + "\n";
    std::fs::write(&paths[3], vocab_json).map_err(|e| CorpusError::io(&paths[3], e))?;
    Ok(paths)
}

pub fn load_vocab(path: &Path) -> Result<Vocab, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let file: VocabFile = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Vocab::from_file(&file)
}
