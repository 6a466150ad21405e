//! Answer verification and the evaluation metrics.

mod correlation;
mod metrics;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dialect, EvalRecord, Vocab, EOS};
use crate::diffcore::derive_seed;
use crate::model::{sample_sequence, Model, ModelError, SamplingParams, TokenId};
use crate::policies::build_student_context;

pub use correlation::{
    average_ranks, correlation, correlation_report, CorrelationKind, CorrelationReport,
    TrajectoryCorrelation,
};
pub use metrics::{
    extract_boxed, format_rate, is_correct, language_consistency, pass_at_k_direct,
    pass_at_k_unbiased, pass_rate_percent, repeat_rate,
};

/// n-gram orders reported in metrics records.
pub const REPEAT_ORDERS: [usize; 5] = [2, 3, 4, 5, 6];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("correlation undefined: a series has zero variance")]
    UndefinedCorrelation,
    #[error("{path}:{line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    pub dialect: String,
    pub step: u64,
    pub budget: usize,
    pub k: usize,
    pub pass_at_k_pct: f64,
    pub format_rate_pct: f64,
    pub repeat2: f64,
    pub repeat3: f64,
    pub repeat4: f64,
    pub repeat5: f64,
    pub repeat6: f64,
    pub lang_consistency: f64,
    pub mean_gen_len: f64,
}

impl MetricsRecord {
    pub fn repeat(&self, n: usize) -> Option<f64> {
        match n {
            2 => Some(self.repeat2),
            3 => Some(self.repeat3),
            4 => Some(self.repeat4),
            5 => Some(self.repeat5),
            6 => Some(self.repeat6),
            _ => None,
        }
    }
}

/// One dumped generation, enough to re-score a record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub problem_id: u64,
    pub sample_idx: usize,
    pub seed: u64,
    pub budget: usize,
    pub tokens: Vec<TokenId>,
    pub boxed: Option<i64>,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub budgets: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 12,
            temperature: 1.0,
            top_p: 0.95,
            budgets: vec![64, 128, 256],
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k == 0 {
            return Err(EvalError::Param("k must be at least 1".into()));
        }
        if self.budgets.is_empty() || self.budgets[0] == 0 || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::Param("budgets must be nonempty, positive and strictly ascending".into()));
        }
        self.sampling(1).validate()?;
        Ok(())
    }

    fn sampling(&self, budget: usize) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            top_p: self.top_p,
            budget,
            stop_token: EOS,
        }
    }
}

/// Identifies what is being evaluated; copied into every record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunLabel {
    pub run_id: String,
    pub method: String,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// One record per budget, in budget order.
    pub records: Vec<MetricsRecord>,
    /// Every generation at every budget.
    pub generations: Vec<GenerationRecord>,
}

/// Seed of sample `sample_idx` for `problem_id` in `dialect`. Independent of
/// the budget, so a shorter budget sees a prefix of the same generation.
pub fn sample_seed(seed: u64, dialect: Dialect, problem_id: u64, sample_idx: usize) -> u64 {
    derive_seed(seed, &[dialect.0 as u64, problem_id, sample_idx as u64])
}

/// Samples `k` generations per problem of `dialect` and scores them at every
/// budget. Each sample is drawn once at the largest budget; a smaller budget
/// sees its prefix, which is exactly what sampling with that budget and the
/// same seed would produce.
pub fn evaluate(
    model: &Model,
    vocab: &Vocab,
    set: &[EvalRecord],
    dialect: Dialect,
    config: &EvalConfig,
    label: &RunLabel,
) -> Result<Evaluation, EvalError> {
    config.validate()?;
    let name = dialect.name();
    let problems: Vec<&EvalRecord> = set.iter().filter(|r| r.dialect == name).collect();
    if problems.is_empty() {
        return Err(EvalError::Protocol(format!("no evaluation problems for {name}")));
    }
    let max_budget = *config.budgets.last().unwrap();
    let jobs: Vec<(usize, usize)> = (0..problems.len())
        .flat_map(|p| (0..config.k).map(move |s| (p, s)))
        .collect();
    let contexts = problems
        .iter()
        .map(|r| build_student_context(vocab, dialect, &r.x_low).map(|c| c.tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let params = config.sampling(max_budget);
    let samples = jobs
        .par_iter()
        .map(|&(p, s)| {
            let seed = sample_seed(config.seed, dialect, problems[p].id, s);
            sample_sequence(model, &contexts[p], &params, seed).map(|r| (seed, r.tokens))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut records = Vec::new();
    let mut generations = Vec::new();
    for &budget in &config.budgets {
        let mut solved = Vec::with_capacity(problems.len());
        let mut texts: Vec<&[TokenId]> = Vec::with_capacity(samples.len());
        let mut repeats = [0.0; REPEAT_ORDERS.len()];
        let mut consistency = 0.0;
        for (p, chunk) in samples.chunks(config.k).enumerate() {
            let mut outcomes = Vec::with_capacity(config.k);
            for (s, (seed, tokens)) in chunk.iter().enumerate() {
                let gen = &tokens[..tokens.len().min(budget)];
                let boxed = extract_boxed(gen);
                let correct = boxed == Some(problems[p].answer);
                outcomes.push(correct);
                for (acc, &n) in repeats.iter_mut().zip(&REPEAT_ORDERS) {
                    *acc += repeat_rate(gen, n)?;
                }
                consistency += language_consistency(vocab, gen, dialect);
                texts.push(gen);
                generations.push(GenerationRecord {
                    problem_id: problems[p].id,
                    sample_idx: s,
                    seed: *seed,
                    budget,
                    tokens: gen.to_vec(),
                    boxed,
                    correct,
                });
            }
            solved.push(pass_at_k_direct(&outcomes, config.k)?);
        }
        let total = texts.len() as f64;
        records.push(MetricsRecord {
            run_id: label.run_id.clone(),
            method: label.method.clone(),
            dialect: name.clone(),
            step: label.step,
            budget,
            k: config.k,
            pass_at_k_pct: pass_rate_percent(&solved),
            format_rate_pct: format_rate(&texts),
            repeat2: repeats[0] / total,
            repeat3: repeats[1] / total,
            repeat4: repeats[2] / total,
            repeat5: repeats[3] / total,
            repeat6: repeats[4] / total,
            lang_consistency: consistency / total,
            mean_gen_len: texts.iter().map(|t| t.len()).sum::<usize>() as f64 / total,
        });
    }
    Ok(Evaluation { records, generations })
}

/// Recomputes pass@k (percent) at `budget` from dumped generations, using
/// only their tokens and the gold answers.
pub fn rescore_pass_at_k(
    generations: &[GenerationRecord],
    answers: &HashMap<u64, i64>,
    budget: usize,
    k: usize,
) -> Result<f64, EvalError> {
    let mut by_problem: HashMap<u64, Vec<bool>> = HashMap::new();
    for g in generations.iter().filter(|g| g.budget == budget) {
        let gold = answers
            .get(&g.problem_id)
            .ok_or_else(|| EvalError::Protocol(format!("no gold answer for problem {}", g.problem_id)))?;
        by_problem.entry(g.problem_id).or_default().push(is_correct(&g.tokens, *gold));
    }
    let solved = by_problem
        .values()
        .map(|o| pass_at_k_direct(o, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pass_rate_percent(&solved))
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord], append: bool) -> Result<(), EvalError> {
    let io = |e: std::io::Error| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let exists = path.exists() && std::fs::metadata(path).map_err(io)?.len() > 0;
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(!(append && exists))
        .from_writer(file);
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(io)
}

fn csv_error(path: &Path, e: csv::Error) -> EvalError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    EvalError::Csv {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    }
}

/// Parses metrics CSV text; errors carry the 1-based line number.
pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<Vec<MetricsRecord>, EvalError> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: MetricsRecord = row.map_err(|e| csv_error(path, e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_metrics_csv(&text, path)
}
