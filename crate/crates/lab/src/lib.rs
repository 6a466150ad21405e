//! Multi-seed sweeps: one base model, then COPSD and GRPO for every
//! low-resource dialect and seed, evaluated along each trajectory.

use std::time::Instant;

use copsd::corpus::{generate_corpus, Corpus, CorpusSpec, Dialect};
use copsd::distill::{train_copsd, DistillConfig, DistillError, DistillStepLog};
use copsd::eval::{evaluate, EvalConfig, EvalError, MetricsRecord, RunLabel};
use copsd::grpo::{train_grpo, GrpoConfig, GrpoStepLog};
use copsd::model::Model;
use copsd_cli::pretrain::{pretrain, PretrainConfig, PretrainError};

#[derive(Debug)]
pub enum LabError {
    Corpus(copsd::corpus::CorpusError),
    Pretrain(PretrainError),
    Distill(DistillError),
    Eval(EvalError),
}

impl std::fmt::Display for LabError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabError::Corpus(e) => write!(f, "corpus: {e}"),
            LabError::Pretrain(e) => write!(f, "pretrain: {e}"),
            LabError::Distill(e) => write!(f, "training: {e}"),
            LabError::Eval(e) => write!(f, "eval: {e}"),
        }
    }
}

impl std::error::Error for LabError {}

impl From<copsd::corpus::CorpusError> for LabError {
    fn from(e: copsd::corpus::CorpusError) -> Self {
        LabError::Corpus(e)
    }
}
impl From<PretrainError> for LabError {
    fn from(e: PretrainError) -> Self {
        LabError::Pretrain(e)
    }
}
impl From<DistillError> for LabError {
    fn from(e: DistillError) -> Self {
        LabError::Distill(e)
    }
}
impl From<EvalError> for LabError {
    fn from(e: EvalError) -> Self {
        LabError::Eval(e)
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub corpus: CorpusSpec,
    pub pretrain: PretrainConfig,
    pub distill: DistillConfig,
    pub grpo: GrpoConfig,
    /// Budgets and k; the seed is replaced by the sweep seed.
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    /// Trajectories are scored at the smallest budget every this many steps.
    pub distill_eval_every: u64,
    pub grpo_eval_every: u64,
}

impl SweepConfig {
    /// The desk profile: default corpus and base model, COPSD and GRPO for
    /// 200 steps each at learning rate 1e-3.
    pub fn fast() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            pretrain: PretrainConfig::default(),
            distill: DistillConfig {
                learning_rate: 1e-3,
                total_steps: 200,
                ..DistillConfig::default()
            },
            grpo: GrpoConfig {
                learning_rate: 1e-3,
                total_steps: 200,
                ..GrpoConfig::default()
            },
            eval: EvalConfig::default(),
            seeds: vec![0, 1, 2],
            distill_eval_every: 25,
            grpo_eval_every: 50,
        }
    }
}

/// One trained trajectory and its evaluation.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub method: String,
    pub seed: u64,
    pub dialect: String,
    /// Smallest-budget records along the run plus every budget at the
    /// selected step.
    pub records: Vec<MetricsRecord>,
    pub best_step: u64,
    pub distill_log: Vec<DistillStepLog>,
    pub grpo_log: Vec<GrpoStepLog>,
    pub seconds: f64,
}

impl Trajectory {
    pub fn at(&self, step: u64, budget: usize) -> Option<&MetricsRecord> {
        self.records.iter().find(|r| r.step == step && r.budget == budget)
    }

    pub fn best(&self, budget: usize) -> &MetricsRecord {
        self.at(self.best_step, budget).expect("selected step is evaluated at every budget")
    }
}

pub struct Sweep {
    pub corpus: Corpus,
    pub base: Model,
    pub pretrain_seconds: f64,
    /// Base model at every dialect, budget and seed.
    pub base_records: Vec<MetricsRecord>,
    pub trajectories: Vec<Trajectory>,
}

impl Sweep {
    pub fn base(&self, seed: u64, dialect: &str, budget: usize) -> &MetricsRecord {
        self.base_records
            .iter()
            .find(|r| r.run_id == run_id(seed) && r.dialect == dialect && r.budget == budget)
            .expect("base evaluated everywhere")
    }

    pub fn trajectory(&self, method: &str, seed: u64, dialect: &str) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.method == method && t.seed == seed && t.dialect == dialect)
    }

    pub fn all_records(&self) -> Vec<MetricsRecord> {
        let mut out = self.base_records.clone();
        for t in &self.trajectories {
            out.extend(t.records.iter().cloned());
        }
        out
    }
}

pub fn run_id(seed: u64) -> String {
    format!("seed{seed}")
}

fn eval_at(
    model: &Model,
    corpus: &Corpus,
    dialect: Dialect,
    config: &EvalConfig,
    budgets: &[usize],
    method: &str,
    seed: u64,
    step: u64,
) -> Result<Vec<MetricsRecord>, LabError> {
    let cfg = EvalConfig {
        budgets: budgets.to_vec(),
        seed,
        ..config.clone()
    };
    let label = RunLabel {
        run_id: run_id(seed),
        method: method.into(),
        step,
    };
    Ok(evaluate(model, &corpus.vocab, &corpus.eval, dialect, &cfg, &label)?.records)
}

/// Picks the best smallest-budget step (earliest on ties) and adds its
/// records at the remaining budgets.
fn finish_trajectory(
    evaluated: Vec<(u64, Model, MetricsRecord)>,
    corpus: &Corpus,
    dialect: Dialect,
    config: &EvalConfig,
    method: &str,
    seed: u64,
) -> Result<(Vec<MetricsRecord>, u64), LabError> {
    let mut best = 0;
    for (i, (_, _, r)) in evaluated.iter().enumerate() {
        if r.pass_at_k_pct > evaluated[best].2.pass_at_k_pct {
            best = i;
        }
    }
    let (step, model, _) = &evaluated[best];
    let full = eval_at(model, corpus, dialect, config, &config.budgets, method, seed, *step)?;
    let mut records: Vec<MetricsRecord> = evaluated.iter().filter(|e| e.0 != *step).map(|e| e.2.clone()).collect();
    records.extend(full);
    records.sort_by_key(|r| (r.step, r.budget));
    Ok((records, *step))
}

/// Runs the whole sweep. `progress` receives one line per finished stage.
pub fn run_sweep(config: &SweepConfig, mut progress: impl FnMut(&str)) -> Result<Sweep, LabError> {
    let corpus = generate_corpus(&config.corpus)?;
    let t = Instant::now();
    let base = pretrain(&corpus.pretrain, &config.pretrain)?.model;
    let pretrain_seconds = t.elapsed().as_secs_f64();
    progress(&format!("pretrained base in {pretrain_seconds:.0}s"));
    let smallest = config.eval.budgets[0];

    let mut base_records = Vec::new();
    for &seed in &config.seeds {
        for d in corpus.vocab.dialects() {
            base_records.extend(eval_at(&base, &corpus, d, &config.eval, &config.eval.budgets, "base", seed, 0)?);
        }
    }
    progress("evaluated base");

    let mut trajectories = Vec::new();
    for &seed in &config.seeds {
        for d in corpus.vocab.low_dialects() {
            // COPSD
            let t = Instant::now();
            let cfg = DistillConfig {
                seed,
                ..config.distill.clone()
            };
            let mut evaluated = Vec::new();
            let mut failure = None;
            let out = train_copsd(&base, &corpus.vocab, &corpus.distill, d, &cfg, |step, m| {
                if step % config.distill_eval_every == 0 {
                    match eval_at(m, &corpus, d, &config.eval, &[smallest], "copsd", seed, step) {
                        Ok(r) => evaluated.push((step, m.clone(), r[0].clone())),
                        Err(e) => failure = Some(e),
                    }
                }
                Ok(())
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            let (records, best_step) = finish_trajectory(evaluated, &corpus, d, &config.eval, "copsd", seed)?;
            let traj = Trajectory {
                method: "copsd".into(),
                seed,
                dialect: d.name(),
                records,
                best_step,
                distill_log: out.log,
                grpo_log: Vec::new(),
                seconds: t.elapsed().as_secs_f64(),
            };
            progress(&format!(
                "copsd seed {seed} {}: best step {} pass {:.1} ({:.0}s)",
                traj.dialect,
                best_step,
                traj.best(smallest).pass_at_k_pct,
                traj.seconds
            ));
            trajectories.push(traj);

            // GRPO
            let t = Instant::now();
            let cfg = GrpoConfig {
                seed,
                ..config.grpo.clone()
            };
            let mut evaluated = Vec::new();
            let mut failure = None;
            let out = train_grpo(&base, &corpus.vocab, &corpus.distill, d, &cfg, false, |step, m| {
                if step % config.grpo_eval_every == 0 {
                    match eval_at(m, &corpus, d, &config.eval, &[smallest], "grpo", seed, step) {
                        Ok(r) => evaluated.push((step, m.clone(), r[0].clone())),
                        Err(e) => failure = Some(e),
                    }
                }
                Ok(())
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            let (records, best_step) = finish_trajectory(evaluated, &corpus, d, &config.eval, "grpo", seed)?;
            let traj = Trajectory {
                method: "grpo".into(),
                seed,
                dialect: d.name(),
                records,
                best_step,
                distill_log: Vec::new(),
                grpo_log: out.log,
                seconds: t.elapsed().as_secs_f64(),
            };
            progress(&format!(
                "grpo seed {seed} {}: best step {} pass {:.1} ({:.0}s)",
                traj.dialect,
                best_step,
                traj.best(smallest).pass_at_k_pct,
                traj.seconds
            ));
            trajectories.push(traj);
        }
    }
    Ok(Sweep {
        corpus,
        base,
        pretrain_seconds,
        base_records,
        trajectories,
    })
}
