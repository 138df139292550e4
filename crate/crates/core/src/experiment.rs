//! Config-driven training, evaluation and resolution sweeps with their
//! persisted artifacts.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::diffcore::Checkpoint;
use crate::error::{Error, Result};
use crate::policies::{Policy, PolicySpec};
use crate::problems::{
    lqr_policy, merton_log_oracle, merton_policy, riccati_lqr_oracle, ControlProblem, LqDelayProblem, LqFbmProblem,
    PortfolioProblem, ProblemConfig,
};
use crate::training::{
    derive_seed, evaluate, evaluation_noise, fraction_steps, pathwise_l2, rollout_values, train, Evaluation, Stream,
    TrainConfig,
};

/// Backward steps of the Riccati integration used as the reference.
const RICCATI_STEPS: usize = 2000;

/// Exact optimum for the special cases that have one.
pub struct Oracle {
    pub kind: &'static str,
    pub value: f64,
    pub policy: Box<dyn Policy>,
}

/// Riccati for Brownian LQ without delay coupling, Merton for the
/// memoryless portfolio; `None` otherwise.
pub fn oracle_for(problem: &ProblemConfig) -> Result<Option<Oracle>> {
    let lq = match problem {
        ProblemConfig::LqFbm(c) if c.hurst == 0.5 => Some(LqFbmProblem::new(c.clone())?.as_lq()),
        ProblemConfig::LqDelay(c) => LqDelayProblem::new(c.clone())?.as_lq().ok(),
        ProblemConfig::Portfolio(c) if c.mu2 == 0.0 => {
            let p = PortfolioProblem::new(c.clone())?;
            let sol = merton_log_oracle(&p)?;
            return Ok(Some(Oracle {
                kind: "merton",
                value: sol.value,
                policy: Box::new(merton_policy(&p, sol)),
            }));
        }
        _ => None,
    };
    Ok(match lq {
        Some(spec) => {
            let sol = riccati_lqr_oracle(&spec, RICCATI_STEPS)?;
            Some(Oracle {
                kind: "riccati",
                value: sol.value,
                policy: Box::new(lqr_policy(sol)),
            })
        }
        None => None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub kind: String,
    pub value: f64,
    /// `|evaluation - value| / |value|`.
    pub relative_error: f64,
    /// Objective of the oracle's own control on the evaluation grid and noise.
    pub oracle_policy_cost: Evaluation,
    /// Relative pathwise L² distance of the states to the oracle-controlled
    /// states under the same noise.
    pub pathwise_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub problem: String,
    pub model: String,
    pub param_count: usize,
    pub train_steps: usize,
    pub eval_steps: usize,
    pub cost_trace: Vec<f64>,
    pub evaluation: Evaluation,
    pub oracle: Option<OracleReport>,
    /// Excluded from reproducibility comparisons.
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    /// JSON with the wall clock zeroed, for bit-exact comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn cost_trace_csv(&self) -> String {
        let mut s = String::from("iteration,cost\n");
        for (i, c) in self.cost_trace.iter().enumerate() {
            s += &format!("{i},{c}\n");
        }
        s
    }
}

fn build_policy(spec: &PolicySpec, problem: &dyn ControlProblem, seed: u64) -> Result<Box<dyn Policy>> {
    spec.build(
        problem.state_dim(),
        problem.control_dim(),
        derive_seed(seed, Stream::Init, 0),
    )
}

fn oracle_report(
    config: &ExperimentConfig,
    problem: &dyn ControlProblem,
    policy: &dyn Policy,
    evaluation: &Evaluation,
    workers: usize,
) -> Result<Option<OracleReport>> {
    let Some(oracle) = oracle_for(&config.problem)? else {
        return Ok(None);
    };
    let t = &config.train;
    let oracle_cost = evaluate(
        &*oracle.policy,
        problem,
        t.eval_steps,
        t.eval_trajectories,
        config.seed,
        t.quadrature,
        t.chunk_size,
        workers,
    )?;
    let noise = evaluation_noise(problem, t.eval_steps, t.eval_trajectories, config.seed)?;
    let learned = rollout_values(problem, policy, &noise, t.chunk_size, workers)?;
    let reference = rollout_values(problem, &*oracle.policy, &noise, t.chunk_size, workers)?;
    Ok(Some(OracleReport {
        kind: oracle.kind.into(),
        value: oracle.value,
        relative_error: (evaluation.mean - oracle.value).abs() / oracle.value.abs(),
        oracle_policy_cost: oracle_cost,
        pathwise_l2: pathwise_l2(&learned, &reference)?,
    }))
}

fn snapshot(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.out_dir = None;
    c.profile.clear();
    c
}

/// Train `config.policy` and evaluate it on the evaluation grid.
pub fn run_train(config: &ExperimentConfig, workers: usize) -> Result<(Box<dyn Policy>, ExperimentResult)> {
    config.validate()?;
    let start = Instant::now();
    let problem = config.problem.build()?;
    let mut policy = build_policy(&config.policy, &*problem, config.seed)?;
    let report = train(&*problem, &mut *policy, &config.train, config.seed, workers)?;
    let t = &config.train;
    let evaluation = evaluate(
        &*policy,
        &*problem,
        t.eval_steps,
        t.eval_trajectories,
        config.seed,
        t.quadrature,
        t.chunk_size,
        workers,
    )?;
    let oracle = oracle_report(config, &*problem, &*policy, &evaluation, workers)?;
    let result = ExperimentResult {
        name: config.name.clone(),
        problem: config.problem.name().into(),
        model: config.policy.name().into(),
        param_count: policy.param_count(),
        train_steps: t.train_steps,
        eval_steps: t.eval_steps,
        cost_trace: report.cost_trace,
        evaluation,
        oracle,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: snapshot(config),
    };
    Ok((policy, result))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub name: String,
    pub problem: String,
    pub model: String,
    pub evaluation: Evaluation,
    pub oracle: Option<OracleReport>,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

impl EvaluationResult {
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

/// Evaluate saved parameters on the config's evaluation grid.
pub fn run_evaluate(config: &ExperimentConfig, checkpoint: &Checkpoint, workers: usize) -> Result<EvaluationResult> {
    config.validate()?;
    let start = Instant::now();
    let problem = config.problem.build()?;
    let mut policy = build_policy(&config.policy, &*problem, config.seed)?;
    policy.load_checkpoint(checkpoint)?;
    let t = &config.train;
    let evaluation = evaluate(
        &*policy,
        &*problem,
        t.eval_steps,
        t.eval_trajectories,
        config.seed,
        t.quadrature,
        t.chunk_size,
        workers,
    )?;
    let oracle = oracle_report(config, &*problem, &*policy, &evaluation, workers)?;
    Ok(EvaluationResult {
        name: config.name.clone(),
        problem: config.problem.name().into(),
        model: config.policy.name().into(),
        evaluation,
        oracle,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: snapshot(config),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub param_count: usize,
    /// Evaluation objective per training fraction.
    pub costs: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl SweepRow {
    /// Coarsest-trained over finest-trained cost.
    pub fn degradation(&self) -> f64 {
        self.costs[self.costs.len() - 1] / self.costs[0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub problem: String,
    pub eval_steps: usize,
    pub fractions: Vec<f64>,
    pub train_steps: Vec<usize>,
    pub rows: Vec<SweepRow>,
    pub oracle_value: Option<f64>,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

impl SweepResult {
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_clock_seconds = 0.0;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn row(&self, model: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Rows are models, columns training fractions as percentages.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model");
        for f in &self.fractions {
            s += &format!(",{}%", f * 100.0);
        }
        s.push('\n');
        for r in &self.rows {
            s += &r.model;
            for c in &r.costs {
                s += &format!(",{c}");
            }
            s.push('\n');
        }
        s
    }
}

/// Train every model at every training fraction of the evaluation grid
/// and evaluate all of them on the full grid with the same noise.
pub fn run_sweep(config: &ExperimentConfig, workers: usize) -> Result<SweepResult> {
    config.validate()?;
    let start = Instant::now();
    let problem = config.problem.build()?;
    let eval_steps = config.train.eval_steps;
    let train_steps = config
        .sweep
        .fractions
        .iter()
        .map(|&f| fraction_steps(eval_steps, f))
        .collect::<Result<Vec<_>>>()?;
    if train_steps.is_empty() {
        return Err(Error::Config("sweep.fractions is empty".into()));
    }
    let mut models = vec![config.policy.clone()];
    models.extend(config.sweep.baselines.iter().cloned());
    let mut rows = Vec::new();
    for spec in &models {
        let mut row = SweepRow {
            model: spec.name().into(),
            param_count: spec.param_count(problem.state_dim(), problem.control_dim()),
            costs: Vec::new(),
            std_errors: Vec::new(),
        };
        for &steps in &train_steps {
            let tc = TrainConfig {
                train_steps: steps,
                ..config.train.clone()
            };
            let mut policy = build_policy(spec, &*problem, config.seed)?;
            train(&*problem, &mut *policy, &tc, config.seed, workers)?;
            let e = evaluate(
                &*policy,
                &*problem,
                eval_steps,
                tc.eval_trajectories,
                config.seed,
                tc.quadrature,
                tc.chunk_size,
                workers,
            )?;
            row.costs.push(e.mean);
            row.std_errors.push(e.std_error);
        }
        rows.push(row);
    }
    Ok(SweepResult {
        name: config.name.clone(),
        problem: config.problem.name().into(),
        eval_steps,
        fractions: config.sweep.fractions.clone(),
        train_steps,
        rows,
        oracle_value: oracle_for(&config.problem)?.map(|o| o.value),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: snapshot(config),
    })
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const CONFIG_FILE: &str = "config.toml";
pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "cost_trace.csv";
pub const CHECKPOINT_FILE: &str = "policy.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_CSV_FILE: &str = "sweep.csv";

/// Write the snapshot, result, trace and checkpoint of a training run.
pub fn save_train(dir: &Path, policy: &dyn Policy, result: &ExperimentResult) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &result.config.to_toml()?)?;
    write(&dir.join(RESULT_FILE), &serde_json::to_string_pretty(result)?)?;
    write(&dir.join(TRACE_FILE), &result.cost_trace_csv())?;
    policy.checkpoint().save(&dir.join(CHECKPOINT_FILE))
}

pub fn save_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &result.config.to_toml()?)?;
    write(&dir.join(SWEEP_FILE), &serde_json::to_string_pretty(result)?)?;
    write(&dir.join(SWEEP_CSV_FILE), &result.to_csv())
}

pub fn save_evaluation(dir: &Path, result: &EvaluationResult) -> Result<()> {
    write(&dir.join(CONFIG_FILE), &result.config.to_toml()?)?;
    write(&dir.join(EVALUATION_FILE), &serde_json::to_string_pretty(result)?)
}
