//! Training runs, hyperparameter search, repeated evaluation and sequential
//! forward selection over acoustic columns.
//!
//! Everything that trains a model goes through [`RunExecutor`], so the search
//! procedures can be exercised with cheap stand-ins. [`CorpusExecutor`] is the
//! real implementation.

mod config;
mod report;
mod runner;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{apply_override, ExperimentConfig, Grid, SfsSettings, TrainingSettings};
pub use report::{
    read_results_csv, summarize, write_grid_csv, write_results_csv, write_sfs_report,
    write_summary_csv, MetricSummary, RESULT_COLUMNS,
};
pub use runner::{CorpusExecutor, Evaluation, TaskBaselines};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::features::{short_hash, FeaturePlan};
use crate::nn::LossKind;
use crate::tasks::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub plan: FeaturePlan,
    pub hyper: Hyperparams,
    pub objective: LossKind,
    pub training: TrainingSettings,
    pub seed: u64,
}

impl RunSpec {
    /// Hash of everything except the seed.
    pub fn fingerprint(&self) -> String {
        let key = serde_json::json!({
            "plan": self.plan,
            "hyper": self.hyper,
            "objective": self.objective,
            "training": self.training,
        });
        short_hash(key.to_string().as_bytes())
    }
}

/// Weighted F-scores per task; `None` when the split has no instances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskScores {
    pub pause50: Option<f64>,
    pub pause500: Option<f64>,
    pub onset: Option<f64>,
    pub overlap: Option<f64>,
}

impl TaskScores {
    pub fn get(&self, kind: TaskKind) -> Option<f64> {
        match kind {
            TaskKind::Pause50 => self.pause50,
            TaskKind::Pause500 => self.pause500,
            TaskKind::Onset => self.onset,
            TaskKind::Overlap => self.overlap,
        }
    }

    pub fn set(&mut self, kind: TaskKind, v: Option<f64>) {
        match kind {
            TaskKind::Pause50 => self.pause50 = v,
            TaskKind::Pause500 => self.pause500 = v,
            TaskKind::Onset => self.onset = v,
            TaskKind::Overlap => self.overlap = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub fingerprint: String,
    pub plan_fingerprint: String,
    pub hyper: Hyperparams,
    pub objective: LossKind,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Lowest held-out loss (training objective, no L2) seen during training.
    pub heldout_loss: f64,
    pub test_bce: f64,
    pub test_mae: f64,
    pub scores: TaskScores,
    pub onset_threshold: Option<f64>,
}

pub trait RunExecutor: Sync {
    fn execute(&self, spec: &RunSpec) -> Result<RunResult>;
}

impl<F> RunExecutor for F
where
    F: Fn(&RunSpec) -> Result<RunResult> + Sync,
{
    fn execute(&self, spec: &RunSpec) -> Result<RunResult> {
        self(spec)
    }
}

/// Independent seed streams for the procedures below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    GridStage1 = 0,
    GridStage2 = 1,
    Final = 2,
    Sfs = 3,
}

/// Seed of run `index` within a stream: two levels of [`derive_seed`].
pub fn run_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    derive_seed(derive_seed(master, stream as u64), index)
}

/// Runs every spec (in parallel on the current rayon pool) and returns the
/// results in input order. The first failure aborts, tagged with the run's
/// fingerprint and seed.
pub fn execute_all(exec: &dyn RunExecutor, specs: &[RunSpec]) -> Result<Vec<RunResult>> {
    specs
        .par_iter()
        .map(|s| {
            exec.execute(s)
                .map_err(|e| e.context(format!("run {} seed {}", s.fingerprint(), s.seed)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    pub best: Hyperparams,
    /// Learning rate x L2 sweep at the reference hidden size.
    pub stage1: Vec<RunResult>,
    /// Repeated runs per hidden size with the stage 1 winners.
    pub stage2: Vec<RunResult>,
}

impl GridOutcome {
    pub fn runs(&self) -> impl Iterator<Item = &RunResult> {
        self.stage1.iter().chain(&self.stage2)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Two-stage hyperparameter search by held-out loss.
///
/// Stage 1 tries every learning rate x L2 pair once at the reference hidden
/// size (or the middle of the sorted grid when the reference is absent).
/// Stage 2 trains each hidden size `runs_per_hidden_size` times with the
/// stage 1 winners and keeps the lowest mean loss; ties favor the smaller
/// size. A stage with a single candidate is skipped.
pub fn grid_search(
    config: &ExperimentConfig,
    plan: &FeaturePlan,
    exec: &dyn RunExecutor,
) -> Result<GridOutcome> {
    let grid = &config.grid;
    grid.validate()?;
    let mut hidden = grid.hidden.clone();
    hidden.sort_unstable();
    hidden.dedup();
    let reference = if hidden.contains(&grid.reference_hidden) {
        grid.reference_hidden
    } else {
        hidden[(hidden.len() - 1) / 2]
    };
    let spec = |hyper: Hyperparams, seed: u64| RunSpec {
        plan: plan.clone(),
        hyper,
        objective: config.objective,
        training: config.training.clone(),
        seed,
    };

    let pairs: Vec<(f64, f64)> = grid
        .learning_rate
        .iter()
        .flat_map(|&lr| grid.l2.iter().map(move |&l2| (lr, l2)))
        .collect();
    let (mut learning_rate, mut l2) = pairs[0];
    let mut stage1 = Vec::new();
    if pairs.len() > 1 {
        let specs: Vec<RunSpec> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(lr, l2))| {
                let h = Hyperparams { hidden: reference, learning_rate: lr, l2 };
                spec(h, run_seed(config.seed, SeedStream::GridStage1, i as u64))
            })
            .collect();
        stage1 = execute_all(exec, &specs)?;
        let best = stage1
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.heldout_loss.total_cmp(&b.1.heldout_loss).then(a.0.cmp(&b.0)))
            .expect("non-empty");
        (learning_rate, l2) = pairs[best.0];
    }

    let mut best_hidden = hidden[0];
    let mut stage2 = Vec::new();
    if hidden.len() > 1 {
        let runs = config.runs_per_hidden_size;
        let specs: Vec<RunSpec> = hidden
            .iter()
            .flat_map(|&h| (0..runs).map(move |r| (h, r)))
            .map(|(h, r)| {
                let hyper = Hyperparams { hidden: h, learning_rate, l2 };
                spec(hyper, run_seed(config.seed, SeedStream::GridStage2, r as u64))
            })
            .collect();
        stage2 = execute_all(exec, &specs)?;
        let mut best_loss = f64::INFINITY;
        for (k, &h) in hidden.iter().enumerate() {
            let m = mean(stage2[k * runs..(k + 1) * runs].iter().map(|r| r.heldout_loss));
            if m < best_loss {
                best_loss = m;
                best_hidden = h;
            }
        }
    }
    Ok(GridOutcome {
        best: Hyperparams { hidden: best_hidden, learning_rate, l2 },
        stage1,
        stage2,
    })
}

/// `final_runs` runs with seeds from the final stream, in run order.
pub fn final_evaluation(
    config: &ExperimentConfig,
    plan: &FeaturePlan,
    hyper: Hyperparams,
    exec: &dyn RunExecutor,
) -> Result<Vec<RunResult>> {
    if config.final_runs == 0 {
        return Err(Error::config("final_runs must be at least 1"));
    }
    let specs: Vec<RunSpec> = (0..config.final_runs)
        .map(|r| RunSpec {
            plan: plan.clone(),
            hyper,
            objective: config.objective,
            training: config.training.clone(),
            seed: run_seed(config.seed, SeedStream::Final, r as u64),
        })
        .collect();
    execute_all(exec, &specs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfsCandidate {
    pub feature: String,
    pub hyper: Hyperparams,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SfsStep {
    pub step: usize,
    pub feature: String,
    pub loss: f64,
    pub candidates: Vec<SfsCandidate>,
}

/// Greedy forward selection of acoustic columns by held-out loss.
///
/// At every step each remaining candidate is added to the columns chosen so
/// far, hyperparameters are picked with [`grid_search`], and the candidate is
/// scored by the mean held-out loss of `sfs.runs` runs. Run seeds are shared
/// across candidates. Other streams of `config.plan` stay fixed.
pub fn sequential_forward_selection(
    config: &ExperimentConfig,
    exec: &dyn RunExecutor,
) -> Result<Vec<SfsStep>> {
    let sfs = &config.sfs;
    let candidates = sfs.candidate_names()?;
    if sfs.steps > candidates.len() {
        return Err(Error::config(format!(
            "sfs.steps = {} exceeds the {} candidate columns",
            sfs.steps,
            candidates.len()
        )));
    }
    if sfs.runs == 0 {
        return Err(Error::config("sfs.runs must be at least 1"));
    }
    let mut chosen: Vec<String> = Vec::new();
    let mut steps = Vec::new();
    for step in 0..sfs.steps {
        let remaining: Vec<&String> = candidates.iter().filter(|c| !chosen.contains(c)).collect();
        let mut scored = Vec::with_capacity(remaining.len());
        for cand in remaining {
            let mut columns = chosen.clone();
            columns.push(cand.clone());
            let plan = FeaturePlan {
                acoustic: columns,
                ..config.plan.clone()
            };
            let hyper = grid_search(config, &plan, exec)?.best;
            let specs: Vec<RunSpec> = (0..sfs.runs)
                .map(|r| RunSpec {
                    plan: plan.clone(),
                    hyper,
                    objective: config.objective,
                    training: config.training.clone(),
                    seed: run_seed(config.seed, SeedStream::Sfs, r as u64),
                })
                .collect();
            let runs = execute_all(exec, &specs)?;
            let loss = mean(runs.iter().map(|r| r.heldout_loss));
            log::info!("sfs step {}: {} -> {loss:.6}", step + 1, cand);
            scored.push(SfsCandidate {
                feature: cand.clone(),
                hyper,
                loss,
            });
        }
        let best = scored
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss))
            .expect("at least one candidate");
        chosen.push(best.feature.clone());
        steps.push(SfsStep {
            step: step + 1,
            feature: best.feature.clone(),
            loss: best.loss,
            candidates: scored.clone(),
        });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitSpec;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn config(hidden: Vec<usize>, lr: Vec<f64>, l2: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            corpus: "unused".into(),
            split: SplitSpec {
                train: vec!["a".into()],
                heldout: vec![],
                test: vec!["b".into()],
            },
            plan: FeaturePlan::va_only(),
            objective: LossKind::Bce,
            grid: Grid {
                hidden,
                learning_rate: lr,
                l2,
                reference_hidden: 60,
            },
            runs_per_hidden_size: 3,
            final_runs: 4,
            seed: 9,
            training: TrainingSettings::default(),
            sfs: SfsSettings::default(),
        }
    }

    fn result(spec: &RunSpec, heldout_loss: f64) -> RunResult {
        RunResult {
            fingerprint: spec.fingerprint(),
            plan_fingerprint: spec.plan.fingerprint().unwrap(),
            hyper: spec.hyper,
            objective: spec.objective,
            seed: spec.seed,
            best_epoch: 0,
            epochs_run: 1,
            heldout_loss,
            test_bce: heldout_loss,
            test_mae: heldout_loss / 2.0,
            scores: TaskScores {
                pause50: Some((spec.seed % 100) as f64 / 100.0),
                ..TaskScores::default()
            },
            onset_threshold: None,
        }
    }

    #[test]
    fn single_point_grid_runs_nothing() {
        let calls = AtomicUsize::new(0);
        let exec = |s: &RunSpec| {
            calls.fetch_add(1, Ordering::SeqCst);
            Ok(result(s, 1.0))
        };
        let c = config(vec![40], vec![0.01], vec![0.001]);
        let out = grid_search(&c, &c.plan, &exec).unwrap();
        assert_eq!(out.best, Hyperparams { hidden: 40, learning_rate: 0.01, l2: 0.001 });
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn grid_finds_known_argmin() {
        let exec = |s: &RunSpec| {
            let h = s.hyper;
            let loss = (h.hidden as f64 - 80.0).abs() / 100.0
                + (h.learning_rate - 0.001).abs()
                + (h.l2 - 0.0001).abs() * 10.0;
            Ok(result(s, loss))
        };
        let c = config(vec![20, 40, 60, 80, 100], vec![0.001, 0.01], vec![0.001, 0.0001]);
        let out = grid_search(&c, &c.plan, &exec).unwrap();
        assert_eq!(out.best, Hyperparams { hidden: 80, learning_rate: 0.001, l2: 0.0001 });
        assert_eq!(out.stage1.len(), 4);
        assert!(out.stage1.iter().all(|r| r.hyper.hidden == 60));
        assert_eq!(out.stage2.len(), 15);
    }

    #[test]
    fn equal_losses_pick_smaller_model() {
        let exec = |s: &RunSpec| Ok(result(s, if s.hyper.hidden == 100 { 0.9 } else { 0.5 }));
        let c = config(vec![80, 40, 100], vec![0.01], vec![0.001]);
        let out = grid_search(&c, &c.plan, &exec).unwrap();
        assert_eq!(out.best.hidden, 40);
        assert!(out.stage1.is_empty());
    }

    #[test]
    fn final_runs_use_distinct_seeds() {
        let exec = |s: &RunSpec| Ok(result(s, 0.3));
        let c = config(vec![20], vec![0.01], vec![0.001]);
        let h = Hyperparams { hidden: 20, learning_rate: 0.01, l2: 0.001 };
        let runs = final_evaluation(&c, &c.plan, h, &exec).unwrap();
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        assert_eq!(runs, final_evaluation(&c, &c.plan, h, &exec).unwrap());
    }

    #[test]
    fn failures_carry_the_fingerprint() {
        let exec = |_: &RunSpec| -> Result<RunResult> { Err(Error::Numerical("nan in output_weights".into())) };
        let c = config(vec![20], vec![0.01], vec![0.001]);
        let h = Hyperparams { hidden: 20, learning_rate: 0.01, l2: 0.001 };
        let e = final_evaluation(&c, &c.plan, h, &exec).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        let spec = RunSpec {
            plan: c.plan.clone(),
            hyper: h,
            objective: c.objective,
            training: c.training.clone(),
            seed: 0,
        };
        assert!(e.to_string().contains(&spec.fingerprint()), "{e}");
    }

    #[test]
    fn sfs_prefers_informative_columns() {
        let informative = ["Loudness_sma3", "mfcc2_sma3"];
        let exec = |s: &RunSpec| {
            let hits = s.plan.acoustic.iter().filter(|c| informative.contains(&c.as_str())).count();
            Ok(result(s, 1.0 - hits as f64 + 0.01 * s.plan.acoustic.len() as f64))
        };
        let mut c = config(vec![20], vec![0.01], vec![0.001]);
        c.plan = FeaturePlan::default();
        c.sfs = SfsSettings {
            steps: 3,
            candidates: vec!["jitterLocal_sma3nz".into(), "mfcc2_sma3".into(), "Loudness_sma3".into()],
            runs: 1,
        };
        let steps = sequential_forward_selection(&c, &exec).unwrap();
        let names: Vec<&str> = steps.iter().map(|s| s.feature.as_str()).collect();
        // equal losses keep canonical column order
        assert_eq!(names, ["Loudness_sma3", "mfcc2_sma3", "jitterLocal_sma3nz"]);
        assert_eq!(steps[0].candidates.len(), 3);
        assert_eq!(steps[2].candidates.len(), 1);

        c.sfs.steps = 0;
        assert!(sequential_forward_selection(&c, &exec).unwrap().is_empty());
        c.sfs.steps = 4;
        assert!(matches!(sequential_forward_selection(&c, &exec), Err(Error::Config(_))));
    }

    #[test]
    fn seed_streams_differ() {
        let a = run_seed(1, SeedStream::Final, 0);
        assert_ne!(a, run_seed(1, SeedStream::Sfs, 0));
        assert_ne!(a, run_seed(1, SeedStream::Final, 1));
        assert_ne!(a, run_seed(2, SeedStream::Final, 0));
    }
}
