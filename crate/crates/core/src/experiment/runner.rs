use std::path::PathBuf;

use crate::corpus::{target_sequence, Corpus, DialogSession, SplitSpec};
use crate::error::{Error, Result};
use crate::features::{prepare, FeaturePlan, PreparedSession};
use crate::metrics::{majority_baseline, weighted_f1};
use crate::nn::{
    checkpoint, data_loss_sum, train, LossKind, ModelParams, PredictionWindow, SequenceData,
    TrainOptions, TrainReport, TrainingObjective,
};
use crate::tasks::{
    extract_onsets, extract_overlaps, extract_pauses, fit_onset_threshold, score_onset_instance,
    score_overlap, score_pause, DecisionInstance, InstanceRecord, Label, TaskKind,
};

use super::{RunExecutor, RunResult, RunSpec, TaskScores};

struct Prepared {
    session: PreparedSession,
    instances: Vec<DecisionInstance>,
}

/// Trains and evaluates real models on a corpus split.
///
/// Every conversation is used twice, once per target speaker, both for
/// training sequences and for the windows scored at decision points.
pub struct CorpusExecutor {
    train: Vec<Prepared>,
    heldout: Vec<Prepared>,
    test: Vec<Prepared>,
    checkpoint_dir: Option<PathBuf>,
}

/// Majority-class weighted F per task on the test instances.
pub type TaskBaselines = TaskScores;

/// Scores of one parameter set on the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub test_bce: f64,
    pub test_mae: f64,
    pub scores: TaskScores,
    pub onset_threshold: Option<f64>,
    /// `(kind, true, predicted)` for every test instance.
    pub decisions: Vec<(TaskKind, Label, Label)>,
}

fn extract(session: &PreparedSession) -> Vec<DecisionInstance> {
    let va = [&session.speakers[0].va[..], &session.speakers[1].va[..]];
    let mut out = extract_pauses(va, TaskKind::Pause50);
    out.extend(extract_pauses(va, TaskKind::Pause500));
    out.extend(extract_onsets(va));
    out.extend(extract_overlaps(va));
    out
}

fn resolve(corpus: &Corpus, ids: &[String], part: &str) -> Result<Vec<Prepared>> {
    ids.iter()
        .map(|id| {
            let s: &DialogSession = corpus
                .get(id)
                .ok_or_else(|| Error::config(format!("{part} session {id:?} is not in the corpus")))?;
            let session = prepare(s)?;
            let instances = extract(&session);
            Ok(Prepared { session, instances })
        })
        .collect()
}

fn sequences(sessions: &[Prepared], plan: &FeaturePlan) -> Result<Vec<SequenceData>> {
    let mut out = Vec::with_capacity(2 * sessions.len());
    for p in sessions {
        let inputs = p.session.assemble(plan)?;
        for (target, inputs) in inputs.into_iter().enumerate() {
            out.push(SequenceData {
                inputs,
                targets: target_sequence(&p.session.speakers[target].va),
            });
        }
    }
    Ok(out)
}

impl CorpusExecutor {
    pub fn new(corpus: &Corpus, split: &SplitSpec) -> Result<Self> {
        split.validate()?;
        Ok(CorpusExecutor {
            train: resolve(corpus, &split.train, "train")?,
            heldout: resolve(corpus, &split.heldout, "heldout")?,
            test: resolve(corpus, &split.test, "test")?,
            checkpoint_dir: None,
        })
    }

    /// Saves the parameters of every run as `<fingerprint>-<seed>.ckpt`.
    pub fn with_checkpoints(mut self, dir: PathBuf) -> Self {
        self.checkpoint_dir = Some(dir);
        self
    }

    /// Test instances as audit records.
    pub fn test_instances(&self) -> Vec<InstanceRecord> {
        self.test
            .iter()
            .flat_map(|p| {
                p.instances.iter().map(|i| InstanceRecord {
                    session_id: p.session.session_id.clone(),
                    kind: i.kind,
                    decision_frame: i.decision_frame,
                    floor_holder: i.speaker,
                    label: i.label,
                })
            })
            .collect()
    }

    pub fn baselines(&self) -> TaskBaselines {
        let mut out = TaskScores::default();
        for kind in TaskKind::ALL {
            let labels: Vec<Label> = self
                .test
                .iter()
                .flat_map(|p| p.instances.iter())
                .filter(|i| i.kind == kind)
                .map(|i| i.label)
                .collect();
            out.set(kind, majority_baseline(&labels).ok());
        }
        out
    }

    fn windows(params: &ModelParams, p: &Prepared, plan: &FeaturePlan) -> Result<[Vec<PredictionWindow>; 2]> {
        let [a, b] = p.session.assemble(plan)?;
        Ok([params.forward(&a, None)?.0, params.forward(&b, None)?.0])
    }

    fn fit_threshold(&self, params: &ModelParams, plan: &FeaturePlan) -> Result<Option<f64>> {
        let mut samples = Vec::new();
        for p in &self.train {
            if !p.instances.iter().any(|i| i.kind == TaskKind::Onset) {
                continue;
            }
            let w = Self::windows(params, p, plan)?;
            for i in p.instances.iter().filter(|i| i.kind == TaskKind::Onset) {
                let win = &w[i.speaker][i.decision_frame];
                samples.push((i.label, win.mean(0..win.probs.len())));
            }
        }
        if samples.is_empty() {
            log::warn!("no onset instances in the training sessions; onset is not scored");
            return Ok(None);
        }
        Ok(Some(fit_onset_threshold(&samples)?.threshold))
    }

    /// Scores `params` on the test split, fitting the onset threshold on the
    /// training sessions.
    pub fn evaluate(&self, params: &ModelParams, plan: &FeaturePlan) -> Result<Evaluation> {
        let threshold = self.fit_threshold(params, plan)?;
        let mut loss = [(0.0, 0usize); 2];
        let mut decisions = Vec::new();
        for p in &self.test {
            let w = Self::windows(params, p, plan)?;
            for (target, windows) in w.iter().enumerate() {
                let targets = target_sequence(&p.session.speakers[target].va);
                for (k, kind) in [LossKind::Bce, LossKind::Mae].into_iter().enumerate() {
                    let (s, c) = data_loss_sum(windows, &targets, kind)?;
                    loss[k].0 += s;
                    loss[k].1 += c;
                }
            }
            for i in &p.instances {
                let d = i.decision_frame;
                let pred = match i.kind {
                    TaskKind::Pause50 | TaskKind::Pause500 => score_pause(i, &w[0][d], &w[1][d])?,
                    TaskKind::Overlap => score_overlap(i, &w[0][d], &w[1][d])?,
                    TaskKind::Onset => match threshold {
                        Some(t) => score_onset_instance(i, &w[i.speaker][d], t)?,
                        None => continue,
                    },
                };
                decisions.push((i.kind, i.label, pred.label));
            }
        }
        let mut scores = TaskScores::default();
        for kind in TaskKind::ALL {
            let pairs: Vec<(Label, Label)> = decisions
                .iter()
                .filter(|d| d.0 == kind)
                .map(|d| (d.1, d.2))
                .collect();
            scores.set(kind, weighted_f1(&pairs).ok());
        }
        let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
        Ok(Evaluation {
            test_bce: mean(loss[0]),
            test_mae: mean(loss[1]),
            scores,
            onset_threshold: threshold,
            decisions,
        })
    }

    /// Trains one model as described by `spec`.
    pub fn train_model(&self, spec: &RunSpec) -> Result<TrainReport> {
        let train_seqs = sequences(&self.train, &spec.plan)?;
        let heldout_seqs = sequences(&self.heldout, &spec.plan)?;
        let opts = TrainOptions {
            hidden: spec.hyper.hidden,
            learning_rate: spec.hyper.learning_rate,
            objective: TrainingObjective {
                kind: spec.objective,
                l2_lambda: spec.hyper.l2,
            },
            max_epochs: spec.training.max_epochs,
            patience: spec.training.patience,
            chunk_frames: spec.training.chunk_frames,
            seed: spec.seed,
        };
        train(&train_seqs, &heldout_seqs, &opts)
    }
}

impl RunExecutor for CorpusExecutor {
    fn execute(&self, spec: &RunSpec) -> Result<RunResult> {
        let plan_fingerprint = spec.plan.fingerprint()?;
        let report = self.train_model(spec)?;
        let params = &report.params;
        if let Some(dir) = &self.checkpoint_dir {
            let path = dir.join(format!("{}-{}.ckpt", spec.fingerprint(), spec.seed));
            checkpoint::save(&path, params, &plan_fingerprint)?;
        }
        let eval = self.evaluate(params, &spec.plan)?;
        let heldout_loss = report
            .heldout_losses
            .get(report.best_epoch)
            .copied()
            .unwrap_or_else(|| report.train_losses.last().copied().unwrap_or(f64::NAN));
        Ok(RunResult {
            fingerprint: spec.fingerprint(),
            plan_fingerprint,
            hyper: spec.hyper,
            objective: spec.objective,
            seed: spec.seed,
            best_epoch: report.best_epoch,
            epochs_run: report.epochs_run,
            heldout_loss,
            test_bce: eval.test_bce,
            test_mae: eval.test_mae,
            scores: eval.scores,
            onset_threshold: eval.onset_threshold,
        })
    }
}
