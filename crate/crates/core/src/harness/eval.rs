//! Stage-by-stage training and evaluation of one method.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{CandidateSet, FusionConfig, FusionContext, FusionMode, ZeroShotConfig};
use crate::harness::scenario::{ScenarioKind, ScenarioPlan};
use crate::harness::TaskDataset;
use crate::knn::{KnnConfig, KnnModel};
use crate::linear::{LinProbe, TrainConfig};
use crate::model::{ExemplarModel, Method};
use crate::treeprobe::{TreeConfig, TreeProbe};
use crate::types::{LabelId, LabelTable, Sample};

/// Method choice plus every hyperparameter a run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub fusion: FusionConfig,
    pub zero_shot: ZeroShotConfig,
    pub knn: KnnConfig,
    pub tree: TreeConfig,
    pub train: TrainConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            method: Method::TreeProbe,
            fusion: FusionConfig::default(),
            zero_shot: ZeroShotConfig::default(),
            knn: KnnConfig::default(),
            tree: TreeConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunSpec {
    pub fn new(method: Method, mode: FusionMode) -> Self {
        RunSpec {
            method,
            fusion: FusionConfig::new(mode),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.zero_shot.validate()?;
        self.knn.validate()?;
        self.train.validate()?;
        self.tree_config().validate()
    }

    /// Tree settings with the run's trainer; the tree shares `k` and the
    /// temperature with the nearest-neighbour model.
    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            train_cfg: self.train,
            k: self.knn.k,
            temperature: self.knn.temperature,
            ..self.tree
        }
    }

    /// A fresh, empty model; `None` for pure zero-shot.
    pub fn build_model(&self) -> Result<Option<Box<dyn ExemplarModel>>> {
        Ok(match self.method {
            Method::ZeroShot => None,
            Method::Knn => Some(Box::new(KnnModel::new(self.knn)?)),
            Method::LinProbe => Some(Box::new(LinProbe::new(self.train)?)),
            Method::TreeProbe => Some(Box::new(TreeProbe::new(self.tree_config())?)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub accuracy: f64,
    /// Accuracy on test samples whose label has exemplars.
    pub seen: Option<f64>,
    /// Accuracy on test samples whose label has none.
    pub unseen: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage_index: usize,
    /// Exemplars stored after this stage (summed over per-task models).
    pub exemplars: usize,
    pub target: Vec<TaskAccuracy>,
    pub zeroshot: Vec<TaskAccuracy>,
    pub target_avg: f64,
    pub zeroshot_avg: Option<f64>,
    pub seen_acc: Option<f64>,
    pub unseen_acc: Option<f64>,
    /// Seconds spent storing this stage's exemplars.
    pub insert_wall_time: f64,
    /// Seconds spent retraining after this stage.
    pub train_wall_time: f64,
}

impl StageReport {
    pub fn clear_timing(&mut self) {
        self.insert_wall_time = 0.0;
        self.train_wall_time = 0.0;
    }
}

/// Correct/total counters split by whether a sample's label was covered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
    pub seen_correct: usize,
    pub seen_total: usize,
}

impl Tally {
    fn add(self, o: Tally) -> Tally {
        Tally {
            correct: self.correct + o.correct,
            total: self.total + o.total,
            seen_correct: self.seen_correct + o.seen_correct,
            seen_total: self.seen_total + o.seen_total,
        }
    }

    fn ratio(c: usize, t: usize) -> Option<f64> {
        (t > 0).then(|| c as f64 / t as f64)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.correct, self.total).unwrap_or(0.0)
    }

    pub fn seen(&self) -> Option<f64> {
        Self::ratio(self.seen_correct, self.seen_total)
    }

    pub fn unseen(&self) -> Option<f64> {
        Self::ratio(self.correct - self.seen_correct, self.total - self.seen_total)
    }

    fn report(&self, task: &str) -> TaskAccuracy {
        TaskAccuracy {
            task: task.to_string(),
            accuracy: self.accuracy(),
            seen: self.seen(),
            unseen: self.unseen(),
            samples: self.total,
        }
    }
}

/// Predicts one label per sample. Read-only over the model.
pub fn predict_labels(
    model: Option<&dyn ExemplarModel>,
    samples: &[Sample],
    candidates: &CandidateSet,
    labels: &LabelTable,
    spec: &RunSpec,
) -> Result<Vec<LabelId>> {
    let covered = model.map(|m| m.covered_labels()).unwrap_or_default();
    let ctx = FusionContext {
        labels,
        candidates,
        covered: &covered,
        zero_shot: &spec.zero_shot,
        fusion: &spec.fusion,
    };
    let use_model = model.filter(|m| !m.is_empty() && spec.fusion.mode != FusionMode::ZeroShotOnly);
    samples
        .par_iter()
        .map(|s| match use_model {
            Some(m) => {
                let ex = m.predict(labels, &s.embedding)?;
                ctx.predict(&s.embedding, Some(&ex))
            }
            None => ctx.predict(&s.embedding, None),
        })
        .collect()
}

/// Accuracy of `model` on `samples` over `candidates`.
pub fn evaluate(
    model: Option<&dyn ExemplarModel>,
    samples: &[Sample],
    candidates: &CandidateSet,
    labels: &LabelTable,
    spec: &RunSpec,
) -> Result<Tally> {
    let predicted = predict_labels(model, samples, candidates, labels, spec)?;
    let covered: BTreeSet<LabelId> = model.map(|m| m.covered_labels()).unwrap_or_default();
    let mut t = Tally::default();
    for (s, p) in samples.iter().zip(predicted) {
        let hit = usize::from(p == s.label);
        t.total += 1;
        t.correct += hit;
        if covered.contains(&s.label) {
            t.seen_total += 1;
            t.seen_correct += hit;
        }
    }
    Ok(t)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub(crate) fn candidates_of(task: &TaskDataset) -> Result<CandidateSet> {
    CandidateSet::new(task.label_ids.clone())
        .map_err(|_| Error::InvalidPlan(format!("task {:?} has an invalid label set", task.name)))
}

/// Runs `plan`, calling `sink` after every completed stage.
///
/// Task-incremental plans train one model on the stream of tasks. Data- and
/// class-incremental plans train an independent model per target task; each
/// target task is scored by its own model and zero-shot tasks by the mean
/// over those models.
pub fn run_scenario_with(
    plan: &ScenarioPlan,
    tasks: &[TaskDataset],
    zeroshot_tasks: &[TaskDataset],
    labels: &LabelTable,
    spec: &RunSpec,
    sink: &mut dyn FnMut(&StageReport),
) -> Result<Vec<StageReport>> {
    spec.validate()?;
    if plan
        .stages
        .iter()
        .flat_map(|s| &s.arrivals)
        .any(|&(t, i)| t >= tasks.len() || i >= tasks[t].train.len())
    {
        return Err(Error::InvalidPlan(
            "plan refers to samples outside the given tasks".into(),
        ));
    }
    let target_cands: Vec<CandidateSet> = tasks.iter().map(candidates_of).collect::<Result<_>>()?;
    let zs_cands: Vec<CandidateSet> = zeroshot_tasks.iter().map(candidates_of).collect::<Result<_>>()?;

    // models[m] serves the target tasks in groups[m]
    let groups: Vec<Vec<usize>> = match plan.kind {
        ScenarioKind::TaskIncremental => vec![(0..tasks.len()).collect()],
        _ => (0..tasks.len()).map(|t| vec![t]).collect(),
    };
    let mut models: Vec<Option<Box<dyn ExemplarModel>>> =
        groups.iter().map(|_| spec.build_model()).collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(plan.stages.len());
    for (stage_index, stage) in plan.stages.iter().enumerate() {
        let mut insert_wall_time = 0.0;
        let mut train_wall_time = 0.0;
        for (group, model) in groups.iter().zip(models.iter_mut()) {
            let Some(model) = model else { continue };
            let new: Vec<Sample> = stage
                .arrivals
                .iter()
                .filter(|(t, _)| group.contains(t))
                .map(|&(t, i)| tasks[t].train[i].clone())
                .collect();
            let start = Instant::now();
            model.insert(&new)?;
            insert_wall_time += start.elapsed().as_secs_f64();
            let start = Instant::now();
            model.fit()?;
            train_wall_time += start.elapsed().as_secs_f64();
        }

        let model_of = |t: usize| -> Option<&dyn ExemplarModel> {
            let m = groups.iter().position(|g| g.contains(&t)).expect("task has a model");
            models[m].as_deref()
        };
        let mut target = Vec::with_capacity(tasks.len());
        let mut pooled = Tally::default();
        for (t, task) in tasks.iter().enumerate() {
            let tally = evaluate(model_of(t), &task.test, &target_cands[t], labels, spec)?;
            pooled = pooled.add(tally);
            target.push(tally.report(&task.name));
        }
        let mut zeroshot = Vec::with_capacity(zeroshot_tasks.len());
        for (z, task) in zeroshot_tasks.iter().enumerate() {
            let per_model: Vec<Tally> = models
                .iter()
                .map(|m| evaluate(m.as_deref(), &task.test, &zs_cands[z], labels, spec))
                .collect::<Result<_>>()?;
            let accuracy = mean(per_model.iter().map(Tally::accuracy)).unwrap_or(0.0);
            zeroshot.push(TaskAccuracy {
                task: task.name.clone(),
                accuracy,
                seen: mean(per_model.iter().filter_map(Tally::seen)),
                unseen: mean(per_model.iter().filter_map(Tally::unseen)),
                samples: task.test.len(),
            });
        }

        let report = StageReport {
            stage_index,
            exemplars: models.iter().flatten().map(|m| m.store().len()).sum(),
            target_avg: mean(target.iter().map(|a| a.accuracy)).unwrap_or(0.0),
            zeroshot_avg: mean(zeroshot.iter().map(|a| a.accuracy)),
            seen_acc: pooled.seen(),
            unseen_acc: pooled.unseen(),
            target,
            zeroshot,
            insert_wall_time,
            train_wall_time,
        };
        sink(&report);
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_scenario(
    plan: &ScenarioPlan,
    tasks: &[TaskDataset],
    zeroshot_tasks: &[TaskDataset],
    labels: &LabelTable,
    spec: &RunSpec,
) -> Result<Vec<StageReport>> {
    run_scenario_with(plan, tasks, zeroshot_tasks, labels, spec, &mut |_| {})
}

/// Trains a model on every training sample of `tasks`, in task order.
pub fn train_on_tasks(tasks: &[TaskDataset], spec: &RunSpec) -> Result<Option<Box<dyn ExemplarModel>>> {
    spec.validate()?;
    let mut model = spec.build_model()?;
    if let Some(m) = model.as_mut() {
        for t in tasks {
            m.insert(&t.train)?;
        }
        m.fit()?;
    }
    Ok(model)
}
