//! Continual-learning arrival schedules.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::TaskDataset;
use crate::types::{LabelId, RngSeed};

/// Cumulative fractions of a task's training data seen at each stage.
pub const DATA_FRACTIONS: [f64; 7] = [0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 1.0];

/// Number of class-incremental stages, each adding a fifth of the classes.
pub const CLASS_STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    DataIncremental,
    ClassIncremental,
    TaskIncremental,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::DataIncremental => "data",
            ScenarioKind::ClassIncremental => "class",
            ScenarioKind::TaskIncremental => "task",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "data" | "data-incremental" => Ok(ScenarioKind::DataIncremental),
            "class" | "class-incremental" => Ok(ScenarioKind::ClassIncremental),
            "task" | "task-incremental" => Ok(ScenarioKind::TaskIncremental),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Training samples arriving at one stage, as `(task, train index)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub arrivals: Vec<(usize, usize)>,
}

impl StageSpec {
    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }
}

/// Stages of a scenario. Each stage lists only its new arrivals; the training
/// set at stage `i` is the union of stages `0..=i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub kind: ScenarioKind,
    pub stages: Vec<StageSpec>,
    pub seed: RngSeed,
}

impl ScenarioPlan {
    /// Every arrival up to and including `stage`.
    pub fn cumulative(&self, stage: usize) -> Vec<(usize, usize)> {
        self.stages[..=stage]
            .iter()
            .flat_map(|s| s.arrivals.iter().copied())
            .collect()
    }

    /// Cumulative training-set size after each stage.
    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages
            .iter()
            .scan(0, |acc, s| {
                *acc += s.len();
                Some(*acc)
            })
            .collect()
    }

    /// Arrivals of one task at one stage.
    pub fn arrivals_for(&self, stage: usize, task: usize) -> impl Iterator<Item = usize> + '_ {
        self.stages[stage]
            .arrivals
            .iter()
            .filter(move |(t, _)| *t == task)
            .map(|&(_, i)| i)
    }
}

fn cumulative_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64).round() as usize).clamp(1, total)
}

/// Builds a deterministic arrival schedule over the target `tasks`.
///
/// Data- and class-incremental plans schedule every task side by side; stage
/// `i` holds the `i`-th increment of each.
pub fn plan_scenario(tasks: &[TaskDataset], kind: ScenarioKind, seed: RngSeed) -> Result<ScenarioPlan> {
    if tasks.is_empty() {
        return Err(Error::InvalidPlan("at least one target task is required".into()));
    }
    if let Some(t) = tasks.iter().find(|t| t.train.is_empty()) {
        return Err(Error::InvalidPlan(format!(
            "target task {:?} has no training data",
            t.name
        )));
    }
    let stages = match kind {
        ScenarioKind::DataIncremental => {
            let mut stages = vec![StageSpec::default(); DATA_FRACTIONS.len()];
            for (t, task) in tasks.iter().enumerate() {
                let mut order: Vec<usize> = (0..task.train.len()).collect();
                order.shuffle(&mut seed.derive(t as u64).rng());
                let mut start = 0;
                for (stage, &f) in stages.iter_mut().zip(&DATA_FRACTIONS) {
                    let end = cumulative_count(f, order.len()).max(start);
                    stage.arrivals.extend(order[start..end].iter().map(|&i| (t, i)));
                    start = end;
                }
            }
            stages
        }
        ScenarioKind::ClassIncremental => {
            let mut stages = vec![StageSpec::default(); CLASS_STAGES];
            for (t, task) in tasks.iter().enumerate() {
                let mut classes: Vec<LabelId> = task.label_ids.clone();
                classes.sort();
                classes.shuffle(&mut seed.derive(t as u64).rng());
                let mut start = 0;
                for (s, stage) in stages.iter_mut().enumerate() {
                    let f = (s + 1) as f64 / CLASS_STAGES as f64;
                    let end = cumulative_count(f, classes.len()).max(start);
                    let added = &classes[start..end];
                    stage.arrivals.extend(
                        task.train
                            .iter()
                            .enumerate()
                            .filter(|(_, x)| added.contains(&x.label))
                            .map(|(i, _)| (t, i)),
                    );
                    start = end;
                }
            }
            stages
        }
        ScenarioKind::TaskIncremental => {
            if tasks.len() < 2 {
                return Err(Error::InvalidPlan("task-incremental needs at least two tasks".into()));
            }
            tasks
                .iter()
                .enumerate()
                .map(|(t, task)| StageSpec {
                    arrivals: (0..task.train.len()).map(|i| (t, i)).collect(),
                })
                .collect()
        }
    };
    Ok(ScenarioPlan { kind, stages, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EmbeddingVector, Sample};
    use std::collections::BTreeSet;

    fn task(name: &str, classes: u32, per_class: usize) -> TaskDataset {
        let e = EmbeddingVector::normalize(&[1.0, 0.0]).unwrap();
        TaskDataset {
            name: name.into(),
            label_ids: (0..classes).map(LabelId).collect(),
            train: (0..classes as usize * per_class)
                .map(|i| Sample {
                    embedding: e.clone(),
                    label: LabelId(i as u32 % classes),
                })
                .collect(),
            test: vec![],
        }
    }

    #[test]
    fn data_incremental_fractions() {
        let plan = plan_scenario(&[task("a", 10, 100)], ScenarioKind::DataIncremental, RngSeed(1)).unwrap();
        assert_eq!(plan.stage_sizes(), vec![20, 40, 80, 160, 320, 640, 1000]);
        let all: BTreeSet<usize> = plan.cumulative(6).into_iter().map(|(_, i)| i).collect();
        assert_eq!(all.len(), 1000);
    }

    #[test]
    fn class_incremental_adds_fifths() {
        let t = task("a", 10, 3);
        let plan = plan_scenario(std::slice::from_ref(&t), ScenarioKind::ClassIncremental, RngSeed(2)).unwrap();
        let mut seen = BTreeSet::new();
        for s in 0..5 {
            for (_, i) in &plan.stages[s].arrivals {
                seen.insert(t.train[*i].label);
            }
            assert_eq!(seen.len(), 2 * (s + 1));
        }
        assert_eq!(plan.stage_sizes(), vec![6, 12, 18, 24, 30]);
    }

    #[test]
    fn task_incremental_one_task_per_stage() {
        let tasks = [task("a", 2, 2), task("b", 3, 1), task("c", 1, 5)];
        let plan = plan_scenario(&tasks, ScenarioKind::TaskIncremental, RngSeed(0)).unwrap();
        assert_eq!(plan.stages.len(), 3);
        for (s, stage) in plan.stages.iter().enumerate() {
            assert!(stage.arrivals.iter().all(|(t, _)| *t == s));
        }
        assert_eq!(plan.stage_sizes(), vec![4, 7, 12]);
        assert!(plan_scenario(&tasks[..1], ScenarioKind::TaskIncremental, RngSeed(0)).is_err());
    }

    #[test]
    fn invalid_plans() {
        assert!(matches!(
            plan_scenario(&[], ScenarioKind::DataIncremental, RngSeed(0)),
            Err(Error::InvalidPlan(_))
        ));
        let mut empty = task("z", 3, 1);
        empty.train.clear();
        assert!(plan_scenario(&[empty], ScenarioKind::ClassIncremental, RngSeed(0)).is_err());
    }

    #[test]
    fn deterministic_and_nested() {
        let tasks = [task("a", 10, 20), task("b", 5, 30)];
        for kind in [ScenarioKind::DataIncremental, ScenarioKind::ClassIncremental] {
            let a = plan_scenario(&tasks, kind, RngSeed(9)).unwrap();
            assert_eq!(a, plan_scenario(&tasks, kind, RngSeed(9)).unwrap());
            for s in 1..a.stages.len() {
                let prev: BTreeSet<_> = a.cumulative(s - 1).into_iter().collect();
                let cur: BTreeSet<_> = a.cumulative(s).into_iter().collect();
                assert!(prev.is_subset(&cur));
            }
            assert_eq!(a.cumulative(a.stages.len() - 1).len(), 350);
        }
    }
}
