//! Evaluation without task identity: candidate sets mixing target and
//! zero-shot labels.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::CandidateSet;
use crate::harness::eval::{candidates_of, evaluate, RunSpec, Tally};
use crate::harness::TaskDataset;
use crate::model::ExemplarModel;
use crate::types::{LabelId, LabelTable, RngSeed, Sample};

/// Zero-shot labels added to each flexible candidate set.
pub const ZEROSHOT_LABEL_SAMPLE: usize = 100;
/// Splits of the target-label union in the mixed protocol.
pub const MIX_SPLITS: usize = 5;
/// Test samples drawn per class in the mixed protocol.
pub const MIX_SAMPLES_PER_CLASS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Each zero-shot task over its own labels.
    ZeroShot,
    /// Target tasks over the union of target labels plus sampled zero-shot
    /// labels; zero-shot samples of the sampled labels over the same set.
    UnionZeroShot,
    /// Five splits of the target union, each with its own zero-shot sample.
    MixZeroShot,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::ZeroShot => "zero-shot",
            Protocol::UnionZeroShot => "union-zero-shot",
            Protocol::MixZeroShot => "mix-zero-shot",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero-shot" | "zs" => Ok(Protocol::ZeroShot),
            "union-zero-shot" | "union" => Ok(Protocol::UnionZeroShot),
            "mix-zero-shot" | "mix" => Ok(Protocol::MixZeroShot),
            other => Err(Error::InvalidProtocol(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibleReport {
    pub protocol: Protocol,
    pub target_acc: Option<f64>,
    pub zeroshot_acc: Option<f64>,
    /// The protocol's headline number.
    pub score: f64,
    /// Per-split accuracy of the mixed protocol.
    pub splits: Vec<f64>,
    /// Candidate-set size of each evaluation.
    pub candidate_sizes: Vec<usize>,
}

fn label_union(tasks: &[TaskDataset]) -> Vec<LabelId> {
    let set: BTreeSet<LabelId> = tasks.iter().flat_map(|t| t.label_ids.iter().copied()).collect();
    set.into_iter().collect()
}

/// Up to `n` labels drawn without replacement, returned sorted.
fn sample_labels(pool: &[LabelId], n: usize, seed: RngSeed) -> Vec<LabelId> {
    let mut v = pool.to_vec();
    v.shuffle(&mut seed.rng());
    v.truncate(n.min(pool.len()));
    v.sort();
    v
}

fn samples_with_labels<'a>(tasks: &'a [TaskDataset], keep: &BTreeSet<LabelId>) -> Vec<&'a Sample> {
    tasks
        .iter()
        .flat_map(|t| t.test.iter())
        .filter(|s| keep.contains(&s.label))
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Label splits of the mixed protocol: the target union shuffled and cut
/// into `MIX_SPLITS` nearly equal parts, each paired with a zero-shot sample.
pub fn mix_splits(
    tasks: &[TaskDataset],
    zeroshot_tasks: &[TaskDataset],
    seed: RngSeed,
) -> Vec<(Vec<LabelId>, Vec<LabelId>)> {
    let mut union = label_union(tasks);
    union.shuffle(&mut seed.derive(1).rng());
    let zs_pool = label_union(zeroshot_tasks);
    let n = union.len();
    (0..MIX_SPLITS)
        .map(|s| {
            let (a, b) = (s * n / MIX_SPLITS, (s + 1) * n / MIX_SPLITS);
            let mut part = union[a..b].to_vec();
            part.sort();
            let zs = sample_labels(&zs_pool, ZEROSHOT_LABEL_SAMPLE, seed.derive(100 + s as u64));
            (part, zs)
        })
        .filter(|(part, _)| !part.is_empty())
        .collect()
}

/// Candidate list of target labels followed by zero-shot labels not already
/// present.
fn merged(target: &[LabelId], zs: &[LabelId]) -> Result<CandidateSet> {
    let mut v = target.to_vec();
    let have: BTreeSet<LabelId> = target.iter().copied().collect();
    v.extend(zs.iter().filter(|l| !have.contains(l)));
    CandidateSet::new(v).map_err(|_| Error::InvalidProtocol("empty candidate set".into()))
}

fn first_per_class(samples: Vec<&Sample>, per_class: usize) -> Vec<Sample> {
    let mut counts = std::collections::BTreeMap::<LabelId, usize>::new();
    samples
        .into_iter()
        .filter(|s| {
            let c = counts.entry(s.label).or_insert(0);
            *c += 1;
            *c <= per_class
        })
        .cloned()
        .collect()
}

pub fn flexible_inference_eval(
    tasks: &[TaskDataset],
    zeroshot_tasks: &[TaskDataset],
    labels: &LabelTable,
    model: Option<&dyn ExemplarModel>,
    spec: &RunSpec,
    protocol: Protocol,
    seed: RngSeed,
) -> Result<FlexibleReport> {
    match protocol {
        Protocol::ZeroShot => {
            if zeroshot_tasks.is_empty() {
                return Err(Error::InvalidProtocol("no zero-shot tasks".into()));
            }
            let mut accs = Vec::new();
            let mut sizes = Vec::new();
            for t in zeroshot_tasks {
                let cand = candidates_of(t)?;
                sizes.push(cand.len());
                accs.push(evaluate(model, &t.test, &cand, labels, spec)?.accuracy());
            }
            let z = mean(&accs).unwrap_or(0.0);
            Ok(FlexibleReport {
                protocol,
                target_acc: None,
                zeroshot_acc: Some(z),
                score: z,
                splits: vec![],
                candidate_sizes: sizes,
            })
        }
        Protocol::UnionZeroShot => {
            if tasks.is_empty() {
                return Err(Error::InvalidProtocol("no target tasks".into()));
            }
            let union = label_union(tasks);
            let zs = sample_labels(&label_union(zeroshot_tasks), ZEROSHOT_LABEL_SAMPLE, seed.derive(1));
            let cand = merged(&union, &zs)?;
            let target: Vec<f64> = tasks
                .iter()
                .map(|t| evaluate(model, &t.test, &cand, labels, spec).map(|x| x.accuracy()))
                .collect::<Result<_>>()?;
            let zs_set: BTreeSet<LabelId> = zs.iter().copied().collect();
            let mut zs_accs = Vec::new();
            for t in zeroshot_tasks {
                let picked: Vec<Sample> = t.test.iter().filter(|s| zs_set.contains(&s.label)).cloned().collect();
                if !picked.is_empty() {
                    zs_accs.push(evaluate(model, &picked, &cand, labels, spec)?.accuracy());
                }
            }
            let t_acc = mean(&target).unwrap_or(0.0);
            let z_acc = mean(&zs_accs);
            Ok(FlexibleReport {
                protocol,
                target_acc: Some(t_acc),
                zeroshot_acc: z_acc,
                score: z_acc.map_or(t_acc, |z| (t_acc + z) / 2.0),
                splits: vec![],
                candidate_sizes: vec![cand.len()],
            })
        }
        Protocol::MixZeroShot => {
            if tasks.is_empty() {
                return Err(Error::InvalidProtocol("no target tasks".into()));
            }
            let mut splits = Vec::new();
            let mut sizes = Vec::new();
            for (part, zs) in mix_splits(tasks, zeroshot_tasks, seed) {
                let cand = merged(&part, &zs)?;
                let keep: BTreeSet<LabelId> = cand.labels().iter().copied().collect();
                let mut drawn = samples_with_labels(tasks, &keep);
                drawn.extend(samples_with_labels(zeroshot_tasks, &keep));
                let drawn = first_per_class(drawn, MIX_SAMPLES_PER_CLASS);
                let tally: Tally = evaluate(model, &drawn, &cand, labels, spec)?;
                sizes.push(cand.len());
                splits.push(tally.accuracy());
            }
            let score = mean(&splits).unwrap_or(0.0);
            Ok(FlexibleReport {
                protocol,
                target_acc: None,
                zeroshot_acc: None,
                score,
                splits,
                candidate_sizes: sizes,
            })
        }
    }
}
